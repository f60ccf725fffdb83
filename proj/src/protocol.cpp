// SPDX-License-Identifier: Apache-2.0

#include "fedpara/protocol.hpp"

#include <unordered_map>

namespace fedpara {

std::string to_string(Algorithm algorithm) {
    switch (algorithm) {
        case Algorithm::FedAvg: return "fedavg";
        case Algorithm::FedPara: return "fedpara";
        case Algorithm::PFedPara: return "pfedpara";
        case Algorithm::FedPer: return "fedper";
        case Algorithm::LocalOnly: return "local";
    }
    return "unknown";
}

Algorithm algorithm_from_string(const std::string& name) {
    for (auto a : {Algorithm::FedAvg, Algorithm::FedPara, Algorithm::PFedPara, Algorithm::FedPer, Algorithm::LocalOnly}) {
        if (to_string(a) == name) return a;
    }
    throw DomainError("unknown algorithm '" + name + "'");
}

bool is_personalized(Algorithm algorithm) {
    return algorithm == Algorithm::PFedPara || algorithm == Algorithm::FedPer || algorithm == Algorithm::LocalOnly;
}

std::uint64_t Payload::parameter_count() const {
    std::uint64_t n = 0;
    for (const auto& t : tensors) n += t.value.size();
    return n;
}

std::vector<std::string> Payload::names() const {
    std::vector<std::string> out;
    out.reserve(tensors.size());
    for (const auto& t : tensors) out.push_back(t.name);
    return out;
}

bool is_transmitted(Algorithm algorithm, const ConstParamRef& param, std::size_t layer_count) {
    switch (algorithm) {
        case Algorithm::FedAvg:
        case Algorithm::FedPara: return true;
        case Algorithm::PFedPara: return param.global;
        case Algorithm::FedPer: return param.layer + 1 < layer_count;
        case Algorithm::LocalOnly: return false;
    }
    return false;
}

Payload extract_payload(const Model& model, Algorithm algorithm) {
    Payload p;
    const std::size_t layers = model.spec().layers.size();
    for (const auto& param : model.parameters()) {
        if (is_transmitted(algorithm, param, layers)) p.tensors.push_back({param.name, *param.tensor});
    }
    return p;
}

void apply_payload(Model& model, const Payload& payload) {
    std::unordered_map<std::string, Tensor*> by_name;
    for (auto& param : model.parameters()) by_name.emplace(param.name, param.tensor);
    for (const auto& t : payload.tensors) {
        auto it = by_name.find(t.name);
        if (it == by_name.end()) throw ShapeError("payload tensor '" + t.name + "' is not part of the model");
        if (it->second->shape() != t.value.shape()) {
            throw ShapeError("payload tensor '" + t.name + "' has shape " + to_string(t.value.shape()) + ", model has " +
                             to_string(it->second->shape()));
        }
        *it->second = t.value;
    }
}

std::uint64_t transmitted_parameter_count(const Model& model, Algorithm algorithm) {
    std::uint64_t n = 0;
    const std::size_t layers = model.spec().layers.size();
    for (const auto& param : model.parameters()) {
        if (is_transmitted(algorithm, param, layers)) n += param.tensor->size();
    }
    return n;
}

std::uint64_t transmitted_parameter_count(const ModelSpec& spec, Algorithm algorithm) {
    const auto ranks = resolved_ranks(spec);
    const std::size_t layers = spec.layers.size();
    std::uint64_t n = 0;
    for (std::size_t l = 0; l < layers; ++l) {
        const auto& layer = spec.layers[l];
        if (algorithm == Algorithm::LocalOnly) break;
        if (algorithm == Algorithm::FedPer && l + 1 == layers) continue;
        const std::size_t r = std::max<std::size_t>(ranks[l], 1);
        std::uint64_t weight = param_count(layer.scheme, layer.shape, r);
        if (algorithm == Algorithm::PFedPara && layer.scheme == Scheme::PFedPara) {
            // X1 (m x r) and Y1 (n x r) only.
            weight = std::uint64_t(r) * (layer.shape.out + layer.shape.in);
        }
        n += weight;
        if (layer.bias) n += layer.shape.out;
        if (layer.group_norm) n += 2 * layer.shape.out;
    }
    return n;
}

}  // namespace fedpara
