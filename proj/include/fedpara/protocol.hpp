// SPDX-License-Identifier: Apache-2.0
//
// What travels between server and clients for each federated algorithm.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedpara/model.hpp"

namespace fedpara {

enum class Algorithm {
    FedAvg,     // full model each way, typically with original layers
    FedPara,    // full model each way, factorized layers
    PFedPara,   // only the global factor halves (X1, Y1) and biases
    FedPer,     // every layer except the last
    LocalOnly,  // nothing after the initial model
};

std::string to_string(Algorithm algorithm);
Algorithm algorithm_from_string(const std::string& name);

/// True for algorithms whose clients keep state between rounds.
bool is_personalized(Algorithm algorithm);

struct NamedTensor {
    std::string name;
    Tensor value;
};

struct Payload {
    std::vector<NamedTensor> tensors;

    std::uint64_t parameter_count() const;
    std::vector<std::string> names() const;
};

bool is_transmitted(Algorithm algorithm, const ConstParamRef& param, std::size_t layer_count);

/// Copies of every tensor the algorithm transmits, in parameter order.
Payload extract_payload(const Model& model, Algorithm algorithm);

/// Overwrites the matching tensors of `model`; throws ShapeError on unknown
/// names or shape mismatch.
void apply_payload(Model& model, const Payload& payload);

std::uint64_t transmitted_parameter_count(const Model& model, Algorithm algorithm);
/// Same count computed from the spec alone (no instantiation).
std::uint64_t transmitted_parameter_count(const ModelSpec& spec, Algorithm algorithm);

}  // namespace fedpara
