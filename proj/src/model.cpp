// SPDX-License-Identifier: Apache-2.0

#include "fedpara/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "conv_ops.hpp"

namespace fedpara {

namespace {

std::string layer_label(std::size_t l) { return "layer " + std::to_string(l); }

}  // namespace

void validate(const ModelSpec& spec) {
    if (spec.input.size() != 1 && spec.input.size() != 3) {
        throw ShapeError("model input must be {features} or {channels, height, width}, got " + to_string(spec.input));
    }
    for (auto d : spec.input) {
        if (d == 0) throw ShapeError("model input dimensions must be positive");
    }
    if (spec.layers.empty()) throw ShapeError("model needs at least one layer");
    if (spec.classes < 1) throw ShapeError("model needs at least one class");

    Shape current = spec.input;
    for (std::size_t l = 0; l < spec.layers.size(); ++l) {
        const auto& layer = spec.layers[l];
        const auto& s = layer.shape;
        if (s.kind == LayerKind::Conv) {
            if (current.size() != 3) {
                throw ShapeError(layer_label(l) + ": conv layer needs an image-shaped input");
            }
            if (current[0] != s.in) {
                throw ShapeError(layer_label(l) + ": expects " + std::to_string(s.in) + " input channels, got " +
                                 std::to_string(current[0]));
            }
            if (current[1] + 2 * layer.padding < s.k1 || current[2] + 2 * layer.padding < s.k2) {
                throw ShapeError(layer_label(l) + ": kernel larger than padded input");
            }
            std::size_t h = current[1] + 2 * layer.padding - s.k1 + 1;
            std::size_t w = current[2] + 2 * layer.padding - s.k2 + 1;
            if (layer.pool == 0) throw ShapeError(layer_label(l) + ": pool window must be >= 1");
            h /= layer.pool;
            w /= layer.pool;
            if (h == 0 || w == 0) throw ShapeError(layer_label(l) + ": pooling collapses the feature map");
            current = {s.out, h, w};
        } else {
            if (layer.pool != 1 || layer.padding != 0) {
                throw ShapeError(layer_label(l) + ": padding/pool only apply to conv layers");
            }
            const std::size_t flat = shape_size(current);
            if (flat != s.in) {
                throw ShapeError(layer_label(l) + ": expects " + std::to_string(s.in) + " inputs, previous layer gives " +
                                 std::to_string(flat));
            }
            current = {s.out};
        }
    }
    const auto& last = spec.layers.back();
    if (last.shape.kind != LayerKind::FC || last.shape.out != spec.classes) {
        throw ShapeError("last layer must be FC with width == class count (" + std::to_string(spec.classes) + ")");
    }
}

std::vector<std::size_t> resolved_ranks(const ModelSpec& spec) {
    std::vector<std::size_t> ranks;
    ranks.reserve(spec.layers.size());
    for (const auto& layer : spec.layers) {
        if (layer.scheme == Scheme::Original) {
            ranks.push_back(0);
        } else if (layer.rank) {
            if (*layer.rank < 1) throw DomainError("rank must be >= 1");
            ranks.push_back(*layer.rank);
        } else {
            ranks.push_back(rank_from_gamma(layer.shape, layer.gamma, layer.scheme).r);
        }
    }
    return ranks;
}

std::uint64_t spec_parameter_count(const ModelSpec& spec) {
    const auto ranks = resolved_ranks(spec);
    std::uint64_t total = 0;
    for (std::size_t l = 0; l < spec.layers.size(); ++l) {
        const auto& layer = spec.layers[l];
        total += param_count(layer.scheme, layer.shape, std::max<std::size_t>(ranks[l], 1));
        if (layer.bias) total += layer.shape.out;
        if (layer.group_norm) total += 2 * layer.shape.out;
    }
    return total;
}

ModelSpec mlp_spec(std::size_t features, std::size_t hidden, std::size_t classes, Scheme scheme,
                   std::optional<std::size_t> rank, double gamma, bool bias) {
    ModelSpec spec;
    spec.input = {features};
    spec.classes = classes;
    LayerSpec first;
    first.shape = LayerShape::fc(hidden, features);
    first.scheme = scheme;
    first.rank = rank;
    first.gamma = gamma;
    first.activation = Activation::ReLU;
    first.bias = bias;
    LayerSpec second = first;
    second.shape = LayerShape::fc(classes, hidden);
    second.activation = Activation::None;
    spec.layers = {first, second};
    return spec;
}

// ---------------------------------------------------------------------------

Model::Model(ModelSpec spec, std::vector<FactorizedWeight> weights, std::vector<Tensor> biases)
    : spec_(std::move(spec)), weights_(std::move(weights)), biases_(std::move(biases)) {
    validate(spec_);
    if (weights_.size() != spec_.layers.size() || biases_.size() != spec_.layers.size()) {
        throw ShapeError("model needs one weight and one bias slot per layer");
    }
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        const auto& layer = spec_.layers[l];
        if (weights_[l].shape() != layer.shape) {
            throw ShapeError(layer_label(l) + ": weight shape " + to_string(weights_[l].shape()) + " differs from spec " +
                             to_string(layer.shape));
        }
        if (layer.bias && biases_[l].shape() != Shape{layer.shape.out}) {
            throw ShapeError(layer_label(l) + ": bias must have " + std::to_string(layer.shape.out) + " entries");
        }
        if (!layer.bias && biases_[l].size() != 0) throw ShapeError(layer_label(l) + ": unexpected bias");
    }
}

std::vector<ParamRef> Model::parameters() {
    std::vector<ParamRef> out;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        const std::string prefix = "layer" + std::to_string(l) + ".";
        for (auto& f : weights_[l].factors()) out.push_back({prefix + f.name, f.tensor, f.global, l});
        if (spec_.layers[l].bias) out.push_back({prefix + "bias", &biases_[l], true, l});
    }
    return out;
}

std::vector<ConstParamRef> Model::parameters() const {
    auto refs = const_cast<Model*>(this)->parameters();
    std::vector<ConstParamRef> out;
    out.reserve(refs.size());
    for (auto& r : refs) out.push_back({std::move(r.name), r.tensor, r.global, r.layer});
    return out;
}

std::uint64_t Model::parameter_count() const {
    std::uint64_t total = 0;
    for (const auto& p : parameters()) total += p.tensor->size();
    return total;
}

Model make_model(const ModelSpec& spec, Rng& rng) {
    validate(spec);
    const auto ranks = resolved_ranks(spec);
    std::vector<FactorizedWeight> weights;
    std::vector<Tensor> biases;
    for (std::size_t l = 0; l < spec.layers.size(); ++l) {
        const auto& layer = spec.layers[l];
        if (layer.group_norm) {
            throw DomainError(layer_label(l) + ": group normalization is only supported for parameter counting");
        }
        if (layer.scheme == Scheme::PFedPara && layer.nonlinearity != Nonlinearity::None) {
            throw DomainError(layer_label(l) + ": pFedPara layers do not take a nonlinearity");
        }
        weights.push_back(init_factors(layer.shape, layer.scheme, std::max<std::size_t>(ranks[l], 1), rng,
                                       layer.nonlinearity));
        biases.push_back(layer.bias ? Tensor::zeros({layer.shape.out}) : Tensor());
    }
    return Model(spec, std::move(weights), std::move(biases));
}

bool GradientSet::all_finite() const noexcept {
    return std::all_of(params.begin(), params.end(), [](const Tensor& t) { return t.all_finite(); });
}

GradientSet zeros_like(const Model& model) {
    GradientSet g;
    for (const auto& p : model.parameters()) g.params.push_back(Tensor::zeros(p.tensor->shape()));
    for (const auto& w : model.weights()) g.weights.push_back(Tensor::zeros(w.shape().weight_shape()));
    return g;
}

void validate(const SgdConfig& c) {
    if (!(c.eta > 0.0)) throw DomainError("learning rate eta must be > 0");
    if (!(c.tau > 0.0 && c.tau <= 1.0)) throw DomainError("decay tau must lie in (0, 1]");
    if (!(c.lambda >= 0.0)) throw DomainError("lambda must be >= 0");
    if (c.batch < 1) throw DomainError("batch size must be >= 1");
    if (!(c.momentum >= 0.0 && c.momentum < 1.0)) throw DomainError("momentum must lie in [0, 1)");
    if (!(c.weight_decay >= 0.0)) throw DomainError("weight decay must be >= 0");
}

// ---------------------------------------------------------------------------

namespace {

struct LayerCache {
    Tensor input;      // B x n for FC, B x I x H x W for conv
    Tensor weight;     // composed
    Tensor pre;        // pre-activation
    Tensor activated;  // after activation, before pooling
    std::vector<std::size_t> argmax;
};

Tensor as_network_input(const ModelSpec& spec, const Tensor& batch) {
    if (batch.rank() != 2 && batch.rank() != 4) {
        throw ShapeError("batch must be B x features or B x C x H x W, got " + to_string(batch.shape()));
    }
    const std::size_t b = batch.dim(0);
    const std::size_t per_sample = batch.size() / b;
    if (per_sample != shape_size(spec.input)) {
        throw ShapeError("batch sample size " + std::to_string(per_sample) + " does not match model input " +
                         to_string(spec.input));
    }
    Shape s{b};
    s.insert(s.end(), spec.input.begin(), spec.input.end());
    return batch.reshaped(s);
}

Tensor forward_impl(const Model& model, const Tensor& batch, std::vector<LayerCache>* caches) {
    const auto& spec = model.spec();
    Tensor x = as_network_input(spec, batch);
    const std::size_t b = x.dim(0);
    if (caches) caches->assign(spec.layers.size(), {});

    for (std::size_t l = 0; l < spec.layers.size(); ++l) {
        const auto& layer = spec.layers[l];
        Tensor w = model.weights()[l].compose();
        Tensor z;
        if (layer.shape.kind == LayerKind::FC) {
            if (x.rank() != 2) x = x.reshaped({b, x.size() / b});
            z = matmul_nt(x, w);
            if (layer.bias) {
                const auto& bias = model.biases()[l];
                for (std::size_t i = 0; i < b; ++i)
                    for (std::size_t j = 0; j < layer.shape.out; ++j) z.at(i, j) += bias[j];
            }
        } else {
            z = conv2d_forward(w, x, layer.padding);
            if (layer.bias) {
                const auto& bias = model.biases()[l];
                const std::size_t plane = z.dim(2) * z.dim(3);
                for (std::size_t i = 0; i < b; ++i)
                    for (std::size_t c = 0; c < layer.shape.out; ++c)
                        for (std::size_t p = 0; p < plane; ++p) z[(i * layer.shape.out + c) * plane + p] += bias[c];
            }
        }
        Tensor a = z;
        if (layer.activation == Activation::ReLU) {
            for (auto& v : a.data()) v = v < 0.0 ? 0.0 : v;  // NaN passes through
        }
        Tensor out;
        std::vector<std::size_t> argmax;
        if (layer.shape.kind == LayerKind::Conv && layer.pool > 1) {
            out = detail::maxpool_forward(a, layer.pool, argmax);
        } else {
            out = a;
        }
        if (caches) {
            auto& c = (*caches)[l];
            c.input = std::move(x);
            c.weight = std::move(w);
            c.pre = std::move(z);
            c.activated = std::move(a);
            c.argmax = std::move(argmax);
        }
        x = std::move(out);
    }
    return x;
}

}  // namespace

Tensor forward(const Model& model, const Tensor& batch) {
    Tensor logits = forward_impl(model, batch, nullptr);
    if (!logits.all_finite()) throw NumericError("forward produced non-finite logits");
    return logits;
}

double cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels) {
    const std::size_t b = logits.dim(0), c = logits.dim(1);
    if (labels.size() != b) {
        throw ShapeError("got " + std::to_string(labels.size()) + " labels for a batch of " + std::to_string(b));
    }
    for (auto y : labels) {
        if (y >= c) throw DomainError("label " + std::to_string(y) + " outside [0, " + std::to_string(c) + ")");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        double mx = logits.at(i, 0);
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, logits.at(i, j));
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += std::exp(logits.at(i, j) - mx);
        total += std::log(s) + mx - logits.at(i, labels[i]);
    }
    return total / static_cast<double>(b);
}

LossAndGrad loss_and_grad(const Model& model, const Tensor& batch, const std::vector<std::size_t>& labels) {
    const auto& spec = model.spec();
    std::vector<LayerCache> caches;
    const Tensor logits = forward_impl(model, batch, &caches);
    const std::size_t b = logits.dim(0), classes = logits.dim(1);

    LossAndGrad out;
    out.loss = cross_entropy(logits, labels);
    if (!std::isfinite(out.loss)) {
        std::ostringstream os;
        os << "non-finite loss " << out.loss << " (batch " << b << ", max |logit| "
           << (logits.all_finite() ? max_abs(logits) : INFINITY) << ")";
        throw NumericError(os.str());
    }

    // dL/dlogits = (softmax - onehot) / B
    Tensor g({b, classes});
    for (std::size_t i = 0; i < b; ++i) {
        double mx = logits.at(i, 0);
        for (std::size_t j = 1; j < classes; ++j) mx = std::max(mx, logits.at(i, j));
        double s = 0.0;
        for (std::size_t j = 0; j < classes; ++j) s += std::exp(logits.at(i, j) - mx);
        for (std::size_t j = 0; j < classes; ++j) {
            const double p = std::exp(logits.at(i, j) - mx) / s;
            g.at(i, j) = (p - (j == labels[i] ? 1.0 : 0.0)) / static_cast<double>(b);
        }
    }

    const std::size_t layers = spec.layers.size();
    std::vector<std::vector<Tensor>> factor_grads(layers);
    std::vector<Tensor> bias_grads(layers);
    out.grads.weights.resize(layers);

    for (std::size_t l = layers; l-- > 0;) {
        const auto& layer = spec.layers[l];
        auto& c = caches[l];
        if (layer.shape.kind == LayerKind::Conv && layer.pool > 1) {
            g = detail::maxpool_backward(g.reshaped({b, layer.shape.out, c.activated.dim(2) / layer.pool,
                                                     c.activated.dim(3) / layer.pool}),
                                         c.argmax, c.activated.shape());
        } else {
            g = g.reshaped(c.pre.shape());
        }
        if (layer.activation == Activation::ReLU) {
            for (std::size_t i = 0; i < g.size(); ++i)
                if (c.pre[i] <= 0.0) g[i] = 0.0;
        }
        if (layer.bias) {
            Tensor gb({layer.shape.out});
            const std::size_t plane = g.size() / (b * layer.shape.out);
            for (std::size_t i = 0; i < b; ++i)
                for (std::size_t ch = 0; ch < layer.shape.out; ++ch)
                    for (std::size_t p = 0; p < plane; ++p) gb[ch] += g[(i * layer.shape.out + ch) * plane + p];
            bias_grads[l] = std::move(gb);
        }
        Tensor grad_w;
        Tensor grad_in;
        if (layer.shape.kind == LayerKind::FC) {
            grad_w = matmul_tn(g, c.input);
            if (l > 0) grad_in = matmul(g, c.weight);
        } else {
            auto cg = detail::conv2d_backward(c.weight, c.input, layer.padding, g);
            grad_w = std::move(cg.kernel);
            grad_in = std::move(cg.input);
        }
        factor_grads[l] = model.weights()[l].backward(grad_w);
        out.grads.weights[l] = std::move(grad_w);
        g = std::move(grad_in);
    }

    for (std::size_t l = 0; l < layers; ++l) {
        for (auto& t : factor_grads[l]) out.grads.params.push_back(std::move(t));
        if (spec.layers[l].bias) out.grads.params.push_back(std::move(bias_grads[l]));
    }
    if (!out.grads.all_finite()) throw NumericError("non-finite gradient at loss " + std::to_string(out.loss));
    return out;
}

PenaltyResult jacobian_penalty(const Model& model, const GradientSet& grads, double eta) {
    PenaltyResult out;
    out.grads.weights.reserve(model.weights().size());
    std::size_t offset = 0;
    for (std::size_t l = 0; l < model.weights().size(); ++l) {
        const auto& weight = model.weights()[l];
        const std::size_t nf = weight.factors().size();
        const std::vector<Tensor> factor_grads(grads.params.begin() + std::ptrdiff_t(offset),
                                               grads.params.begin() + std::ptrdiff_t(offset + nf));
        const Tensor w = weight.compose();
        const Tensor target = axpy(w, -eta, grads.weights[l]);
        const FactorizedWeight stepped = weight.shifted(factor_grads, -eta);
        const Tensor diff = stepped.compose() - target;
        out.penalty += 0.5 * dot(diff, diff);

        // d/dθ [½‖W(θ − ηJ) − W(θ) + ηJ_W‖²] with J frozen.
        auto at_step = stepped.backward(diff);
        const auto at_current = weight.backward(diff);
        for (std::size_t i = 0; i < nf; ++i) {
            at_step[i] -= at_current[i];
            out.grads.params.push_back(std::move(at_step[i]));
        }
        if (model.spec().layers[l].bias) out.grads.params.push_back(Tensor::zeros({weight.shape().out}));
        out.grads.weights.push_back(Tensor::zeros(weight.shape().weight_shape()));
        offset += nf + (model.spec().layers[l].bias ? 1 : 0);
    }
    return out;
}

double effective_learning_rate(const SgdConfig& config, std::size_t round_index) {
    return config.eta * std::pow(config.tau, static_cast<double>(round_index));
}

void sgd_step(Model& model, const GradientSet& grads, const SgdConfig& config, std::size_t round_index,
              OptimizerState* state) {
    auto params = model.parameters();
    if (params.size() != grads.params.size()) {
        throw ShapeError("gradient set has " + std::to_string(grads.params.size()) + " tensors, model has " +
                         std::to_string(params.size()));
    }
    const double lr = effective_learning_rate(config, round_index);
    const bool use_momentum = config.momentum > 0.0 && state != nullptr;
    if (use_momentum && state->velocity.size() != params.size()) {
        state->velocity.clear();
        for (const auto& p : params) state->velocity.push_back(Tensor::zeros(p.tensor->shape()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& theta = *params[i].tensor;
        const Tensor& g = grads.params[i];
        if (g.shape() != theta.shape()) throw ShapeError("gradient shape mismatch for " + params[i].name);
        Tensor step = config.weight_decay > 0.0 ? axpy(g, config.weight_decay, theta) : g;
        if (use_momentum) {
            Tensor& v = state->velocity[i];
            v *= config.momentum;
            v += step;
            step = v;
        }
        auto td = theta.data();
        auto sd = step.data();
        for (std::size_t k = 0; k < td.size(); ++k) td[k] -= lr * sd[k];
    }
}

double train_step(Model& model, const Tensor& batch, const std::vector<std::size_t>& labels, const SgdConfig& config,
                  std::size_t round_index, OptimizerState* state) {
    auto lg = loss_and_grad(model, batch, labels);
    if (config.lambda > 0.0) {
        const auto pen = jacobian_penalty(model, lg.grads, effective_learning_rate(config, round_index));
        for (std::size_t i = 0; i < lg.grads.params.size(); ++i) {
            lg.grads.params[i] = axpy(lg.grads.params[i], config.lambda, pen.grads.params[i]);
        }
        if (!lg.grads.all_finite()) throw NumericError("non-finite gradient after Jacobian correction");
    }
    sgd_step(model, lg.grads, config, round_index, state);
    return lg.loss;
}

std::vector<std::size_t> predict(const Model& model, const Tensor& batch) {
    const Tensor logits = forward(model, batch);
    std::vector<std::size_t> out(logits.dim(0));
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < logits.dim(1); ++j)
            if (logits.at(i, j) > logits.at(i, best)) best = j;
        out[i] = best;
    }
    return out;
}

double accuracy(const Model& model, const Tensor& batch, const std::vector<std::size_t>& labels) {
    if (labels.empty()) return 0.0;
    const auto pred = predict(model, batch);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hit += pred[i] == labels[i];
    return static_cast<double>(hit) / static_cast<double>(labels.size());
}

}  // namespace fedpara
