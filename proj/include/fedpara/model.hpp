// SPDX-License-Identifier: Apache-2.0
//
// Small feed-forward networks whose layers use any parameterization scheme,
// with hand-written reverse-mode gradients, softmax cross-entropy, plain SGD
// and the Jacobian-correction regularizer.

#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedpara/parameterization.hpp"
#include "fedpara/rng.hpp"
#include "fedpara/tensor.hpp"

namespace fedpara {

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Activation { None, ReLU };

struct LayerSpec {
    LayerShape shape;
    Scheme scheme = Scheme::Original;
    /// Inner rank R; when absent it is derived from `gamma`.
    std::optional<std::size_t> rank;
    double gamma = 0.5;
    Nonlinearity nonlinearity = Nonlinearity::None;
    Activation activation = Activation::ReLU;
    bool bias = true;
    std::size_t padding = 0;  // conv only, stride is always 1
    std::size_t pool = 1;     // conv only, max-pool window (= stride); 1 disables
    bool group_norm = false;  // counted for accounting; not trainable here
};

struct ModelSpec {
    /// {features} for flat inputs or {channels, height, width} for images.
    Shape input;
    std::size_t classes = 2;
    std::vector<LayerSpec> layers;
};

/// Checks dimension chaining and the class count; throws ShapeError.
void validate(const ModelSpec& spec);

/// Inner rank actually used by each layer (0 for original layers).
std::vector<std::size_t> resolved_ranks(const ModelSpec& spec);

/// Trainable + auxiliary parameter count without instantiating the model.
std::uint64_t spec_parameter_count(const ModelSpec& spec);

/// Convenience: the 2-FC MLP `features -> hidden -> classes`.
ModelSpec mlp_spec(std::size_t features, std::size_t hidden, std::size_t classes, Scheme scheme,
                   std::optional<std::size_t> rank, double gamma = 0.5, bool bias = true);

struct ParamRef {
    std::string name;  // e.g. "layer0.X1", "layer1.bias"
    Tensor* tensor;
    bool global;
    std::size_t layer;
};

struct ConstParamRef {
    std::string name;
    const Tensor* tensor;
    bool global;
    std::size_t layer;
};

class Model {
public:
    Model(ModelSpec spec, std::vector<FactorizedWeight> weights, std::vector<Tensor> biases);

    const ModelSpec& spec() const noexcept { return spec_; }
    const std::vector<FactorizedWeight>& weights() const noexcept { return weights_; }
    std::vector<FactorizedWeight>& weights() noexcept { return weights_; }
    const std::vector<Tensor>& biases() const noexcept { return biases_; }

    /// Every trainable tensor in a fixed order: per layer, factors then bias.
    std::vector<ParamRef> parameters();
    std::vector<ConstParamRef> parameters() const;

    std::uint64_t parameter_count() const;

private:
    ModelSpec spec_;
    std::vector<FactorizedWeight> weights_;
    std::vector<Tensor> biases_;  // empty Tensor when the layer has no bias
};

/// Instantiates factors with He-style initialization and zero biases.
Model make_model(const ModelSpec& spec, Rng& rng);

/// Gradients mirroring Model::parameters(), plus dL/dW for each composed weight.
struct GradientSet {
    std::vector<Tensor> params;
    std::vector<Tensor> weights;

    bool all_finite() const noexcept;
};

GradientSet zeros_like(const Model& model);

struct SgdConfig {
    double eta = 0.1;
    double tau = 1.0;
    std::size_t batch = 10;
    std::size_t epochs = 1;
    double lambda = 0.0;
    double momentum = 0.0;
    double weight_decay = 0.0;
};

void validate(const SgdConfig& config);

/// Rows of `batch` are flattened samples; conv models reshape them to C x H x W.
Tensor forward(const Model& model, const Tensor& batch);

struct LossAndGrad {
    double loss = 0.0;
    GradientSet grads;
};

/// Mean softmax cross-entropy over the batch and its gradient.
LossAndGrad loss_and_grad(const Model& model, const Tensor& batch, const std::vector<std::size_t>& labels);

double cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels);

struct PenaltyResult {
    double penalty = 0.0;
    GradientSet grads;
};

/// ½ Σ_layers ‖W' − (W − η J_W)‖²_F where W' is the weight recomposed after
/// a hypothetical SGD step of size η on the factors. J_W and the factor
/// gradients inside W' are held constant when differentiating. The total
/// objective is L + λ · penalty.
PenaltyResult jacobian_penalty(const Model& model, const GradientSet& grads, double eta);

/// Momentum buffers; only touched when SgdConfig::momentum > 0.
struct OptimizerState {
    std::vector<Tensor> velocity;
};

/// θ ← θ − η τ^round g (plus optional weight decay / momentum).
void sgd_step(Model& model, const GradientSet& grads, const SgdConfig& config, std::size_t round_index,
              OptimizerState* state = nullptr);

double effective_learning_rate(const SgdConfig& config, std::size_t round_index);

/// One minibatch update including the Jacobian penalty when λ > 0; returns the task loss.
double train_step(Model& model, const Tensor& batch, const std::vector<std::size_t>& labels, const SgdConfig& config,
                  std::size_t round_index, OptimizerState* state = nullptr);

std::vector<std::size_t> predict(const Model& model, const Tensor& batch);
double accuracy(const Model& model, const Tensor& batch, const std::vector<std::size_t>& labels);

/// Stride-1 cross-correlation. kernel O x I x K1 x K2, input B x I x H x W.
Tensor conv2d_forward(const Tensor& kernel, const Tensor& input, std::size_t padding);

}  // namespace fedpara
