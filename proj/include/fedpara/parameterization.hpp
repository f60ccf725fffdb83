// SPDX-License-Identifier: Apache-2.0
//
// Weight-construction schemes for factorized layers: the original dense
// weight, the conventional low-rank product, and the low-rank Hadamard
// product (FedPara) in matrix, tensor and personalized form. Also the rank
// selection rules and exact parameter counts for each scheme.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "fedpara/rng.hpp"
#include "fedpara/tensor.hpp"

namespace fedpara {

class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

class ConstructionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class LayerKind { FC, Conv };

/// FC weights are out x in (m x n); conv kernels are O x I x K1 x K2.
struct LayerShape {
    LayerKind kind = LayerKind::FC;
    std::size_t out = 1;
    std::size_t in = 1;
    std::size_t k1 = 1;
    std::size_t k2 = 1;

    static LayerShape fc(std::size_t m, std::size_t n);
    static LayerShape conv(std::size_t o, std::size_t i, std::size_t k1, std::size_t k2);

    Shape weight_shape() const;
    std::size_t fan_in() const noexcept { return in * k1 * k2; }
    std::uint64_t element_count() const noexcept { return std::uint64_t(out) * in * k1 * k2; }

    friend bool operator==(const LayerShape&, const LayerShape&) = default;
};

std::string to_string(const LayerShape& shape);

enum class Scheme {
    Original,
    LowRank,
    FedPara,         // matrix form for FC, tensor form for conv
    FedParaReshape,  // conv only: matrix form on the O x (I K1 K2) reshape
    PFedPara,        // FC only
};

enum class Nonlinearity { None, Tanh };

std::string to_string(Scheme scheme);
Scheme scheme_from_string(const std::string& name);

struct OriginalWeight {
    Tensor w;
};

/// W = X Yᵀ with inner dimension 2R.
struct LowRankWeight {
    Tensor x, y;
};

/// W = σ(X1 Y1ᵀ) ⊙ σ(X2 Y2ᵀ).
struct FedParaMatrixWeight {
    Tensor x1, y1, x2, y2;
    Nonlinearity nonlinearity = Nonlinearity::None;
};

/// W = σ(T1 ×1 X1 ×2 Y1) ⊙ σ(T2 ×1 X2 ×2 Y2); cores are R x R x K1 x K2.
struct FedParaTensorWeight {
    Tensor t1, t2, x1, x2, y1, y2;
    Nonlinearity nonlinearity = Nonlinearity::None;
};

/// Conv low-rank counterpart with the same factor set as the tensor form:
/// W = T1 ×1 X1 ×2 Y1 + T2 ×1 X2 ×2 Y2, unfolding rank at most 2R.
struct LowRankTensorWeight {
    Tensor t1, t2, x1, x2, y1, y2;
};

/// W = (X1 Y1ᵀ) ⊙ (X2 Y2ᵀ + 1). X1, Y1 are global; X2, Y2 stay on the client.
struct PFedParaWeight {
    Tensor x1, y1, x2, y2;
};

Tensor compose_matrix(const FedParaMatrixWeight& w);
Tensor compose_tensor(const FedParaTensorWeight& w);
Tensor compose_personalized(const PFedParaWeight& w);
Tensor compose_low_rank(const LowRankWeight& w);
Tensor compose_low_rank_tensor(const LowRankTensorWeight& w);

/// Mutable view of one trainable factor.
struct FactorRef {
    const char* name;
    Tensor* tensor;
    bool global;  // false only for the personal half of PFedPara
};

struct ConstFactorRef {
    const char* name;
    const Tensor* tensor;
    bool global;
};

class FactorizedWeight {
public:
    using Factors = std::variant<OriginalWeight, LowRankWeight, FedParaMatrixWeight, FedParaTensorWeight,
                                 LowRankTensorWeight, PFedParaWeight>;

    /// Validates every factor shape against `shape` and the rank preconditions.
    FactorizedWeight(LayerShape shape, Factors factors);

    const LayerShape& shape() const noexcept { return shape_; }
    Scheme scheme() const noexcept;
    std::size_t inner_rank() const noexcept;
    const Factors& factors_variant() const noexcept { return factors_; }

    /// Composed weight in the layer's weight shape.
    Tensor compose() const;

    std::vector<FactorRef> factors();
    std::vector<ConstFactorRef> factors() const;

    /// Gradients for each factor (same order as factors()) given dL/dW.
    std::vector<Tensor> backward(const Tensor& grad_w) const;

    /// Copy with every factor moved by `scale * delta[i]`.
    FactorizedWeight shifted(const std::vector<Tensor>& delta, double scale) const;

    std::uint64_t parameter_count() const;

private:
    LayerShape shape_;
    Factors factors_;
};

// ---------------------------------------------------------------------------
// Rank selection and parameter counting.

/// Minimizer of (r1 + r2)(m + n) subject to r1 r2 >= R^2.
std::pair<std::size_t, std::size_t> optimal_inner_rank(std::size_t target_rank);

/// (r1 + r2)(m + n).
std::uint64_t inner_rank_objective(std::size_t r1, std::size_t r2, std::size_t m, std::size_t n);

/// Smallest R with R^2 >= min(m, n).
std::size_t min_full_rank(std::size_t m, std::size_t n);

std::uint64_t param_count(Scheme scheme, const LayerShape& shape, std::size_t rank);

/// Upper bound on the rank of the composed weight (first unfolding for conv).
std::size_t max_rank(Scheme scheme, const LayerShape& shape, std::size_t rank);

struct RankBudget {
    std::size_t r_min = 1;
    std::size_t r_max = 1;
    double gamma = 0.0;
    std::size_t r = 1;
    /// Set when the layer is too small for r_max >= r_min; r falls back to r_min.
    bool degenerate = false;
};

/// r = round((1 - γ) r_min + γ r_max), clamped to [r_min, r_max].
RankBudget rank_from_gamma(const LayerShape& shape, double gamma, Scheme scheme = Scheme::FedPara);

/// He-style Gaussian factors scaled so the composed weight has variance
/// close to 2 / fan_in.
FactorizedWeight init_factors(const LayerShape& shape, Scheme scheme, std::size_t rank, Rng& rng,
                              Nonlinearity nonlinearity = Nonlinearity::None);

}  // namespace fedpara
