// SPDX-License-Identifier: Apache-2.0

#include "fedpara/parameterization.hpp"

#include <algorithm>
#include <cmath>

namespace fedpara {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

double tanh_fn(double v) { return std::tanh(v); }

Tensor apply(Nonlinearity nl, const Tensor& t) { return nl == Nonlinearity::Tanh ? map(t, tanh_fn) : t; }

/// dL/dpre given dL/dpost for post = σ(pre), with post already evaluated.
Tensor apply_backward(Nonlinearity nl, const Tensor& grad_post, const Tensor& post) {
    if (nl == Nonlinearity::None) return grad_post;
    Tensor g = grad_post;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= 1.0 - post[i] * post[i];
    return g;
}

Tensor tucker2(const Tensor& core, const Tensor& x, const Tensor& y) {
    return mode_n_product(mode_n_product(core, x, 0), y, 1);
}

struct Tucker2Grads {
    Tensor core, x, y;
};

Tucker2Grads tucker2_backward(const Tensor& core, const Tensor& x, const Tensor& y, const Tensor& grad) {
    const Tensor v = mode_n_product(core, x, 0);
    Tucker2Grads g;
    g.y = matmul_nt(unfold(grad, 1), unfold(v, 1));
    const Tensor grad_v = mode_n_product(grad, transpose(y), 1);
    g.x = matmul_nt(unfold(grad_v, 0), unfold(core, 0));
    g.core = mode_n_product(grad_v, transpose(x), 0);
    return g;
}

void expect_shape(const Tensor& t, const Shape& shape, const char* name) {
    if (t.shape() != shape) {
        throw ConstructionError(std::string("factor ") + name + " has shape " + to_string(t.shape()) +
                                ", expected " + to_string(shape));
    }
}

std::size_t cols_of(const Tensor& t, const char* name) {
    if (t.rank() != 2) throw ConstructionError(std::string("factor ") + name + " must be a matrix");
    return t.dim(1);
}

/// Matrix dimensions the FedPara/low-rank matrix forms operate on.
std::pair<std::size_t, std::size_t> matrix_dims(const LayerShape& s) {
    return {s.out, s.in * s.k1 * s.k2};
}

void validate_pair_rank(std::size_t r, std::size_t m, std::size_t n, const char* what) {
    if (r < 1 || r > std::min(m, n)) {
        throw ConstructionError(std::string(what) + ": inner rank " + std::to_string(r) + " must lie in [1, min(" +
                                std::to_string(m) + ", " + std::to_string(n) + ")]");
    }
}

void validate_tucker(const LayerShape& s, const Tensor& t1, const Tensor& t2, const Tensor& x1, const Tensor& x2,
                     const Tensor& y1, const Tensor& y2, const char* what) {
    if (s.kind != LayerKind::Conv) throw ConstructionError(std::string(what) + " requires a conv layer");
    const std::size_t r = cols_of(x1, "X1");
    if (r < 1 || r > std::min(s.out, s.in)) {
        throw ConstructionError(std::string(what) + ": R=" + std::to_string(r) + " must lie in [1, min(O, I)]");
    }
    expect_shape(t1, {r, r, s.k1, s.k2}, "T1");
    expect_shape(t2, {r, r, s.k1, s.k2}, "T2");
    expect_shape(x1, {s.out, r}, "X1");
    expect_shape(x2, {s.out, r}, "X2");
    expect_shape(y1, {s.in, r}, "Y1");
    expect_shape(y2, {s.in, r}, "Y2");
}

std::uint64_t u64(std::size_t v) { return static_cast<std::uint64_t>(v); }

}  // namespace

LayerShape LayerShape::fc(std::size_t m, std::size_t n) {
    if (m < 1 || n < 1) throw DomainError("FC layer dimensions must be >= 1");
    return LayerShape{LayerKind::FC, m, n, 1, 1};
}

LayerShape LayerShape::conv(std::size_t o, std::size_t i, std::size_t k1, std::size_t k2) {
    if (o < 1 || i < 1 || k1 < 1 || k2 < 1) throw DomainError("conv layer dimensions must be >= 1");
    return LayerShape{LayerKind::Conv, o, i, k1, k2};
}

Shape LayerShape::weight_shape() const {
    if (kind == LayerKind::FC) return {out, in};
    return {out, in, k1, k2};
}

std::string to_string(const LayerShape& s) {
    if (s.kind == LayerKind::FC) return "fc(" + std::to_string(s.out) + "x" + std::to_string(s.in) + ")";
    return "conv(" + std::to_string(s.out) + "x" + std::to_string(s.in) + "x" + std::to_string(s.k1) + "x" +
           std::to_string(s.k2) + ")";
}

std::string to_string(Scheme scheme) {
    switch (scheme) {
        case Scheme::Original: return "original";
        case Scheme::LowRank: return "lowrank";
        case Scheme::FedPara: return "fedpara";
        case Scheme::FedParaReshape: return "fedpara_reshape";
        case Scheme::PFedPara: return "pfedpara";
    }
    return "unknown";
}

Scheme scheme_from_string(const std::string& name) {
    for (auto s : {Scheme::Original, Scheme::LowRank, Scheme::FedPara, Scheme::FedParaReshape, Scheme::PFedPara}) {
        if (to_string(s) == name) return s;
    }
    throw DomainError("unknown parameterization scheme '" + name + "'");
}

// ---------------------------------------------------------------------------

Tensor compose_low_rank(const LowRankWeight& w) { return matmul_nt(w.x, w.y); }

Tensor compose_matrix(const FedParaMatrixWeight& w) {
    return hadamard(apply(w.nonlinearity, matmul_nt(w.x1, w.y1)), apply(w.nonlinearity, matmul_nt(w.x2, w.y2)));
}

Tensor compose_tensor(const FedParaTensorWeight& w) {
    return hadamard(apply(w.nonlinearity, tucker2(w.t1, w.x1, w.y1)),
                    apply(w.nonlinearity, tucker2(w.t2, w.x2, w.y2)));
}

Tensor compose_low_rank_tensor(const LowRankTensorWeight& w) {
    return tucker2(w.t1, w.x1, w.y1) + tucker2(w.t2, w.x2, w.y2);
}

Tensor compose_personalized(const PFedParaWeight& w) {
    Tensor w2 = matmul_nt(w.x2, w.y2);
    for (auto& v : w2.data()) v += 1.0;
    return hadamard(matmul_nt(w.x1, w.y1), w2);
}

// ---------------------------------------------------------------------------

FactorizedWeight::FactorizedWeight(LayerShape shape, Factors factors)
    : shape_(shape), factors_(std::move(factors)) {
    const auto [m, n] = matrix_dims(shape_);
    std::visit(overloaded{
                   [&](const OriginalWeight& w) { expect_shape(w.w, shape_.weight_shape(), "W"); },
                   [&](const LowRankWeight& w) {
                       if (shape_.kind != LayerKind::FC) {
                           throw ConstructionError("matrix low-rank factors require an FC layer");
                       }
                       const std::size_t k = cols_of(w.x, "X");
                       if (k % 2 != 0) throw ConstructionError("low-rank inner dimension must be 2R");
                       expect_shape(w.x, {m, k}, "X");
                       expect_shape(w.y, {n, k}, "Y");
                   },
                   [&](const FedParaMatrixWeight& w) {
                       const std::size_t r1 = cols_of(w.x1, "X1"), r2 = cols_of(w.x2, "X2");
                       validate_pair_rank(r1, m, n, "FedPara");
                       validate_pair_rank(r2, m, n, "FedPara");
                       expect_shape(w.x1, {m, r1}, "X1");
                       expect_shape(w.y1, {n, r1}, "Y1");
                       expect_shape(w.x2, {m, r2}, "X2");
                       expect_shape(w.y2, {n, r2}, "Y2");
                   },
                   [&](const FedParaTensorWeight& w) {
                       validate_tucker(shape_, w.t1, w.t2, w.x1, w.x2, w.y1, w.y2, "FedPara tensor");
                   },
                   [&](const LowRankTensorWeight& w) {
                       validate_tucker(shape_, w.t1, w.t2, w.x1, w.x2, w.y1, w.y2, "low-rank tensor");
                   },
                   [&](const PFedParaWeight& w) {
                       if (shape_.kind != LayerKind::FC) throw ConstructionError("pFedPara requires an FC layer");
                       const std::size_t r1 = cols_of(w.x1, "X1"), r2 = cols_of(w.x2, "X2");
                       validate_pair_rank(r1, m, n, "pFedPara");
                       validate_pair_rank(r2, m, n, "pFedPara");
                       expect_shape(w.x1, {m, r1}, "X1");
                       expect_shape(w.y1, {n, r1}, "Y1");
                       expect_shape(w.x2, {m, r2}, "X2");
                       expect_shape(w.y2, {n, r2}, "Y2");
                   },
               },
               factors_);
}

Scheme FactorizedWeight::scheme() const noexcept {
    return std::visit(overloaded{
                          [](const OriginalWeight&) { return Scheme::Original; },
                          [](const LowRankWeight&) { return Scheme::LowRank; },
                          [this](const FedParaMatrixWeight&) {
                              return shape_.kind == LayerKind::Conv ? Scheme::FedParaReshape : Scheme::FedPara;
                          },
                          [](const FedParaTensorWeight&) { return Scheme::FedPara; },
                          [](const LowRankTensorWeight&) { return Scheme::LowRank; },
                          [](const PFedParaWeight&) { return Scheme::PFedPara; },
                      },
                      factors_);
}

std::size_t FactorizedWeight::inner_rank() const noexcept {
    return std::visit(overloaded{
                          [](const OriginalWeight&) { return std::size_t{0}; },
                          [](const LowRankWeight& w) { return w.x.dim(1) / 2; },
                          [](const auto& w) { return w.x1.dim(1); },
                      },
                      factors_);
}

Tensor FactorizedWeight::compose() const {
    return std::visit(overloaded{
                          [](const OriginalWeight& w) { return w.w; },
                          [](const LowRankWeight& w) { return compose_low_rank(w); },
                          [this](const FedParaMatrixWeight& w) {
                              return compose_matrix(w).reshaped(shape_.weight_shape());
                          },
                          [](const FedParaTensorWeight& w) { return compose_tensor(w); },
                          [](const LowRankTensorWeight& w) { return compose_low_rank_tensor(w); },
                          [](const PFedParaWeight& w) { return compose_personalized(w); },
                      },
                      factors_);
}

std::vector<FactorRef> FactorizedWeight::factors() {
    return std::visit(overloaded{
                          [](OriginalWeight& w) { return std::vector<FactorRef>{{"W", &w.w, true}}; },
                          [](LowRankWeight& w) {
                              return std::vector<FactorRef>{{"X", &w.x, true}, {"Y", &w.y, true}};
                          },
                          [](FedParaMatrixWeight& w) {
                              return std::vector<FactorRef>{
                                  {"X1", &w.x1, true}, {"Y1", &w.y1, true}, {"X2", &w.x2, true}, {"Y2", &w.y2, true}};
                          },
                          [](PFedParaWeight& w) {
                              return std::vector<FactorRef>{
                                  {"X1", &w.x1, true}, {"Y1", &w.y1, true}, {"X2", &w.x2, false}, {"Y2", &w.y2, false}};
                          },
                          [](auto& w) {
                              return std::vector<FactorRef>{{"T1", &w.t1, true}, {"X1", &w.x1, true},
                                                            {"Y1", &w.y1, true}, {"T2", &w.t2, true},
                                                            {"X2", &w.x2, true}, {"Y2", &w.y2, true}};
                          },
                      },
                      factors_);
}

std::vector<ConstFactorRef> FactorizedWeight::factors() const {
    auto refs = const_cast<FactorizedWeight*>(this)->factors();
    std::vector<ConstFactorRef> out;
    out.reserve(refs.size());
    for (const auto& r : refs) out.push_back({r.name, r.tensor, r.global});
    return out;
}

std::vector<Tensor> FactorizedWeight::backward(const Tensor& grad_w) const {
    if (grad_w.shape() != shape_.weight_shape()) {
        throw ShapeError("weight gradient shape " + to_string(grad_w.shape()) + " does not match " +
                         to_string(shape_.weight_shape()));
    }
    return std::visit(
        overloaded{
            [&](const OriginalWeight&) { return std::vector<Tensor>{grad_w}; },
            [&](const LowRankWeight& w) {
                return std::vector<Tensor>{matmul(grad_w, w.y), matmul_tn(grad_w, w.x)};
            },
            [&](const FedParaMatrixWeight& w) {
                const auto [m, n] = matrix_dims(shape_);
                const Tensor g = grad_w.reshaped({m, n});
                const Tensor a1 = apply(w.nonlinearity, matmul_nt(w.x1, w.y1));
                const Tensor a2 = apply(w.nonlinearity, matmul_nt(w.x2, w.y2));
                const Tensor g1 = apply_backward(w.nonlinearity, hadamard(g, a2), a1);
                const Tensor g2 = apply_backward(w.nonlinearity, hadamard(g, a1), a2);
                return std::vector<Tensor>{matmul(g1, w.y1), matmul_tn(g1, w.x1), matmul(g2, w.y2),
                                           matmul_tn(g2, w.x2)};
            },
            [&](const PFedParaWeight& w) {
                const Tensor w1 = matmul_nt(w.x1, w.y1);
                Tensor w2p1 = matmul_nt(w.x2, w.y2);
                for (auto& v : w2p1.data()) v += 1.0;
                const Tensor g1 = hadamard(grad_w, w2p1);
                const Tensor g2 = hadamard(grad_w, w1);
                return std::vector<Tensor>{matmul(g1, w.y1), matmul_tn(g1, w.x1), matmul(g2, w.y2),
                                           matmul_tn(g2, w.x2)};
            },
            [&](const FedParaTensorWeight& w) {
                const Tensor a1 = apply(w.nonlinearity, tucker2(w.t1, w.x1, w.y1));
                const Tensor a2 = apply(w.nonlinearity, tucker2(w.t2, w.x2, w.y2));
                const auto b1 = tucker2_backward(w.t1, w.x1, w.y1,
                                                 apply_backward(w.nonlinearity, hadamard(grad_w, a2), a1));
                const auto b2 = tucker2_backward(w.t2, w.x2, w.y2,
                                                 apply_backward(w.nonlinearity, hadamard(grad_w, a1), a2));
                return std::vector<Tensor>{b1.core, b1.x, b1.y, b2.core, b2.x, b2.y};
            },
            [&](const LowRankTensorWeight& w) {
                const auto b1 = tucker2_backward(w.t1, w.x1, w.y1, grad_w);
                const auto b2 = tucker2_backward(w.t2, w.x2, w.y2, grad_w);
                return std::vector<Tensor>{b1.core, b1.x, b1.y, b2.core, b2.x, b2.y};
            },
        },
        factors_);
}

FactorizedWeight FactorizedWeight::shifted(const std::vector<Tensor>& delta, double scale) const {
    FactorizedWeight out = *this;
    auto refs = out.factors();
    if (refs.size() != delta.size()) {
        throw ShapeError("shifted: expected " + std::to_string(refs.size()) + " deltas, got " +
                         std::to_string(delta.size()));
    }
    for (std::size_t i = 0; i < refs.size(); ++i) *refs[i].tensor = axpy(*refs[i].tensor, scale, delta[i]);
    return out;
}

std::uint64_t FactorizedWeight::parameter_count() const {
    std::uint64_t total = 0;
    for (const auto& f : factors()) total += f.tensor->size();
    return total;
}

// ---------------------------------------------------------------------------

std::pair<std::size_t, std::size_t> optimal_inner_rank(std::size_t target_rank) {
    if (target_rank < 1) throw DomainError("target rank R must be >= 1");
    return {target_rank, target_rank};
}

std::uint64_t inner_rank_objective(std::size_t r1, std::size_t r2, std::size_t m, std::size_t n) {
    return (u64(r1) + u64(r2)) * (u64(m) + u64(n));
}

std::size_t min_full_rank(std::size_t m, std::size_t n) {
    if (m < 1 || n < 1) throw DomainError("min_full_rank requires m, n >= 1");
    const std::size_t target = std::min(m, n);
    auto r = static_cast<std::size_t>(std::sqrt(static_cast<double>(target)));
    while (r * r < target) ++r;
    while (r > 1 && (r - 1) * (r - 1) >= target) --r;
    return std::max<std::size_t>(r, 1);
}

std::uint64_t param_count(Scheme scheme, const LayerShape& s, std::size_t rank) {
    if (rank < 1) throw DomainError("rank must be >= 1");
    const std::uint64_t r = rank;
    if (s.kind == LayerKind::FC) {
        const std::uint64_t m = s.out, n = s.in;
        switch (scheme) {
            case Scheme::Original: return m * n;
            case Scheme::LowRank:
            case Scheme::FedPara:
            case Scheme::PFedPara: return 2 * r * (m + n);
            case Scheme::FedParaReshape: break;
        }
        throw DomainError("scheme " + to_string(scheme) + " is not defined for FC layers");
    }
    const std::uint64_t o = s.out, i = s.in, kk = u64(s.k1) * s.k2;
    switch (scheme) {
        case Scheme::Original: return o * i * kk;
        case Scheme::LowRank:
        case Scheme::FedPara: return 2 * r * (o + i + r * kk);
        case Scheme::FedParaReshape: return 2 * r * (o + i * kk);
        case Scheme::PFedPara: break;
    }
    throw DomainError("scheme " + to_string(scheme) + " is not defined for conv layers");
}

std::size_t max_rank(Scheme scheme, const LayerShape& s, std::size_t rank) {
    param_count(scheme, s, rank);  // validates the combination
    const auto [m, n] = matrix_dims(s);
    const std::size_t full = std::min(m, n);
    switch (scheme) {
        case Scheme::Original: return full;
        case Scheme::LowRank: return std::min(2 * rank, full);
        case Scheme::FedPara:
        case Scheme::FedParaReshape: return std::min(rank * rank, full);
        case Scheme::PFedPara: return std::min(rank * rank + rank, full);
    }
    return full;
}

RankBudget rank_from_gamma(const LayerShape& shape, double gamma, Scheme scheme) {
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw DomainError("gamma must lie in [0, 1]");
    const Scheme counted = scheme == Scheme::FedParaReshape ? Scheme::FedParaReshape : Scheme::FedPara;
    RankBudget b;
    b.gamma = gamma;
    if (shape.kind == LayerKind::Conv && counted == Scheme::FedPara) {
        b.r_min = min_full_rank(shape.out, shape.in);
    } else {
        const auto [m, n] = matrix_dims(shape);
        b.r_min = min_full_rank(m, n);
    }

    const std::uint64_t budget = param_count(Scheme::Original, shape, 1);
    std::size_t r_max = 0;
    while (param_count(counted, shape, r_max + 1) <= budget) ++r_max;
    b.r_max = r_max;

    if (b.r_max < b.r_min) {
        b.degenerate = true;
        b.r = b.r_min;
        return b;
    }
    const double target = (1.0 - gamma) * static_cast<double>(b.r_min) + gamma * static_cast<double>(b.r_max);
    // Round half up; the small offset absorbs representation error of γ.
    auto r = static_cast<std::size_t>(std::floor(target + 0.5 + 1e-9));
    b.r = std::clamp(r, b.r_min, b.r_max);
    return b;
}

// ---------------------------------------------------------------------------

namespace {

Tensor gaussian(Shape shape, double stddev, Rng& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = rng.normal(0.0, stddev);
    return t;
}

}  // namespace

FactorizedWeight init_factors(const LayerShape& shape, Scheme scheme, std::size_t rank, Rng& rng,
                              Nonlinearity nonlinearity) {
    if (nonlinearity != Nonlinearity::None && scheme != Scheme::FedPara && scheme != Scheme::FedParaReshape) {
        throw DomainError("nonlinearity only applies to fedpara and fedpara_reshape, not " + to_string(scheme));
    }
    const double target_var = 2.0 / static_cast<double>(shape.fan_in());
    const auto [m, n] = matrix_dims(shape);
    const double r = static_cast<double>(rank);

    if (scheme == Scheme::Original) {
        return FactorizedWeight(shape, OriginalWeight{gaussian(shape.weight_shape(), std::sqrt(target_var), rng)});
    }
    param_count(scheme, shape, rank);

    if (scheme == Scheme::LowRank && shape.kind == LayerKind::FC) {
        // var(XYᵀ) = 2R s^4
        const double s = std::pow(target_var / (2.0 * r), 0.25);
        Tensor x = gaussian({m, 2 * rank}, s, rng);
        Tensor y = gaussian({n, 2 * rank}, s, rng);
        return FactorizedWeight(shape, LowRankWeight{std::move(x), std::move(y)});
    }
    if ((scheme == Scheme::FedPara && shape.kind == LayerKind::FC) || scheme == Scheme::FedParaReshape) {
        // var(W) = (r s^4)^2
        const double s = std::pow(std::sqrt(target_var) / r, 0.25);
        Tensor x1 = gaussian({m, rank}, s, rng);
        Tensor y1 = gaussian({n, rank}, s, rng);
        Tensor x2 = gaussian({m, rank}, s, rng);
        Tensor y2 = gaussian({n, rank}, s, rng);
        return FactorizedWeight(shape, FedParaMatrixWeight{std::move(x1), std::move(y1), std::move(x2),
                                                           std::move(y2), nonlinearity});
    }
    if (scheme == Scheme::PFedPara) {
        // var(W1 ⊙ (W2 + 1)) = u (u + 1) with u = var(W1) = r s^4
        const double u = (std::sqrt(1.0 + 4.0 * target_var) - 1.0) / 2.0;
        const double s = std::pow(u / r, 0.25);
        Tensor x1 = gaussian({m, rank}, s, rng);
        Tensor y1 = gaussian({n, rank}, s, rng);
        Tensor x2 = gaussian({m, rank}, s, rng);
        Tensor y2 = gaussian({n, rank}, s, rng);
        return FactorizedWeight(shape, PFedParaWeight{std::move(x1), std::move(y1), std::move(x2), std::move(y2)});
    }

    // Tucker-2 forms on conv kernels: var(T ×1 X ×2 Y) = R^2 s^6.
    const Shape core{rank, rank, shape.k1, shape.k2};
    if (scheme == Scheme::FedPara) {
        const double s = std::pow(std::sqrt(target_var) / (r * r), 1.0 / 6.0);
        Tensor t1 = gaussian(core, s, rng);
        Tensor x1 = gaussian({shape.out, rank}, s, rng);
        Tensor y1 = gaussian({shape.in, rank}, s, rng);
        Tensor t2 = gaussian(core, s, rng);
        Tensor x2 = gaussian({shape.out, rank}, s, rng);
        Tensor y2 = gaussian({shape.in, rank}, s, rng);
        return FactorizedWeight(shape, FedParaTensorWeight{std::move(t1), std::move(t2), std::move(x1),
                                                           std::move(x2), std::move(y1), std::move(y2),
                                                           nonlinearity});
    }
    const double s = std::pow(target_var / (2.0 * r * r), 1.0 / 6.0);
    Tensor t1 = gaussian(core, s, rng);
    Tensor x1 = gaussian({shape.out, rank}, s, rng);
    Tensor y1 = gaussian({shape.in, rank}, s, rng);
    Tensor t2 = gaussian(core, s, rng);
    Tensor x2 = gaussian({shape.out, rank}, s, rng);
    Tensor y2 = gaussian({shape.in, rank}, s, rng);
    return FactorizedWeight(shape, LowRankTensorWeight{std::move(t1), std::move(t2), std::move(x1), std::move(x2),
                                                       std::move(y1), std::move(y2)});
}

}  // namespace fedpara
