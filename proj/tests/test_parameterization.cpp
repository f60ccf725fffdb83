// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <limits>

#include "fedpara/parameterization.hpp"
#include "helpers.hpp"

using namespace fedpara;
using fedpara::testing::max_abs_diff;
using fedpara::testing::naive_matmul;
using fedpara::testing::numeric_gradient;
using fedpara::testing::random_tensor;
using fedpara::testing::relative_error;

namespace {

FedParaMatrixWeight gaussian_matrix(std::size_t m, std::size_t n, std::size_t r1, std::size_t r2, Rng& rng,
                                    Nonlinearity nl = Nonlinearity::None) {
    return {random_tensor({m, r1}, rng), random_tensor({n, r1}, rng), random_tensor({m, r2}, rng),
            random_tensor({n, r2}, rng), nl};
}

FedParaTensorWeight gaussian_tensor(const LayerShape& s, std::size_t r, Rng& rng) {
    return {random_tensor({r, r, s.k1, s.k2}, rng), random_tensor({r, r, s.k1, s.k2}, rng),
            random_tensor({s.out, r}, rng),         random_tensor({s.out, r}, rng),
            random_tensor({s.in, r}, rng),          random_tensor({s.in, r}, rng)};
}

// Tucker-2 term evaluated entry by entry, independent of mode_n_product.
Tensor tucker_oracle(const Tensor& t, const Tensor& x, const Tensor& y) {
    const std::size_t o = x.dim(0), i_dim = y.dim(0), r = x.dim(1), k1 = t.dim(2), k2 = t.dim(3);
    Tensor w({o, i_dim, k1, k2});
    for (std::size_t a = 0; a < o; ++a)
        for (std::size_t b = 0; b < i_dim; ++b)
            for (std::size_t p = 0; p < k1; ++p)
                for (std::size_t q = 0; q < k2; ++q) {
                    double s = 0.0;
                    for (std::size_t u = 0; u < r; ++u)
                        for (std::size_t v = 0; v < r; ++v)
                            s += x.at(a, u) * y.at(b, v) * t[((u * r + v) * k1 + p) * k2 + q];
                    w[((a * i_dim + b) * k1 + p) * k2 + q] = s;
                }
    return w;
}

std::size_t brute_force_r_max(Scheme scheme, const LayerShape& shape) {
    const std::uint64_t budget = param_count(Scheme::Original, shape, 1);
    std::size_t best = 0;
    for (std::size_t r = 1; r <= 4096; ++r) {
        if (param_count(scheme, shape, r) <= budget) best = r;
    }
    return best;
}

}  // namespace

TEST_CASE("layer shapes reject zero dimensions") {
    CHECK_THROWS_AS(LayerShape::fc(0, 3), DomainError);
    CHECK_THROWS_AS(LayerShape::conv(3, 3, 0, 3), DomainError);
    CHECK(LayerShape::conv(4, 3, 2, 5).weight_shape() == Shape{4, 3, 2, 5});
    CHECK(LayerShape::fc(4, 3).weight_shape() == Shape{4, 3});
}

TEST_CASE("scheme names round-trip") {
    for (Scheme s : {Scheme::Original, Scheme::LowRank, Scheme::FedPara, Scheme::FedParaReshape, Scheme::PFedPara}) {
        CHECK(scheme_from_string(to_string(s)) == s);
    }
    CHECK_THROWS_AS(scheme_from_string("tucker"), DomainError);
}

TEST_CASE("compose_matrix examples") {
    FedParaMatrixWeight ones{Tensor::ones({4, 1}), Tensor::ones({5, 1}), Tensor::ones({4, 1}), Tensor::ones({5, 1})};
    const Tensor w = compose_matrix(ones);
    CHECK(w == Tensor::ones({4, 5}));
    CHECK(numerical_rank(w) == 1);

    Rng rng(1);
    auto f = gaussian_matrix(6, 7, 2, 3, rng);
    f.x2 = Tensor::zeros({6, 3});
    CHECK(compose_matrix(f) == Tensor::zeros({6, 7}));
}

TEST_CASE("compose_matrix equals the elementwise product of the two low-rank terms") {
    Rng rng(2);
    for (Nonlinearity nl : {Nonlinearity::None, Nonlinearity::Tanh}) {
        const auto f = gaussian_matrix(5, 4, 2, 3, rng, nl);
        Tensor w1 = naive_matmul(f.x1, transpose(f.y1)), w2 = naive_matmul(f.x2, transpose(f.y2));
        if (nl == Nonlinearity::Tanh) {
            for (auto& v : w1.data()) v = std::tanh(v);
            for (auto& v : w2.data()) v = std::tanh(v);
        }
        Tensor oracle(w1.shape());
        for (std::size_t i = 0; i < oracle.size(); ++i) oracle[i] = w1[i] * w2[i];
        CHECK(max_abs_diff(compose_matrix(f), oracle) < 1e-12);
    }
}

TEST_CASE("Hadamard rank bound: rank(W) <= r1 r2") {
    Rng rng(3);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t m = 4 + rng.index(20), n = 4 + rng.index(20);
        const std::size_t r1 = 1 + rng.index(std::min<std::size_t>(4, std::min(m, n)));
        const std::size_t r2 = 1 + rng.index(std::min<std::size_t>(4, std::min(m, n)));
        const auto f = gaussian_matrix(m, n, r1, r2, rng);
        const std::size_t rank = numerical_rank(compose_matrix(f));
        CHECK(rank <= r1 * r2);
        // Generic factors attain the bound.
        CHECK(rank == std::min({r1 * r2, m, n}));
    }
}

TEST_CASE("full rank is reached with r = min_full_rank on a 100 x 100 layer") {
    // Spot check on 25 trials; the acceptance suite runs the full 1000.
    Rng rng(4);
    const std::size_t r = min_full_rank(100, 100);
    REQUIRE(r == 10);
    int full = 0;
    for (int trial = 0; trial < 25; ++trial) full += numerical_rank(compose_matrix(gaussian_matrix(100, 100, r, r, rng))) == 100;
    CHECK(full == 25);
}

TEST_CASE("low-rank composition is capped at 2R") {
    Rng rng(5);
    const LowRankWeight w{random_tensor({20, 6}, rng), random_tensor({15, 6}, rng)};
    CHECK(numerical_rank(compose_low_rank(w)) == 6);
    CHECK(max_abs_diff(compose_low_rank(w), naive_matmul(w.x, transpose(w.y))) < 1e-12);
}

TEST_CASE("compose_tensor matches the entrywise Tucker oracle") {
    Rng rng(6);
    const LayerShape s = LayerShape::conv(5, 4, 2, 3);
    const auto f = gaussian_tensor(s, 3, rng);
    const Tensor a = tucker_oracle(f.t1, f.x1, f.y1), b = tucker_oracle(f.t2, f.x2, f.y2);
    Tensor oracle(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) oracle[i] = a[i] * b[i];
    CHECK(max_abs_diff(compose_tensor(f), oracle) < 1e-12);

    LowRankTensorWeight lr{f.t1, f.t2, f.x1, f.x2, f.y1, f.y2};
    CHECK(max_abs_diff(compose_low_rank_tensor(lr), a + b) < 1e-12);
}

TEST_CASE("compose_tensor examples") {
    Rng rng(7);
    const LayerShape s = LayerShape::conv(4, 4, 3, 3);
    auto f = gaussian_tensor(s, 2, rng);
    f.t2 = Tensor::zeros(f.t2.shape());
    CHECK(compose_tensor(f) == Tensor::zeros({4, 4, 3, 3}));

    FedParaTensorWeight ones{Tensor::ones({1, 1, 3, 3}), Tensor::ones({1, 1, 3, 3}), Tensor::ones({4, 1}),
                             Tensor::ones({4, 1}),       Tensor::ones({4, 1}),       Tensor::ones({4, 1})};
    const Tensor w = compose_tensor(ones);
    CHECK(w == Tensor::ones({4, 4, 3, 3}));
    CHECK(numerical_rank(unfold(w, 0)) == 1);
}

TEST_CASE("tensor rank bound: both unfoldings agree and stay below R^2") {
    Rng rng(8);
    const LayerShape big = LayerShape::conv(16, 16, 3, 3);
    const Tensor w = compose_tensor(gaussian_tensor(big, 4, rng));
    CHECK(numerical_rank(unfold(w, 0)) == 16);
    CHECK(numerical_rank(unfold(w, 1)) == 16);

    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t o = 6 + rng.index(20), i = 6 + rng.index(20);
        const std::size_t r = 1 + rng.index(3);
        const std::size_t k = 1 + rng.index(3);
        const Tensor kernel = compose_tensor(gaussian_tensor(LayerShape::conv(o, i, k, k), r, rng));
        const std::size_t r0 = numerical_rank(unfold(kernel, 0)), r1 = numerical_rank(unfold(kernel, 1));
        CHECK(r0 <= std::min(r * r, o));
        CHECK(r1 <= std::min(r * r, i));
        if (std::min(o, i) >= r * r) CHECK(r0 == r1);
    }
}

TEST_CASE("compose_personalized examples and the two-path identity") {
    Rng rng(9);
    PFedParaWeight p{random_tensor({8, 3}, rng), random_tensor({8, 3}, rng), random_tensor({8, 3}, rng),
                     random_tensor({8, 3}, rng)};
    const Tensor w1 = naive_matmul(p.x1, transpose(p.y1));
    const Tensor w2 = naive_matmul(p.x2, transpose(p.y2));
    CHECK(max_abs_diff(compose_personalized(p), hadamard(w1, w2) + w1) <= 1e-12);

    PFedParaWeight open = p;
    open.x2 = Tensor::zeros({8, 3});
    CHECK(max_abs_diff(compose_personalized(open), w1) == 0.0);

    PFedParaWeight off = p;
    off.x1 = Tensor::zeros({8, 3});
    CHECK(compose_personalized(off) == Tensor::zeros({8, 8}));
}

TEST_CASE("construction validates factor shapes and rank preconditions") {
    Rng rng(10);
    const LayerShape fc = LayerShape::fc(6, 5);
    CHECK_THROWS_AS(FactorizedWeight(fc, OriginalWeight{Tensor({5, 6})}), ConstructionError);
    CHECK_THROWS_AS(FactorizedWeight(fc, gaussian_matrix(6, 4, 2, 2, rng)), ConstructionError);
    // r1 > min(m, n).
    CHECK_THROWS_AS(FactorizedWeight(fc, gaussian_matrix(6, 5, 6, 2, rng)), ConstructionError);
    CHECK_NOTHROW(FactorizedWeight(fc, gaussian_matrix(6, 5, 5, 2, rng)));

    const LayerShape conv = LayerShape::conv(4, 3, 3, 3);
    // R > min(O, I).
    CHECK_THROWS_AS(FactorizedWeight(conv, gaussian_tensor(conv, 4, rng)), ConstructionError);
    CHECK_NOTHROW(FactorizedWeight(conv, gaussian_tensor(conv, 3, rng)));

    PFedParaWeight p{random_tensor({6, 2}, rng), random_tensor({5, 2}, rng), random_tensor({6, 3}, rng),
                     random_tensor({5, 2}, rng)};
    CHECK_THROWS_AS(FactorizedWeight(fc, p), ConstructionError);
}

TEST_CASE("optimal inner rank") {
    CHECK(optimal_inner_rank(1) == std::pair<std::size_t, std::size_t>{1, 1});
    CHECK(optimal_inner_rank(4) == std::pair<std::size_t, std::size_t>{4, 4});
    CHECK(inner_rank_objective(4, 4, 10, 10) == 160);
    CHECK(inner_rank_objective(16, 16, 256, 256) == 16384);
    CHECK_THROWS_AS(optimal_inner_rank(0), DomainError);
}

TEST_CASE("(R, R) uniquely minimizes (r1 + r2)(m + n) subject to r1 r2 >= R^2") {
    for (auto [m, n] : {std::pair<std::size_t, std::size_t>{8, 8}, {10, 30}, {64, 64}}) {
        for (std::size_t big_r = 1; big_r <= 12; ++big_r) {
            std::uint64_t best = std::numeric_limits<std::uint64_t>::max();
            std::size_t argmins = 0, b1 = 0, b2 = 0;
            for (std::size_t r1 = 1; r1 <= big_r * big_r; ++r1)
                for (std::size_t r2 = 1; r2 <= big_r * big_r; ++r2) {
                    if (r1 * r2 < big_r * big_r) continue;
                    const std::uint64_t v = (r1 + r2) * (m + n);
                    if (v < best) {
                        best = v;
                        argmins = 1;
                        b1 = r1;
                        b2 = r2;
                    } else if (v == best) {
                        ++argmins;
                    }
                }
            CHECK(argmins == 1);
            CHECK(b1 == big_r);
            CHECK(b2 == big_r);
            CHECK(optimal_inner_rank(big_r) == std::pair{b1, b2});
            CHECK(inner_rank_objective(b1, b2, m, n) == best);
        }
    }
}

TEST_CASE("min_full_rank examples and definition") {
    CHECK(min_full_rank(100, 100) == 10);
    CHECK(min_full_rank(1, 1) == 1);
    CHECK(min_full_rank(50, 200) == 8);
    for (std::size_t m = 1; m <= 60; ++m)
        for (std::size_t n = 1; n <= 60; n += 7) {
            const std::size_t r = min_full_rank(m, n);
            CHECK(r * r >= std::min(m, n));
            CHECK((r - 1) * (r - 1) < std::min(m, n));
        }
}

TEST_CASE("parameter counts of the reference layers") {
    const LayerShape fc = LayerShape::fc(256, 256);
    const LayerShape conv = LayerShape::conv(256, 256, 3, 3);
    CHECK(param_count(Scheme::Original, fc, 16) == 65536);
    CHECK(param_count(Scheme::LowRank, fc, 16) == 16384);
    CHECK(param_count(Scheme::FedPara, fc, 16) == 16384);
    CHECK(param_count(Scheme::Original, conv, 16) == 589824);
    CHECK(param_count(Scheme::LowRank, conv, 16) == 20992);
    CHECK(param_count(Scheme::FedParaReshape, conv, 16) == 81920);
    CHECK(param_count(Scheme::FedPara, conv, 16) == 20992);

    CHECK(max_rank(Scheme::Original, fc, 16) == 256);
    CHECK(max_rank(Scheme::LowRank, fc, 16) == 32);
    CHECK(max_rank(Scheme::FedPara, fc, 16) == 256);
    CHECK(max_rank(Scheme::Original, conv, 16) == 256);
    CHECK(max_rank(Scheme::LowRank, conv, 16) == 32);
    CHECK(max_rank(Scheme::FedParaReshape, conv, 16) == 256);
    CHECK(max_rank(Scheme::FedPara, conv, 16) == 256);

    CHECK_THROWS_AS(param_count(Scheme::FedParaReshape, fc, 4), DomainError);
    CHECK_THROWS_AS(param_count(Scheme::PFedPara, conv, 4), DomainError);
    CHECK_THROWS_AS(param_count(Scheme::FedPara, fc, 0), DomainError);
}

TEST_CASE("parameter counts agree with the factors actually allocated") {
    Rng rng(11);
    struct Case {
        LayerShape shape;
        Scheme scheme;
        std::size_t r;
    };
    for (const Case& c : {Case{LayerShape::fc(7, 5), Scheme::Original, 1}, Case{LayerShape::fc(7, 5), Scheme::LowRank, 2},
                          Case{LayerShape::fc(7, 5), Scheme::FedPara, 3}, Case{LayerShape::fc(7, 5), Scheme::PFedPara, 3},
                          Case{LayerShape::conv(6, 4, 3, 2), Scheme::Original, 1},
                          Case{LayerShape::conv(6, 4, 3, 2), Scheme::LowRank, 2},
                          Case{LayerShape::conv(6, 4, 3, 2), Scheme::FedPara, 3},
                          Case{LayerShape::conv(6, 4, 3, 2), Scheme::FedParaReshape, 4}}) {
        const FactorizedWeight w = init_factors(c.shape, c.scheme, c.r, rng);
        std::uint64_t allocated = 0;
        for (const auto& f : w.factors()) allocated += f.tensor->size();
        CHECK(allocated == param_count(c.scheme, c.shape, c.r));
        CHECK(w.parameter_count() == allocated);
        CHECK(w.compose().shape() == c.shape.weight_shape());
        CHECK(w.scheme() == c.scheme);
    }
}

TEST_CASE("FedPara counts increase strictly in r and r_max respects the original budget") {
    for (const LayerShape& s : {LayerShape::fc(256, 256), LayerShape::fc(30, 200), LayerShape::conv(64, 32, 3, 3),
                                LayerShape::conv(512, 512, 3, 3)}) {
        for (std::size_t r = 1; r < 100; ++r) CHECK(param_count(Scheme::FedPara, s, r) < param_count(Scheme::FedPara, s, r + 1));
        const RankBudget b = rank_from_gamma(s, 1.0);
        CHECK(b.r_max == brute_force_r_max(Scheme::FedPara, s));
        CHECK(param_count(Scheme::FedPara, s, b.r_max) <= param_count(Scheme::Original, s, 1));
        CHECK(param_count(Scheme::FedPara, s, b.r_max + 1) > param_count(Scheme::Original, s, 1));
    }
}

TEST_CASE("rank_from_gamma examples") {
    const LayerShape fc = LayerShape::fc(256, 256);
    const RankBudget half = rank_from_gamma(fc, 0.5);
    CHECK(half.r_min == 16);
    CHECK(half.r_max == 64);
    CHECK(half.r == 40);
    CHECK(rank_from_gamma(fc, 0.0).r == 16);
    CHECK(rank_from_gamma(fc, 1.0).r == 64);
    CHECK_THROWS_AS(rank_from_gamma(fc, -0.1), DomainError);
    CHECK_THROWS_AS(rank_from_gamma(fc, 1.1), DomainError);

    // Conv r_min comes from (O, I); the reshape scheme uses (O, I K1 K2).
    const LayerShape conv = LayerShape::conv(64, 3, 3, 3);
    CHECK(rank_from_gamma(conv, 0.0, Scheme::FedPara).r_min == 2);
    CHECK(rank_from_gamma(conv, 0.0, Scheme::FedParaReshape).r_min == 6);
}

TEST_CASE("rank_from_gamma invariants over a grid") {
    for (const LayerShape& s : {LayerShape::fc(10, 10), LayerShape::fc(40, 40), LayerShape::fc(100, 30), LayerShape::conv(128, 64, 3, 3)}) {
        std::size_t previous = 0;
        for (int step = 0; step <= 20; ++step) {
            const double g = step / 20.0;
            const RankBudget b = rank_from_gamma(s, g);
            CHECK(b.r >= 1);
            if (b.degenerate) {
                CHECK(b.r == b.r_min);
                continue;
            }
            CHECK(b.r_min <= b.r);
            CHECK(b.r <= b.r_max);
            CHECK(b.r >= previous);
            const double target = (1.0 - g) * double(b.r_min) + g * double(b.r_max);
            CHECK(std::abs(double(b.r) - target) <= 0.5 + 1e-9);
            previous = b.r;
        }
    }
}

TEST_CASE("rank_from_gamma falls back to r_min on degenerate layers") {
    // 2 x 2: r_min = 2 but 2 r (m + n) = 16 r > 4.
    const RankBudget b = rank_from_gamma(LayerShape::fc(2, 2), 0.7);
    CHECK(b.degenerate);
    CHECK(b.r == b.r_min);
    CHECK_FALSE(rank_from_gamma(LayerShape::fc(256, 256), 0.7).degenerate);
}

TEST_CASE("init_factors is deterministic per seed") {
    const LayerShape s = LayerShape::fc(12, 9);
    Rng a(42), b(42), c(43);
    const auto wa = init_factors(s, Scheme::FedPara, 3, a);
    const auto wb = init_factors(s, Scheme::FedPara, 3, b);
    const auto wc = init_factors(s, Scheme::FedPara, 3, c);
    CHECK(wa.compose() == wb.compose());
    CHECK_FALSE(wa.compose() == wc.compose());
}

TEST_CASE("init_factors hits the He variance within a factor of three") {
    Rng rng(12);
    struct Case {
        LayerShape shape;
        Scheme scheme;
        std::size_t r;
        Nonlinearity nl;
    };
    const LayerShape fc = LayerShape::fc(100, 100);
    const LayerShape conv = LayerShape::conv(40, 28, 3, 3);
    for (const Case& c : {Case{fc, Scheme::Original, 1, Nonlinearity::None}, Case{fc, Scheme::LowRank, 10, Nonlinearity::None},
                          Case{fc, Scheme::FedPara, 10, Nonlinearity::None}, Case{fc, Scheme::FedPara, 10, Nonlinearity::Tanh},
                          Case{fc, Scheme::PFedPara, 10, Nonlinearity::None},
                          Case{conv, Scheme::FedPara, 6, Nonlinearity::None},
                          Case{conv, Scheme::LowRank, 6, Nonlinearity::None},
                          Case{conv, Scheme::FedParaReshape, 10, Nonlinearity::None}}) {
        const Tensor w = init_factors(c.shape, c.scheme, c.r, rng, c.nl).compose();
        REQUIRE(w.size() >= 10000);
        double mean = 0.0, var = 0.0;
        for (double v : w.data()) mean += v;
        mean /= double(w.size());
        for (double v : w.data()) var += (v - mean) * (v - mean);
        var /= double(w.size() - 1);
        const double target = 2.0 / double(c.shape.fan_in());
        CAPTURE(to_string(c.scheme));
        CHECK(var > target / 3.0);
        CHECK(var < target * 3.0);
    }
}

TEST_CASE("pFedPara factors are tagged global and local") {
    Rng rng(13);
    const auto w = init_factors(LayerShape::fc(8, 6), Scheme::PFedPara, 2, rng);
    const auto f = w.factors();
    REQUIRE(f.size() == 4);
    CHECK(std::string(f[0].name) == "X1");
    CHECK(f[0].global);
    CHECK(f[1].global);
    CHECK_FALSE(f[2].global);
    CHECK_FALSE(f[3].global);
    CHECK_THROWS_AS(init_factors(LayerShape::fc(8, 6), Scheme::PFedPara, 2, rng, Nonlinearity::Tanh), DomainError);
}

TEST_CASE("factor gradients match central differences for every scheme") {
    struct Case {
        const char* label;
        LayerShape shape;
        Scheme scheme;
        std::size_t r;
        Nonlinearity nl;
    };
    const Case cases[] = {
        {"fc original", LayerShape::fc(5, 4), Scheme::Original, 1, Nonlinearity::None},
        {"fc lowrank", LayerShape::fc(5, 4), Scheme::LowRank, 2, Nonlinearity::None},
        {"fc fedpara", LayerShape::fc(5, 4), Scheme::FedPara, 2, Nonlinearity::None},
        {"fc fedpara tanh", LayerShape::fc(5, 4), Scheme::FedPara, 3, Nonlinearity::Tanh},
        {"fc pfedpara", LayerShape::fc(5, 4), Scheme::PFedPara, 2, Nonlinearity::None},
        {"conv original", LayerShape::conv(3, 2, 2, 2), Scheme::Original, 1, Nonlinearity::None},
        {"conv lowrank", LayerShape::conv(4, 3, 2, 3), Scheme::LowRank, 2, Nonlinearity::None},
        {"conv fedpara", LayerShape::conv(4, 3, 2, 3), Scheme::FedPara, 2, Nonlinearity::None},
        {"conv fedpara tanh", LayerShape::conv(4, 3, 2, 3), Scheme::FedPara, 3, Nonlinearity::Tanh},
        {"conv fedpara reshape", LayerShape::conv(4, 3, 2, 2), Scheme::FedParaReshape, 3, Nonlinearity::None},
        {"conv fedpara reshape tanh", LayerShape::conv(4, 3, 2, 2), Scheme::FedParaReshape, 2, Nonlinearity::Tanh},
    };
    for (const Case& c : cases) {
        CAPTURE(c.label);
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            Rng rng(seed);
            FactorizedWeight w = init_factors(c.shape, c.scheme, c.r, rng, c.nl);
            // Unit-scale factors keep the difference quotient well conditioned.
            for (auto& f : w.factors())
                for (auto& v : f.tensor->data()) v = rng.normal(0.0, 0.7);
            const Tensor probe = random_tensor(c.shape.weight_shape(), rng);
            auto loss = [&] { return dot(probe, w.compose()); };
            const auto analytic = w.backward(probe);
            auto refs = w.factors();
            REQUIRE(analytic.size() == refs.size());
            for (std::size_t i = 0; i < refs.size(); ++i) {
                const Tensor numeric = numeric_gradient(*refs[i].tensor, loss);
                CAPTURE(refs[i].name);
                CHECK(relative_error(analytic[i], numeric) < 1e-5);
            }
        }
    }
}

TEST_CASE("shifted moves every factor by scale * delta") {
    Rng rng(14);
    const FactorizedWeight w = init_factors(LayerShape::fc(5, 4), Scheme::FedPara, 2, rng);
    std::vector<Tensor> delta;
    for (const auto& f : w.factors()) delta.push_back(random_tensor(f.tensor->shape(), rng));
    const FactorizedWeight s = w.shifted(delta, -0.5);
    const auto before = w.factors();
    const auto after = s.factors();
    for (std::size_t i = 0; i < delta.size(); ++i) {
        CHECK(max_abs_diff(*after[i].tensor, axpy(*before[i].tensor, -0.5, delta[i])) < 1e-15);
    }
}
