// SPDX-License-Identifier: Apache-2.0
//
// Shared fixtures and independent oracles for the unit tests.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>

#include "fedpara/rng.hpp"
#include "fedpara/tensor.hpp"

namespace fedpara::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = rng.normal(0.0, scale);
    return t;
}

// Textbook triple loop, kept separate from the library kernels.
inline Tensor naive_matmul(const Tensor& a, const Tensor& b) {
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor c({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += a.at(i, p) * b.at(p, j);
            c.at(i, j) = s;
        }
    return c;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
    return d;
}

/// max |a - b| / max(1, |b|) elementwise.
inline double max_rel_diff(const Tensor& a, const Tensor& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]) / std::max(1.0, std::abs(b[i])));
    return d;
}

/// Central-difference gradient of f with respect to every entry of x.
inline Tensor numeric_gradient(Tensor& x, const std::function<double()>& f, double h = 1e-6) {
    Tensor g(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x[i];
        x[i] = saved + h;
        const double up = f();
        x[i] = saved - h;
        const double down = f();
        x[i] = saved;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

/// Relative error in the sense of ‖a − b‖ / max(‖a‖, ‖b‖, tiny).
inline double relative_error(const Tensor& a, const Tensor& b) {
    double num = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double denom = std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
    return std::sqrt(num) / denom;
}

}  // namespace fedpara::testing
