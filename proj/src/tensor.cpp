// SPDX-License-Identifier: Apache-2.0

#include "fedpara/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>

namespace fedpara {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
    }
}

void require_matrix(const Tensor& t, const char* what) {
    if (t.rank() != 2) {
        throw ShapeError(std::string(what) + ": expected a rank-2 tensor, got " + to_string(t.shape()));
    }
}

}  // namespace

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    for (auto d : shape_) {
        if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + to_string(shape_));
    }
    data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    for (auto d : shape_) {
        if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + to_string(shape_));
    }
    if (shape_size(shape_) != data_.size()) {
        throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                         to_string(shape_));
    }
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw ShapeError("ragged matrix literal");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= shape_.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " + to_string(shape_));
    }
    return shape_[axis];
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
        throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    }
    return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor& Tensor::operator+=(const Tensor& other) {
    require_same_shape(*this, other, "operator+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

Tensor& Tensor::operator-=(const Tensor& other) {
    require_same_shape(*this, other, "operator-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
    return *this;
}

Tensor& Tensor::operator*=(double s) noexcept {
    for (auto& v : data_) v *= s;
    return *this;
}

Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
Tensor operator*(Tensor a, double s) { return a *= s; }
Tensor operator*(double s, Tensor a) { return a *= s; }

Tensor axpy(const Tensor& a, double s, const Tensor& b) {
    require_same_shape(a, b, "axpy");
    Tensor out = a;
    auto o = out.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += s * bd[i];
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw ShapeError("matmul: inner dimensions differ " + to_string(a.shape()) + " * " + to_string(b.shape()));
    }
    Tensor c({m, n});
    auto cd = c.data();
    auto ad = a.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = &cd[i * n];
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = ad[i * k + p];
            if (aip == 0.0) continue;
            const double* brow = &bd[p * n];
            for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
    return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul_nt");
    require_matrix(b, "matmul_nt");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    if (b.dim(1) != k) {
        throw ShapeError("matmul_nt: inner dimensions differ " + to_string(a.shape()) + " * " +
                         to_string(b.shape()) + "^T");
    }
    Tensor c({m, n});
    auto cd = c.data();
    auto ad = a.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = &ad[i * k];
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = &bd[j * k];
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
            cd[i * n + j] = s;
        }
    }
    return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul_tn");
    require_matrix(b, "matmul_tn");
    const std::size_t k = a.dim(0), m = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw ShapeError("matmul_tn: inner dimensions differ " + to_string(a.shape()) + "^T * " +
                         to_string(b.shape()));
    }
    Tensor c({m, n});
    auto cd = c.data();
    auto ad = a.data();
    auto bd = b.data();
    for (std::size_t p = 0; p < k; ++p) {
        const double* arow = &ad[p * m];
        const double* brow = &bd[p * n];
        for (std::size_t i = 0; i < m; ++i) {
            const double api = arow[i];
            if (api == 0.0) continue;
            double* crow = &cd[i * n];
            for (std::size_t j = 0; j < n; ++j) crow[j] += api * brow[j];
        }
    }
    return c;
}

Tensor transpose(const Tensor& m) {
    require_matrix(m, "transpose");
    const std::size_t r = m.dim(0), c = m.dim(1);
    Tensor t({c, r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) t.at(j, i) = m.at(i, j);
    return t;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "hadamard");
    Tensor out = a;
    auto o = out.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bd[i];
    return out;
}

Tensor outer(std::span<const double> u, std::span<const double> v) {
    Tensor t({u.size(), v.size()});
    for (std::size_t i = 0; i < u.size(); ++i)
        for (std::size_t j = 0; j < v.size(); ++j) t.at(i, j) = u[i] * v[j];
    return t;
}

Tensor map(const Tensor& t, double (*fn)(double)) {
    Tensor out = t;
    for (auto& v : out.data()) v = fn(v);
    return out;
}

double dot(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double frobenius_norm(const Tensor& t) { return std::sqrt(dot(t, t)); }

double max_abs(const Tensor& t) {
    double m = 0.0;
    for (double v : t.data()) m = std::max(m, std::abs(v));
    return m;
}

// Row-major tensor viewed as (outer, k, inner) around `mode`.
Tensor unfold(const Tensor& t, std::size_t mode) {
    if (mode >= t.rank()) {
        throw ShapeError("unfold: mode " + std::to_string(mode) + " out of range for " + to_string(t.shape()));
    }
    const auto& s = t.shape();
    const std::size_t k = s[mode];
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < mode; ++i) outer *= s[i];
    for (std::size_t i = mode + 1; i < s.size(); ++i) inner *= s[i];
    Tensor m({k, outer * inner});
    auto src = t.data();
    auto dst = m.data();
    const std::size_t cols = outer * inner;
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t j = 0; j < k; ++j)
            for (std::size_t i = 0; i < inner; ++i) dst[j * cols + o * inner + i] = src[(o * k + j) * inner + i];
    return m;
}

Tensor fold(const Tensor& m, std::size_t mode, const Shape& shape) {
    if (mode >= shape.size()) {
        throw ShapeError("fold: mode " + std::to_string(mode) + " out of range for " + to_string(shape));
    }
    const std::size_t k = shape[mode];
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < mode; ++i) outer *= shape[i];
    for (std::size_t i = mode + 1; i < shape.size(); ++i) inner *= shape[i];
    if (m.rank() != 2 || m.dim(0) != k || m.dim(1) != outer * inner) {
        throw ShapeError("fold: matrix " + to_string(m.shape()) + " incompatible with " + to_string(shape) +
                         " at mode " + std::to_string(mode));
    }
    Tensor t(shape);
    auto src = m.data();
    auto dst = t.data();
    const std::size_t cols = outer * inner;
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t j = 0; j < k; ++j)
            for (std::size_t i = 0; i < inner; ++i) dst[(o * k + j) * inner + i] = src[j * cols + o * inner + i];
    return t;
}

Tensor mode_n_product(const Tensor& t, const Tensor& m, std::size_t mode) {
    if (mode >= t.rank()) {
        throw ShapeError("mode_n_product: mode " + std::to_string(mode) + " out of range for " +
                         to_string(t.shape()));
    }
    require_matrix(m, "mode_n_product");
    if (m.dim(1) != t.dim(mode)) {
        throw ShapeError("mode_n_product: matrix " + to_string(m.shape()) + " does not match dimension " +
                         std::to_string(mode) + " of " + to_string(t.shape()));
    }
    // Direct contraction over the (outer, k, inner) view; equivalent to
    // fold(m * unfold(t, mode)).
    const auto& s = t.shape();
    const std::size_t k = s[mode], p = m.dim(0);
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < mode; ++i) outer *= s[i];
    for (std::size_t i = mode + 1; i < s.size(); ++i) inner *= s[i];
    Shape out_shape = s;
    out_shape[mode] = p;
    Tensor out(out_shape);
    auto src = t.data();
    auto md = m.data();
    auto dst = out.data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t r = 0; r < p; ++r) {
            double* drow = &dst[(o * p + r) * inner];
            for (std::size_t j = 0; j < k; ++j) {
                const double w = md[r * k + j];
                if (w == 0.0) continue;
                const double* srow = &src[(o * k + j) * inner];
                for (std::size_t i = 0; i < inner; ++i) drow[i] += w * srow[i];
            }
        }
    }
    return out;
}

std::vector<double> singular_values(const Tensor& m) {
    require_matrix(m, "singular_values");
    // Columns of the wide side are orthogonalized; store them as contiguous rows.
    const bool tall = m.dim(0) >= m.dim(1);
    Tensor cols = tall ? transpose(m) : m;
    const std::size_t n = cols.dim(0), len = cols.dim(1);
    auto g = cols.data();

    std::vector<double> norms(n);
    for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < len; ++i) s += g[j * len + i] * g[j * len + i];
        norms[j] = s;
    }

    constexpr double eps = std::numeric_limits<double>::epsilon();
    constexpr int max_sweeps = 60;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            double* gp = &g[p * len];
            for (std::size_t q = p + 1; q < n; ++q) {
                double* gq = &g[q * len];
                const double alpha = norms[p], beta = norms[q];
                if (alpha == 0.0 || beta == 0.0) continue;
                double gamma = 0.0;
                for (std::size_t i = 0; i < len; ++i) gamma += gp[i] * gq[i];
                if (std::abs(gamma) <= eps * std::sqrt(alpha * beta)) continue;
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                double np = 0.0, nq = 0.0;
                for (std::size_t i = 0; i < len; ++i) {
                    const double x = gp[i], y = gq[i];
                    const double xp = c * x - s * y;
                    const double yq = s * x + c * y;
                    gp[i] = xp;
                    gq[i] = yq;
                    np += xp * xp;
                    nq += yq * yq;
                }
                norms[p] = np;
                norms[q] = nq;
            }
        }
        if (!rotated) break;
    }

    std::vector<double> sv(n);
    for (std::size_t j = 0; j < n; ++j) sv[j] = std::sqrt(norms[j]);
    std::sort(sv.begin(), sv.end(), std::greater<>());
    return sv;
}

std::size_t numerical_rank(const Tensor& m, double tol) {
    require_matrix(m, "numerical_rank");
    const auto sv = singular_values(m);
    if (sv.empty() || sv.front() == 0.0) return 0;
    if (tol < 0.0) {
        tol = static_cast<double>(std::max(m.dim(0), m.dim(1))) * sv.front() *
              std::numeric_limits<double>::epsilon();
    }
    return static_cast<std::size_t>(std::count_if(sv.begin(), sv.end(), [tol](double s) { return s > tol; }));
}

}  // namespace fedpara
