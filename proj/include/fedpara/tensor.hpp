// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors of doubles and the handful of linear-algebra
// kernels the factorized layers need.

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedpara {

/// Thrown for any rank / dimension mismatch.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
    static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
    static Tensor identity(std::size_t n);
    /// Rank-2 tensor from nested rows; all rows must have equal length.
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    std::size_t dim(std::size_t axis) const;

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    // Rank-2 accessors.
    double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

    /// Same data, new shape with identical element count.
    Tensor reshaped(Shape shape) const;

    bool all_finite() const noexcept;

    Tensor& operator+=(const Tensor& other);
    Tensor& operator-=(const Tensor& other);
    Tensor& operator*=(double s) noexcept;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

Tensor operator+(Tensor a, const Tensor& b);
Tensor operator-(Tensor a, const Tensor& b);
Tensor operator*(Tensor a, double s);
Tensor operator*(double s, Tensor a);

/// a + s * b, shapes must match.
Tensor axpy(const Tensor& a, double s, const Tensor& b);

Tensor matmul(const Tensor& a, const Tensor& b);
/// a * bᵀ without materializing the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
/// aᵀ * b without materializing the transpose.
Tensor matmul_tn(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& m);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor outer(std::span<const double> u, std::span<const double> v);

Tensor map(const Tensor& t, double (*fn)(double));

double dot(const Tensor& a, const Tensor& b);
double frobenius_norm(const Tensor& t);
double max_abs(const Tensor& t);

/// Mode-`mode` unfolding: rows index dimension `mode`, columns enumerate the
/// remaining dimensions in their original order (row-major, last fastest).
Tensor unfold(const Tensor& t, std::size_t mode);
/// Inverse of unfold for a target shape.
Tensor fold(const Tensor& m, std::size_t mode, const Shape& shape);
/// t ×_mode m : replaces dimension `mode` (size k) with m.dim(0); m is p×k.
Tensor mode_n_product(const Tensor& t, const Tensor& m, std::size_t mode);

/// Singular values in descending order (one-sided Jacobi).
std::vector<double> singular_values(const Tensor& m);

/// Number of singular values above `tol`; a negative tol selects the default
/// max(rows, cols) * sigma_max * machine epsilon.
std::size_t numerical_rank(const Tensor& m, double tol = -1.0);

}  // namespace fedpara
