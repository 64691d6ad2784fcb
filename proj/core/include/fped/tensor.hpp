// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace fped {

/// Standard-normal CDF/PDF; the smooth activation below is x * CDF(x).
/// Shared by the recorded and plain forward paths so both produce
/// bit-identical values.
inline double norm_cdf(double x) { return 0.5 * std::erfc(-x * 0.70710678118654752440); }
inline double norm_pdf(double x) { return 0.39894228040143267794 * std::exp(-0.5 * x * x); }
inline double gelu_value(double x) { return x * norm_cdf(x); }

class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ArgumentError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Dense row-major tensor of 64-bit floats. Rank 0 (scalar) up to rank 3.
/// Values are stored flat; product of the extents always equals the value count.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);
    Tensor(std::vector<int> shape, std::vector<double> values);

    static Tensor scalar(double v);
    static Tensor zeros(std::vector<int> shape);
    static Tensor full(std::vector<int> shape, double v);

    int rank() const { return static_cast<int>(shape_.size()); }
    std::int64_t size() const { return static_cast<std::int64_t>(values_.size()); }
    int dim(int axis) const;
    const std::vector<int>& shape() const { return shape_; }
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    double& operator[](std::int64_t i) { return values_[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return values_[static_cast<std::size_t>(i)]; }
    double& at(int r, int c);
    double at(int r, int c) const;

    std::vector<double>& values() { return values_; }
    const std::vector<double>& values() const { return values_; }
    double* data() { return values_.data(); }
    const double* data() const { return values_.data(); }

    double item() const;  // requires size() == 1

    bool all_finite() const;
    /// Throws NumericError naming `who` if any value is NaN or infinite.
    void require_finite(const char* who) const;

private:
    std::vector<int> shape_;
    std::vector<double> values_;
};

/// Row-wise softmax of a rank-2 tensor, computed with max subtraction.
/// Each output row sums to 1; entries are floored at `floor_eps` so that
/// downstream logs never see an exact zero.
Tensor softmax_rows(const Tensor& m, double floor_eps = 1e-12);

/// In-place softmax of a contiguous range [p, p+n).
void softmax_span(double* p, int n, double floor_eps = 1e-12);

std::string shape_str(const std::vector<int>& shape);

}  // namespace fped
