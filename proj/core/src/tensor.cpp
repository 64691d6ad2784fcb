// SPDX-License-Identifier: Apache-2.0
#include "fped/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace fped {

namespace {
std::int64_t shape_volume(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
        n *= d;
    }
    return n;
}
}  // namespace

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    values_.assign(static_cast<std::size_t>(shape_volume(shape_)), 0.0);
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
    if (shape_volume(shape_) != static_cast<std::int64_t>(values_.size()))
        throw ShapeError("value count does not match shape " + shape_str(shape_));
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

Tensor Tensor::zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.values_.begin(), t.values_.end(), v);
    return t;
}

int Tensor::dim(int axis) const {
    if (axis < 0 || axis >= rank()) throw ShapeError("axis out of range");
    return shape_[static_cast<std::size_t>(axis)];
}

double& Tensor::at(int r, int c) {
    return values_[static_cast<std::size_t>(r) * shape_[1] + c];
}

double Tensor::at(int r, int c) const {
    return values_[static_cast<std::size_t>(r) * shape_[1] + c];
}

double Tensor::item() const {
    if (size() != 1) throw ShapeError("item() requires a single-element tensor");
    return values_[0];
}

bool Tensor::all_finite() const {
    for (double v : values_)
        if (!std::isfinite(v)) return false;
    return true;
}

void Tensor::require_finite(const char* who) const {
    if (!all_finite()) throw NumericError(std::string(who) + ": non-finite value");
}

void softmax_span(double* p, int n, double floor_eps) {
    double mx = p[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, p[i]);
    double denom = 0.0;
    for (int i = 0; i < n; ++i) {
        p[i] = std::exp(p[i] - mx);
        denom += p[i];
    }
    for (int i = 0; i < n; ++i) p[i] = std::max(p[i] / denom, floor_eps);
}

Tensor softmax_rows(const Tensor& m, double floor_eps) {
    if (m.rank() != 2) throw ShapeError("softmax_rows expects rank-2 input, got " + shape_str(m.shape()));
    m.require_finite("softmax_rows");
    Tensor out = m;
    const int rows = m.dim(0);
    const int cols = m.dim(1);
    for (int r = 0; r < rows; ++r) softmax_span(out.data() + static_cast<std::int64_t>(r) * cols, cols, floor_eps);
    return out;
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << ")";
    return os.str();
}

}  // namespace fped
