// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <vector>

#include "fped/tensor.hpp"

namespace fped {

/// Reverse-mode autodiff over Tensor values.
///
/// Every primitive records a node with its saved inputs; backward() replays
/// the adjoints in reverse record order exactly once. Node values are
/// immutable once produced. The tape owns all intermediate storage, so a
/// training step is: bind leaves, build the loss, backward, read gradients,
/// discard the tape.
class Tape {
public:
    enum class Op {
        leaf,
        add,
        sub,
        mul,
        divide,
        scale,       // c0 * a
        add_const,   // a + c0
        matmul,      // A(m,k) * B(k,n)
        matmul_nt,   // A(m,k) * B(n,k)^T
        matvec,      // A(m,n) * x(n)
        linear_cols, // sum_j W[:, idx[j]] * q[j]
        outer,       // u(m) v(n)^T
        dot,
        sum,
        mean,
        row_softmax,
        log,
        exp,
        sqrt,
        gelu,
        tanh,
        clamp_min,   // max(a, c0)
        gather,      // flat-index gather -> rank-1
        concat,      // rank-1 parts -> rank-1
        stack_rows,  // N vectors (len L) -> (N, L)
        mean_axis0,  // (m, n) -> (n)
        add_rows,    // M(m,n) + v(n) broadcast over rows
        mask_mul,    // a * constant tensor (no gradient to the constant)
        scalar_mul,  // s (size 1) * a
        reshape,
        row_normalize,  // L2-normalize each row
        rowwise_dot,    // (m,n),(m,n) -> (m)
    };

    int leaf(Tensor v);

    int add(int a, int b);
    int sub(int a, int b);
    int mul(int a, int b);
    int divide(int a, int b);
    int scale(int a, double c);
    int add_const(int a, double c);
    int matmul(int a, int b);
    int matmul_nt(int a, int b);
    int matvec(int a, int x);
    int linear_cols(int w, int q, std::vector<int> cols);
    int outer(int u, int v);
    int dot(int u, int v);
    int sum(int a);
    int mean(int a);
    int row_softmax(int a);
    int log(int a);
    int exp(int a);
    int sqrt(int a);
    int gelu(int a);
    int tanh(int a);
    int clamp_min(int a, double c);
    int gather(int a, std::vector<int> flat_idx);
    int concat(const std::vector<int>& parts);
    int stack_rows(const std::vector<int>& rows);
    int mean_axis0(int a);
    int add_rows(int m, int v);
    int mask_mul(int a, Tensor mask);
    int scalar_mul(int s, int a);
    int reshape(int a, std::vector<int> shape);
    int row_normalize(int a);
    int rowwise_dot(int a, int b);

    /// Accumulates adjoints for every node reachable below `root`.
    /// `root` must hold exactly one element.
    void backward(int root);

    const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    const Tensor& grad(int id) const;
    int node_count() const { return static_cast<int>(nodes_.size()); }
    void reserve(std::size_t n) { nodes_.reserve(n); }

private:
    struct Node {
        Op op;
        Tensor value;
        std::vector<int> parents;
        std::vector<int> idx;  // gather targets / column indices
        double c0 = 0.0;
        Tensor aux;  // constant operand for mask_mul
    };

    int push(Node n);
    const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }

    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
    bool grads_valid_ = false;
};

/// Builds a scalar graph from a single leaf; used by grad_check.
using ScalarFn = std::function<int(Tape&, int)>;

/// Max over coordinates of |analytic - central difference| / (|central difference| + 1e-8).
/// h must lie in [1e-6, 1e-4].
double grad_check(const ScalarFn& f, const Tensor& theta, double h);

}  // namespace fped
