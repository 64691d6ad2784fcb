// SPDX-License-Identifier: Apache-2.0
#include "fped/losses.hpp"

#include <cmath>

namespace fped {

namespace {

Tensor as_batch(const Tensor& t, const char* who) {
    if (t.rank() == 1) return Tensor({1, t.dim(0)}, t.values());
    if (t.rank() == 2) return t;
    throw ShapeError(std::string(who) + ": expected rank-1 or rank-2");
}

Tensor normalize_rows(const Tensor& m, const char* who) {
    Tensor out = m;
    const int rows = m.dim(0), cols = m.dim(1);
    for (int i = 0; i < rows; ++i) {
        double s = 0.0;
        for (int j = 0; j < cols; ++j) s += m.at(i, j) * m.at(i, j);
        const double norm = std::sqrt(s);
        if (norm == 0.0) throw NumericError(std::string(who) + ": zero-norm row");
        for (int j = 0; j < cols; ++j) out.at(i, j) /= norm;
    }
    return out;
}

Tensor sim_matrix(const Tensor& a, const Tensor& b, double inv_tau) {
    const int n = a.dim(0), m = b.dim(0), d = a.dim(1);
    Tensor out({n, m});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) {
            double acc = 0.0;
            for (int k = 0; k < d; ++k) acc += a.at(i, k) * b.at(j, k);
            out.at(i, j) = acc * inv_tau;
        }
    return out;
}

double soft_cross_entropy(const Tensor& targets, const Tensor& probs) {
    const int n = targets.dim(0), m = targets.dim(1);
    double acc = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) acc -= targets.at(i, j) * std::log(probs.at(i, j));
    return acc / n;
}

}  // namespace

double cosine_loss(const Tensor& b, const Tensor& c) {
    const Tensor bb = as_batch(b, "cosine_loss"), cc = as_batch(c, "cosine_loss");
    if (!bb.same_shape(cc)) throw ShapeError("cosine_loss: shape mismatch");
    const Tensor bn = normalize_rows(bb, "cosine_loss"), cn = normalize_rows(cc, "cosine_loss");
    const int n = bn.dim(0), d = bn.dim(1);
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        double dot = 0.0;
        for (int j = 0; j < d; ++j) dot += bn.at(i, j) * cn.at(i, j);
        acc += 1.0 - dot;
    }
    return acc / n;
}

double mse_loss(const Tensor& b, const Tensor& c) {
    const Tensor bb = as_batch(b, "mse_loss"), cc = as_batch(c, "mse_loss");
    if (!bb.same_shape(cc)) throw ShapeError("mse_loss: shape mismatch");
    double acc = 0.0;
    for (std::int64_t i = 0; i < bb.size(); ++i) {
        const double d = bb[i] - cc[i];
        acc += d * d;
    }
    return acc / static_cast<double>(bb.size());
}

Tensor softclip_targets(const Tensor& c, double tau) {
    if (tau <= 0.0) throw ArgumentError("softclip_targets: tau must be positive");
    const Tensor cc = as_batch(c, "softclip_targets");
    const Tensor cn = normalize_rows(cc, "softclip_targets");
    return softmax_rows(sim_matrix(cn, cn, 1.0 / tau));
}

double softclip_loss(const Tensor& b, const Tensor& c, double tau, bool bidirectional) {
    if (tau <= 0.0) throw ArgumentError("softclip_loss: tau must be positive");
    const Tensor bb = as_batch(b, "softclip_loss"), cc = as_batch(c, "softclip_loss");
    if (!bb.same_shape(cc)) throw ShapeError("softclip_loss: shape mismatch");
    const Tensor bn = normalize_rows(bb, "softclip_loss"), cn = normalize_rows(cc, "softclip_loss");
    const double inv_tau = 1.0 / tau;

    const Tensor t1 = softmax_rows(sim_matrix(cn, cn, inv_tau));
    const Tensor p1 = softmax_rows(sim_matrix(bn, cn, inv_tau));
    const double ce1 = soft_cross_entropy(t1, p1);
    if (!bidirectional) return ce1;

    const Tensor t2 = softmax_rows(sim_matrix(bn, bn, inv_tau));
    const Tensor p2 = softmax_rows(sim_matrix(cn, bn, inv_tau));
    const double ce2 = soft_cross_entropy(t2, p2);
    return 0.5 * (ce1 + ce2);
}

double total_loss(const std::vector<double>& parts, const std::vector<double>& weights) {
    if (parts.size() != weights.size()) throw ShapeError("total_loss: part/weight count mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (!std::isfinite(parts[i]))
            throw NumericError("total_loss: non-finite part at index " + std::to_string(i));
        acc += weights[i] * parts[i];
    }
    return acc;
}

int build_cosine_loss(Tape& tape, int b_id, int c_id) {
    const int bn = tape.row_normalize(b_id);
    const int cn = tape.row_normalize(c_id);
    const int per_row = tape.rowwise_dot(bn, cn);
    return tape.add_const(tape.scale(tape.mean(per_row), -1.0), 1.0);
}

int build_mse_loss(Tape& tape, int b_id, int c_id) {
    const int diff = tape.sub(b_id, c_id);
    return tape.mean(tape.mul(diff, diff));
}

int build_softclip_loss(Tape& tape, int b_id, int c_id, double tau, bool bidirectional) {
    if (tau <= 0.0) throw ArgumentError("build_softclip_loss: tau must be positive");
    const int n = tape.value(b_id).dim(0);
    const double inv_tau = 1.0 / tau;
    const int bn = tape.row_normalize(b_id);
    const int cn = tape.row_normalize(c_id);

    const int p1 = tape.row_softmax(tape.scale(tape.matmul_nt(bn, cn), inv_tau));
    const int t1 = tape.row_softmax(tape.scale(tape.matmul_nt(cn, cn), inv_tau));
    const int ce1 = tape.scale(tape.sum(tape.mul(t1, tape.log(p1))), -1.0 / n);
    if (!bidirectional) return ce1;

    const int t2 = tape.row_softmax(tape.scale(tape.matmul_nt(bn, bn), inv_tau));
    const int p2 = tape.row_softmax(tape.scale(tape.matmul_nt(cn, bn), inv_tau));
    const int ce2 = tape.scale(tape.sum(tape.mul(t2, tape.log(p2))), -1.0 / n);
    return tape.scale(tape.add(ce1, ce2), 0.5);
}

}  // namespace fped
