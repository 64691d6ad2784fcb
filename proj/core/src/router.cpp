// SPDX-License-Identifier: Apache-2.0
#include "fped/router.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace fped {

KlSchedule make_kl_schedule(int total_epochs, double w_max, double w_min,
                            double ramp_frac, double plateau_frac) {
    if (total_epochs < 0) throw ArgumentError("make_kl_schedule: negative epoch count");
    if (ramp_frac < 0.0 || plateau_frac < 0.0 || ramp_frac + plateau_frac > 1.0)
        throw ArgumentError("make_kl_schedule: fractions must be nonnegative and sum to <= 1");
    KlSchedule s;
    s.w_max = w_max;
    s.w_min = w_min;
    s.epochs_ramp = static_cast<int>(std::lround(ramp_frac * total_epochs));
    s.epochs_plateau = static_cast<int>(std::lround(plateau_frac * total_epochs));
    s.epochs_decay = total_epochs - s.epochs_ramp - s.epochs_plateau;
    return s;
}

double kl_weight(int t, const KlSchedule& s) {
    if (t < 0) throw ArgumentError("kl_weight: negative epoch");
    if (t < s.epochs_ramp)
        return s.w_max * static_cast<double>(t) / s.epochs_ramp;
    t -= s.epochs_ramp;
    if (t < s.epochs_plateau) return s.w_max;
    t -= s.epochs_plateau;
    if (t < s.epochs_decay) {
        const double u = static_cast<double>(t) / s.epochs_decay;
        return (1.0 - u) * s.w_max + u * s.w_min;
    }
    return s.w_min;
}

int expert_capacity(int length, double cf, int n_experts) {
    if (length < 1 || n_experts < 1) throw ArgumentError("expert_capacity: length and expert count must be >= 1");
    if (!(cf > 0.0) || cf > 2.0) throw ArgumentError("expert_capacity: capacity factor must lie in (0, 2]");
    const double k = std::ceil(static_cast<double>(length) * cf / n_experts);
    return static_cast<int>(k);
}

Tensor build_prior(const std::vector<std::uint8_t>& labels, int n_experts) {
    const int n = static_cast<int>(labels.size());
    Tensor p = Tensor::zeros({n, n_experts});
    for (int i = 0; i < n; ++i) {
        const int lab = labels[i];
        if (lab < 1 || lab > n_experts) throw ArgumentError("build_prior: label out of range");
        p.at(i, lab - 1) = 1.0;
    }
    return p;
}

Tensor compute_logits(const Tensor& x, const Tensor& w_r, const Tensor& bias) {
    if (x.rank() != 1 || w_r.rank() != 1 || bias.rank() != 2)
        throw ShapeError("compute_logits: expected x, w_r rank-1 and bias rank-2");
    const int n = x.dim(0), e = w_r.dim(0);
    if (bias.dim(0) != n || bias.dim(1) != e)
        throw ShapeError("compute_logits: bias shape must be (len(x), len(w_r))");
    Tensor z = Tensor::zeros({n, e});
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < e; ++k) z.at(i, k) = x[i] * w_r[k] + bias.at(i, k);
    return z;
}

double kl_penalty(const std::vector<std::uint8_t>& labels, const Tensor& p_raw, double w) {
    if (p_raw.rank() != 2) throw ShapeError("kl_penalty: probabilities must be rank-2");
    const int n = p_raw.dim(0), e = p_raw.dim(1);
    if (static_cast<int>(labels.size()) != n) throw ShapeError("kl_penalty: label count mismatch");
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        const int lab = labels[i];
        if (lab < 1 || lab > e) throw ArgumentError("kl_penalty: label out of range");
        const double p = p_raw.at(i, lab - 1);
        if (!(p > 0.0)) throw NumericError("kl_penalty: zero probability at the prior slot");
        acc += -std::log(p);
    }
    return w * acc / n;
}

double kl_penalty(const Tensor& p_roi, const Tensor& p_raw, double w) {
    if (!p_roi.same_shape(p_raw)) throw ShapeError("kl_penalty: shape mismatch");
    const int n = p_roi.dim(0), e = p_roi.dim(1);
    std::vector<std::uint8_t> labels(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        int slot = -1;
        for (int k = 0; k < e; ++k)
            if (p_roi.at(i, k) == 1.0) { slot = k; break; }
        if (slot < 0) throw ArgumentError("kl_penalty: prior row is not one-hot");
        labels[i] = static_cast<std::uint8_t>(slot + 1);
    }
    return kl_penalty(labels, p_raw, w);
}

std::vector<int> topk_indices(const double* values, int n, int k, int stride) {
    if (k < 1 || k > n) throw ArgumentError("topk_indices: k out of range");
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int a, int b) {
        const double va = values[static_cast<std::ptrdiff_t>(a) * stride];
        const double vb = values[static_cast<std::ptrdiff_t>(b) * stride];
        if (va != vb) return va > vb;
        return a < b;
    });
    order.resize(static_cast<std::size_t>(k));
    std::sort(order.begin(), order.end());
    return order;
}

namespace {

int clamp_capacity(int capacity, int length) {
    if (capacity < 1) throw ArgumentError("dispatch: capacity must be >= 1");
    if (capacity > length) {
        std::fprintf(stderr, "warning: capacity %d exceeds feature length %d; clamped\n", capacity,
                     length);
        return length;
    }
    return capacity;
}

}  // namespace

std::vector<ExpertAssignment> dispatch(const Tensor& x, const Tensor& p_raw, int capacity) {
    if (x.rank() != 1 || p_raw.rank() != 2 || p_raw.dim(0) != x.dim(0))
        throw ShapeError("dispatch: x must be rank-1 with one probability row per entry");
    const int n = x.dim(0), e = p_raw.dim(1);
    const int k = clamp_capacity(capacity, n);
    std::vector<ExpertAssignment> out(static_cast<std::size_t>(e));
    for (int ex = 0; ex < e; ++ex) {
        ExpertAssignment& a = out[static_cast<std::size_t>(ex)];
        a.selected = topk_indices(p_raw.values().data() + ex, n, k, e);
        a.mask.assign(static_cast<std::size_t>(n), 0);
        a.weights.assign(static_cast<std::size_t>(n), 0.0);
        a.routed.assign(static_cast<std::size_t>(n), 0.0);
        for (int i : a.selected) {
            a.mask[static_cast<std::size_t>(i)] = 1;
            a.weights[static_cast<std::size_t>(i)] = p_raw.at(i, ex);
            a.routed[static_cast<std::size_t>(i)] = p_raw.at(i, ex) * x[i];
        }
    }
    return out;
}

RoutingState route(const Tensor& x, const Tensor& w_r, const Tensor& bias,
                   const std::vector<std::uint8_t>& labels, int capacity) {
    RoutingState st;
    st.logits = compute_logits(x, w_r, bias);
    st.p_raw = softmax_rows(st.logits);
    st.p_roi = build_prior(labels, w_r.dim(0));
    st.capacity = std::min(capacity, x.dim(0));
    st.experts = dispatch(x, st.p_raw, capacity);
    return st;
}

TapeRouting route_on_tape(Tape& tape, int x_id, int w_r_id, int bias_id, int mod_offset_id,
                          const std::vector<std::uint8_t>& labels, int capacity, bool kl_mean) {
    const Tensor& x = tape.value(x_id);
    const Tensor& w_r = tape.value(w_r_id);
    if (x.rank() != 1 || w_r.rank() != 1) throw ShapeError("route_on_tape: x and w_r must be rank-1");
    const int n = x.dim(0), e = w_r.dim(0);
    if (static_cast<int>(labels.size()) != n) throw ShapeError("route_on_tape: label count mismatch");

    TapeRouting r;
    r.logits = tape.outer(x_id, w_r_id);
    if (bias_id >= 0) r.logits = tape.add(r.logits, bias_id);
    if (mod_offset_id >= 0) r.logits = tape.add_rows(r.logits, mod_offset_id);
    r.p_raw = tape.row_softmax(r.logits);

    // Penalty toward the one-hot parcellation prior: gather the prior-slot
    // probability of every row, then average (or sum) the negative logs.
    std::vector<int> slots(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int lab = labels[i];
        if (lab < 1 || lab > e) throw ArgumentError("route_on_tape: label out of range");
        slots[static_cast<std::size_t>(i)] = i * e + (lab - 1);
    }
    const int prior_p = tape.gather(r.p_raw, slots);
    const int neg_log = tape.scale(tape.log(prior_p), -1.0);
    r.kl_raw = kl_mean ? tape.mean(neg_log) : tape.sum(neg_log);

    r.capacity = clamp_capacity(capacity, n);
    r.selected.resize(static_cast<std::size_t>(e));
    r.routed_compact.resize(static_cast<std::size_t>(e));
    // Select every expert's indices before recording any gather: pushing a
    // node may reallocate the tape's store and invalidate value references.
    for (int ex = 0; ex < e; ++ex) {
        const Tensor& p = tape.value(r.p_raw);
        r.selected[static_cast<std::size_t>(ex)] =
            topk_indices(p.values().data() + ex, n, r.capacity, e);
    }
    for (int ex = 0; ex < e; ++ex) {
        std::vector<int> sel = r.selected[static_cast<std::size_t>(ex)];
        std::vector<int> col_flat(sel.size());
        for (std::size_t j = 0; j < sel.size(); ++j) col_flat[j] = sel[j] * e + ex;
        const int w_sel = tape.gather(r.p_raw, col_flat);
        const int x_sel = tape.gather(x_id, sel);
        r.routed_compact[static_cast<std::size_t>(ex)] = tape.mul(w_sel, x_sel);
    }
    return r;
}

}  // namespace fped
