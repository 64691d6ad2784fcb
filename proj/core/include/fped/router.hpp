// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "fped/dataset.hpp"
#include "fped/tape.hpp"
#include "fped/tensor.hpp"

namespace fped {

/// Piecewise-linear weight schedule for the routing-prior penalty:
/// ramp 0 -> w_max, hold at w_max, decay w_max -> w_min, then constant w_min.
struct KlSchedule {
    int epochs_ramp = 0;
    int epochs_plateau = 0;
    int epochs_decay = 0;
    double w_max = 10.0;
    double w_min = 0.1;
};

/// Splits `total_epochs` into ramp/plateau/decay segments by fraction
/// (defaults 20% / 50% / remainder).
KlSchedule make_kl_schedule(int total_epochs, double w_max = 10.0, double w_min = 0.1,
                            double ramp_frac = 0.2, double plateau_frac = 0.5);

/// Weight at integer epoch t. Continuous in t; w(0) = 0 whenever ramp > 0.
double kl_weight(int t, const KlSchedule& s);

/// Per-expert feature budget K = ceil(L * cf / E). cf must lie in (0, 2].
int expert_capacity(int length, double cf, int n_experts);

/// One-hot rows: row i is 1 at column labels[i]-1. Labels are 1-based
/// network ids in {1..n_experts}.
Tensor build_prior(const std::vector<std::uint8_t>& labels, int n_experts = num_networks);

/// Z[i,k] = x[i] * w_r[k] + bias[i,k]. Plain (non-recorded) reference form.
Tensor compute_logits(const Tensor& x, const Tensor& w_r, const Tensor& bias);

/// w * mean_i -log P_raw[i, labels[i]-1]; the penalized rows must be strictly
/// positive at the prior slot (softmax output floor guarantees this).
double kl_penalty(const Tensor& p_roi, const Tensor& p_raw, double w);
double kl_penalty(const std::vector<std::uint8_t>& labels, const Tensor& p_raw, double w);

/// Indices of the `k` largest entries, ties resolved toward the lowest index;
/// returned in ascending index order.
std::vector<int> topk_indices(const double* values, int n, int k, int stride = 1);

/// One expert's share of the routed input.
struct ExpertAssignment {
    std::vector<int> selected;          // ascending feature indices, size min(K, L)
    std::vector<std::uint8_t> mask;     // length L, 1 at selected positions
    std::vector<double> weights;        // length L, P_raw[i,k] at selected positions else 0
    std::vector<double> routed;         // length L, weights[i] * x[i]
};

/// Everything the router produced for one input vector.
struct RoutingState {
    Tensor logits;                      // L x E
    Tensor p_raw;                       // L x E, rows on the simplex
    Tensor p_roi;                       // L x E, one-hot rows
    int capacity = 0;
    std::vector<ExpertAssignment> experts;  // size E
};

/// Expert-wise top-K selection from routing probabilities. K > L is clamped
/// to L with a warning on stderr.
std::vector<ExpertAssignment> dispatch(const Tensor& x, const Tensor& p_raw, int capacity);

/// Full plain routing pass (reference path used by diagnostics and tests).
RoutingState route(const Tensor& x, const Tensor& w_r, const Tensor& bias,
                   const std::vector<std::uint8_t>& labels, int capacity);

/// Routing recorded on a tape. Selection is made from the forward
/// probabilities; gradients flow through the selected routing weights into
/// the logit parameters. `mod_offset` (optional, id < 0 to skip) is a
/// per-expert logit offset row added to every position, letting the two
/// alignment passes route differently.
struct TapeRouting {
    int logits = -1;                    // node id, L x E
    int p_raw = -1;                     // node id, L x E
    int kl_raw = -1;                    // node id, scalar: mean_i -log P_raw[i, roi(i)]
    int capacity = 0;
    std::vector<std::vector<int>> selected;  // per expert, ascending indices
    std::vector<int> routed_compact;    // per expert: node id, rank-1 of size K
                                        // holding P_raw[i,k] * x[i] over `selected`
};

TapeRouting route_on_tape(Tape& tape, int x_id, int w_r_id, int bias_id, int mod_offset_id,
                          const std::vector<std::uint8_t>& labels, int capacity,
                          bool kl_mean = true);

}  // namespace fped
