// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "fped/tape.hpp"
#include "fped/tensor.hpp"

namespace fped {

/// Per-term multipliers on the training objective. Defaults of 1.0 give the
/// plain unweighted sum.
struct LossWeights {
    double kl = 1.0;
    double cos = 1.0;
    double mse = 1.0;
    double softclip = 1.0;
    double dp = 1.0;
    double prior_clip = 1.0;
    double tau = 0.125;          // contrastive temperature
    double lambda_prior = 1.0;   // multiplier inside the prior contrastive term
    bool softclip_bidirectional = true;
};

/// One batch's objective terms, stored as they enter the total (i.e. after
/// their multipliers), so total always equals the sum of the parts.
struct LossBreakdown {
    int epoch = 0;
    int batch = 0;
    double kl = 0.0;
    double cos = 0.0;
    double mse = 0.0;
    double softclip = 0.0;
    double dp = 0.0;
    double prior_clip = 0.0;
    double total = 0.0;

    double sum_parts() const { return kl + cos + mse + softclip + dp + prior_clip; }
};

/// Batch-averaged 1 - cos(b_i, c_i). Rank-1 inputs are treated as a batch of
/// one. Zero-norm rows raise NumericError.
double cosine_loss(const Tensor& b, const Tensor& c);

/// Grand mean of squared differences (per-dimension mean, batch-averaged).
double mse_loss(const Tensor& b, const Tensor& c);

/// Contrastive loss with soft targets from intra-batch target similarity.
/// Rows are L2-normalized internally. With `bidirectional` the transpose
/// direction (prediction-similarity targets, target-row predictions) is
/// averaged in.
double softclip_loss(const Tensor& b, const Tensor& c, double tau, bool bidirectional = true);

/// Soft target matrix t_ij = softmax_j(c_i . c_j / tau) over normalized rows.
Tensor softclip_targets(const Tensor& c, double tau);

/// Weighted sum of parts; any non-finite part raises NumericError naming its
/// position.
double total_loss(const std::vector<double>& parts, const std::vector<double>& weights);

// Recorded (differentiable) forms. `b_id` and `c_id` are rank-2 batch nodes;
// gradients flow into both unless the caller made `c_id` a plain data leaf.
int build_cosine_loss(Tape& tape, int b_id, int c_id);
int build_mse_loss(Tape& tape, int b_id, int c_id);
int build_softclip_loss(Tape& tape, int b_id, int c_id, double tau, bool bidirectional = true);

}  // namespace fped
