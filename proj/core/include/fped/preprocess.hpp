// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fped/dataset.hpp"

namespace fped {

inline constexpr int feature_dim = 4096;

/// The assembled model input: 4096 values plus a network label per position.
struct FeatureVector {
    std::uint64_t sample_id = 0;
    std::vector<double> x;           // length feature_dim
    std::vector<std::uint8_t> labels;  // length feature_dim, values 1..7
};

/// Marks the k entries of v with the largest selection statistic
/// (|v| by default, raw value when absolute_value is false).
/// Ties resolve to the lowest index. Exactly k entries are true.
std::vector<std::uint8_t> topk_mask(const std::vector<double>& v, int k, bool absolute_value = true);

/// Ridge shrinkage of one voxel's repeated measurements toward zero via the
/// all-ones design: (R / (R + lambda)) * mean(reps).
double ridge_denoise(std::span<const double> reps, double lambda);

/// Proportional concatenation. Each network with masked voxels gets a
/// contiguous segment sized by largest-remainder apportionment of the masked
/// counts into `out_dim` positions; inside a segment the masked voxels are
/// resampled to the segment length by averaging equal-width index bins.
FeatureVector assemble_feature_vector(const std::vector<double>& denoised,
                                      const std::vector<std::uint8_t>& mask,
                                      const ParcellationMap& parcellation,
                                      int out_dim = feature_dim);

/// Frozen preprocessing state. `fit` selects the ridge lambda on the training
/// split only (two folds over repetitions); afterwards `run` is a pure
/// function of one sample, so validation and test samples see no statistics
/// from outside the training split.
struct Preprocessor {
    double ridge_lambda = 0.1;
    int top_k = 2000;
    bool absolute_value = true;
    int out_dim = feature_dim;

    static Preprocessor fit(const Dataset& ds, int top_k, bool absolute_value = true);

    FeatureVector run(const Dataset& ds, const RawSample& sample) const;
};

/// Held-out squared error of the shrunk repetition mean for one lambda;
/// exposed for the selection test.
double ridge_cv_error(const Dataset& ds, double lambda);

}  // namespace fped
