// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fped/experts.hpp"
#include "fped/router.hpp"

namespace fped {

/// Per-expert patch-similarity grid: cosine between the expert's pooled,
/// image-projected feature and every planted patch feature of one stimulus.
struct Heatmap {
    int grid = 0;                          // patches per side
    std::vector<double> values;            // grid*grid cosines in [-1, 1]
    std::vector<std::uint8_t> degenerate;  // 1 where the patch had zero norm

    double at(int r, int c) const { return values[static_cast<std::size_t>(r) * grid + c]; }
};

/// cos(f_k, patch_p) for every patch of `sample`; zero-norm patches yield 0
/// and are flagged. `f_k` must be rank-1 of the dataset's embedding width
/// with nonzero norm.
Heatmap expert_patch_similarity(const Tensor& f_k, const Dataset& ds, const RawSample& sample);

/// Reduces each first-layer expert's token grid to one embedding-width vector:
/// mean over tokens, then the trained image projection head. Empty for the
/// self-attention control, which has no expert grids.
std::vector<Tensor> expert_features(const EncoderModel& model, const FeatureVector& fv,
                                    Modality m = Modality::image);

/// Plain routing for one alignment pass, with the position bias and that
/// pass's expert logit offsets applied exactly as in the recorded forward.
RoutingState route_for_modality(const EncoderModel& model, const FeatureVector& fv, Modality m);

/// Relative contribution of each network's expert: selected routing weights
/// summed per expert over the batch (or selected counts with `by_count`),
/// normalized onto the simplex. All-zero totals raise NumericError.
Tensor routing_contribution(const std::vector<RoutingState>& batch, bool by_count = false);

/// Contribution vector for one modality over a feature batch.
Tensor contribution_for_modality(const EncoderModel& model,
                                 const std::vector<FeatureVector>& batch, Modality m,
                                 bool by_count = false);

/// Fraction of positions whose routing argmax equals their network label.
double routing_adherence(const EncoderModel& model, const std::vector<FeatureVector>& batch,
                         Modality m);

/// Writes `<base>.csv` (raw values) and `<base>.pgm` (8-bit, [-1,1] mapped
/// linearly to [0,255]).
void export_heatmap(const Heatmap& map, const std::string& base_path);
Heatmap load_heatmap_csv(const std::string& path);

/// One row per network: name, contribution.
void export_contribution(const Tensor& contrib, const std::string& path);

/// Everything `fped interpret` emits for one stimulus.
struct InterpretReport {
    std::uint64_t sample_id = 0;
    std::vector<Heatmap> expert_maps;  // one per first-layer expert
    Tensor contrib_text;               // rank-1 over the 7 networks
    Tensor contrib_img;
};

/// Heatmaps from `sample`, contributions from `batch` (falls back to the
/// uniform vector for dense modes, whose dispatch is uniform by construction).
InterpretReport interpret_sample(const EncoderModel& model, const Dataset& ds,
                                 const FeatureVector& sample_features, const RawSample& sample,
                                 const std::vector<FeatureVector>& batch, bool by_count = false);

}  // namespace fped
