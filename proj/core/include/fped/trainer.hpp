// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fped/checkpoint.hpp"
#include "fped/config.hpp"
#include "fped/diffusion.hpp"
#include "fped/experts.hpp"
#include "fped/losses.hpp"
#include "fped/preprocess.hpp"
#include "fped/router.hpp"
#include "fped/stroute.hpp"

namespace fped {

/// Every knob of one training run, mirrored one-to-one onto flat config keys.
/// `from_config` rejects unknown keys so a typo cannot silently fall back to
/// a default.
struct TrainConfig {
    std::string dataset;  // path to the input recordings
    std::string out_dir;  // artifact directory; empty = keep everything in memory

    AblationMode mode = AblationMode::moe;
    int epochs = 60;
    int batch_size = 8;
    double lr = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 1;

    // encoder geometry
    int embed_dim = 64;
    int tokens = 8;
    int token_dim = 32;
    int l1_hidden = 32;
    int l2_hidden = 64;
    int l2_topk = 2;
    int transformer_layers = 2;
    double cf = 1.0;
    bool position_bias = true;
    bool modality_offsets = true;

    // routing-prior schedule
    double kl_w_max = 10.0;
    double kl_w_min = 0.1;
    double kl_ramp_frac = 0.2;
    double kl_plateau_frac = 0.5;
    bool kl_mean = true;

    // objective
    LossWeights weights;

    // preprocessing
    int top_k_voxels = 2000;
    double ridge_lambda = 0.1;  // overwritten by the training-split fit

    // embedding prior
    int prior_hidden = 128;
    int prior_temb = 16;
    int prior_timesteps = 100;

    // second stage
    bool stage2 = false;
    int stage2_epochs = 200;
    double stage2_lr = 1e-3;
    int stage2_pairs = 32;

    static TrainConfig from_config(const Config& cfg);
    Config to_config() const;
    EncoderConfig encoder_config() const;
};

/// Adam with bias correction. Moments live here keyed by parameter name, so
/// one optimizer instance follows its parameter set across many tapes.
class Adam {
public:
    Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    /// One update from the gradients of the most recent backward() on `tape`.
    /// Parameters absent from `bp` are skipped (not every phase binds all).
    void step(ParamStore& params, const Tape& tape, const BoundParams& bp);

    int steps() const { return t_; }

private:
    double lr_, beta1_, beta2_, eps_;
    int t_ = 0;
    std::map<std::string, Tensor> m_, v_;
};

/// Preprocessed inputs for every sample, index-aligned with `ds.samples`.
/// The visual-only control zeroes everything outside the V segment here.
std::vector<FeatureVector> prepare_features(const Dataset& ds, const Preprocessor& pre,
                                            AblationMode mode);

struct TrainStats {
    int epochs = 0;
    int steps = 0;
    double first_epoch_loss = 0.0;
    double final_epoch_loss = 0.0;
    double final_kl_weight = 0.0;
    double stage2_first_loss = 0.0;
    double stage2_final_loss = 0.0;
};

struct TrainArtifacts {
    EncoderModel model;  // encoder plus prior (and stage-2, if run) parameters
    Preprocessor pre;
    TrainStats stats;
};

/// Full training run: preprocessing fit, encoder + prior optimization with
/// the scheduled routing penalty, optional second stage, artifact export.
/// With a non-empty out_dir writes losses.csv, routing.csv (routed modes),
/// stage2_losses.csv (if run) and model.fpck. Raises NumericError if the
/// objective diverges.
TrainArtifacts train_model(const Dataset& ds, const TrainConfig& tc);

/// Retrieval quality of the two alignment heads on one sample set.
struct EvalReport {
    int n = 0;
    double twoway_text = 0.0;   // ordered-pair identification accuracy
    double twoway_img = 0.0;
    double twoway_mean = 0.0;
    double top1_text = 0.0;     // retrieval rank-1 accuracy
    double top1_img = 0.0;
    double cos_text = 0.0;      // mean cosine to the paired target
    double cos_img = 0.0;
};

EvalReport evaluate(const EncoderModel& model, const std::vector<FeatureVector>& features,
                    const Dataset& ds, const std::vector<int>& sample_ids);
EvalReport evaluate_split(const EncoderModel& model, const Preprocessor& pre, const Dataset& ds,
                          Split split);
std::string eval_csv(const EvalReport& r);

/// Same data, same budget, same seed; only the architecture mode changes.
struct AblationRow {
    AblationMode mode = AblationMode::moe;
    double final_loss = 0.0;
    EvalReport test;
};

std::vector<AblationRow> run_ablation(const Dataset& ds, const TrainConfig& base,
                                      const std::vector<AblationMode>& modes);
std::string ablation_csv(const std::vector<AblationRow>& rows);

/// Rebuilds a usable model + preprocessor from a checkpoint's config block.
struct LoadedRun {
    EncoderModel model;
    Preprocessor pre;
    TrainConfig tc;
};
LoadedRun load_run(const Checkpoint& ck);
LoadedRun load_run(const std::string& checkpoint_path);

}  // namespace fped
