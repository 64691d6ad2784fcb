// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fped/preprocess.hpp"
#include "fped/rng.hpp"
#include "fped/router.hpp"
#include "fped/tape.hpp"

namespace fped {

enum class Modality { text, image };
const char* modality_name(Modality m);

enum class AblationMode { moe, onlyv, uniform, attention, transformer };
AblationMode parse_mode(const std::string& s);
const char* mode_name(AblationMode m);

struct EncoderConfig {
    int feature_len = feature_dim;  // routed feature vector length
    int n_experts_l1 = num_networks;
    int n_experts_l2 = 14;
    int tokens = 8;      // token count of each expert's output grid
    int token_dim = 32;  // width of each token
    int embed_dim = 64;  // target embedding width
    int l1_hidden = 32;
    int l2_hidden = 64;
    double capacity_factor = 1.0;
    bool position_bias = true;     // learnable per-position routing bias
    bool modality_offsets = true;  // per-alignment-pass expert logit offsets
    int l2_topk = 2;
    int transformer_layers = 2;
    AblationMode mode = AblationMode::moe;

    bool routed_mode() const { return mode == AblationMode::moe || mode == AblationMode::onlyv; }
};

/// Named, shape-checked parameter tensors. Iteration order is lexicographic,
/// which every consumer (optimizer, checkpoint, hashing) relies on for
/// reproducibility.
class ParamStore {
public:
    Tensor& create(const std::string& name, const std::vector<int>& shape);
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    bool contains(const std::string& name) const;
    std::vector<std::string> names() const;
    std::int64_t total_size() const;
    bool all_finite() const;
    std::map<std::string, Tensor>& entries() { return store_; }
    const std::map<std::string, Tensor>& entries() const { return store_; }

private:
    std::map<std::string, Tensor> store_;
};

/// Tape leaf ids for every parameter, keyed by name.
struct BoundParams {
    std::map<std::string, int> ids;
    int id(const std::string& name) const;
    bool has(const std::string& name) const { return ids.count(name) != 0; }
};

BoundParams bind_params(Tape& tape, const ParamStore& params);

/// Binds only parameters whose name starts with `prefix` (e.g. one training
/// phase's subset); everything else stays frozen for that tape.
BoundParams bind_params(Tape& tape, const ParamStore& params, const std::string& prefix);

/// One alignment pass through the encoder trunk: routed input to token grids,
/// summation fusion, data-driven second layer, pooled projection.
struct PassOutput {
    int b = -1;        // projected embedding node, rank-1 embed_dim
    int kl_raw = -1;   // routing-prior penalty node (scalar), -1 if none
    int fused = -1;    // coarse token bank node (tokens x token_dim)
    int refined = -1;  // fine token bank node (tokens x token_dim)
    std::vector<int> expert_tokens;  // per first-layer expert token grid
    TapeRouting routing;             // populated for routed modes only
    bool has_routing = false;
};

/// Both alignment passes. Routed modes run the trunk twice (routing may
/// differ per pass through the modality offsets); dense modes share one trunk.
struct ForwardOutput {
    PassOutput text;
    PassOutput image;
};

class EncoderModel {
public:
    EncoderConfig cfg;
    ParamStore params;

    /// Creates and initializes all parameters for cfg.mode. Draw order is
    /// fixed, so (config, seed) determines every initial value.
    void init(const EncoderConfig& c, Rng& rng);

    PassOutput forward_pass(Tape& tape, const BoundParams& bp, const FeatureVector& fv,
                            Modality modality) const;
    ForwardOutput forward(Tape& tape, const BoundParams& bp, const FeatureVector& fv) const;

    int capacity() const;

    /// Trunk parameter total excluding the projection heads; the transformer
    /// variant matches this within 10% by construction.
    static std::int64_t trunk_param_count(const EncoderConfig& c);

    /// Self-attention width whose trunk parameter count best matches the
    /// expert-bank trunk; throws ConfigError if no width lands within 10%.
    static int solve_transformer_width(const EncoderConfig& c);

private:
    int transformer_width_ = 0;

    int expert_mlp(Tape& tape, const BoundParams& bp, int k, int input_id,
                   const std::vector<int>* cols) const;
    int layer2(Tape& tape, const BoundParams& bp, int fused_id) const;
    int project_head(Tape& tape, const BoundParams& bp, int refined_id, Modality m) const;
    PassOutput trunk_dense(Tape& tape, const BoundParams& bp, int x_id) const;
    PassOutput trunk_transformer(Tape& tape, const BoundParams& bp, int x_id) const;
};

/// Zeroes every position whose parcellation label is not the visual network.
FeatureVector restrict_to_visual(const FeatureVector& fv);

}  // namespace fped
