// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "fped/diffusion.hpp"
#include "fped/experts.hpp"
#include "fped/rng.hpp"
#include "fped/tape.hpp"

namespace fped {

/// Geometry of the second training stage: a tiny latent image generator over
/// 16x16 synthetic targets, conditioned on the encoder's two token banks
/// (coarse = summed first-layer bank, fine = second-layer bank) through a
/// timestep-dependent two-way gate and one-head cross-attention.
struct Stage2Config {
    int image_side = 16;
    int patch_side = 4;   // image tokens are patch_side x patch_side pixel tiles
    int attn_dim = 16;
    int hidden = 64;
    int temb_dim = 16;
    int token_dim = 32;   // width of the brain token banks
    int epochs = 200;
    double lr = 1e-3;

    int pixels() const { return image_side * image_side; }
    int image_tokens() const {
        const int per_side = image_side / patch_side;
        return per_side * per_side;
    }
    int patch_pixels() const { return patch_side * patch_side; }
};

/// Creates the gate, attention, and denoising-core parameters under "st2.".
void init_stage2(ParamStore& params, const Stage2Config& cfg, Rng& rng);

/// Two-way simplex weight (coarse, fine) for a timestep. At initialization
/// the coarse weight grows with t through a fixed monotone logit bias, so
/// early denoising leans on the coarse bank.
Tensor temporal_gate(const ParamStore& params, const Stage2Config& cfg, int t, int timesteps);
int temporal_gate_on_tape(Tape& tape, const BoundParams& bp, const Stage2Config& cfg, int t,
                          int timesteps);

/// Cross-attention: image tokens as queries, brain tokens as keys/values.
/// Output has one row per query token, width attn_dim.
Tensor spatial_attend(const ParamStore& params, const Tensor& z_tokens, const Tensor& brain_tokens);
int spatial_attend_on_tape(Tape& tape, const BoundParams& bp, int z_tokens, int brain_tokens);

/// Flat pixel index of each (token, within-token) slot; a pure permutation
/// of 0..pixels-1.
std::vector<int> patch_permutation(const Stage2Config& cfg);

/// Deterministic grayscale target for a stimulus: each patch feature paints
/// its tile from its leading components, squashed into [0,1].
Tensor render_target_image(const Dataset& ds, const RawSample& sample, const Stage2Config& cfg);

struct Stage2Nodes {
    int gate = -1;      // (2) simplex node
    int attention = -1; // (image_tokens x brain_tokens) rows on the simplex
    int eps_hat = -1;   // predicted noise in token layout
    int loss = -1;
};

/// One training draw of the stage-2 denoiser, recorded on the tape. `z0` is
/// the target image scaled to [-1, 1]; the token banks enter as constants.
Stage2Nodes build_stage2_nodes(Tape& tape, const BoundParams& bp, const Stage2Config& cfg,
                               const DiffusionSchedule& sched, const Tensor& z0,
                               const Tensor& coarse, const Tensor& fine, const NoiseDraw& draw);

/// Plain stage-2 noise prediction in pixel layout (used by the sampler).
Tensor stage2_denoise(const ParamStore& params, const Stage2Config& cfg, const Tensor& z_pixels,
                      int t, int timesteps, const Tensor& coarse, const Tensor& fine);

/// Ancestral sampling; returns image_side x image_side pixel values in [0,1].
Tensor generate_image(const ParamStore& params, const Stage2Config& cfg,
                      const DiffusionSchedule& sched, const Tensor& coarse, const Tensor& fine,
                      Rng& rng);

}  // namespace fped
