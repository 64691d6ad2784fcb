// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "fped/experts.hpp"
#include "fped/rng.hpp"
#include "fped/tape.hpp"
#include "fped/tensor.hpp"

namespace fped {

/// Linear variance schedule for the denoising chain. alpha_bar is the
/// running product of (1 - beta_t), strictly decreasing in t.
struct DiffusionSchedule {
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;

    int timesteps() const { return static_cast<int>(beta.size()); }
    static DiffusionSchedule linear(int timesteps = 100, double beta_min = 1e-4,
                                    double beta_max = 0.02);
};

/// Fixed sin/cos position code for an integer timestep; dim must be even.
Tensor sinusoidal_time_embedding(int t, int dim);

/// Creates the noise-prediction perceptron's parameters under `prefix`:
/// one hidden layer over [x_t | time code | condition].
void init_denoiser(ParamStore& params, int embed_dim, int hidden, int temb_dim, Rng& rng,
                   const std::string& prefix = "prior.");

/// x_t = sqrt(alpha_bar_t) x_0 + sqrt(1 - alpha_bar_t) eps.
Tensor noising(const DiffusionSchedule& sched, const Tensor& x0, int t, const Tensor& eps);

struct NoiseDraw {
    int t = 0;
    Tensor eps;
};
NoiseDraw draw_noise(const DiffusionSchedule& sched, int dim, Rng& rng);

/// Recorded denoiser application; `b_id` is the conditioning embedding node.
int denoiser_on_tape(Tape& tape, const BoundParams& bp, int xt_id, int t, int b_id,
                     const std::string& prefix = "prior.");

/// One training draw recorded on the tape: the noised input is constant,
/// gradients flow through the denoiser parameters and the condition.
struct DiffusionNodes {
    int xt = -1;      // constant leaf
    int eps_hat = -1;
    int loss = -1;    // per-dimension mean of (eps - eps_hat)^2
    int x0_hat = -1;  // single-step clean estimate (x_t - sqrt(1-a)eps_hat)/sqrt(a)
};
DiffusionNodes build_diffusion_nodes(Tape& tape, const BoundParams& bp,
                                     const DiffusionSchedule& sched, const Tensor& x0, int b_id,
                                     const NoiseDraw& draw, const std::string& prefix = "prior.");

/// Plain (non-recorded) denoiser forward; matches the recorded path bitwise.
Tensor denoiser_apply(const ParamStore& params, const Tensor& xt, int t, const Tensor& b,
                      const std::string& prefix = "prior.");

/// Draws (t, eps) internally and returns the noise-prediction error.
double dp_loss(const ParamStore& params, const DiffusionSchedule& sched, const Tensor& x0,
               const Tensor& b, Rng& rng, const std::string& prefix = "prior.");

/// Ancestral reverse sampling from pure noise, conditioned on b.
/// Deterministic given the generator state.
Tensor sample_prior(const ParamStore& params, const DiffusionSchedule& sched, const Tensor& b,
                    Rng& rng, const std::string& prefix = "prior.");

}  // namespace fped
