// SPDX-License-Identifier: Apache-2.0
#include "fped/diffusion.hpp"

#include <cmath>

namespace fped {

DiffusionSchedule DiffusionSchedule::linear(int timesteps, double beta_min, double beta_max) {
    if (timesteps < 2) throw ArgumentError("DiffusionSchedule: need at least 2 timesteps");
    if (!(beta_min > 0.0) || !(beta_max < 1.0) || beta_min > beta_max)
        throw ArgumentError("DiffusionSchedule: need 0 < beta_min <= beta_max < 1");
    DiffusionSchedule s;
    s.beta.resize(static_cast<std::size_t>(timesteps));
    s.alpha.resize(static_cast<std::size_t>(timesteps));
    s.alpha_bar.resize(static_cast<std::size_t>(timesteps));
    double prod = 1.0;
    for (int t = 0; t < timesteps; ++t) {
        s.beta[static_cast<std::size_t>(t)] =
            beta_min + (beta_max - beta_min) * static_cast<double>(t) / (timesteps - 1);
        s.alpha[static_cast<std::size_t>(t)] = 1.0 - s.beta[static_cast<std::size_t>(t)];
        prod *= s.alpha[static_cast<std::size_t>(t)];
        s.alpha_bar[static_cast<std::size_t>(t)] = prod;
    }
    return s;
}

Tensor sinusoidal_time_embedding(int t, int dim) {
    if (dim < 2 || dim % 2 != 0) throw ArgumentError("sinusoidal_time_embedding: dim must be even");
    const int half = dim / 2;
    Tensor out({dim});
    for (int i = 0; i < half; ++i) {
        const double freq = std::pow(10000.0, -static_cast<double>(i) / half);
        out[i] = std::sin(t * freq);
        out[half + i] = std::cos(t * freq);
    }
    return out;
}

void init_denoiser(ParamStore& params, int embed_dim, int hidden, int temb_dim, Rng& rng,
                   const std::string& prefix) {
    const int in_dim = 2 * embed_dim + temb_dim;
    Tensor& w1 = params.create(prefix + "w1", {hidden, in_dim});
    const double s1 = 1.0 / std::sqrt(static_cast<double>(in_dim));
    for (std::int64_t i = 0; i < w1.size(); ++i) w1[i] = s1 * rng.gauss();
    params.create(prefix + "b1", {hidden});
    Tensor& w2 = params.create(prefix + "w2", {embed_dim, hidden});
    const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
    for (std::int64_t i = 0; i < w2.size(); ++i) w2[i] = s2 * rng.gauss();
    params.create(prefix + "b2", {embed_dim});
}

namespace {

void check_t(const DiffusionSchedule& sched, int t, const char* who) {
    if (t < 0 || t >= sched.timesteps())
        throw ArgumentError(std::string(who) + ": timestep out of range");
}

// The time-code width is the leftover of the first layer's input after the
// noised vector and the condition.
int infer_temb_dim(const Tensor& w1, int embed_dim) {
    const int temb = w1.dim(1) - 2 * embed_dim;
    if (temb < 2) throw ShapeError("denoiser: first-layer width disagrees with embed_dim");
    return temb;
}

}  // namespace

Tensor noising(const DiffusionSchedule& sched, const Tensor& x0, int t, const Tensor& eps) {
    check_t(sched, t, "noising");
    if (!x0.same_shape(eps)) throw ShapeError("noising: x0 and eps shapes differ");
    const double ab = sched.alpha_bar[static_cast<std::size_t>(t)];
    const double c0 = std::sqrt(ab), c1 = std::sqrt(1.0 - ab);
    Tensor out = x0;
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = c0 * x0[i] + c1 * eps[i];
    return out;
}

NoiseDraw draw_noise(const DiffusionSchedule& sched, int dim, Rng& rng) {
    NoiseDraw d;
    d.t = static_cast<int>(rng.uniform_int(sched.timesteps()));
    d.eps = Tensor({dim});
    for (int i = 0; i < dim; ++i) d.eps[i] = rng.gauss();
    return d;
}

int denoiser_on_tape(Tape& tape, const BoundParams& bp, int xt_id, int t, int b_id,
                     const std::string& prefix) {
    const int w1 = bp.id(prefix + "w1");
    const int embed_dim = tape.value(bp.id(prefix + "w2")).dim(0);
    const int temb_dim = infer_temb_dim(tape.value(w1), embed_dim);
    const int temb = tape.leaf(sinusoidal_time_embedding(t, temb_dim));
    const int in = tape.concat({xt_id, temb, b_id});
    const int h = tape.gelu(tape.add(tape.matvec(w1, in), bp.id(prefix + "b1")));
    return tape.add(tape.matvec(bp.id(prefix + "w2"), h), bp.id(prefix + "b2"));
}

DiffusionNodes build_diffusion_nodes(Tape& tape, const BoundParams& bp,
                                     const DiffusionSchedule& sched, const Tensor& x0, int b_id,
                                     const NoiseDraw& draw, const std::string& prefix) {
    check_t(sched, draw.t, "build_diffusion_nodes");
    DiffusionNodes n;
    n.xt = tape.leaf(noising(sched, x0, draw.t, draw.eps));
    n.eps_hat = denoiser_on_tape(tape, bp, n.xt, draw.t, b_id, prefix);
    const int diff = tape.sub(tape.leaf(draw.eps), n.eps_hat);
    n.loss = tape.mean(tape.mul(diff, diff));
    const double ab = sched.alpha_bar[static_cast<std::size_t>(draw.t)];
    n.x0_hat = tape.scale(tape.sub(n.xt, tape.scale(n.eps_hat, std::sqrt(1.0 - ab))),
                          1.0 / std::sqrt(ab));
    return n;
}

Tensor denoiser_apply(const ParamStore& params, const Tensor& xt, int t, const Tensor& b,
                      const std::string& prefix) {
    const Tensor& w1 = params.at(prefix + "w1");
    const Tensor& b1 = params.at(prefix + "b1");
    const Tensor& w2 = params.at(prefix + "w2");
    const Tensor& b2 = params.at(prefix + "b2");
    const int embed_dim = w2.dim(0);
    if (xt.rank() != 1 || b.rank() != 1 || xt.dim(0) != embed_dim || b.dim(0) != embed_dim)
        throw ShapeError("denoiser_apply: expected two rank-1 inputs of the embedding width");
    const int temb_dim = infer_temb_dim(w1, embed_dim);
    const Tensor temb = sinusoidal_time_embedding(t, temb_dim);

    std::vector<double> in;
    in.reserve(static_cast<std::size_t>(w1.dim(1)));
    in.insert(in.end(), xt.values().begin(), xt.values().end());
    in.insert(in.end(), temb.values().begin(), temb.values().end());
    in.insert(in.end(), b.values().begin(), b.values().end());

    const int hidden = w1.dim(0);
    Tensor h({hidden});
    for (int i = 0; i < hidden; ++i) {
        double acc = b1[i];
        const double* row = w1.data() + static_cast<std::int64_t>(i) * w1.dim(1);
        for (int j = 0; j < w1.dim(1); ++j) acc += row[j] * in[static_cast<std::size_t>(j)];
        h[i] = gelu_value(acc);
    }
    Tensor out({embed_dim});
    for (int i = 0; i < embed_dim; ++i) {
        double acc = b2[i];
        const double* row = w2.data() + static_cast<std::int64_t>(i) * hidden;
        for (int j = 0; j < hidden; ++j) acc += row[j] * h[j];
        out[i] = acc;
    }
    return out;
}

double dp_loss(const ParamStore& params, const DiffusionSchedule& sched, const Tensor& x0,
               const Tensor& b, Rng& rng, const std::string& prefix) {
    const NoiseDraw draw = draw_noise(sched, x0.dim(0), rng);
    const Tensor xt = noising(sched, x0, draw.t, draw.eps);
    const Tensor eps_hat = denoiser_apply(params, xt, draw.t, b, prefix);
    double acc = 0.0;
    for (std::int64_t i = 0; i < eps_hat.size(); ++i) {
        const double d = draw.eps[i] - eps_hat[i];
        acc += d * d;
    }
    return acc / static_cast<double>(eps_hat.size());
}

Tensor sample_prior(const ParamStore& params, const DiffusionSchedule& sched, const Tensor& b,
                    Rng& rng, const std::string& prefix) {
    const int dim = params.at(prefix + "w2").dim(0);
    Tensor x({dim});
    for (int i = 0; i < dim; ++i) x[i] = rng.gauss();
    for (int t = sched.timesteps() - 1; t >= 0; --t) {
        const Tensor eps_hat = denoiser_apply(params, x, t, b, prefix);
        const double alpha = sched.alpha[static_cast<std::size_t>(t)];
        const double ab = sched.alpha_bar[static_cast<std::size_t>(t)];
        const double coef = sched.beta[static_cast<std::size_t>(t)] / std::sqrt(1.0 - ab);
        const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha);
        for (int i = 0; i < dim; ++i) x[i] = inv_sqrt_alpha * (x[i] - coef * eps_hat[i]);
        if (t > 0) {
            const double ab_prev = sched.alpha_bar[static_cast<std::size_t>(t - 1)];
            const double var = (1.0 - ab_prev) / (1.0 - ab) * sched.beta[static_cast<std::size_t>(t)];
            const double sigma = std::sqrt(var);
            for (int i = 0; i < dim; ++i) x[i] += sigma * rng.gauss();
        }
        x.require_finite("sample_prior");
    }
    return x;
}

}  // namespace fped
