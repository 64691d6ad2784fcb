// SPDX-License-Identifier: Apache-2.0
#include "fped/stroute.hpp"

#include <algorithm>
#include <cmath>

namespace fped {

namespace {

Tensor mat_mul(const Tensor& a, const Tensor& b) {
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) throw ShapeError("stage2: matrix product shape mismatch");
    Tensor out({m, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int t = 0; t < k; ++t) acc += a.at(i, t) * b.at(t, j);
            out.at(i, j) = acc;
        }
    return out;
}

Tensor mat_mul_nt(const Tensor& a, const Tensor& b) {
    const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
    if (b.dim(1) != k) throw ShapeError("stage2: transposed product shape mismatch");
    Tensor out({m, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int t = 0; t < k; ++t) acc += a.at(i, t) * b.at(j, t);
            out.at(i, j) = acc;
        }
    return out;
}

double mono_bias(int t, int timesteps) {
    if (t < 0 || t >= timesteps) throw ArgumentError("temporal_gate: timestep out of range");
    return 2.0 * static_cast<double>(t) / (timesteps - 1) - 1.0;
}

void fill_gauss(Tensor& t, Rng& rng, double scale) {
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = scale * rng.gauss();
}

}  // namespace

void init_stage2(ParamStore& params, const Stage2Config& cfg, Rng& rng) {
    if (cfg.image_side % cfg.patch_side != 0)
        throw ConfigError("stage2: image side must be divisible by the patch side");
    const int pp = cfg.patch_pixels();
    params.create("st2.gate.w", {2, cfg.temb_dim});  // zero start: the fixed bias sets the initial tilt
    params.create("st2.gate.b", {2});
    fill_gauss(params.create("st2.attn.wq", {pp, cfg.attn_dim}), rng, 1.0 / std::sqrt(double(pp)));
    fill_gauss(params.create("st2.attn.wk", {cfg.token_dim, cfg.attn_dim}), rng,
               1.0 / std::sqrt(double(cfg.token_dim)));
    fill_gauss(params.create("st2.attn.wv", {cfg.token_dim, cfg.attn_dim}), rng,
               1.0 / std::sqrt(double(cfg.token_dim)));
    fill_gauss(params.create("st2.core.wz", {pp, cfg.hidden}), rng, 1.0 / std::sqrt(double(pp)));
    fill_gauss(params.create("st2.core.wc", {cfg.attn_dim, cfg.hidden}), rng,
               1.0 / std::sqrt(double(cfg.attn_dim)));
    fill_gauss(params.create("st2.core.wt", {cfg.hidden, cfg.temb_dim}), rng,
               1.0 / std::sqrt(double(cfg.temb_dim)));
    params.create("st2.core.b1", {cfg.hidden});
    fill_gauss(params.create("st2.core.wo", {cfg.hidden, pp}), rng,
               1.0 / std::sqrt(double(cfg.hidden)));
    params.create("st2.core.bo", {pp});
}

Tensor temporal_gate(const ParamStore& params, const Stage2Config& cfg, int t, int timesteps) {
    const Tensor temb = sinusoidal_time_embedding(t, cfg.temb_dim);
    const Tensor& w = params.at("st2.gate.w");
    const Tensor& b = params.at("st2.gate.b");
    Tensor logits({2});
    for (int i = 0; i < 2; ++i) {
        double acc = b[i];
        for (int j = 0; j < cfg.temb_dim; ++j) acc += w.at(i, j) * temb[j];
        logits[i] = acc;
    }
    logits[0] += mono_bias(t, timesteps);
    softmax_span(logits.data(), 2);
    return logits;
}

int temporal_gate_on_tape(Tape& tape, const BoundParams& bp, const Stage2Config& cfg, int t,
                          int timesteps) {
    const int temb = tape.leaf(sinusoidal_time_embedding(t, cfg.temb_dim));
    int logits = tape.add(tape.matvec(bp.id("st2.gate.w"), temb), bp.id("st2.gate.b"));
    logits = tape.add(logits, tape.leaf(Tensor({2}, {mono_bias(t, timesteps), 0.0})));
    return tape.row_softmax(logits);
}

Tensor spatial_attend(const ParamStore& params, const Tensor& z_tokens,
                      const Tensor& brain_tokens) {
    const Tensor q = mat_mul(z_tokens, params.at("st2.attn.wq"));
    const Tensor k = mat_mul(brain_tokens, params.at("st2.attn.wk"));
    const Tensor v = mat_mul(brain_tokens, params.at("st2.attn.wv"));
    Tensor scores = mat_mul_nt(q, k);
    const double inv = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
    for (std::int64_t i = 0; i < scores.size(); ++i) scores[i] *= inv;
    const Tensor att = softmax_rows(scores);
    return mat_mul(att, v);
}

int spatial_attend_on_tape(Tape& tape, const BoundParams& bp, int z_tokens, int brain_tokens) {
    const int q = tape.matmul(z_tokens, bp.id("st2.attn.wq"));
    const int k = tape.matmul(brain_tokens, bp.id("st2.attn.wk"));
    const int v = tape.matmul(brain_tokens, bp.id("st2.attn.wv"));
    const double inv = 1.0 / std::sqrt(static_cast<double>(tape.value(q).dim(1)));
    const int att = tape.row_softmax(tape.scale(tape.matmul_nt(q, k), inv));
    return tape.matmul(att, v);
}

std::vector<int> patch_permutation(const Stage2Config& cfg) {
    const int per_side = cfg.image_side / cfg.patch_side;
    std::vector<int> perm;
    perm.reserve(static_cast<std::size_t>(cfg.pixels()));
    for (int j = 0; j < per_side * per_side; ++j) {
        const int jr = j / per_side, jc = j % per_side;
        for (int p = 0; p < cfg.patch_pixels(); ++p) {
            const int r = p / cfg.patch_side, c = p % cfg.patch_side;
            perm.push_back((jr * cfg.patch_side + r) * cfg.image_side + jc * cfg.patch_side + c);
        }
    }
    return perm;
}

Tensor render_target_image(const Dataset& ds, const RawSample& sample, const Stage2Config& cfg) {
    if (cfg.image_side % ds.patch_grid != 0)
        throw ConfigError("render_target_image: image side must be divisible by the patch grid");
    const int tile = cfg.image_side / ds.patch_grid;
    if (tile * tile > ds.embed_dim)
        throw ConfigError("render_target_image: patch feature too short for the tile");
    Tensor img({cfg.image_side, cfg.image_side});
    for (int pr = 0; pr < ds.patch_grid; ++pr)
        for (int pc = 0; pc < ds.patch_grid; ++pc) {
            const double* f = ds.patch_feature(sample, pr * ds.patch_grid + pc);
            for (int r = 0; r < tile; ++r)
                for (int c = 0; c < tile; ++c)
                    img.at(pr * tile + r, pc * tile + c) = 0.5 + 0.5 * std::tanh(f[r * tile + c]);
        }
    return img;
}

Stage2Nodes build_stage2_nodes(Tape& tape, const BoundParams& bp, const Stage2Config& cfg,
                               const DiffusionSchedule& sched, const Tensor& z0,
                               const Tensor& coarse, const Tensor& fine, const NoiseDraw& draw) {
    if (z0.rank() != 1 || z0.dim(0) != cfg.pixels())
        throw ShapeError("stage2: z0 must be a flat pixel vector");
    if (!coarse.same_shape(fine) || coarse.rank() != 2 || coarse.dim(1) != cfg.token_dim)
        throw ShapeError("stage2: token banks must share shape (tokens x token_dim)");

    Stage2Nodes out;
    const std::vector<int> perm = patch_permutation(cfg);
    const int n_tok = cfg.image_tokens(), pp = cfg.patch_pixels();

    const int xt = tape.leaf(noising(sched, z0, draw.t, draw.eps));
    std::vector<int> tok_rows;
    tok_rows.reserve(static_cast<std::size_t>(n_tok));
    for (int j = 0; j < n_tok; ++j) {
        std::vector<int> idx(perm.begin() + static_cast<std::ptrdiff_t>(j) * pp,
                             perm.begin() + static_cast<std::ptrdiff_t>(j + 1) * pp);
        tok_rows.push_back(tape.gather(xt, idx));
    }
    const int z_tok = tape.stack_rows(tok_rows);

    out.gate = temporal_gate_on_tape(tape, bp, cfg, draw.t, sched.timesteps());
    const int coarse_id = tape.leaf(coarse);
    const int fine_id = tape.leaf(fine);
    const int gated = tape.add(tape.scalar_mul(tape.gather(out.gate, {0}), coarse_id),
                               tape.scalar_mul(tape.gather(out.gate, {1}), fine_id));

    const int q = tape.matmul(z_tok, bp.id("st2.attn.wq"));
    const int k = tape.matmul(gated, bp.id("st2.attn.wk"));
    const int v = tape.matmul(gated, bp.id("st2.attn.wv"));
    const double inv = 1.0 / std::sqrt(static_cast<double>(cfg.attn_dim));
    out.attention = tape.row_softmax(tape.scale(tape.matmul_nt(q, k), inv));
    const int ctx = tape.matmul(out.attention, v);

    const int temb = tape.leaf(sinusoidal_time_embedding(draw.t, cfg.temb_dim));
    const int shift = tape.add(bp.id("st2.core.b1"), tape.matvec(bp.id("st2.core.wt"), temb));
    const int hid = tape.gelu(tape.add_rows(
        tape.add(tape.matmul(z_tok, bp.id("st2.core.wz")), tape.matmul(ctx, bp.id("st2.core.wc"))),
        shift));
    out.eps_hat = tape.add_rows(tape.matmul(hid, bp.id("st2.core.wo")), bp.id("st2.core.bo"));

    Tensor target({n_tok, pp});
    for (int j = 0; j < n_tok; ++j)
        for (int p = 0; p < pp; ++p)
            target.at(j, p) = draw.eps[perm[static_cast<std::size_t>(j) * pp + p]];
    const int diff = tape.sub(tape.leaf(target), out.eps_hat);
    out.loss = tape.mean(tape.mul(diff, diff));
    return out;
}

Tensor stage2_denoise(const ParamStore& params, const Stage2Config& cfg, const Tensor& z_pixels,
                      int t, int timesteps, const Tensor& coarse, const Tensor& fine) {
    const std::vector<int> perm = patch_permutation(cfg);
    const int n_tok = cfg.image_tokens(), pp = cfg.patch_pixels();
    Tensor z_tok({n_tok, pp});
    for (int j = 0; j < n_tok; ++j)
        for (int p = 0; p < pp; ++p)
            z_tok.at(j, p) = z_pixels[perm[static_cast<std::size_t>(j) * pp + p]];

    const Tensor gate = temporal_gate(params, cfg, t, timesteps);
    Tensor gated = coarse;
    for (std::int64_t i = 0; i < gated.size(); ++i)
        gated[i] = gate[0] * coarse[i] + gate[1] * fine[i];

    const Tensor ctx = spatial_attend(params, z_tok, gated);
    const Tensor temb = sinusoidal_time_embedding(t, cfg.temb_dim);
    const Tensor& wt = params.at("st2.core.wt");
    const Tensor& b1 = params.at("st2.core.b1");
    Tensor shift({cfg.hidden});
    for (int i = 0; i < cfg.hidden; ++i) {
        double acc = b1[i];
        for (int j = 0; j < cfg.temb_dim; ++j) acc += wt.at(i, j) * temb[j];
        shift[i] = acc;
    }
    Tensor hid = mat_mul(z_tok, params.at("st2.core.wz"));
    const Tensor hc = mat_mul(ctx, params.at("st2.core.wc"));
    for (int j = 0; j < n_tok; ++j)
        for (int i = 0; i < cfg.hidden; ++i)
            hid.at(j, i) = gelu_value(hid.at(j, i) + hc.at(j, i) + shift[i]);
    Tensor eps_tok = mat_mul(hid, params.at("st2.core.wo"));
    const Tensor& bo = params.at("st2.core.bo");
    for (int j = 0; j < n_tok; ++j)
        for (int p = 0; p < pp; ++p) eps_tok.at(j, p) += bo[p];

    Tensor out({cfg.pixels()});
    for (int j = 0; j < n_tok; ++j)
        for (int p = 0; p < pp; ++p)
            out[perm[static_cast<std::size_t>(j) * pp + p]] = eps_tok.at(j, p);
    return out;
}

Tensor generate_image(const ParamStore& params, const Stage2Config& cfg,
                      const DiffusionSchedule& sched, const Tensor& coarse, const Tensor& fine,
                      Rng& rng) {
    const int n = cfg.pixels();
    Tensor x({n});
    for (int i = 0; i < n; ++i) x[i] = rng.gauss();
    for (int t = sched.timesteps() - 1; t >= 0; --t) {
        const Tensor eps_hat = stage2_denoise(params, cfg, x, t, sched.timesteps(), coarse, fine);
        const double alpha = sched.alpha[static_cast<std::size_t>(t)];
        const double ab = sched.alpha_bar[static_cast<std::size_t>(t)];
        const double coef = sched.beta[static_cast<std::size_t>(t)] / std::sqrt(1.0 - ab);
        const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha);
        for (int i = 0; i < n; ++i) x[i] = inv_sqrt_alpha * (x[i] - coef * eps_hat[i]);
        if (t > 0) {
            const double ab_prev = sched.alpha_bar[static_cast<std::size_t>(t - 1)];
            const double sigma =
                std::sqrt((1.0 - ab_prev) / (1.0 - ab) * sched.beta[static_cast<std::size_t>(t)]);
            for (int i = 0; i < n; ++i) x[i] += sigma * rng.gauss();
        }
        x.require_finite("generate_image");
    }
    Tensor img({cfg.image_side, cfg.image_side});
    for (int i = 0; i < n; ++i) img[i] = std::clamp(0.5 * x[i] + 0.5, 0.0, 1.0);
    return img;
}

}  // namespace fped
