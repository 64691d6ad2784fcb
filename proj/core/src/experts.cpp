// SPDX-License-Identifier: Apache-2.0
#include "fped/experts.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

namespace fped {

const char* modality_name(Modality m) { return m == Modality::text ? "text" : "image"; }

AblationMode parse_mode(const std::string& s) {
    if (s == "moe") return AblationMode::moe;
    if (s == "onlyv") return AblationMode::onlyv;
    if (s == "uniform") return AblationMode::uniform;
    if (s == "attention") return AblationMode::attention;
    if (s == "transformer") return AblationMode::transformer;
    throw ConfigError("unknown ablation mode: " + s);
}

const char* mode_name(AblationMode m) {
    switch (m) {
        case AblationMode::moe: return "moe";
        case AblationMode::onlyv: return "onlyv";
        case AblationMode::uniform: return "uniform";
        case AblationMode::attention: return "attention";
        case AblationMode::transformer: return "transformer";
    }
    return "?";
}

Tensor& ParamStore::create(const std::string& name, const std::vector<int>& shape) {
    if (store_.count(name)) throw ArgumentError("ParamStore: duplicate parameter " + name);
    auto [it, ok] = store_.emplace(name, Tensor::zeros(shape));
    (void)ok;
    return it->second;
}

Tensor& ParamStore::at(const std::string& name) {
    auto it = store_.find(name);
    if (it == store_.end()) throw ArgumentError("ParamStore: unknown parameter " + name);
    return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
    auto it = store_.find(name);
    if (it == store_.end()) throw ArgumentError("ParamStore: unknown parameter " + name);
    return it->second;
}

bool ParamStore::contains(const std::string& name) const { return store_.count(name) != 0; }

std::vector<std::string> ParamStore::names() const {
    std::vector<std::string> out;
    out.reserve(store_.size());
    for (const auto& [k, v] : store_) out.push_back(k);
    return out;
}

std::int64_t ParamStore::total_size() const {
    std::int64_t n = 0;
    for (const auto& [k, v] : store_) n += v.size();
    return n;
}

bool ParamStore::all_finite() const {
    for (const auto& [k, v] : store_)
        if (!v.all_finite()) return false;
    return true;
}

int BoundParams::id(const std::string& name) const {
    auto it = ids.find(name);
    if (it == ids.end()) throw ArgumentError("BoundParams: unknown parameter " + name);
    return it->second;
}

BoundParams bind_params(Tape& tape, const ParamStore& params) {
    BoundParams bp;
    for (const auto& [name, value] : params.entries()) bp.ids[name] = tape.leaf(value);
    return bp;
}

BoundParams bind_params(Tape& tape, const ParamStore& params, const std::string& prefix) {
    BoundParams bp;
    for (const auto& [name, value] : params.entries())
        if (name.rfind(prefix, 0) == 0) bp.ids[name] = tape.leaf(value);
    return bp;
}

namespace {

void fill_gauss(Tensor& t, Rng& rng, double scale) {
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = scale * rng.gauss();
}

}  // namespace

std::int64_t EncoderModel::trunk_param_count(const EncoderConfig& c) {
    const std::int64_t gd = static_cast<std::int64_t>(c.tokens) * c.token_dim;
    std::int64_t n = 0;
    n += c.n_experts_l1;  // per-expert routing direction
    n += static_cast<std::int64_t>(c.feature_len) * c.n_experts_l1;  // position bias
    n += 2 * c.n_experts_l1;                                         // modality offsets
    n += c.n_experts_l1 * (static_cast<std::int64_t>(c.l1_hidden) * c.feature_len + c.l1_hidden +
                           gd * c.l1_hidden + gd);
    n += c.n_experts_l2 * (static_cast<std::int64_t>(c.token_dim) * c.l2_hidden + c.l2_hidden +
                           static_cast<std::int64_t>(c.l2_hidden) * c.token_dim + c.token_dim);
    n += static_cast<std::int64_t>(c.n_experts_l2) * c.token_dim + c.n_experts_l2;  // gate
    return n;
}

int EncoderModel::solve_transformer_width(const EncoderConfig& c) {
    if (c.feature_len % c.tokens != 0)
        throw ConfigError("transformer variant needs feature_len divisible by token count");
    const std::int64_t chunk = c.feature_len / c.tokens;
    const std::int64_t target = trunk_param_count(c);
    auto count = [&](std::int64_t w) {
        std::int64_t n = 0;
        n += c.tokens * (chunk * w + w);  // per-token input projections
        n += c.tokens * w;                // positional table
        n += c.transformer_layers * (4 * w * w + (w * 2 * w + 2 * w) + (2 * w * w + w));
        n += w * c.token_dim + c.token_dim;  // token output projection
        return n;
    };
    std::int64_t best_w = -1, best_diff = -1;
    for (std::int64_t w = 4; w <= 2048; ++w) {
        const std::int64_t diff = std::llabs(count(w) - target);
        if (best_w < 0 || diff < best_diff) {
            best_w = w;
            best_diff = diff;
        }
    }
    if (static_cast<double>(best_diff) > 0.10 * static_cast<double>(target))
        throw ConfigError("no self-attention width matches the expert-bank parameter count");
    return static_cast<int>(best_w);
}

void EncoderModel::init(const EncoderConfig& c, Rng& rng) {
    cfg = c;
    params = ParamStore();
    const int gd = c.tokens * c.token_dim;
    const double s_in = 1.0 / std::sqrt(static_cast<double>(c.feature_len));
    const double s_h1 = 1.0 / std::sqrt(static_cast<double>(c.l1_hidden));
    const double s_d = 1.0 / std::sqrt(static_cast<double>(c.token_dim));
    const double s_h2 = 1.0 / std::sqrt(static_cast<double>(c.l2_hidden));

    if (c.routed_mode()) {
        fill_gauss(params.create("router.w_r", {c.n_experts_l1}), rng, 0.1);
        if (c.position_bias) params.create("router.bias", {c.feature_len, c.n_experts_l1});
        if (c.modality_offsets) {
            params.create("router.mod_text", {c.n_experts_l1});
            params.create("router.mod_img", {c.n_experts_l1});
        }
    }

    if (c.mode == AblationMode::transformer) {
        transformer_width_ = solve_transformer_width(c);
        const int w = transformer_width_;
        const int chunk = c.feature_len / c.tokens;
        const double s_chunk = 1.0 / std::sqrt(static_cast<double>(chunk));
        const double s_w = 1.0 / std::sqrt(static_cast<double>(w));
        for (int j = 0; j < c.tokens; ++j) {
            fill_gauss(params.create("tr.tok" + std::to_string(j) + ".w", {w, chunk}), rng, s_chunk);
            params.create("tr.tok" + std::to_string(j) + ".b", {w});
        }
        fill_gauss(params.create("tr.pos", {c.tokens, w}), rng, 0.02);
        for (int l = 0; l < c.transformer_layers; ++l) {
            const std::string p = "tr.l" + std::to_string(l) + ".";
            fill_gauss(params.create(p + "wq", {w, w}), rng, s_w);
            fill_gauss(params.create(p + "wk", {w, w}), rng, s_w);
            fill_gauss(params.create(p + "wv", {w, w}), rng, s_w);
            fill_gauss(params.create(p + "wo", {w, w}), rng, s_w * 0.5);
            fill_gauss(params.create(p + "m1", {w, 2 * w}), rng, s_w);
            params.create(p + "m1b", {2 * w});
            fill_gauss(params.create(p + "m2", {2 * w, w}), rng, s_w * 0.5);
            params.create(p + "m2b", {w});
        }
        fill_gauss(params.create("tr.out.w", {w, c.token_dim}), rng, s_w);
        params.create("tr.out.b", {c.token_dim});
    } else {
        for (int k = 0; k < c.n_experts_l1; ++k) {
            const std::string p = "l1.e" + std::to_string(k) + ".";
            fill_gauss(params.create(p + "w1", {c.l1_hidden, c.feature_len}), rng, s_in);
            params.create(p + "b1", {c.l1_hidden});
            fill_gauss(params.create(p + "w2", {gd, c.l1_hidden}), rng, s_h1);
            params.create(p + "b2", {gd});
        }
        for (int e = 0; e < c.n_experts_l2; ++e) {
            const std::string p = "l2.e" + std::to_string(e) + ".";
            fill_gauss(params.create(p + "w1", {c.token_dim, c.l2_hidden}), rng, s_d);
            params.create(p + "b1", {c.l2_hidden});
            fill_gauss(params.create(p + "w2", {c.l2_hidden, c.token_dim}), rng, s_h2);
            params.create(p + "b2", {c.token_dim});
        }
        fill_gauss(params.create("l2gate.w", {c.n_experts_l2, c.token_dim}), rng, 0.1);
        params.create("l2gate.b", {c.n_experts_l2});
        if (c.mode == AblationMode::attention)
            fill_gauss(params.create("fuse.attn.u", {c.token_dim}), rng, s_d);
    }

    fill_gauss(params.create("head.text.w", {c.embed_dim, c.token_dim}), rng, s_d);
    params.create("head.text.b", {c.embed_dim});
    fill_gauss(params.create("head.img.w", {c.embed_dim, c.token_dim}), rng, s_d);
    params.create("head.img.b", {c.embed_dim});
}

int EncoderModel::capacity() const {
    return expert_capacity(cfg.feature_len, cfg.capacity_factor, cfg.n_experts_l1);
}

int EncoderModel::expert_mlp(Tape& tape, const BoundParams& bp, int k, int input_id,
                             const std::vector<int>* cols) const {
    const std::string p = "l1.e" + std::to_string(k) + ".";
    int lin;
    if (cols)
        lin = tape.linear_cols(bp.id(p + "w1"), input_id, *cols);
    else
        lin = tape.matvec(bp.id(p + "w1"), input_id);
    const int h = tape.gelu(tape.add(lin, bp.id(p + "b1")));
    const int out = tape.add(tape.matvec(bp.id(p + "w2"), h), bp.id(p + "b2"));
    return tape.reshape(out, {cfg.tokens, cfg.token_dim});
}

int EncoderModel::layer2(Tape& tape, const BoundParams& bp, int fused_id) const {
    const int pooled = tape.mean_axis0(fused_id);
    const int logits = tape.add(tape.matvec(bp.id("l2gate.w"), pooled), bp.id("l2gate.b"));
    const int probs = tape.row_softmax(logits);

    const Tensor& pv = tape.value(probs);
    const int k = std::min(cfg.l2_topk, cfg.n_experts_l2);
    const std::vector<int> sel = topk_indices(pv.values().data(), cfg.n_experts_l2, k);

    const int norm = tape.reshape(tape.sum(tape.gather(probs, sel)), {1});
    int acc = -1;
    for (int e : sel) {
        const std::string p = "l2.e" + std::to_string(e) + ".";
        const int t1 = tape.gelu(
            tape.add_rows(tape.matmul(fused_id, bp.id(p + "w1")), bp.id(p + "b1")));
        const int t2 = tape.add_rows(tape.matmul(t1, bp.id(p + "w2")), bp.id(p + "b2"));
        const int ghat = tape.divide(tape.gather(probs, {e}), norm);
        const int term = tape.scalar_mul(ghat, t2);
        acc = acc < 0 ? term : tape.add(acc, term);
    }
    return acc;
}

int EncoderModel::project_head(Tape& tape, const BoundParams& bp, int refined_id,
                               Modality m) const {
    const std::string p = m == Modality::text ? "head.text." : "head.img.";
    const int pooled = tape.mean_axis0(refined_id);
    return tape.add(tape.matvec(bp.id(p + "w"), pooled), bp.id(p + "b"));
}

PassOutput EncoderModel::trunk_dense(Tape& tape, const BoundParams& bp, int x_id) const {
    PassOutput out;
    out.expert_tokens.reserve(static_cast<std::size_t>(cfg.n_experts_l1));
    const bool uniform = cfg.mode == AblationMode::uniform;
    const int q = uniform ? tape.scale(x_id, 1.0 / cfg.n_experts_l1) : x_id;
    std::vector<int> token_ids;
    for (int k = 0; k < cfg.n_experts_l1; ++k) {
        const int f = expert_mlp(tape, bp, k, q, nullptr);
        out.expert_tokens.push_back(f);
        token_ids.push_back(f);
    }
    if (cfg.mode == AblationMode::attention) {
        // Fusion weights from each expert's pooled token grid.
        std::vector<int> scores;
        for (int f : token_ids)
            scores.push_back(
                tape.reshape(tape.dot(bp.id("fuse.attn.u"), tape.mean_axis0(f)), {1}));
        const int logits = tape.scale(tape.concat(scores),
                                      1.0 / std::sqrt(static_cast<double>(cfg.token_dim)));
        const int a = tape.row_softmax(logits);
        int acc = -1;
        for (int k = 0; k < cfg.n_experts_l1; ++k) {
            const int term = tape.scalar_mul(tape.gather(a, {k}), token_ids[static_cast<std::size_t>(k)]);
            acc = acc < 0 ? term : tape.add(acc, term);
        }
        out.fused = acc;
    } else {
        int acc = token_ids[0];
        for (std::size_t k = 1; k < token_ids.size(); ++k) acc = tape.add(acc, token_ids[k]);
        out.fused = acc;
    }
    out.refined = layer2(tape, bp, out.fused);
    return out;
}

PassOutput EncoderModel::trunk_transformer(Tape& tape, const BoundParams& bp, int x_id) const {
    PassOutput out;
    const int w = transformer_width_ > 0 ? transformer_width_ : solve_transformer_width(cfg);
    const int chunk = cfg.feature_len / cfg.tokens;
    std::vector<int> toks;
    for (int j = 0; j < cfg.tokens; ++j) {
        std::vector<int> idx(static_cast<std::size_t>(chunk));
        for (int i = 0; i < chunk; ++i) idx[static_cast<std::size_t>(i)] = j * chunk + i;
        const int piece = tape.gather(x_id, idx);
        const std::string p = "tr.tok" + std::to_string(j) + ".";
        toks.push_back(tape.add(tape.matvec(bp.id(p + "w"), piece), bp.id(p + "b")));
    }
    int x = tape.add(tape.stack_rows(toks), bp.id("tr.pos"));
    const double inv_sqrt_w = 1.0 / std::sqrt(static_cast<double>(w));
    for (int l = 0; l < cfg.transformer_layers; ++l) {
        const std::string p = "tr.l" + std::to_string(l) + ".";
        const int q = tape.matmul(x, bp.id(p + "wq"));
        const int kk = tape.matmul(x, bp.id(p + "wk"));
        const int v = tape.matmul(x, bp.id(p + "wv"));
        const int att = tape.row_softmax(tape.scale(tape.matmul_nt(q, kk), inv_sqrt_w));
        const int ctx = tape.matmul(tape.matmul(att, v), bp.id(p + "wo"));
        x = tape.add(x, ctx);
        const int m = tape.gelu(tape.add_rows(tape.matmul(x, bp.id(p + "m1")), bp.id(p + "m1b")));
        x = tape.add(x, tape.add_rows(tape.matmul(m, bp.id(p + "m2")), bp.id(p + "m2b")));
    }
    const int bank = tape.add_rows(tape.matmul(x, bp.id("tr.out.w")), bp.id("tr.out.b"));
    out.fused = bank;
    out.refined = bank;
    return out;
}

PassOutput EncoderModel::forward_pass(Tape& tape, const BoundParams& bp, const FeatureVector& fv,
                                      Modality modality) const {
    if (static_cast<int>(fv.x.size()) != cfg.feature_len)
        throw ShapeError("forward_pass: feature vector length mismatch");
    const FeatureVector* in = &fv;
    FeatureVector restricted;
    if (cfg.mode == AblationMode::onlyv) {
        restricted = restrict_to_visual(fv);
        in = &restricted;
    }
    const int x_id = tape.leaf(Tensor({cfg.feature_len}, in->x));

    PassOutput out;
    if (cfg.routed_mode()) {
        const int bias_id = cfg.position_bias ? bp.id("router.bias") : -1;
        int mod_id = -1;
        if (cfg.modality_offsets)
            mod_id = bp.id(modality == Modality::text ? "router.mod_text" : "router.mod_img");
        out.routing = route_on_tape(tape, x_id, bp.id("router.w_r"), bias_id, mod_id, in->labels,
                                    capacity());
        out.has_routing = true;
        out.kl_raw = out.routing.kl_raw;
        std::vector<int> token_ids;
        for (int k = 0; k < cfg.n_experts_l1; ++k) {
            const int f = expert_mlp(tape, bp, k, out.routing.routed_compact[static_cast<std::size_t>(k)],
                                     &out.routing.selected[static_cast<std::size_t>(k)]);
            out.expert_tokens.push_back(f);
            token_ids.push_back(f);
        }
        int acc = token_ids[0];
        for (std::size_t k = 1; k < token_ids.size(); ++k) acc = tape.add(acc, token_ids[k]);
        out.fused = acc;
        out.refined = layer2(tape, bp, out.fused);
    } else if (cfg.mode == AblationMode::transformer) {
        out = trunk_transformer(tape, bp, x_id);
    } else {
        out = trunk_dense(tape, bp, x_id);
    }
    out.b = project_head(tape, bp, out.refined, modality);
    return out;
}

ForwardOutput EncoderModel::forward(Tape& tape, const BoundParams& bp,
                                    const FeatureVector& fv) const {
    ForwardOutput fo;
    if (cfg.routed_mode()) {
        fo.text = forward_pass(tape, bp, fv, Modality::text);
        fo.image = forward_pass(tape, bp, fv, Modality::image);
    } else {
        fo.text = forward_pass(tape, bp, fv, Modality::text);
        fo.image = fo.text;
        fo.image.b = project_head(tape, bp, fo.text.refined, Modality::image);
    }
    return fo;
}

FeatureVector restrict_to_visual(const FeatureVector& fv) {
    FeatureVector out = fv;
    for (std::size_t i = 0; i < out.x.size(); ++i)
        if (out.labels[i] != 1) out.x[i] = 0.0;
    return out;
}

}  // namespace fped
