// SPDX-License-Identifier: Apache-2.0
#include "fped/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "fped/interpret.hpp"
#include "fped/io_util.hpp"

namespace fped {

namespace {

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = {
        "dataset",        "out_dir",        "mode",           "epochs",
        "batch_size",     "lr",             "adam_beta1",     "adam_beta2",
        "adam_eps",       "seed",           "embed_dim",      "tokens",
        "token_dim",      "l1_hidden",      "l2_hidden",      "l2_topk",
        "transformer_layers",               "cf",             "position_bias",
        "modality_offsets",                 "kl_w_max",       "kl_w_min",
        "kl_ramp_frac",   "kl_plateau_frac", "kl_mean",       "w_kl",
        "w_cos",          "w_mse",          "w_softclip",     "w_dp",
        "w_prior_clip",   "tau",            "lambda_prior",   "softclip_bidirectional",
        "top_k_voxels",   "ridge_lambda",   "prior_hidden",   "prior_temb",
        "prior_timesteps", "stage2",        "stage2_epochs",  "stage2_lr",
        "stage2_pairs",
    };
    return keys;
}

double safe_cos(const Tensor& a, const Tensor& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double denom = std::sqrt(na) * std::sqrt(nb);
    return denom == 0.0 ? 0.0 : dot / denom;
}

Tensor target_matrix(const Dataset& ds, const std::vector<int>& ids, bool image) {
    const int n = static_cast<int>(ids.size());
    Tensor m({n, ds.embed_dim});
    for (int r = 0; r < n; ++r) {
        const RawSample& s = ds.samples[static_cast<std::size_t>(ids[static_cast<std::size_t>(r)])];
        const std::vector<double>& c = image ? s.c_img : s.c_text;
        for (int j = 0; j < ds.embed_dim; ++j) m.at(r, j) = c[static_cast<std::size_t>(j)];
    }
    return m;
}

struct BatchResult {
    LossBreakdown bd;
};

/// Builds one batch's objective on a fresh tape, runs backward, and applies
/// the optimizer. Term nodes carry their multipliers, so the recorded
/// breakdown sums to the total.
BatchResult run_batch(EncoderModel& model, Adam& opt, const Dataset& ds,
                      const std::vector<FeatureVector>& features, const std::vector<int>& ids,
                      const TrainConfig& tc, const DiffusionSchedule& sched, double kl_w_epoch,
                      int epoch, int batch, Rng& rng_noise) {
    Tape tape;
    tape.reserve(1024 + static_cast<std::size_t>(ids.size()) * 640);
    const BoundParams bp = bind_params(tape, model.params);
    const LossWeights& w = tc.weights;
    const bool want_prior = w.dp != 0.0 || w.prior_clip != 0.0;
    const double kl_coef = w.kl * kl_w_epoch;

    std::vector<int> b_text_rows, b_img_rows, kl_parts, dp_parts, x0_rows;
    for (int id : ids) {
        const FeatureVector& fv = features[static_cast<std::size_t>(id)];
        const ForwardOutput fo = model.forward(tape, bp, fv);
        b_text_rows.push_back(fo.text.b);
        b_img_rows.push_back(fo.image.b);
        if (fo.text.has_routing && kl_coef != 0.0) {
            kl_parts.push_back(tape.reshape(fo.text.routing.kl_raw, {1}));
            kl_parts.push_back(tape.reshape(fo.image.routing.kl_raw, {1}));
        }
        if (want_prior) {
            const RawSample& s = ds.samples[static_cast<std::size_t>(id)];
            Tensor x0({ds.embed_dim});
            for (int j = 0; j < ds.embed_dim; ++j) x0[j] = s.c_img[static_cast<std::size_t>(j)];
            const NoiseDraw draw = draw_noise(sched, ds.embed_dim, rng_noise);
            const DiffusionNodes dn = build_diffusion_nodes(tape, bp, sched, x0, fo.image.b, draw);
            dp_parts.push_back(tape.reshape(dn.loss, {1}));
            x0_rows.push_back(dn.x0_hat);
        }
    }

    const int b_text = tape.stack_rows(b_text_rows);
    const int b_img = tape.stack_rows(b_img_rows);
    const int c_text = tape.leaf(target_matrix(ds, ids, false));
    const int c_img = tape.leaf(target_matrix(ds, ids, true));

    LossBreakdown bd;
    bd.epoch = epoch;
    bd.batch = batch;
    std::vector<int> parts;
    auto add_part = [&](int node, double* slot) {
        parts.push_back(node);
        *slot = tape.value(node)[0];
    };
    if (!kl_parts.empty())
        add_part(tape.scale(tape.mean(tape.concat(kl_parts)), kl_coef), &bd.kl);
    if (w.cos != 0.0)
        add_part(tape.scale(tape.add(build_cosine_loss(tape, b_text, c_text),
                                     build_cosine_loss(tape, b_img, c_img)),
                            0.5 * w.cos),
                 &bd.cos);
    if (w.mse != 0.0)
        add_part(tape.scale(tape.add(build_mse_loss(tape, b_text, c_text),
                                     build_mse_loss(tape, b_img, c_img)),
                            0.5 * w.mse),
                 &bd.mse);
    if (w.softclip != 0.0)
        add_part(tape.scale(
                     tape.add(build_softclip_loss(tape, b_text, c_text, w.tau, w.softclip_bidirectional),
                              build_softclip_loss(tape, b_img, c_img, w.tau, w.softclip_bidirectional)),
                     0.5 * w.softclip),
                 &bd.softclip);
    if (want_prior && w.dp != 0.0)
        add_part(tape.scale(tape.mean(tape.concat(dp_parts)), w.dp), &bd.dp);
    if (want_prior && w.prior_clip != 0.0)
        add_part(tape.scale(build_softclip_loss(tape, tape.stack_rows(x0_rows), c_img, w.tau,
                                                w.softclip_bidirectional),
                            w.prior_clip * w.lambda_prior),
                 &bd.prior_clip);
    if (parts.empty()) throw ConfigError("every objective term is disabled");

    int total = parts.front();
    for (std::size_t i = 1; i < parts.size(); ++i) total = tape.add(total, parts[i]);
    bd.total = tape.value(total)[0];
    if (!std::isfinite(bd.total) || bd.total > 1e6) {
        std::ostringstream os;
        os << "objective diverged at epoch " << epoch << " batch " << batch << " (total="
           << bd.total << ")";
        throw NumericError(os.str());
    }

    tape.backward(total);
    opt.step(model.params, tape, bp);
    return {bd};
}

void stage2_phase(EncoderModel& model, const Dataset& ds, const TrainConfig& tc,
                  const std::vector<FeatureVector>& features, const std::vector<int>& train_idx,
                  const DiffusionSchedule& sched, Rng& rng_stage2, TrainStats& stats,
                  std::ofstream* csv) {
    Stage2Config s2;
    s2.token_dim = tc.token_dim;
    s2.epochs = tc.stage2_epochs;
    s2.lr = tc.stage2_lr;

    Rng rng_init = rng_stage2.split(1);
    Rng rng_noise = rng_stage2.split(2);
    init_stage2(model.params, s2, rng_init);

    const int n_pairs = std::min<int>(tc.stage2_pairs, static_cast<int>(train_idx.size()));
    if (n_pairs < 1) throw ConfigError("stage 2 needs at least one training pair");

    // Frozen conditioning banks and targets from the image-aligned pass.
    std::vector<Tensor> coarse, fine, z0;
    for (int p = 0; p < n_pairs; ++p) {
        const int id = train_idx[static_cast<std::size_t>(p)];
        Tape tape;
        const BoundParams bp = bind_params(tape, model.params);
        const PassOutput pass =
            model.forward_pass(tape, bp, features[static_cast<std::size_t>(id)], Modality::image);
        coarse.push_back(tape.value(pass.fused));
        fine.push_back(tape.value(pass.refined));
        const Tensor img =
            render_target_image(ds, ds.samples[static_cast<std::size_t>(id)], s2);
        Tensor z({s2.pixels()});
        for (int i = 0; i < s2.pixels(); ++i) z[i] = 2.0 * img[i] - 1.0;
        z0.push_back(std::move(z));
    }

    Adam opt(s2.lr, tc.adam_beta1, tc.adam_beta2, tc.adam_eps);
    for (int epoch = 0; epoch < s2.epochs; ++epoch) {
        Tape tape;
        const BoundParams bp = bind_params(tape, model.params, "st2.");
        std::vector<int> losses;
        for (int p = 0; p < n_pairs; ++p) {
            const NoiseDraw draw = draw_noise(sched, s2.pixels(), rng_noise);
            const Stage2Nodes nodes = build_stage2_nodes(tape, bp, s2, sched, z0[static_cast<std::size_t>(p)],
                                                         coarse[static_cast<std::size_t>(p)],
                                                         fine[static_cast<std::size_t>(p)], draw);
            losses.push_back(tape.reshape(nodes.loss, {1}));
        }
        const int total = tape.mean(tape.concat(losses));
        const double loss = tape.value(total)[0];
        if (!std::isfinite(loss) || loss > 1e6) {
            std::ostringstream os;
            os << "stage-2 objective diverged at epoch " << epoch << " (loss=" << loss << ")";
            throw NumericError(os.str());
        }
        tape.backward(total);
        opt.step(model.params, tape, bp);
        if (epoch == 0) stats.stage2_first_loss = loss;
        stats.stage2_final_loss = loss;
        if (csv) *csv << epoch << "," << fmt_double(loss) << "\n";
    }
}

}  // namespace

TrainConfig TrainConfig::from_config(const Config& cfg) {
    std::vector<std::string> unknown;
    for (const auto& [key, value] : cfg.entries())
        if (known_keys().count(key) == 0) unknown.push_back(key);
    if (!unknown.empty()) {
        std::string msg = "unknown config keys:";
        for (const std::string& k : unknown) msg += " " + k;
        throw ConfigError(msg);
    }

    TrainConfig tc;
    tc.dataset = cfg.get_string("dataset", "");
    tc.out_dir = cfg.get_string("out_dir", "");
    tc.mode = parse_mode(cfg.get_string("mode", "moe"));
    tc.epochs = cfg.get_int("epochs", tc.epochs);
    tc.batch_size = cfg.get_int("batch_size", tc.batch_size);
    tc.lr = cfg.get_double("lr", tc.lr);
    tc.adam_beta1 = cfg.get_double("adam_beta1", tc.adam_beta1);
    tc.adam_beta2 = cfg.get_double("adam_beta2", tc.adam_beta2);
    tc.adam_eps = cfg.get_double("adam_eps", tc.adam_eps);
    tc.seed = static_cast<std::uint64_t>(cfg.get_int("seed", static_cast<int>(tc.seed)));
    tc.embed_dim = cfg.get_int("embed_dim", tc.embed_dim);
    tc.tokens = cfg.get_int("tokens", tc.tokens);
    tc.token_dim = cfg.get_int("token_dim", tc.token_dim);
    tc.l1_hidden = cfg.get_int("l1_hidden", tc.l1_hidden);
    tc.l2_hidden = cfg.get_int("l2_hidden", tc.l2_hidden);
    tc.l2_topk = cfg.get_int("l2_topk", tc.l2_topk);
    tc.transformer_layers = cfg.get_int("transformer_layers", tc.transformer_layers);
    tc.cf = cfg.get_double("cf", tc.cf);
    tc.position_bias = cfg.get_bool("position_bias", tc.position_bias);
    tc.modality_offsets = cfg.get_bool("modality_offsets", tc.modality_offsets);
    tc.kl_w_max = cfg.get_double("kl_w_max", tc.kl_w_max);
    tc.kl_w_min = cfg.get_double("kl_w_min", tc.kl_w_min);
    tc.kl_ramp_frac = cfg.get_double("kl_ramp_frac", tc.kl_ramp_frac);
    tc.kl_plateau_frac = cfg.get_double("kl_plateau_frac", tc.kl_plateau_frac);
    tc.kl_mean = cfg.get_bool("kl_mean", tc.kl_mean);
    tc.weights.kl = cfg.get_double("w_kl", tc.weights.kl);
    tc.weights.cos = cfg.get_double("w_cos", tc.weights.cos);
    tc.weights.mse = cfg.get_double("w_mse", tc.weights.mse);
    tc.weights.softclip = cfg.get_double("w_softclip", tc.weights.softclip);
    tc.weights.dp = cfg.get_double("w_dp", tc.weights.dp);
    tc.weights.prior_clip = cfg.get_double("w_prior_clip", tc.weights.prior_clip);
    tc.weights.tau = cfg.get_double("tau", tc.weights.tau);
    tc.weights.lambda_prior = cfg.get_double("lambda_prior", tc.weights.lambda_prior);
    tc.weights.softclip_bidirectional =
        cfg.get_bool("softclip_bidirectional", tc.weights.softclip_bidirectional);
    tc.top_k_voxels = cfg.get_int("top_k_voxels", tc.top_k_voxels);
    tc.ridge_lambda = cfg.get_double("ridge_lambda", tc.ridge_lambda);
    tc.prior_hidden = cfg.get_int("prior_hidden", tc.prior_hidden);
    tc.prior_temb = cfg.get_int("prior_temb", tc.prior_temb);
    tc.prior_timesteps = cfg.get_int("prior_timesteps", tc.prior_timesteps);
    tc.stage2 = cfg.get_bool("stage2", tc.stage2);
    tc.stage2_epochs = cfg.get_int("stage2_epochs", tc.stage2_epochs);
    tc.stage2_lr = cfg.get_double("stage2_lr", tc.stage2_lr);
    tc.stage2_pairs = cfg.get_int("stage2_pairs", tc.stage2_pairs);

    if (tc.epochs < 1) throw ConfigError("epochs must be >= 1");
    if (tc.batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(tc.lr > 0.0)) throw ConfigError("lr must be positive");
    if (!(tc.weights.tau > 0.0)) throw ConfigError("tau must be positive");
    if (tc.prior_timesteps < 2) throw ConfigError("prior_timesteps must be >= 2");
    return tc;
}

Config TrainConfig::to_config() const {
    Config cfg;
    cfg.set("dataset", dataset);
    cfg.set("out_dir", out_dir);
    cfg.set("mode", mode_name(mode));
    cfg.set("epochs", std::to_string(epochs));
    cfg.set("batch_size", std::to_string(batch_size));
    cfg.set("lr", fmt_double(lr));
    cfg.set("adam_beta1", fmt_double(adam_beta1));
    cfg.set("adam_beta2", fmt_double(adam_beta2));
    cfg.set("adam_eps", fmt_double(adam_eps));
    cfg.set("seed", std::to_string(seed));
    cfg.set("embed_dim", std::to_string(embed_dim));
    cfg.set("tokens", std::to_string(tokens));
    cfg.set("token_dim", std::to_string(token_dim));
    cfg.set("l1_hidden", std::to_string(l1_hidden));
    cfg.set("l2_hidden", std::to_string(l2_hidden));
    cfg.set("l2_topk", std::to_string(l2_topk));
    cfg.set("transformer_layers", std::to_string(transformer_layers));
    cfg.set("cf", fmt_double(cf));
    cfg.set("position_bias", position_bias ? "true" : "false");
    cfg.set("modality_offsets", modality_offsets ? "true" : "false");
    cfg.set("kl_w_max", fmt_double(kl_w_max));
    cfg.set("kl_w_min", fmt_double(kl_w_min));
    cfg.set("kl_ramp_frac", fmt_double(kl_ramp_frac));
    cfg.set("kl_plateau_frac", fmt_double(kl_plateau_frac));
    cfg.set("kl_mean", kl_mean ? "true" : "false");
    cfg.set("w_kl", fmt_double(weights.kl));
    cfg.set("w_cos", fmt_double(weights.cos));
    cfg.set("w_mse", fmt_double(weights.mse));
    cfg.set("w_softclip", fmt_double(weights.softclip));
    cfg.set("w_dp", fmt_double(weights.dp));
    cfg.set("w_prior_clip", fmt_double(weights.prior_clip));
    cfg.set("tau", fmt_double(weights.tau));
    cfg.set("lambda_prior", fmt_double(weights.lambda_prior));
    cfg.set("softclip_bidirectional", weights.softclip_bidirectional ? "true" : "false");
    cfg.set("top_k_voxels", std::to_string(top_k_voxels));
    cfg.set("ridge_lambda", fmt_double(ridge_lambda));
    cfg.set("prior_hidden", std::to_string(prior_hidden));
    cfg.set("prior_temb", std::to_string(prior_temb));
    cfg.set("prior_timesteps", std::to_string(prior_timesteps));
    cfg.set("stage2", stage2 ? "true" : "false");
    cfg.set("stage2_epochs", std::to_string(stage2_epochs));
    cfg.set("stage2_lr", fmt_double(stage2_lr));
    cfg.set("stage2_pairs", std::to_string(stage2_pairs));
    return cfg;
}

EncoderConfig TrainConfig::encoder_config() const {
    EncoderConfig ec;
    ec.embed_dim = embed_dim;
    ec.tokens = tokens;
    ec.token_dim = token_dim;
    ec.l1_hidden = l1_hidden;
    ec.l2_hidden = l2_hidden;
    ec.l2_topk = l2_topk;
    ec.transformer_layers = transformer_layers;
    ec.capacity_factor = cf;
    ec.position_bias = position_bias;
    ec.modality_offsets = modality_offsets;
    ec.mode = mode;
    return ec;
}

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (!(lr > 0.0)) throw ArgumentError("Adam: lr must be positive");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
        throw ArgumentError("Adam: betas must lie in [0, 1)");
}

void Adam::step(ParamStore& params, const Tape& tape, const BoundParams& bp) {
    t_++;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (auto& [name, p] : params.entries()) {
        if (!bp.has(name)) continue;
        const Tensor& g = tape.grad(bp.id(name));
        if (!g.same_shape(p)) throw ShapeError("Adam: gradient shape mismatch for " + name);
        auto mit = m_.find(name);
        if (mit == m_.end()) {
            mit = m_.emplace(name, Tensor::zeros(p.shape())).first;
            v_.emplace(name, Tensor::zeros(p.shape()));
        }
        Tensor& m = mit->second;
        Tensor& v = v_.at(name);
        for (std::int64_t i = 0; i < p.size(); ++i) {
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
            p[i] -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
        }
    }
}

std::vector<FeatureVector> prepare_features(const Dataset& ds, const Preprocessor& pre,
                                            AblationMode mode) {
    std::vector<FeatureVector> features;
    features.reserve(ds.samples.size());
    for (const RawSample& s : ds.samples) {
        FeatureVector fv = pre.run(ds, s);
        if (mode == AblationMode::onlyv) fv = restrict_to_visual(fv);
        features.push_back(std::move(fv));
    }
    return features;
}

TrainArtifacts train_model(const Dataset& ds, const TrainConfig& tc_in) {
    TrainConfig tc = tc_in;
    tc.embed_dim = ds.embed_dim;

    Rng master(tc.seed);
    Rng rng_init = master.split(1);
    Rng rng_shuffle = master.split(2);
    Rng rng_noise = master.split(3);
    Rng rng_stage2 = master.split(4);

    Preprocessor pre = Preprocessor::fit(ds, tc.top_k_voxels);
    tc.ridge_lambda = pre.ridge_lambda;
    const std::vector<FeatureVector> features = prepare_features(ds, pre, tc.mode);

    TrainArtifacts art;
    art.model.init(tc.encoder_config(), rng_init);
    const DiffusionSchedule sched = DiffusionSchedule::linear(tc.prior_timesteps);
    init_denoiser(art.model.params, tc.embed_dim, tc.prior_hidden, tc.prior_temb, rng_init);

    const KlSchedule kl_sched =
        make_kl_schedule(tc.epochs, tc.kl_w_max, tc.kl_w_min, tc.kl_ramp_frac, tc.kl_plateau_frac);
    Adam opt(tc.lr, tc.adam_beta1, tc.adam_beta2, tc.adam_eps);

    std::vector<int> train_idx = ds.split_indices(Split::train);
    if (train_idx.empty()) throw ConfigError("dataset has no training samples");

    std::ofstream losses_csv, routing_csv, stage2_csv;
    const bool writing = !tc.out_dir.empty();
    if (writing) {
        std::filesystem::create_directories(tc.out_dir);
        losses_csv.open(tc.out_dir + "/losses.csv");
        losses_csv << "epoch,batch,kl,cos,mse,softclip,dp,prior_clip,total\n";
        if (art.model.cfg.routed_mode()) {
            routing_csv.open(tc.out_dir + "/routing.csv");
            routing_csv << "epoch,modality,kl_weight,kl_probe,adherence_probe\n";
        }
    }

    TrainStats& stats = art.stats;
    stats.epochs = tc.epochs;
    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        for (int i = static_cast<int>(train_idx.size()) - 1; i > 0; --i) {
            const int j = static_cast<int>(rng_shuffle.uniform_int(i + 1));
            std::swap(train_idx[static_cast<std::size_t>(i)], train_idx[static_cast<std::size_t>(j)]);
        }
        const double kl_w_epoch = kl_weight(epoch, kl_sched);
        double epoch_total = 0.0;
        int n_batches = 0;
        for (std::size_t start = 0; start < train_idx.size(); start += tc.batch_size) {
            const std::size_t stop = std::min(train_idx.size(), start + tc.batch_size);
            const std::vector<int> ids(train_idx.begin() + static_cast<std::ptrdiff_t>(start),
                                       train_idx.begin() + static_cast<std::ptrdiff_t>(stop));
            const BatchResult r = run_batch(art.model, opt, ds, features, ids, tc, sched,
                                            kl_w_epoch, epoch, n_batches, rng_noise);
            if (writing) {
                losses_csv << r.bd.epoch << "," << r.bd.batch << "," << fmt_double(r.bd.kl) << ","
                           << fmt_double(r.bd.cos) << "," << fmt_double(r.bd.mse) << ","
                           << fmt_double(r.bd.softclip) << "," << fmt_double(r.bd.dp) << ","
                           << fmt_double(r.bd.prior_clip) << "," << fmt_double(r.bd.total) << "\n";
            }
            epoch_total += r.bd.total;
            n_batches++;
            stats.steps++;
        }
        const double epoch_mean = epoch_total / n_batches;
        if (epoch == 0) stats.first_epoch_loss = epoch_mean;
        stats.final_epoch_loss = epoch_mean;
        stats.final_kl_weight = kl_w_epoch;

        if (writing && art.model.cfg.routed_mode()) {
            const std::vector<FeatureVector> probe = {features[static_cast<std::size_t>(train_idx.front())]};
            for (Modality m : {Modality::text, Modality::image}) {
                const RoutingState rs = route_for_modality(art.model, probe.front(), m);
                const double kl_probe = kl_penalty(probe.front().labels, rs.p_raw, 1.0);
                routing_csv << epoch << "," << modality_name(m) << "," << fmt_double(kl_w_epoch)
                            << "," << fmt_double(kl_probe) << ","
                            << fmt_double(routing_adherence(art.model, probe, m)) << "\n";
            }
        }
    }

    if (tc.stage2) {
        if (writing) {
            stage2_csv.open(tc.out_dir + "/stage2_losses.csv");
            stage2_csv << "epoch,loss\n";
        }
        stage2_phase(art.model, ds, tc, features, ds.split_indices(Split::train), sched,
                     rng_stage2, stats, writing ? &stage2_csv : nullptr);
    }

    if (writing) {
        // The stored config omits the output location, so checkpoints are
        // byte-identical wherever the run lands and survive being moved.
        TrainConfig persisted = tc;
        persisted.out_dir = "";
        save_checkpoint(tc.out_dir + "/model.fpck", persisted.to_config(), art.model.params);
    }
    art.pre = pre;
    return art;
}

EvalReport evaluate(const EncoderModel& model, const std::vector<FeatureVector>& features,
                    const Dataset& ds, const std::vector<int>& sample_ids) {
    const int n = static_cast<int>(sample_ids.size());
    if (n < 2) throw ArgumentError("evaluate: need at least two samples");

    std::vector<Tensor> b_text, b_img, c_text, c_img;
    for (int id : sample_ids) {
        Tape tape;
        const BoundParams bp = bind_params(tape, model.params);
        const ForwardOutput fo = model.forward(tape, bp, features[static_cast<std::size_t>(id)]);
        b_text.push_back(tape.value(fo.text.b));
        b_img.push_back(tape.value(fo.image.b));
        const RawSample& s = ds.samples[static_cast<std::size_t>(id)];
        Tensor ct({ds.embed_dim}), ci({ds.embed_dim});
        for (int j = 0; j < ds.embed_dim; ++j) {
            ct[j] = s.c_text[static_cast<std::size_t>(j)];
            ci[j] = s.c_img[static_cast<std::size_t>(j)];
        }
        c_text.push_back(std::move(ct));
        c_img.push_back(std::move(ci));
    }

    EvalReport report;
    report.n = n;
    auto head = [&](const std::vector<Tensor>& b, const std::vector<Tensor>& c, double* twoway,
                    double* top1, double* cos_mean) {
        std::int64_t pair_hits = 0;
        int top_hits = 0;
        double diag = 0.0;
        for (int i = 0; i < n; ++i) {
            std::vector<double> sims(static_cast<std::size_t>(n));
            for (int j = 0; j < n; ++j)
                sims[static_cast<std::size_t>(j)] = safe_cos(b[static_cast<std::size_t>(i)],
                                                             c[static_cast<std::size_t>(j)]);
            const double own = sims[static_cast<std::size_t>(i)];
            diag += own;
            int arg = 0;
            for (int j = 0; j < n; ++j) {
                if (j != i && own > sims[static_cast<std::size_t>(j)]) pair_hits++;
                if (sims[static_cast<std::size_t>(j)] > sims[static_cast<std::size_t>(arg)]) arg = j;
            }
            top_hits += arg == i;
        }
        *twoway = static_cast<double>(pair_hits) / (static_cast<double>(n) * (n - 1));
        *top1 = static_cast<double>(top_hits) / n;
        *cos_mean = diag / n;
    };
    head(b_text, c_text, &report.twoway_text, &report.top1_text, &report.cos_text);
    head(b_img, c_img, &report.twoway_img, &report.top1_img, &report.cos_img);
    report.twoway_mean = 0.5 * (report.twoway_text + report.twoway_img);
    return report;
}

EvalReport evaluate_split(const EncoderModel& model, const Preprocessor& pre, const Dataset& ds,
                          Split split) {
    const std::vector<FeatureVector> features = prepare_features(ds, pre, model.cfg.mode);
    return evaluate(model, features, ds, ds.split_indices(split));
}

std::string eval_csv(const EvalReport& r) {
    std::ostringstream os;
    os << "n,twoway_text,twoway_img,twoway_mean,top1_text,top1_img,cos_text,cos_img\n"
       << r.n << "," << fmt_double(r.twoway_text) << "," << fmt_double(r.twoway_img) << ","
       << fmt_double(r.twoway_mean) << "," << fmt_double(r.top1_text) << ","
       << fmt_double(r.top1_img) << "," << fmt_double(r.cos_text) << "," << fmt_double(r.cos_img)
       << "\n";
    return os.str();
}

std::vector<AblationRow> run_ablation(const Dataset& ds, const TrainConfig& base,
                                      const std::vector<AblationMode>& modes) {
    std::vector<AblationRow> rows;
    for (AblationMode mode : modes) {
        TrainConfig tc = base;
        tc.mode = mode;
        if (!base.out_dir.empty()) tc.out_dir = base.out_dir + "/" + mode_name(mode);
        const TrainArtifacts art = train_model(ds, tc);
        AblationRow row;
        row.mode = mode;
        row.final_loss = art.stats.final_epoch_loss;
        row.test = evaluate_split(art.model, art.pre, ds, Split::test);
        rows.push_back(row);
    }
    return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    os << "mode,final_loss,twoway_text,twoway_img,twoway_mean,top1_text,top1_img,cos_text,cos_img\n";
    for (const AblationRow& r : rows) {
        os << mode_name(r.mode) << "," << fmt_double(r.final_loss) << ","
           << fmt_double(r.test.twoway_text) << "," << fmt_double(r.test.twoway_img) << ","
           << fmt_double(r.test.twoway_mean) << "," << fmt_double(r.test.top1_text) << ","
           << fmt_double(r.test.top1_img) << "," << fmt_double(r.test.cos_text) << ","
           << fmt_double(r.test.cos_img) << "\n";
    }
    return os.str();
}

LoadedRun load_run(const Checkpoint& ck) {
    LoadedRun run;
    run.tc = TrainConfig::from_config(ck.config);
    run.model.cfg = run.tc.encoder_config();
    run.model.params = ck.params;
    run.pre.ridge_lambda = run.tc.ridge_lambda;
    run.pre.top_k = run.tc.top_k_voxels;
    return run;
}

LoadedRun load_run(const std::string& checkpoint_path) {
    return load_run(load_checkpoint(checkpoint_path));
}

}  // namespace fped
