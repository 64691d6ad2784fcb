// SPDX-License-Identifier: Apache-2.0
//
// Single entry point for the whole pipeline: synthetic recordings, encoder
// training, retrieval evaluation, architecture ablations, expert
// interpretation, second-stage image sampling, and config validation.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fped/checkpoint.hpp"
#include "fped/config.hpp"
#include "fped/dataset.hpp"
#include "fped/interpret.hpp"
#include "fped/io_util.hpp"
#include "fped/stroute.hpp"
#include "fped/trainer.hpp"

namespace {

constexpr const char* fped_version = "0.1.0";

std::string hash_hex(std::uint64_t h) {
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << h;
    return os.str();
}

void write_manifest(const std::string& path, const std::string& command, std::uint64_t seed,
                    std::uint64_t config_hash, const std::vector<std::string>& outputs) {
    // Same `key = value` layout as the config files, so a manifest can be
    // re-read with the ordinary parser.
    std::ostringstream os;
    os << "command = " << command << "\n";
    os << "version = " << fped_version << "\n";
    os << "seed = " << seed << "\n";
    os << "config_hash = " << hash_hex(config_hash) << "\n";
    std::string joined;
    for (const std::string& o : outputs) {
        if (!joined.empty()) joined += ";";
        joined += o;
    }
    os << "outputs = " << joined << "\n";
    fped::write_text_file(path, os.str());
}

fped::TrainConfig load_train_config(const std::string& config_path,
                                    const std::vector<std::string>& overrides) {
    fped::Config cfg = fped::Config::from_file(config_path);
    cfg.apply_overrides(overrides);
    return fped::TrainConfig::from_config(cfg);
}

int find_sample(const fped::Dataset& ds, std::int64_t wanted) {
    if (wanted < 0) {
        const std::vector<int> test = ds.split_indices(fped::Split::test);
        if (test.empty()) throw fped::ConfigError("dataset has no test samples");
        return test.front();
    }
    for (std::size_t i = 0; i < ds.samples.size(); ++i)
        if (ds.samples[i].stimulus_id == static_cast<std::uint64_t>(wanted))
            return static_cast<int>(i);
    throw fped::ConfigError("no sample with stimulus id " + std::to_string(wanted));
}

std::vector<std::uint8_t> to_gray(const fped::Tensor& img) {
    std::vector<std::uint8_t> gray(static_cast<std::size_t>(img.size()));
    for (std::int64_t i = 0; i < img.size(); ++i) {
        const double v = std::min(1.0, std::max(0.0, img[i]));
        gray[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
    return gray;
}

struct GenDataArgs {
    std::uint64_t seed = 1;
    int n_train = 128, n_val = 32, n_test = 48;
    int v_total = 20000, reps = 3;
    double noise = 0.4, rho = 0.25;
    std::string out;
    bool force = false;
};

int cmd_gen_data(const GenDataArgs& a) {
    fped::DatagenConfig cfg;
    cfg.seed = a.seed;
    cfg.n_train = a.n_train;
    cfg.n_val = a.n_val;
    cfg.n_test = a.n_test;
    cfg.v_total = a.v_total;
    cfg.reps = a.reps;
    cfg.noise = a.noise;
    cfg.text_img_corr = a.rho;

    fped::check_overwrite(a.out, a.force);
    const fped::Dataset ds = fped::generate_dataset(cfg);
    fped::save_dataset(ds, a.out);

    fped::Config manifest_cfg;
    manifest_cfg.set("seed", std::to_string(cfg.seed));
    manifest_cfg.set("n_train", std::to_string(cfg.n_train));
    manifest_cfg.set("n_val", std::to_string(cfg.n_val));
    manifest_cfg.set("n_test", std::to_string(cfg.n_test));
    manifest_cfg.set("v_total", std::to_string(cfg.v_total));
    manifest_cfg.set("reps", std::to_string(cfg.reps));
    manifest_cfg.set("noise", fped::fmt_double(cfg.noise));
    manifest_cfg.set("rho", fped::fmt_double(cfg.text_img_corr));
    write_manifest(a.out + ".manifest", "gen-data", a.seed,
                   fped::fnv1a64(manifest_cfg.serialize()), {a.out});
    std::cout << "wrote " << a.out << " (" << ds.samples.size() << " samples, " << ds.v_total
              << " voxels)\n";
    return 0;
}

struct TrainArgs {
    std::string config;
    std::vector<std::string> overrides;
    bool force = false;
};

int cmd_train(const TrainArgs& a) {
    fped::TrainConfig tc = load_train_config(a.config, a.overrides);
    if (tc.dataset.empty()) throw fped::ConfigError("config must set `dataset`");
    if (tc.out_dir.empty()) throw fped::ConfigError("config must set `out_dir`");
    const fped::Dataset ds = fped::load_dataset(tc.dataset);

    fped::check_overwrite(tc.out_dir + "/model.fpck", a.force);
    fped::check_overwrite(tc.out_dir + "/losses.csv", a.force);
    fped::check_overwrite(tc.out_dir + "/manifest.txt", a.force);

    const fped::TrainArtifacts art = fped::train_model(ds, tc);
    std::vector<std::string> outputs = {tc.out_dir + "/model.fpck", tc.out_dir + "/losses.csv"};
    if (art.model.cfg.routed_mode()) outputs.push_back(tc.out_dir + "/routing.csv");
    if (tc.stage2) outputs.push_back(tc.out_dir + "/stage2_losses.csv");

    if (ds.split_indices(fped::Split::val).size() >= 2) {
        const fped::EvalReport rep = fped::evaluate_split(art.model, art.pre, ds, fped::Split::val);
        fped::write_text_file(tc.out_dir + "/metrics.csv", fped::eval_csv(rep));
        outputs.push_back(tc.out_dir + "/metrics.csv");
        std::cout << "val two-way: text " << rep.twoway_text << ", image " << rep.twoway_img
                  << "\n";
    }

    // Hash the exact configuration stored in the checkpoint.
    fped::TrainConfig saved = tc;
    saved.embed_dim = ds.embed_dim;
    saved.ridge_lambda = art.pre.ridge_lambda;
    write_manifest(tc.out_dir + "/manifest.txt", "train", tc.seed,
                   fped::fnv1a64(saved.to_config().serialize()), outputs);
    std::cout << "final loss " << art.stats.final_epoch_loss << " after " << art.stats.steps
              << " steps; checkpoint " << tc.out_dir << "/model.fpck\n";
    return 0;
}

struct EvalArgs {
    std::string ckpt, dataset, split = "test", out;
    bool force = false;
};

int cmd_eval(const EvalArgs& a) {
    const fped::LoadedRun run = fped::load_run(a.ckpt);
    const fped::Dataset ds = fped::load_dataset(a.dataset);
    fped::Split split;
    if (a.split == "train") split = fped::Split::train;
    else if (a.split == "val") split = fped::Split::val;
    else if (a.split == "test") split = fped::Split::test;
    else throw fped::ConfigError("--split must be train, val, or test");

    const fped::EvalReport rep = fped::evaluate_split(run.model, run.pre, ds, split);
    const std::string csv = fped::eval_csv(rep);
    if (a.out.empty()) {
        std::cout << csv;
    } else {
        fped::check_overwrite(a.out, a.force);
        fped::write_text_file(a.out, csv);
        write_manifest(a.out + ".manifest", "eval", run.tc.seed,
                       fped::fnv1a64(run.tc.to_config().serialize()), {a.out});
        std::cout << "wrote " << a.out << "\n";
    }
    return 0;
}

struct AblateArgs {
    std::string config;
    std::vector<std::string> overrides;
    std::string modes = "moe,uniform,onlyv";
    bool force = false;
};

int cmd_ablate(const AblateArgs& a) {
    fped::TrainConfig tc = load_train_config(a.config, a.overrides);
    if (tc.dataset.empty()) throw fped::ConfigError("config must set `dataset`");
    if (tc.out_dir.empty()) throw fped::ConfigError("config must set `out_dir`");
    const fped::Dataset ds = fped::load_dataset(tc.dataset);

    std::vector<fped::AblationMode> modes;
    std::istringstream is(a.modes);
    std::string token;
    while (std::getline(is, token, ',')) modes.push_back(fped::parse_mode(token));
    if (modes.empty()) throw fped::ConfigError("--modes is empty");

    std::filesystem::create_directories(tc.out_dir);
    fped::check_overwrite(tc.out_dir + "/ablation.csv", a.force);
    fped::check_overwrite(tc.out_dir + "/manifest.txt", a.force);
    for (const fped::AblationMode m : modes)
        fped::check_overwrite(tc.out_dir + "/" + fped::mode_name(m) + "/model.fpck", a.force);

    const std::vector<fped::AblationRow> rows = fped::run_ablation(ds, tc, modes);
    fped::write_text_file(tc.out_dir + "/ablation.csv", fped::ablation_csv(rows));

    std::vector<std::string> outputs = {tc.out_dir + "/ablation.csv"};
    for (const fped::AblationRow& r : rows)
        outputs.push_back(tc.out_dir + "/" + fped::mode_name(r.mode) + "/model.fpck");
    write_manifest(tc.out_dir + "/manifest.txt", "ablate", tc.seed,
                   fped::fnv1a64(tc.to_config().serialize()), outputs);
    std::cout << fped::ablation_csv(rows);
    return 0;
}

struct InterpretArgs {
    std::string ckpt, dataset, out_dir;
    std::int64_t sample_id = -1;
    bool by_count = false;
    bool force = false;
};

int cmd_interpret(const InterpretArgs& a) {
    const fped::LoadedRun run = fped::load_run(a.ckpt);
    const fped::Dataset ds = fped::load_dataset(a.dataset);
    const int idx = find_sample(ds, a.sample_id);

    const std::vector<fped::FeatureVector> features =
        fped::prepare_features(ds, run.pre, run.model.cfg.mode);
    std::vector<int> batch_ids = ds.split_indices(fped::Split::test);
    if (batch_ids.empty()) batch_ids = ds.split_indices(fped::Split::train);
    std::vector<fped::FeatureVector> batch;
    for (int id : batch_ids) batch.push_back(features[static_cast<std::size_t>(id)]);

    const fped::InterpretReport report = fped::interpret_sample(
        run.model, ds, features[static_cast<std::size_t>(idx)],
        ds.samples[static_cast<std::size_t>(idx)], batch, a.by_count);

    std::filesystem::create_directories(a.out_dir);
    std::vector<std::string> outputs;
    for (std::size_t k = 0; k < report.expert_maps.size(); ++k) {
        const std::string base = a.out_dir + "/expert_" + std::to_string(k) + "_heatmap";
        fped::check_overwrite(base + ".csv", a.force);
        fped::export_heatmap(report.expert_maps[k], base);
        outputs.push_back(base + ".csv");
        outputs.push_back(base + ".pgm");
    }
    const std::string text_path = a.out_dir + "/routing_contrib_text.csv";
    const std::string img_path = a.out_dir + "/routing_contrib_image.csv";
    fped::check_overwrite(text_path, a.force);
    fped::export_contribution(report.contrib_text, text_path);
    fped::export_contribution(report.contrib_img, img_path);
    outputs.push_back(text_path);
    outputs.push_back(img_path);

    write_manifest(a.out_dir + "/manifest.txt", "interpret", run.tc.seed,
                   fped::fnv1a64(run.tc.to_config().serialize()), outputs);
    std::cout << "wrote " << outputs.size() << " files to " << a.out_dir << "\n";
    return 0;
}

struct GenImageArgs {
    std::string ckpt, dataset, out;
    std::int64_t sample_id = -1;
    std::uint64_t seed = 1;
    bool force = false;
};

int cmd_gen_image(const GenImageArgs& a) {
    const fped::LoadedRun run = fped::load_run(a.ckpt);
    if (!run.model.params.contains("st2.gate.w"))
        throw fped::ConfigError("checkpoint has no second-stage parameters (train with stage2=true)");
    const fped::Dataset ds = fped::load_dataset(a.dataset);
    const int idx = find_sample(ds, a.sample_id);

    const std::vector<fped::FeatureVector> features =
        fped::prepare_features(ds, run.pre, run.model.cfg.mode);

    fped::Stage2Config s2;
    s2.token_dim = run.tc.token_dim;
    fped::Tape tape;
    const fped::BoundParams bp = fped::bind_params(tape, run.model.params);
    const fped::PassOutput pass = run.model.forward_pass(
        tape, bp, features[static_cast<std::size_t>(idx)], fped::Modality::image);

    const fped::DiffusionSchedule sched = fped::DiffusionSchedule::linear(run.tc.prior_timesteps);
    fped::Rng rng(a.seed);
    const fped::Tensor img = fped::generate_image(run.model.params, s2, sched,
                                                  tape.value(pass.fused), tape.value(pass.refined),
                                                  rng);
    fped::check_overwrite(a.out, a.force);
    fped::write_pgm(a.out, s2.image_side, s2.image_side, to_gray(img));

    const fped::Tensor target =
        fped::render_target_image(ds, ds.samples[static_cast<std::size_t>(idx)], s2);
    const std::string target_path = a.out + ".target.pgm";
    fped::write_pgm(target_path, s2.image_side, s2.image_side, to_gray(target));

    write_manifest(a.out + ".manifest", "gen-image", a.seed,
                   fped::fnv1a64(run.tc.to_config().serialize()), {a.out, target_path});
    std::cout << "wrote " << a.out << " and " << target_path << "\n";
    return 0;
}

int cmd_validate(const std::string& path) {
    const fped::TrainConfig tc = load_train_config(path, {});
    (void)tc;
    std::cout << path << ": ok\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"functional-network prior expert decoder pipeline"};
    app.set_version_flag("--version", fped_version);
    app.require_subcommand(1);

    GenDataArgs gd;
    CLI::App* gen_data = app.add_subcommand("gen-data", "draw a synthetic recording set");
    gen_data->add_option("--seed", gd.seed, "generator seed");
    gen_data->add_option("--n-train", gd.n_train, "training stimuli");
    gen_data->add_option("--n-val", gd.n_val, "validation stimuli");
    gen_data->add_option("--n-test", gd.n_test, "test stimuli");
    gen_data->add_option("--v-total", gd.v_total, "total voxel count");
    gen_data->add_option("--reps", gd.reps, "repetitions per stimulus");
    gen_data->add_option("--noise", gd.noise, "per-repetition measurement noise");
    gen_data->add_option("--rho", gd.rho, "text/image target correlation");
    gen_data->add_option("--out", gd.out, "output dataset path")->required();
    gen_data->add_flag("--force", gd.force, "overwrite existing outputs");

    TrainArgs tr;
    CLI::App* train = app.add_subcommand("train", "train the encoder (and optional second stage)");
    train->add_option("--config", tr.config, "config file")->required();
    train->add_option("--set", tr.overrides, "key=value overrides");
    train->add_flag("--force", tr.force, "overwrite existing outputs");

    EvalArgs ev;
    CLI::App* eval = app.add_subcommand("eval", "retrieval metrics for a checkpoint");
    eval->add_option("--ckpt", ev.ckpt, "checkpoint file")->required();
    eval->add_option("--dataset", ev.dataset, "dataset file")->required();
    eval->add_option("--split", ev.split, "train|val|test");
    eval->add_option("--out", ev.out, "write CSV here instead of stdout");
    eval->add_flag("--force", ev.force, "overwrite existing outputs");

    AblateArgs ab;
    CLI::App* ablate = app.add_subcommand("ablate", "same budget, alternative architectures");
    ablate->add_option("--config", ab.config, "config file")->required();
    ablate->add_option("--set", ab.overrides, "key=value overrides");
    ablate->add_option("--modes", ab.modes, "comma list of modes");
    ablate->add_flag("--force", ab.force, "overwrite existing outputs");

    InterpretArgs in;
    CLI::App* interpret = app.add_subcommand("interpret", "expert heatmaps and network contributions");
    interpret->add_option("--ckpt", in.ckpt, "checkpoint file")->required();
    interpret->add_option("--dataset", in.dataset, "dataset file")->required();
    interpret->add_option("--sample-id", in.sample_id, "stimulus id (default: first test sample)");
    interpret->add_option("--out-dir", in.out_dir, "output directory")->required();
    interpret->add_flag("--by-count", in.by_count, "contribution by selected counts, not weights");
    interpret->add_flag("--force", in.force, "overwrite existing outputs");

    GenImageArgs gi;
    CLI::App* gen_image = app.add_subcommand("gen-image", "sample a second-stage image");
    gen_image->add_option("--ckpt", gi.ckpt, "checkpoint file")->required();
    gen_image->add_option("--dataset", gi.dataset, "dataset file")->required();
    gen_image->add_option("--sample-id", gi.sample_id, "stimulus id (default: first test sample)");
    gen_image->add_option("--seed", gi.seed, "sampling seed");
    gen_image->add_option("--out", gi.out, "output PGM path")->required();
    gen_image->add_flag("--force", gi.force, "overwrite existing outputs");

    std::string validate_path;
    CLI::App* validate = app.add_subcommand("validate-config", "parse and check a config file");
    validate->add_option("config", validate_path, "config file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (*gen_data) return cmd_gen_data(gd);
        if (*train) return cmd_train(tr);
        if (*eval) return cmd_eval(ev);
        if (*ablate) return cmd_ablate(ab);
        if (*interpret) return cmd_interpret(in);
        if (*gen_image) return cmd_gen_image(gi);
        if (*validate) return cmd_validate(validate_path);
    } catch (const std::exception& e) {
        std::cerr << "fped: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
