// SPDX-License-Identifier: Apache-2.0
#include "fped/interpret.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "fped/io_util.hpp"

namespace fped {

namespace {

double vec_norm(const double* v, int n) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += v[i] * v[i];
    return std::sqrt(s);
}

/// Position bias plus the pass's expert logit offsets, broadcast over rows.
Tensor effective_bias(const EncoderModel& model, int length, Modality m) {
    const int e = model.cfg.n_experts_l1;
    Tensor bias = model.cfg.position_bias ? model.params.at("router.bias") : Tensor::zeros({length, e});
    if (bias.rank() != 2 || bias.dim(0) != length || bias.dim(1) != e)
        throw ShapeError("router.bias does not match the feature length");
    if (model.cfg.modality_offsets) {
        const Tensor& off = model.params.at(m == Modality::text ? "router.mod_text" : "router.mod_img");
        for (int i = 0; i < length; ++i)
            for (int k = 0; k < e; ++k) bias.at(i, k) += off[k];
    }
    return bias;
}

}  // namespace

Heatmap expert_patch_similarity(const Tensor& f_k, const Dataset& ds, const RawSample& sample) {
    if (f_k.rank() != 1 || f_k.dim(0) != ds.embed_dim)
        throw ShapeError("expert feature must be rank-1 of the embedding width");
    const double fn = vec_norm(f_k.data(), ds.embed_dim);
    if (fn == 0.0) throw NumericError("expert_patch_similarity: zero-norm expert feature");

    Heatmap map;
    map.grid = ds.patch_grid;
    const int n = ds.patch_grid * ds.patch_grid;
    map.values.resize(static_cast<std::size_t>(n));
    map.degenerate.assign(static_cast<std::size_t>(n), 0);
    for (int p = 0; p < n; ++p) {
        const double* f = ds.patch_feature(sample, p);
        const double pn = vec_norm(f, ds.embed_dim);
        if (pn == 0.0) {
            map.values[static_cast<std::size_t>(p)] = 0.0;
            map.degenerate[static_cast<std::size_t>(p)] = 1;
            continue;
        }
        double dot = 0.0;
        for (int j = 0; j < ds.embed_dim; ++j) dot += f_k[j] * f[j];
        map.values[static_cast<std::size_t>(p)] = dot / (fn * pn);
    }
    return map;
}

std::vector<Tensor> expert_features(const EncoderModel& model, const FeatureVector& fv,
                                    Modality m) {
    Tape tape;
    const BoundParams bp = bind_params(tape, model.params);
    const PassOutput pass = model.forward_pass(tape, bp, fv, m);

    const Tensor& w = model.params.at("head.img.w");
    const Tensor& b = model.params.at("head.img.b");
    std::vector<Tensor> features;
    features.reserve(pass.expert_tokens.size());
    for (int id : pass.expert_tokens) {
        const Tensor& grid = tape.value(id);
        Tensor pooled = Tensor::zeros({grid.dim(1)});
        for (int t = 0; t < grid.dim(0); ++t)
            for (int j = 0; j < grid.dim(1); ++j) pooled[j] += grid.at(t, j) / grid.dim(0);
        Tensor f = Tensor::zeros({w.dim(0)});
        for (int i = 0; i < w.dim(0); ++i) {
            double acc = b[i];
            for (int j = 0; j < w.dim(1); ++j) acc += w.at(i, j) * pooled[j];
            f[i] = acc;
        }
        features.push_back(std::move(f));
    }
    return features;
}

RoutingState route_for_modality(const EncoderModel& model, const FeatureVector& fv, Modality m) {
    if (!model.cfg.routed_mode())
        throw ConfigError(std::string("mode '") + mode_name(model.cfg.mode) + "' does not route");
    const int length = static_cast<int>(fv.x.size());
    Tensor x({length});
    for (int i = 0; i < length; ++i) x[i] = fv.x[static_cast<std::size_t>(i)];
    const Tensor bias = effective_bias(model, length, m);
    return route(x, model.params.at("router.w_r"), bias, fv.labels, model.capacity());
}

Tensor routing_contribution(const std::vector<RoutingState>& batch, bool by_count) {
    if (batch.empty()) throw ArgumentError("routing_contribution: empty batch");
    const int e = static_cast<int>(batch.front().experts.size());
    Tensor contrib = Tensor::zeros({e});
    for (const RoutingState& state : batch) {
        if (static_cast<int>(state.experts.size()) != e)
            throw ShapeError("routing_contribution: expert counts differ across the batch");
        for (int k = 0; k < e; ++k) {
            const ExpertAssignment& a = state.experts[static_cast<std::size_t>(k)];
            if (by_count) {
                contrib[k] += static_cast<double>(a.selected.size());
            } else {
                for (int idx : a.selected) contrib[k] += a.weights[static_cast<std::size_t>(idx)];
            }
        }
    }
    double total = 0.0;
    for (int k = 0; k < e; ++k) total += contrib[k];
    if (!(total > 0.0)) throw NumericError("routing_contribution: degenerate all-zero routing");
    for (int k = 0; k < e; ++k) contrib[k] /= total;
    return contrib;
}

Tensor contribution_for_modality(const EncoderModel& model,
                                 const std::vector<FeatureVector>& batch, Modality m,
                                 bool by_count) {
    std::vector<RoutingState> states;
    states.reserve(batch.size());
    for (const FeatureVector& fv : batch) states.push_back(route_for_modality(model, fv, m));
    return routing_contribution(states, by_count);
}

double routing_adherence(const EncoderModel& model, const std::vector<FeatureVector>& batch,
                         Modality m) {
    if (batch.empty()) throw ArgumentError("routing_adherence: empty batch");
    const Tensor& w_r = model.params.at("router.w_r");
    const int e = w_r.dim(0);
    std::int64_t hits = 0, total = 0;
    for (const FeatureVector& fv : batch) {
        const int length = static_cast<int>(fv.x.size());
        Tensor x({length});
        for (int i = 0; i < length; ++i) x[i] = fv.x[static_cast<std::size_t>(i)];
        const Tensor logits = compute_logits(x, w_r, effective_bias(model, length, m));
        for (int i = 0; i < length; ++i) {
            int arg = 0;
            for (int k = 1; k < e; ++k)
                if (logits.at(i, k) > logits.at(i, arg)) arg = k;
            hits += arg == fv.labels[static_cast<std::size_t>(i)] - 1;
            total++;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(total);
}

void export_heatmap(const Heatmap& map, const std::string& base_path) {
    std::ostringstream csv;
    for (int r = 0; r < map.grid; ++r) {
        for (int c = 0; c < map.grid; ++c) {
            if (c) csv << ",";
            csv << fmt_double(map.at(r, c));
        }
        csv << "\n";
    }
    write_text_file(base_path + ".csv", csv.str());

    std::vector<std::uint8_t> gray(map.values.size());
    for (std::size_t i = 0; i < map.values.size(); ++i) {
        const double v = std::min(1.0, std::max(-1.0, map.values[i]));
        gray[i] = static_cast<std::uint8_t>(std::lround((v + 1.0) * 127.5));
    }
    write_pgm(base_path + ".pgm", map.grid, map.grid, gray);
}

Heatmap load_heatmap_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path);
    Heatmap map;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string cell;
        int cols = 0;
        while (std::getline(row, cell, ',')) {
            map.values.push_back(std::stod(cell));
            cols++;
        }
        if (map.grid == 0) map.grid = cols;
        else if (cols != map.grid) throw IoError(path + ": ragged heatmap rows");
    }
    if (static_cast<int>(map.values.size()) != map.grid * map.grid)
        throw IoError(path + ": heatmap is not square");
    map.degenerate.assign(map.values.size(), 0);
    return map;
}

void export_contribution(const Tensor& contrib, const std::string& path) {
    if (contrib.rank() != 1 || contrib.dim(0) != num_networks)
        throw ShapeError("contribution vector must cover the 7 networks");
    std::ostringstream os;
    os << "network,contribution\n";
    for (int k = 0; k < num_networks; ++k)
        os << network_names[static_cast<std::size_t>(k)] << "," << fmt_double(contrib[k]) << "\n";
    write_text_file(path, os.str());
}

InterpretReport interpret_sample(const EncoderModel& model, const Dataset& ds,
                                 const FeatureVector& sample_features, const RawSample& sample,
                                 const std::vector<FeatureVector>& batch, bool by_count) {
    InterpretReport report;
    report.sample_id = sample_features.sample_id;
    for (const Tensor& f : expert_features(model, sample_features, Modality::image))
        report.expert_maps.push_back(expert_patch_similarity(f, ds, sample));
    if (model.cfg.routed_mode()) {
        report.contrib_text = contribution_for_modality(model, batch, Modality::text, by_count);
        report.contrib_img = contribution_for_modality(model, batch, Modality::image, by_count);
    } else {
        report.contrib_text = Tensor::zeros({num_networks});
        for (int k = 0; k < num_networks; ++k) report.contrib_text[k] = 1.0 / num_networks;
        report.contrib_img = report.contrib_text;
    }
    return report;
}

}  // namespace fped
