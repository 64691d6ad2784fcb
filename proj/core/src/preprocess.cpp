// SPDX-License-Identifier: Apache-2.0
#include "fped/preprocess.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

namespace fped {

std::vector<std::uint8_t> topk_mask(const std::vector<double>& v, int k, bool absolute_value) {
    const int n = static_cast<int>(v.size());
    if (k < 1 || k > n) throw ArgumentError("topk_mask: k out of range");
    std::vector<int> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    auto stat = [&](int i) { return absolute_value ? std::abs(v[i]) : v[i]; };
    std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int a, int b) {
        const double sa = stat(a), sb = stat(b);
        if (sa != sb) return sa > sb;
        return a < b;
    });
    std::vector<std::uint8_t> mask(v.size(), 0);
    for (int j = 0; j < k; ++j) mask[order[j]] = 1;
    return mask;
}

double ridge_denoise(std::span<const double> reps, double lambda) {
    if (reps.empty()) throw ArgumentError("ridge_denoise: no repetitions");
    if (lambda < 0.0) throw ArgumentError("ridge_denoise: lambda must be >= 0");
    const double r = static_cast<double>(reps.size());
    double mean = 0.0;
    for (double v : reps) mean += v;
    mean /= r;
    return (r / (r + lambda)) * mean;
}

FeatureVector assemble_feature_vector(const std::vector<double>& denoised,
                                      const std::vector<std::uint8_t>& mask,
                                      const ParcellationMap& parcellation,
                                      int out_dim) {
    if (denoised.size() != mask.size() || static_cast<int>(mask.size()) != parcellation.v_total())
        throw ShapeError("assemble_feature_vector: input sizes disagree");

    std::array<std::vector<int>, num_networks> selected;
    for (int v = 0; v < parcellation.v_total(); ++v)
        if (mask[v]) selected[parcellation.voxel_network[v] - 1].push_back(v);

    std::vector<double> weights(num_networks);
    int total_selected = 0;
    for (int n = 0; n < num_networks; ++n) {
        weights[n] = static_cast<double>(selected[n].size());
        total_selected += static_cast<int>(selected[n].size());
    }
    if (total_selected == 0) throw ArgumentError("assemble_feature_vector: empty mask");
    const std::vector<int> seg_len = apportion(weights, out_dim);

    FeatureVector out;
    out.x.reserve(static_cast<std::size_t>(out_dim));
    out.labels.reserve(static_cast<std::size_t>(out_dim));
    for (int n = 0; n < num_networks; ++n) {
        const auto& vox = selected[n];
        const int m = static_cast<int>(vox.size());
        const int s = seg_len[n];
        if (s == 0) continue;
        for (int j = 0; j < s; ++j) {
            // Equal-width index bins; a bin narrower than one voxel falls back
            // to the single voxel it starts in, which covers segments longer
            // than the masked count.
            int lo = static_cast<int>((static_cast<std::int64_t>(j) * m) / s);
            int hi = static_cast<int>((static_cast<std::int64_t>(j + 1) * m) / s);
            if (hi <= lo) hi = lo + 1;
            double acc = 0.0;
            for (int t = lo; t < hi; ++t) acc += denoised[vox[t]];
            out.x.push_back(acc / (hi - lo));
            out.labels.push_back(static_cast<std::uint8_t>(n + 1));
        }
    }
    return out;
}

double ridge_cv_error(const Dataset& ds, double lambda) {
    // Two folds over repetitions (even vs odd); each fold's shrunk mean
    // predicts the other fold's raw values. Train split only.
    double err = 0.0;
    for (const RawSample& s : ds.samples) {
        if (s.split != Split::train) continue;
        for (int v = 0; v < ds.v_total; ++v) {
            for (int fold = 0; fold < 2; ++fold) {
                double mean = 0.0;
                int n_in = 0;
                for (int r = 0; r < ds.reps; ++r) {
                    if (r % 2 == fold) {
                        mean += s.voxels[static_cast<std::size_t>(r) * ds.v_total + v];
                        n_in++;
                    }
                }
                if (n_in == 0) continue;
                mean /= n_in;
                const double pred = (n_in / (n_in + lambda)) * mean;
                for (int r = 0; r < ds.reps; ++r) {
                    if (r % 2 != fold) {
                        const double d = pred - s.voxels[static_cast<std::size_t>(r) * ds.v_total + v];
                        err += d * d;
                    }
                }
            }
        }
    }
    return err;
}

Preprocessor Preprocessor::fit(const Dataset& ds, int top_k, bool absolute_value) {
    Preprocessor p;
    p.top_k = top_k;
    p.absolute_value = absolute_value;
    static constexpr std::array<double, 3> grid = {0.1, 1.0, 10.0};
    if (ds.reps >= 2) {
        double best = std::numeric_limits<double>::infinity();
        for (double lam : grid) {
            const double e = ridge_cv_error(ds, lam);
            if (e < best) {
                best = e;
                p.ridge_lambda = lam;
            }
        }
    } else {
        p.ridge_lambda = grid.front();  // no held-out repetition to score against
    }
    return p;
}

FeatureVector Preprocessor::run(const Dataset& ds, const RawSample& sample) const {
    std::vector<double> rep_mean(static_cast<std::size_t>(ds.v_total), 0.0);
    for (int r = 0; r < ds.reps; ++r)
        for (int v = 0; v < ds.v_total; ++v)
            rep_mean[v] += sample.voxels[static_cast<std::size_t>(r) * ds.v_total + v];
    for (double& m : rep_mean) m /= ds.reps;

    const std::vector<std::uint8_t> mask = topk_mask(rep_mean, std::min(top_k, ds.v_total), absolute_value);

    std::vector<double> denoised(static_cast<std::size_t>(ds.v_total));
    const double shrink = static_cast<double>(ds.reps) / (ds.reps + ridge_lambda);
    for (int v = 0; v < ds.v_total; ++v) denoised[v] = shrink * rep_mean[v];

    FeatureVector fv = assemble_feature_vector(denoised, mask, ds.parcellation, out_dim);
    fv.sample_id = sample.stimulus_id;
    return fv;
}

}  // namespace fped
