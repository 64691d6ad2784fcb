// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "fped/dataset.hpp"
#include "fped/io_util.hpp"
#include "test_util.hpp"

using fped::Dataset;
using fped::DatagenConfig;
using fped::Split;

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    const double na = std::sqrt(dot(a, a));
    const double nb = std::sqrt(dot(b, b));
    return dot(a, b) / (na * nb);
}

/// In-place Cholesky of K + lam I (lower triangle); K must be symmetric PD.
void cholesky_factor(std::vector<double>& K, int n, double lam) {
    for (int i = 0; i < n; ++i) K[static_cast<std::size_t>(i) * n + i] += lam;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= i; ++j) {
            double s = K[static_cast<std::size_t>(i) * n + j];
            for (int k = 0; k < j; ++k)
                s -= K[static_cast<std::size_t>(i) * n + k] * K[static_cast<std::size_t>(j) * n + k];
            if (i == j) {
                REQUIRE(s > 0.0);
                K[static_cast<std::size_t>(i) * n + j] = std::sqrt(s);
            } else {
                K[static_cast<std::size_t>(i) * n + j] = s / K[static_cast<std::size_t>(j) * n + j];
            }
        }
    }
}

std::vector<double> cholesky_solve(const std::vector<double>& L, int n, const std::vector<double>& y) {
    std::vector<double> z(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        double s = y[static_cast<std::size_t>(i)];
        for (int k = 0; k < i; ++k) s -= L[static_cast<std::size_t>(i) * n + k] * z[static_cast<std::size_t>(k)];
        z[static_cast<std::size_t>(i)] = s / L[static_cast<std::size_t>(i) * n + i];
    }
    std::vector<double> alpha(static_cast<std::size_t>(n));
    for (int i = n - 1; i >= 0; --i) {
        double s = z[static_cast<std::size_t>(i)];
        for (int k = i + 1; k < n; ++k)
            s -= L[static_cast<std::size_t>(k) * n + i] * alpha[static_cast<std::size_t>(k)];
        alpha[static_cast<std::size_t>(i)] = s / L[static_cast<std::size_t>(i) * n + i];
    }
    return alpha;
}

}  // namespace

TEST_CASE("apportion yields exact totals with ties to the lowest index") {
    const auto even = fped::apportion(std::vector<double>(7, 1.0), 4096);
    CHECK(std::accumulate(even.begin(), even.end(), 0) == 4096);
    CHECK(even[0] == 586);
    for (int i = 1; i < 7; ++i) CHECK(even[static_cast<std::size_t>(i)] == 585);

    const auto skewed = fped::apportion({3.0, 1.0}, 10);
    CHECK(skewed[0] == 8);
    CHECK(skewed[1] == 2);

    CHECK_THROWS_AS((void)fped::apportion({1.0, -1.0}, 5), fped::ArgumentError);
    CHECK_THROWS_AS((void)fped::apportion({0.0, 0.0}, 5), fped::ArgumentError);
}

TEST_CASE("generated dataset has the advertised shape and structure") {
    DatagenConfig cfg;
    cfg.seed = 31;
    cfg.n_train = 10;
    cfg.n_val = 4;
    cfg.n_test = 5;
    cfg.v_total = 700;
    cfg.reps = 2;
    const Dataset ds = fped::generate_dataset(cfg);

    CHECK(ds.v_total == 700);
    CHECK(ds.embed_dim == 64);
    CHECK(ds.patch_grid == 8);
    CHECK(ds.reps == 2);
    CHECK(ds.samples.size() == 19);
    CHECK(ds.split_indices(Split::train).size() == 10);
    CHECK(ds.split_indices(Split::val).size() == 4);
    CHECK(ds.split_indices(Split::test).size() == 5);

    ds.parcellation.validate();
    int counted = 0;
    for (int c : ds.parcellation.network_counts) {
        CHECK(c > 0);
        counted += c;
    }
    CHECK(counted == 700);

    std::vector<std::uint64_t> ids;
    for (const auto& s : ds.samples) {
        ids.push_back(s.stimulus_id);
        CHECK(s.voxels.size() == static_cast<std::size_t>(2 * 700));
        CHECK(s.c_text.size() == 64);
        CHECK(s.c_img.size() == 64);
        CHECK(s.patches.size() == static_cast<std::size_t>(64 * 64));
        CHECK(std::sqrt(dot(s.c_text, s.c_text)) == doctest::Approx(1.0));
        CHECK(std::sqrt(dot(s.c_img, s.c_img)) == doctest::Approx(1.0));
        for (int p = 0; p < 64; ++p) {
            const double* f = ds.patch_feature(s, p);
            double n2 = 0.0;
            for (int d = 0; d < 64; ++d) n2 += f[d] * f[d];
            CHECK(std::sqrt(n2) == doctest::Approx(1.0));
        }
        for (double v : s.voxels) CHECK(std::isfinite(v));
    }
    std::sort(ids.begin(), ids.end());
    CHECK(std::adjacent_find(ids.begin(), ids.end()) == ids.end());
}

TEST_CASE("planted text and image targets have the requested correlation") {
    DatagenConfig cfg;
    cfg.seed = 5;
    cfg.n_train = 40;
    cfg.n_val = 2;
    cfg.n_test = 2;
    cfg.v_total = 350;
    cfg.text_img_corr = 0.25;
    const Dataset ds = fped::generate_dataset(cfg);
    double mean_cos = 0.0;
    for (const auto& s : ds.samples) mean_cos += cosine(s.c_text, s.c_img);
    mean_cos /= static_cast<double>(ds.samples.size());
    CHECK(mean_cos == doctest::Approx(0.25).epsilon(0.35));
}

TEST_CASE("same seed reproduces the dataset bitwise, different seed does not") {
    const Dataset a = testutil::tiny_dataset(9);
    const Dataset b = testutil::tiny_dataset(9);
    const Dataset c = testutil::tiny_dataset(10);
    REQUIRE(a.samples.size() == b.samples.size());
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
        CHECK(a.samples[i].voxels == b.samples[i].voxels);
        CHECK(a.samples[i].c_text == b.samples[i].c_text);
        CHECK(a.samples[i].patches == b.samples[i].patches);
    }
    CHECK(a.samples[0].voxels != c.samples[0].voxels);
}

TEST_CASE("save and load round-trip is exact and stable on disk") {
    testutil::TempDir dir("ds_io");
    const Dataset ds = testutil::tiny_dataset(21);
    const std::string p1 = dir.file("a.fpds");
    const std::string p2 = dir.file("b.fpds");
    fped::save_dataset(ds, p1);
    fped::save_dataset(ds, p2);
    CHECK(fped::file_hash(p1) == fped::file_hash(p2));

    const Dataset back = fped::load_dataset(p1);
    CHECK(back.v_total == ds.v_total);
    CHECK(back.reps == ds.reps);
    CHECK(back.parcellation.voxel_network == ds.parcellation.voxel_network);
    REQUIRE(back.samples.size() == ds.samples.size());
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        CHECK(back.samples[i].stimulus_id == ds.samples[i].stimulus_id);
        CHECK(back.samples[i].split == ds.samples[i].split);
        CHECK(back.samples[i].voxels == ds.samples[i].voxels);
        CHECK(back.samples[i].c_text == ds.samples[i].c_text);
        CHECK(back.samples[i].c_img == ds.samples[i].c_img);
        CHECK(back.samples[i].patches == ds.samples[i].patches);
    }
    CHECK_THROWS_AS((void)fped::load_dataset(dir.file("missing.fpds")), std::runtime_error);
}

TEST_CASE("dataset csv export lists one row per sample") {
    testutil::TempDir dir("ds_csv");
    const Dataset ds = testutil::tiny_dataset(3);
    const std::string path = dir.file("targets.csv");
    fped::export_dataset_csv(ds, path);
    const std::string text = fped::read_text_file(path);
    CHECK(std::count(text.begin(), text.end(), '\n') == static_cast<long>(ds.samples.size()) + 1);
    CHECK(text.find("stimulus_id") != std::string::npos);
}

TEST_CASE("noise-free voxels decode the planted targets linearly") {
    // With measurement noise off, every voxel is a fixed linear readout of a
    // low-dimensional stimulus latent, so kernel ridge regression on raw
    // voxels must recover both embedding targets nearly exactly.
    DatagenConfig cfg;
    cfg.seed = 77;
    cfg.n_train = 1024;
    cfg.n_val = 2;
    cfg.n_test = 64;
    cfg.v_total = 2000;
    cfg.reps = 1;
    cfg.noise = 0.0;
    const Dataset ds = fped::generate_dataset(cfg);

    const auto train_idx = ds.split_indices(Split::train);
    const auto test_idx = ds.split_indices(Split::test);
    const int n = static_cast<int>(train_idx.size());
    const int m = static_cast<int>(test_idx.size());
    const int d = ds.v_total;

    std::vector<double> K(static_cast<std::size_t>(n) * n);
    double tr = 0.0;
    for (int i = 0; i < n; ++i) {
        const auto& xi = ds.samples[static_cast<std::size_t>(train_idx[static_cast<std::size_t>(i)])].voxels;
        for (int j = 0; j <= i; ++j) {
            const auto& xj = ds.samples[static_cast<std::size_t>(train_idx[static_cast<std::size_t>(j)])].voxels;
            double s = 0.0;
            for (int k = 0; k < d; ++k) s += xi[static_cast<std::size_t>(k)] * xj[static_cast<std::size_t>(k)];
            K[static_cast<std::size_t>(i) * n + j] = s;
            K[static_cast<std::size_t>(j) * n + i] = s;
            if (i == j) tr += s;
        }
    }
    const double lam = 1e-5 * tr / n;
    cholesky_factor(K, n, lam);

    auto decode_cos = [&](bool image_target) {
        std::vector<std::vector<double>> alphas;
        alphas.reserve(64);
        for (int c = 0; c < 64; ++c) {
            std::vector<double> y(static_cast<std::size_t>(n));
            for (int i = 0; i < n; ++i) {
                const auto& smp = ds.samples[static_cast<std::size_t>(train_idx[static_cast<std::size_t>(i)])];
                y[static_cast<std::size_t>(i)] =
                    image_target ? smp.c_img[static_cast<std::size_t>(c)] : smp.c_text[static_cast<std::size_t>(c)];
            }
            alphas.push_back(cholesky_solve(K, n, y));
        }
        double mean_cos = 0.0;
        for (int t = 0; t < m; ++t) {
            const auto& smp = ds.samples[static_cast<std::size_t>(test_idx[static_cast<std::size_t>(t)])];
            std::vector<double> kx(static_cast<std::size_t>(n));
            for (int i = 0; i < n; ++i) {
                const auto& xi = ds.samples[static_cast<std::size_t>(train_idx[static_cast<std::size_t>(i)])].voxels;
                double s = 0.0;
                for (int k = 0; k < d; ++k) s += xi[static_cast<std::size_t>(k)] * smp.voxels[static_cast<std::size_t>(k)];
                kx[static_cast<std::size_t>(i)] = s;
            }
            std::vector<double> pred(64);
            for (int c = 0; c < 64; ++c) pred[static_cast<std::size_t>(c)] = dot(kx, alphas[static_cast<std::size_t>(c)]);
            mean_cos += cosine(pred, image_target ? smp.c_img : smp.c_text);
        }
        return mean_cos / m;
    };

    CHECK(decode_cos(true) > 0.99);
    CHECK(decode_cos(false) > 0.99);
}
