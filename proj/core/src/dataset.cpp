// SPDX-License-Identifier: Apache-2.0
#include "fped/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "fped/io_util.hpp"
#include "fped/rng.hpp"

namespace fped {

namespace {

constexpr char dataset_magic[4] = {'F', 'P', 'E', 'D'};
constexpr std::uint32_t dataset_version = 1;

// Network share of cortex, mildly graded so segment sizes differ a little.
constexpr std::array<double, num_networks> network_share = {0.150, 0.140, 0.145, 0.135, 0.145, 0.140, 0.145};

// Mixing weight of the semantic target into each network's voxel source.
// V is handled separately (per-voxel patch features).
constexpr std::array<double, num_networks> target_mix = {1.0, 0.30, 0.95, 0.30, 0.95, 0.30, 0.35};

// Voxels within a network split into groups that share a distractor; each
// group's distractor lives in a fixed low-rank subspace of the embedding so
// the planted signal stays linearly identifiable from clean recordings.
constexpr int n_distractor_groups = 16;
constexpr int distractor_rank = 4;
constexpr double patch_noise = 1.5;

void normalize(std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    s = std::sqrt(s);
    if (s == 0.0) return;
    for (double& x : v) x /= s;
}

std::vector<double> gauss_vec(Rng& rng, int n) {
    std::vector<double> v(static_cast<std::size_t>(n));
    for (double& x : v) x = rng.gauss();
    return v;
}

}  // namespace

const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

void ParcellationMap::validate() const {
    std::array<int, num_networks> counts{};
    for (std::uint8_t l : voxel_network) {
        if (l < 1 || l > num_networks) throw ConfigError("parcellation label out of range");
        counts[l - 1]++;
    }
    for (int n = 0; n < num_networks; ++n) {
        if (counts[n] == 0) throw ConfigError(std::string("network ") + network_names[n] + " has no voxels");
        if (counts[n] != network_counts[n]) throw ConfigError("parcellation counts out of sync");
    }
}

std::vector<int> Dataset::split_indices(Split s) const {
    std::vector<int> idx;
    for (std::size_t i = 0; i < samples.size(); ++i)
        if (samples[i].split == s) idx.push_back(static_cast<int>(i));
    return idx;
}

std::vector<int> apportion(const std::vector<double>& weights, int total) {
    const double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
    if (wsum <= 0.0) throw ArgumentError("apportion: weights must have positive sum");
    const int n = static_cast<int>(weights.size());
    std::vector<int> parts(weights.size());
    std::vector<double> remainder(weights.size());
    int assigned = 0;
    for (int i = 0; i < n; ++i) {
        const double quota = static_cast<double>(total) * weights[i] / wsum;
        parts[i] = static_cast<int>(std::floor(quota));
        remainder[i] = quota - parts[i];
        assigned += parts[i];
    }
    std::vector<int> order(weights.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (remainder[a] != remainder[b]) return remainder[a] > remainder[b];
        return a < b;
    });
    for (int j = 0; assigned < total; ++j, ++assigned) parts[order[j % weights.size()]]++;
    return parts;
}

Dataset generate_dataset(const DatagenConfig& cfg) {
    if (cfg.v_total < num_networks) throw ConfigError("v_total must be at least 7");
    if (cfg.n_train < 1 || cfg.n_val < 1 || cfg.n_test < 1) throw ConfigError("split sizes must be >= 1");
    if (cfg.reps < 1) throw ConfigError("reps must be >= 1");

    Dataset ds;
    ds.v_total = cfg.v_total;
    ds.embed_dim = cfg.embed_dim;
    ds.patch_grid = cfg.patch_grid;
    ds.reps = cfg.reps;

    Rng master(cfg.seed);
    Rng structure = master.split(1);
    Rng stimuli = master.split(2);

    // Parcellation: contiguous blocks, sizes apportioned with a floor of one.
    std::vector<int> counts = apportion({network_share.begin(), network_share.end()}, cfg.v_total);
    for (int n = 0; n < num_networks; ++n) {
        while (counts[n] == 0) {
            const int big = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
            counts[big]--;
            counts[n]++;
        }
    }
    ds.parcellation.voxel_network.reserve(static_cast<std::size_t>(cfg.v_total));
    for (int n = 0; n < num_networks; ++n) {
        ds.parcellation.network_counts[n] = counts[n];
        for (int i = 0; i < counts[n]; ++i)
            ds.parcellation.voxel_network.push_back(static_cast<std::uint8_t>(n + 1));
    }
    ds.parcellation.validate();

    // Fixed per-dataset readout structure: voxel gains, loading directions,
    // and for V voxels an assigned image patch; other voxels get a distractor
    // group within their network.
    const int D = cfg.embed_dim;
    const int n_patches = cfg.patch_grid * cfg.patch_grid;
    const double load_scale = 1.0 / std::sqrt(static_cast<double>(D));
    std::vector<double> gain(static_cast<std::size_t>(cfg.v_total));
    std::vector<double> loading(static_cast<std::size_t>(cfg.v_total) * D);
    std::vector<int> group_of(static_cast<std::size_t>(cfg.v_total), 0);
    std::array<int, num_networks> net_seen{};
    for (int v = 0; v < cfg.v_total; ++v) {
        gain[v] = 0.5 + std::abs(structure.gauss());
        for (int j = 0; j < D; ++j) loading[static_cast<std::size_t>(v) * D + j] = structure.gauss() * load_scale;
        const int net = ds.parcellation.voxel_network[v] - 1;
        group_of[v] = net_seen[net]++ % (net == 0 ? n_patches : n_distractor_groups);
    }

    // Fixed unit basis vectors spanning each distractor subspace: one basis
    // per (network, group) for networks 2..7 and one per image patch.
    auto draw_basis = [&](int n_spaces) {
        std::vector<double> basis(static_cast<std::size_t>(n_spaces) * distractor_rank * D);
        for (int b = 0; b < n_spaces * distractor_rank; ++b) {
            std::vector<double> col = gauss_vec(structure, D);
            normalize(col);
            std::copy(col.begin(), col.end(), basis.begin() + static_cast<std::size_t>(b) * D);
        }
        return basis;
    };
    const std::vector<double> net_basis = draw_basis((num_networks - 1) * n_distractor_groups);
    const std::vector<double> patch_basis = draw_basis(n_patches);
    auto span_draw = [&](Rng& rng, const std::vector<double>& basis, int space) {
        std::vector<double> d(static_cast<std::size_t>(D), 0.0);
        for (int k = 0; k < distractor_rank; ++k) {
            const double z = rng.gauss();
            const double* col = basis.data() + (static_cast<std::size_t>(space) * distractor_rank + k) * D;
            for (int j = 0; j < D; ++j) d[j] += z * col[j];
        }
        normalize(d);
        return d;
    };

    const int total = cfg.n_train + cfg.n_val + cfg.n_test;
    const double rho = cfg.text_img_corr;
    ds.samples.reserve(static_cast<std::size_t>(total));
    for (int s = 0; s < total; ++s) {
        RawSample smp;
        smp.stimulus_id = static_cast<std::uint64_t>(s);
        smp.split = s < cfg.n_train ? Split::train : (s < cfg.n_train + cfg.n_val ? Split::val : Split::test);

        smp.c_img = gauss_vec(stimuli, D);
        normalize(smp.c_img);
        std::vector<double> indep = gauss_vec(stimuli, D);
        normalize(indep);
        smp.c_text.resize(static_cast<std::size_t>(D));
        for (int j = 0; j < D; ++j)
            smp.c_text[j] = rho * smp.c_img[j] + std::sqrt(1.0 - rho * rho) * indep[j];
        normalize(smp.c_text);

        smp.patches.resize(static_cast<std::size_t>(n_patches) * D);
        for (int p = 0; p < n_patches; ++p) {
            const std::vector<double> w = span_draw(stimuli, patch_basis, p);
            std::vector<double> f(static_cast<std::size_t>(D));
            for (int j = 0; j < D; ++j) f[j] = smp.c_img[j] + patch_noise * w[j];
            normalize(f);
            std::copy(f.begin(), f.end(), smp.patches.begin() + static_cast<std::size_t>(p) * D);
        }

        // Per-(network, group) source vectors for this stimulus.
        std::vector<double> sources(static_cast<std::size_t>(num_networks - 1) * n_distractor_groups * D);
        for (int n = 1; n < num_networks; ++n) {
            const double gamma = target_mix[n];
            const double delta = std::sqrt(std::max(0.0, 1.0 - gamma * gamma));
            const double* target = nullptr;
            std::vector<double> mix;
            switch (n + 1) {
                case 2:
                case 3:
                case 4: target = smp.c_img.data(); break;
                case 5:
                case 6: target = smp.c_text.data(); break;
                case 7: {
                    mix.resize(static_cast<std::size_t>(D));
                    for (int j = 0; j < D; ++j) mix[j] = smp.c_img[j] + smp.c_text[j];
                    normalize(mix);
                    target = mix.data();
                    break;
                }
            }
            for (int g = 0; g < n_distractor_groups; ++g) {
                const int space = (n - 1) * n_distractor_groups + g;
                const std::vector<double> d = span_draw(stimuli, net_basis, space);
                double* src = sources.data() + static_cast<std::size_t>(space) * D;
                for (int j = 0; j < D; ++j) src[j] = gamma * target[j] + delta * d[j];
            }
        }

        // Noise-free readout, then per-repetition measurement noise.
        std::vector<double> clean(static_cast<std::size_t>(cfg.v_total));
        for (int v = 0; v < cfg.v_total; ++v) {
            const int net = ds.parcellation.voxel_network[v] - 1;
            const double* src =
                net == 0 ? ds.patch_feature(smp, group_of[v])
                         : sources.data() + (static_cast<std::size_t>(net - 1) * n_distractor_groups + group_of[v]) * D;
            const double* a = loading.data() + static_cast<std::size_t>(v) * D;
            double acc = 0.0;
            for (int j = 0; j < D; ++j) acc += a[j] * src[j];
            clean[v] = gain[v] * acc * std::sqrt(static_cast<double>(D));
        }
        smp.voxels.resize(static_cast<std::size_t>(cfg.reps) * cfg.v_total);
        for (int r = 0; r < cfg.reps; ++r)
            for (int v = 0; v < cfg.v_total; ++v)
                smp.voxels[static_cast<std::size_t>(r) * cfg.v_total + v] = clean[v] + cfg.noise * stimuli.gauss();

        ds.samples.push_back(std::move(smp));
    }
    return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os.write(dataset_magic, 4);
    write_u32(os, dataset_version);
    write_u32(os, static_cast<std::uint32_t>(ds.v_total));
    write_u32(os, static_cast<std::uint32_t>(ds.embed_dim));
    write_u32(os, static_cast<std::uint32_t>(ds.patch_grid));
    write_u32(os, static_cast<std::uint32_t>(ds.reps));
    write_u32(os, static_cast<std::uint32_t>(ds.samples.size()));
    write_u32(os, num_networks);
    for (int c : ds.parcellation.network_counts) write_u32(os, static_cast<std::uint32_t>(c));
    for (std::uint8_t l : ds.parcellation.voxel_network) write_u8(os, l);
    for (const RawSample& s : ds.samples) {
        write_u64(os, s.stimulus_id);
        write_u8(os, static_cast<std::uint8_t>(s.split));
        write_f64_array(os, s.voxels);
        write_f64_array(os, s.c_text);
        write_f64_array(os, s.c_img);
        write_f64_array(os, s.patches);
    }
    if (!os) throw IoError("write failed: " + path);
}

Dataset load_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, dataset_magic, 4) != 0) throw IoError(path + ": not a dataset file");
    const std::uint32_t version = read_u32(is);
    if (version != dataset_version) throw IoError(path + ": unsupported dataset version");
    Dataset ds;
    ds.v_total = static_cast<int>(read_u32(is));
    ds.embed_dim = static_cast<int>(read_u32(is));
    ds.patch_grid = static_cast<int>(read_u32(is));
    ds.reps = static_cast<int>(read_u32(is));
    const std::uint32_t n_samples = read_u32(is);
    const std::uint32_t n_nets = read_u32(is);
    if (n_nets != num_networks) throw IoError(path + ": unexpected network count");
    for (int n = 0; n < num_networks; ++n) ds.parcellation.network_counts[n] = static_cast<int>(read_u32(is));
    ds.parcellation.voxel_network.resize(static_cast<std::size_t>(ds.v_total));
    for (auto& l : ds.parcellation.voxel_network) l = read_u8(is);
    ds.parcellation.validate();
    const int n_patches = ds.patch_grid * ds.patch_grid;
    ds.samples.resize(n_samples);
    for (RawSample& s : ds.samples) {
        s.stimulus_id = read_u64(is);
        s.split = static_cast<Split>(read_u8(is));
        read_f64_array(is, s.voxels, static_cast<std::size_t>(ds.reps) * ds.v_total);
        read_f64_array(is, s.c_text, static_cast<std::size_t>(ds.embed_dim));
        read_f64_array(is, s.c_img, static_cast<std::size_t>(ds.embed_dim));
        read_f64_array(is, s.patches, static_cast<std::size_t>(n_patches) * ds.embed_dim);
    }
    return ds;
}

void export_dataset_csv(const Dataset& ds, const std::string& path) {
    std::ostringstream os;
    os << "stimulus_id,split";
    for (int j = 0; j < ds.embed_dim; ++j) os << ",c_text_" << j;
    for (int j = 0; j < ds.embed_dim; ++j) os << ",c_img_" << j;
    os << "\n";
    for (const RawSample& s : ds.samples) {
        os << s.stimulus_id << "," << split_name(s.split);
        for (double v : s.c_text) os << "," << fmt_double(v);
        for (double v : s.c_img) os << "," << fmt_double(v);
        os << "\n";
    }
    write_text_file(path, os.str());
}

}  // namespace fped
