// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fped/tensor.hpp"

namespace fped {

/// The seven functional networks, in fixed label order 1..7.
inline constexpr std::array<const char*, 7> network_names = {"V", "SM", "DA", "VA", "L", "C", "DM"};
inline constexpr int num_networks = 7;

enum class Split : std::uint8_t { train = 0, val = 1, test = 2 };
const char* split_name(Split s);

/// Assignment of every voxel to one of the seven networks (labels 1..7).
struct ParcellationMap {
    std::vector<std::uint8_t> voxel_network;  // size v_total
    std::array<int, num_networks> network_counts{};

    int v_total() const { return static_cast<int>(voxel_network.size()); }
    void validate() const;  // labels in range, all networks non-empty
};

/// One stimulus presentation: repeated voxel readouts plus its semantic targets.
struct RawSample {
    std::uint64_t stimulus_id = 0;
    Split split = Split::train;
    std::vector<double> voxels;   // reps * v_total, repetition-major
    std::vector<double> c_text;   // embed_dim
    std::vector<double> c_img;    // embed_dim
    std::vector<double> patches;  // patch_grid * patch_grid * embed_dim
};

struct Dataset {
    int v_total = 0;
    int embed_dim = 0;
    int patch_grid = 0;
    int reps = 0;
    ParcellationMap parcellation;
    std::vector<RawSample> samples;

    std::vector<int> split_indices(Split s) const;
    const double* patch_feature(const RawSample& s, int p) const {
        return s.patches.data() + static_cast<std::size_t>(p) * embed_dim;
    }
};

struct DatagenConfig {
    std::uint64_t seed = 1;
    int n_train = 128;
    int n_val = 32;
    int n_test = 48;
    int v_total = 20000;
    int embed_dim = 64;
    int patch_grid = 8;
    int reps = 3;
    double noise = 0.4;          // per-repetition measurement noise
    double text_img_corr = 0.25; // cosine between the planted text and image targets
};

/// Draws a synthetic dataset with planted network structure: visual-network
/// voxels read out image-patch features, attention-network voxels the image
/// embedding, limbic voxels the text embedding, and the remaining networks a
/// weak mixture plus their own per-stimulus latent. Splits are disjoint by
/// stimulus id. Identical seeds produce bitwise-identical datasets.
Dataset generate_dataset(const DatagenConfig& cfg);

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

/// Per-sample targets in text form, for eyeballing a dataset.
void export_dataset_csv(const Dataset& ds, const std::string& path);

/// Largest-remainder apportionment of `total` into parts proportional to
/// `weights`; ties go to the lowest index. Parts sum to `total` exactly.
std::vector<int> apportion(const std::vector<double>& weights, int total);

}  // namespace fped
