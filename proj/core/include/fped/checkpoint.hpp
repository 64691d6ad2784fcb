// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "fped/config.hpp"
#include "fped/experts.hpp"

namespace fped {

/// Versioned binary snapshot: the serialized run configuration followed by
/// named parameter blocks (name, shape, raw 64-bit values). Round-trips
/// bit-exactly.
struct Checkpoint {
    Config config;
    ParamStore params;
};

void save_checkpoint(const std::string& path, const Config& config, const ParamStore& params);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace fped
