// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "fped/tensor.hpp"

namespace fped {

/// Flat key=value experiment configuration. Lines hold `key = value`;
/// blank lines and `#` comments are ignored. Serialization is sorted and
/// canonical, so equal configs produce byte-equal files.
class Config {
public:
    static Config from_file(const std::string& path);
    static Config from_string(const std::string& text);

    void set(const std::string& key, const std::string& value);
    bool has(const std::string& key) const { return kv_.count(key) != 0; }

    std::string get_string(const std::string& key) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;
    int get_int(const std::string& key, int fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    /// Applies `key=value` strings (e.g. command-line overrides).
    void apply_overrides(const std::vector<std::string>& assignments);

    std::string serialize() const;
    const std::map<std::string, std::string>& entries() const { return kv_; }

private:
    std::map<std::string, std::string> kv_;
};

int parse_int(const std::string& s, const std::string& key);
double parse_double(const std::string& s, const std::string& key);
bool parse_bool(const std::string& s, const std::string& key);

}  // namespace fped
