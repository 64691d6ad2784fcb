// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace fped {

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Little-endian primitives. All binary file formats in this project are
// written through these, so files are byte-identical across platforms.
void write_u8(std::ostream& os, std::uint8_t v);
void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
void write_f64(std::ostream& os, double v);
void write_f64_array(std::ostream& os, const std::vector<double>& v);
void write_string(std::ostream& os, const std::string& s);

std::uint8_t read_u8(std::istream& is);
std::uint32_t read_u32(std::istream& is);
std::uint64_t read_u64(std::istream& is);
double read_f64(std::istream& is);
void read_f64_array(std::istream& is, std::vector<double>& v, std::size_t n);
std::string read_string(std::istream& is);

std::uint64_t fnv1a64(const void* data, std::size_t n);
std::uint64_t fnv1a64(const std::string& s);
std::uint64_t file_hash(const std::string& path);

/// Formats a double with enough digits to round-trip exactly.
std::string fmt_double(double v);

/// Refuses to clobber an existing file unless force is set.
void check_overwrite(const std::string& path, bool force);

/// 8-bit binary PGM (P5). `gray` holds values already mapped to [0,255].
void write_pgm(const std::string& path, int width, int height, const std::vector<std::uint8_t>& gray);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace fped
