// SPDX-License-Identifier: Apache-2.0
#include "fped/checkpoint.hpp"

#include <fstream>

#include "fped/io_util.hpp"

namespace fped {

namespace {

constexpr char ckpt_magic[4] = {'F', 'P', 'C', 'K'};
constexpr std::uint32_t ckpt_version = 1;

}  // namespace

void save_checkpoint(const std::string& path, const Config& config, const ParamStore& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os.write(ckpt_magic, 4);
    write_u32(os, ckpt_version);
    write_string(os, config.serialize());
    write_u64(os, static_cast<std::uint64_t>(params.entries().size()));
    for (const auto& [name, value] : params.entries()) {
        write_string(os, name);
        write_u32(os, static_cast<std::uint32_t>(value.rank()));
        for (int a = 0; a < value.rank(); ++a) write_u32(os, static_cast<std::uint32_t>(value.dim(a)));
        write_f64_array(os, value.values());
    }
    if (!os) throw IoError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != std::string(ckpt_magic, 4))
        throw IoError(path + ": not a checkpoint file");
    const std::uint32_t version = read_u32(is);
    if (version != ckpt_version)
        throw IoError(path + ": unsupported checkpoint version " + std::to_string(version));

    Checkpoint ck;
    ck.config = Config::from_string(read_string(is));
    const std::uint64_t count = read_u64(is);
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::string name = read_string(is);
        const std::uint32_t rank = read_u32(is);
        if (rank > 3) throw IoError(path + ": parameter rank out of range");
        std::vector<int> shape(rank);
        std::size_t n = 1;
        for (std::uint32_t a = 0; a < rank; ++a) {
            shape[a] = static_cast<int>(read_u32(is));
            n *= static_cast<std::size_t>(shape[a]);
        }
        Tensor& t = ck.params.create(name, shape);
        read_f64_array(is, t.values(), n);
    }
    return ck;
}

}  // namespace fped
