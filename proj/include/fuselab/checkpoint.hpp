#pragma once

// U2CK checkpoint container: a self-describing binary snapshot of named
// tensors (model parameters and optimizer moments), the resolved config,
// the optimizer step counter, and the training RNG state.  Everything a
// resumed run needs to continue bit-exactly.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "fuselab/errors.hpp"
#include "fuselab/tensor.hpp"

namespace fuselab {

template <typename T>
struct Checkpoint {
    nlohmann::json config;  // resolved model + train config echo
    std::vector<std::pair<std::string, Tensor<T>>> tensors;
    std::uint64_t step = 0;  // Adam step counter t
    std::int32_t epoch = 0;  // last completed epoch (0 = none)
    std::string rng_state;
};

namespace ckdetail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
    put_u32(os, static_cast<std::uint32_t>(v));
    put_u32(os, static_cast<std::uint32_t>(v >> 32));
}

inline std::uint32_t get_u32(std::istream& is, const std::string& what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw FormatError("U2CK: truncated while reading " + what);
    return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
           std::uint32_t(b[3]) << 24;
}

inline std::uint64_t get_u64(std::istream& is, const std::string& what) {
    const std::uint64_t lo = get_u32(is, what);
    const std::uint64_t hi = get_u32(is, what);
    return lo | hi << 32;
}

template <typename T>
constexpr char dtype_tag() {
    return sizeof(T) == 4 ? 'f' : 'd';
}

}  // namespace ckdetail

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<T>& ck) {
    namespace fs = std::filesystem;
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw FormatError("U2CK: cannot open " + tmp.string() + " for writing");
        os.write("U2CK", 4);
        os.put(1);  // format version
        os.put(ckdetail::dtype_tag<T>());
        const std::string cfg = ck.config.dump();
        ckdetail::put_u32(os, static_cast<std::uint32_t>(cfg.size()));
        os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
        ckdetail::put_u64(os, ck.step);
        ckdetail::put_u32(os, static_cast<std::uint32_t>(ck.epoch));
        ckdetail::put_u32(os, static_cast<std::uint32_t>(ck.rng_state.size()));
        os.write(ck.rng_state.data(), static_cast<std::streamsize>(ck.rng_state.size()));
        ckdetail::put_u32(os, static_cast<std::uint32_t>(ck.tensors.size()));
        for (const auto& [name, t] : ck.tensors) {
            ckdetail::put_u32(os, static_cast<std::uint32_t>(name.size()));
            os.write(name.data(), static_cast<std::streamsize>(name.size()));
            ckdetail::put_u32(os, static_cast<std::uint32_t>(t.shape().size()));
            for (std::int64_t d : t.shape()) ckdetail::put_u64(os, static_cast<std::uint64_t>(d));
            os.write(reinterpret_cast<const char*>(t.data().data()),
                     static_cast<std::streamsize>(t.size() * sizeof(T)));
        }
        if (!os) throw FormatError("U2CK: write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("U2CK: cannot open " + path.string());
    char magic[4];
    if (!is.read(magic, 4) || std::string(magic, 4) != "U2CK")
        throw FormatError("U2CK: bad magic in " + path.string());
    const int version = is.get();
    if (version != 1) throw FormatError("U2CK: unsupported version " + std::to_string(version));
    const int tag = is.get();
    if (tag != ckdetail::dtype_tag<T>())
        throw FormatError("U2CK: dtype mismatch (file tag '" + std::string(1, char(tag)) + "')");

    Checkpoint<T> ck;
    const std::uint32_t cfg_len = ckdetail::get_u32(is, "config length");
    std::string cfg(cfg_len, '\0');
    if (!is.read(cfg.data(), cfg_len)) throw FormatError("U2CK: truncated config");
    ck.config = nlohmann::json::parse(cfg);
    ck.step = ckdetail::get_u64(is, "step");
    ck.epoch = static_cast<std::int32_t>(ckdetail::get_u32(is, "epoch"));
    const std::uint32_t rng_len = ckdetail::get_u32(is, "rng length");
    ck.rng_state.resize(rng_len);
    if (!is.read(ck.rng_state.data(), rng_len)) throw FormatError("U2CK: truncated rng state");

    const std::uint32_t n = ckdetail::get_u32(is, "tensor count");
    ck.tensors.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        const std::uint32_t name_len = ckdetail::get_u32(is, "tensor name length");
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len)) throw FormatError("U2CK: truncated tensor name");
        const std::uint32_t ndim = ckdetail::get_u32(is, "rank of " + name);
        Shape shape(ndim);
        for (auto& d : shape)
            d = static_cast<std::int64_t>(ckdetail::get_u64(is, "dims of " + name));
        std::vector<T> vals(static_cast<std::size_t>(numel(shape)));
        if (!is.read(reinterpret_cast<char*>(vals.data()),
                     static_cast<std::streamsize>(vals.size() * sizeof(T))))
            throw FormatError("U2CK: truncated data for " + name);
        ck.tensors.emplace_back(std::move(name), Tensor<T>(std::move(shape), std::move(vals)));
    }
    return ck;
}

}  // namespace fuselab
