#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "uqnet/errors.hpp"
#include "uqnet/network.hpp"

namespace uqnet {

// Parameter checkpoint, magic "UQNN", version u16, then named tensors:
// (name length u16, name bytes, rank u8, dims u32 each, f32 LE payload).
inline constexpr std::uint16_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void write_le(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::istream& is, const char* what) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw FormatError(std::string("checkpoint truncated while reading ") + what +
                               " at byte offset " + std::to_string(std::size_t(is.tellg())));
    return v;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParamSet<T>& params) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw FormatError("cannot open " + tmp.string() + " for writing");
        os.write("UQNN", 4);
        detail::write_le<std::uint16_t>(os, kCheckpointVersion);
        for (const auto& layer : params.per_layer)
            for (const auto& p : layer) {
                detail::write_le<std::uint16_t>(os, std::uint16_t(p.name.size()));
                os.write(p.name.data(), std::streamsize(p.name.size()));
                detail::write_le<std::uint8_t>(os, std::uint8_t(p.value.rank()));
                for (std::size_t d : p.value.shape)
                    detail::write_le<std::uint32_t>(os, std::uint32_t(d));
                for (T v : p.value.data) detail::write_le<float>(os, float(v));
            }
        if (!os) throw FormatError("write failure on " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline std::map<std::string, Tensor<float>> load_checkpoint_raw(
    const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open checkpoint " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "UQNN", 4) != 0)
        throw FormatError("bad checkpoint magic at byte offset 0 in " + path.string());
    auto version = detail::read_le<std::uint16_t>(is, "version");
    if (version != kCheckpointVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    std::map<std::string, Tensor<float>> out;
    while (is.peek() != std::ifstream::traits_type::eof()) {
        auto name_len = detail::read_le<std::uint16_t>(is, "name length");
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) throw FormatError("checkpoint truncated while reading tensor name");
        auto rank = detail::read_le<std::uint8_t>(is, "rank");
        std::vector<std::size_t> shape;
        for (std::size_t i = 0; i < rank; ++i)
            shape.push_back(detail::read_le<std::uint32_t>(is, "dim"));
        Tensor<float> t(shape);
        for (auto& v : t.data) v = detail::read_le<float>(is, "payload");
        out.emplace(std::move(name), std::move(t));
    }
    return out;
}

// Load into a parameter skeleton for the given network spec; every expected
// tensor must be present with the right shape.
template <typename T>
ParamSet<T> load_checkpoint(const std::filesystem::path& path, const NetworkSpec& net) {
    auto raw = load_checkpoint_raw(path);
    RngStream dummy(0);
    ParamSet<T> params = init_params<T>(net, dummy);
    for (auto& layer : params.per_layer)
        for (auto& p : layer) {
            auto it = raw.find(p.name);
            if (it == raw.end())
                throw FormatError("checkpoint " + path.string() + " missing tensor " + p.name);
            if (it->second.shape != p.value.shape)
                throw FormatError("checkpoint tensor " + p.name + " has shape " +
                                  it->second.shape_str() + ", expected " + p.value.shape_str());
            for (std::size_t i = 0; i < p.value.size(); ++i)
                p.value.data[i] = T(it->second.data[i]);
        }
    return params;
}

}  // namespace uqnet
