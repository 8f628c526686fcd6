#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "uqnet/errors.hpp"
#include "uqnet/tensor.hpp"

namespace uqnet {

// N trials x C channels x S timesteps plus labels and subject ids.
struct EpochSet {
    Tensor<float> data;  // [N, C, S]
    std::vector<std::uint8_t> labels;
    std::vector<std::uint8_t> subject_ids;
    std::uint16_t classes = 0;
    float sampling_rate = 0;
    std::vector<std::string> channel_names;

    std::size_t trials() const { return data.rank() == 3 ? data.dim(0) : 0; }
    std::size_t channels() const { return data.rank() == 3 ? data.dim(1) : 0; }
    std::size_t timesteps() const { return data.rank() == 3 ? data.dim(2) : 0; }

    void validate() const {
        if (data.rank() != 3) throw DataError("epoch data must be (N, C, S)");
        if (labels.size() != trials() || subject_ids.size() != trials())
            throw DataError("labels/subject_ids length does not match trial count");
        if (channel_names.size() != channels())
            throw DataError("channel name count does not match channel dim");
        for (auto l : labels)
            if (l >= classes) throw DataError("label " + std::to_string(l) + " >= K");
    }

    std::vector<std::uint8_t> subjects() const {
        std::vector<std::uint8_t> out;
        for (auto s : subject_ids)
            if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(s);
        std::sort(out.begin(), out.end());
        return out;
    }

    EpochSet select(const std::vector<std::size_t>& idx) const {
        EpochSet out;
        out.classes = classes;
        out.sampling_rate = sampling_rate;
        out.channel_names = channel_names;
        const std::size_t C = channels(), S = timesteps();
        out.data = Tensor<float>({idx.size(), C, S});
        for (std::size_t i = 0; i < idx.size(); ++i) {
            std::copy(data.data.begin() + std::ptrdiff_t(idx[i] * C * S),
                      data.data.begin() + std::ptrdiff_t((idx[i] + 1) * C * S),
                      out.data.data.begin() + std::ptrdiff_t(i * C * S));
            out.labels.push_back(labels[idx[i]]);
            out.subject_ids.push_back(subject_ids[idx[i]]);
        }
        return out;
    }
};

// EPOC file format, version 1:
//   magic "EPOC", version u16, N u32, C u32, S u32, K u16, fs f32,
//   channel names (u16 length-prefixed utf-8, C of them),
//   labels u8 x N, subject_ids u8 x N,
//   payload f32 LE, N*C*S, trial-major then channel.
inline constexpr std::uint16_t kEpocVersion = 1;

namespace epoc_detail {

template <typename T>
void write_le(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::istream& is, const char* what) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is)
        throw FormatError(std::string("epoch file truncated while reading ") + what +
                          " at byte offset " + std::to_string(std::size_t(is.tellg())));
    return v;
}

}  // namespace epoc_detail

inline void save_epochset(const std::filesystem::path& path, const EpochSet& set) {
    set.validate();
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw FormatError("cannot open " + tmp.string() + " for writing");
        os.write("EPOC", 4);
        epoc_detail::write_le<std::uint16_t>(os, kEpocVersion);
        epoc_detail::write_le<std::uint32_t>(os, std::uint32_t(set.trials()));
        epoc_detail::write_le<std::uint32_t>(os, std::uint32_t(set.channels()));
        epoc_detail::write_le<std::uint32_t>(os, std::uint32_t(set.timesteps()));
        epoc_detail::write_le<std::uint16_t>(os, set.classes);
        epoc_detail::write_le<float>(os, set.sampling_rate);
        for (const auto& name : set.channel_names) {
            epoc_detail::write_le<std::uint16_t>(os, std::uint16_t(name.size()));
            os.write(name.data(), std::streamsize(name.size()));
        }
        os.write(reinterpret_cast<const char*>(set.labels.data()),
                 std::streamsize(set.labels.size()));
        os.write(reinterpret_cast<const char*>(set.subject_ids.data()),
                 std::streamsize(set.subject_ids.size()));
        for (float v : set.data.data) epoc_detail::write_le<float>(os, v);
        if (!os) throw FormatError("write failure on " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline EpochSet load_epochset(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open epoch file " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "EPOC", 4) != 0)
        throw FormatError("bad magic at byte offset 0 in " + path.string());
    auto version = epoc_detail::read_le<std::uint16_t>(is, "version");
    if (version != kEpocVersion)
        throw FormatError("unsupported epoch file version " + std::to_string(version));
    auto n = epoc_detail::read_le<std::uint32_t>(is, "N");
    auto c = epoc_detail::read_le<std::uint32_t>(is, "C");
    auto s = epoc_detail::read_le<std::uint32_t>(is, "S");

    EpochSet set;
    set.classes = epoc_detail::read_le<std::uint16_t>(is, "K");
    set.sampling_rate = epoc_detail::read_le<float>(is, "sampling rate");
    for (std::uint32_t i = 0; i < c; ++i) {
        auto len = epoc_detail::read_le<std::uint16_t>(is, "channel name length");
        std::string name(len, '\0');
        is.read(name.data(), len);
        if (!is) throw FormatError("epoch file truncated in channel name block");
        set.channel_names.push_back(std::move(name));
    }
    set.labels.resize(n);
    is.read(reinterpret_cast<char*>(set.labels.data()), n);
    set.subject_ids.resize(n);
    is.read(reinterpret_cast<char*>(set.subject_ids.data()), n);
    if (!is) throw FormatError("epoch file truncated in label/subject block");
    set.data = Tensor<float>({n, c, s});
    is.read(reinterpret_cast<char*>(set.data.data.data()),
            std::streamsize(set.data.size() * sizeof(float)));
    if (std::size_t(is.gcount()) != set.data.size() * sizeof(float))
        throw FormatError("epoch file payload shorter than header N*C*S (" +
                          std::to_string(std::size_t(n) * c * s) + " floats expected)");
    is.peek();
    if (!is.eof()) throw FormatError("trailing bytes after epoch payload");
    set.validate();
    return set;
}

}  // namespace uqnet
