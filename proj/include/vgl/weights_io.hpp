#pragma once

// Weight vector persistence.
//
// Binary layout (all little-endian):
//   bytes 0-3   magic "VGLW"
//   bytes 4-7   uint32 format version (1)
//   bytes 8-15  uint64 dimension
//   then dimension IEEE-754 doubles.

#include "vgl/core.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <bit>
#include <cstdint>
#include <fstream>
#include <string>

namespace vgl {

inline constexpr std::array<char, 4> kWeightsMagic{'V', 'G', 'L', 'W'};
inline constexpr std::uint32_t kWeightsVersion = 1;

namespace detail {

template <class T>
void put_le(std::ostream& os, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        os.put(static_cast<char>((value >> (8 * i)) & 0xff));
    }
}

template <class T>
T get_le(std::istream& is) {
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        const int c = is.get();
        if (c == std::char_traits<char>::eof()) throw Error("weights file truncated");
        value |= static_cast<T>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return value;
}

}  // namespace detail

inline void write_weights_binary(std::ostream& os, const Vector& w) {
    os.write(kWeightsMagic.data(), kWeightsMagic.size());
    detail::put_le<std::uint32_t>(os, kWeightsVersion);
    detail::put_le<std::uint64_t>(os, static_cast<std::uint64_t>(w.size()));
    for (Eigen::Index i = 0; i < w.size(); ++i) {
        detail::put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(w(i)));
    }
}

inline Vector read_weights_binary(std::istream& is) {
    std::array<char, 4> magic{};
    if (!is.read(magic.data(), magic.size()) || magic != kWeightsMagic) {
        throw Error("not a weights file (bad magic)");
    }
    const auto version = detail::get_le<std::uint32_t>(is);
    if (version != kWeightsVersion) {
        throw Error("unsupported weights file version " + std::to_string(version));
    }
    const auto dim = detail::get_le<std::uint64_t>(is);
    if (dim > (std::uint64_t{1} << 32)) throw Error("weights file dimension implausible");
    Vector w(static_cast<Eigen::Index>(dim));
    for (Eigen::Index i = 0; i < w.size(); ++i) {
        w(i) = std::bit_cast<double>(detail::get_le<std::uint64_t>(is));
    }
    return w;
}

inline void save_weights(const std::string& path, const Vector& w) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open '" + path + "' for writing");
    write_weights_binary(os, w);
}

inline Vector load_weights(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open '" + path + "'");
    return read_weights_binary(is);
}

inline nlohmann::json weights_to_json(const Vector& w, const std::string& kind) {
    return {{"format", "vgl-weights"},
            {"version", kWeightsVersion},
            {"kind", kind},
            {"dim", w.size()},
            {"weights", std::vector<double>(w.data(), w.data() + w.size())}};
}

inline Vector weights_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "vgl-weights") throw Error("json is not a weights document");
    const auto values = j.at("weights").get<std::vector<double>>();
    if (j.at("dim").get<std::size_t>() != values.size()) throw Error("weights json dimension mismatch");
    return Eigen::Map<const Vector>(values.data(), Eigen::Index(values.size()));
}

}  // namespace vgl
