#pragma once

#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "birdrone/layers.hpp"

namespace brd {

// Flat binary weight container. Layout: magic "BDRN1", u32 record count, then
// per record: u32 name length, name bytes, u32 rank, u32 dims[rank], float32
// values. All integers and floats little-endian regardless of host.

struct WeightRecord {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<float> values;

    std::size_t numel() const {
        std::size_t n = 1;
        for (auto d : dims) n *= d;
        return n;
    }
};

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    const char b[4] = {static_cast<char>(v), static_cast<char>(v >> 8),
                       static_cast<char>(v >> 16), static_cast<char>(v >> 24)};
    os.write(b, 4);
}

inline std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    require(static_cast<bool>(is), "weight file truncated");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f32(std::ostream& os, float f) {
    std::uint32_t v;
    std::memcpy(&v, &f, 4);
    put_u32(os, v);
}

inline float get_f32(std::istream& is) {
    const std::uint32_t v = get_u32(is);
    float f;
    std::memcpy(&f, &v, 4);
    return f;
}

}  // namespace detail

inline void save_weights(const std::string& path, const std::vector<WeightRecord>& recs) {
    std::ofstream os(path, std::ios::binary);
    require(static_cast<bool>(os), "cannot open " + path + " for writing");
    os.write("BDRN1", 5);
    detail::put_u32(os, static_cast<std::uint32_t>(recs.size()));
    for (const auto& r : recs) {
        detail::put_u32(os, static_cast<std::uint32_t>(r.name.size()));
        os.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
        detail::put_u32(os, static_cast<std::uint32_t>(r.dims.size()));
        for (auto d : r.dims) detail::put_u32(os, d);
        require(r.values.size() == r.numel(),
                "record " + r.name + " value count does not match dims");
        for (float v : r.values) detail::put_f32(os, v);
    }
    require(static_cast<bool>(os), "write failed for " + path);
}

inline std::vector<WeightRecord> load_weights(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    require(static_cast<bool>(is), "cannot open " + path);
    char magic[5];
    is.read(magic, 5);
    require(static_cast<bool>(is) && std::memcmp(magic, "BDRN1", 5) == 0,
            path + " is not a weight file (bad magic)");
    const std::uint32_t count = detail::get_u32(is);
    std::vector<WeightRecord> recs(count);
    for (auto& r : recs) {
        const std::uint32_t nlen = detail::get_u32(is);
        r.name.resize(nlen);
        is.read(r.name.data(), nlen);
        const std::uint32_t rank = detail::get_u32(is);
        require(rank <= 8, "implausible rank in " + path);
        r.dims.resize(rank);
        for (auto& d : r.dims) d = detail::get_u32(is);
        r.values.resize(r.numel());
        for (auto& v : r.values) v = detail::get_f32(is);
    }
    return recs;
}

// Model parameters plus metadata scalars (stored as rank-1 records named
// "meta.<key>") in one record list, parameter order preserved.
template <typename T>
std::vector<WeightRecord> to_records(const ParamList<T>& params,
                                     const std::map<std::string, double>& meta = {}) {
    std::vector<WeightRecord> recs;
    for (const auto& [key, val] : meta) {
        WeightRecord r;
        r.name = "meta." + key;
        r.dims = {1};
        r.values = {static_cast<float>(val)};
        recs.push_back(std::move(r));
    }
    for (const auto& [name, t] : params) {
        WeightRecord r;
        r.name = name;
        const Shape s = t.shape();
        r.dims = {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c),
                  static_cast<std::uint32_t>(s.h), static_cast<std::uint32_t>(s.w)};
        r.values.reserve(t.numel());
        for (const T& v : t.vec()) r.values.push_back(static_cast<float>(v));
        recs.push_back(std::move(r));
    }
    return recs;
}

inline std::map<std::string, double> meta_of(const std::vector<WeightRecord>& recs) {
    std::map<std::string, double> meta;
    for (const auto& r : recs)
        if (r.name.rfind("meta.", 0) == 0 && r.values.size() == 1)
            meta[r.name.substr(5)] = static_cast<double>(r.values[0]);
    return meta;
}

// Copies stored values into an existing model's parameters. The census must
// agree exactly: every non-meta record must land on a parameter of the same
// name and shape, and every parameter must be covered.
template <typename T>
void apply_records(ParamList<T>& params, const std::vector<WeightRecord>& recs) {
    std::map<std::string, const WeightRecord*> by_name;
    for (const auto& r : recs)
        if (r.name.rfind("meta.", 0) != 0) {
            require(by_name.emplace(r.name, &r).second, "duplicate record " + r.name);
        }
    for (auto& [name, t] : params) {
        auto it = by_name.find(name);
        require(it != by_name.end(),
                "architecture mismatch: weight file has no record for parameter '" + name +
                    "'; it was saved from a different configuration");
        const WeightRecord& r = *it->second;
        const Shape s = t.shape();
        const bool shape_ok = r.dims.size() == 4 &&
                              r.dims[0] == static_cast<std::uint32_t>(s.n) &&
                              r.dims[1] == static_cast<std::uint32_t>(s.c) &&
                              r.dims[2] == static_cast<std::uint32_t>(s.h) &&
                              r.dims[3] == static_cast<std::uint32_t>(s.w);
        require(shape_ok, "architecture mismatch: parameter '" + name + "' has shape " +
                              s.str() + " but the file record differs");
        for (std::size_t i = 0; i < t.numel(); ++i)
            t.vec()[i] = static_cast<T>(r.values[i]);
        by_name.erase(it);
    }
    if (!by_name.empty())
        fail("architecture mismatch: weight file contains extra record '" +
             by_name.begin()->first + "' not present in this configuration");
}

}  // namespace brd
