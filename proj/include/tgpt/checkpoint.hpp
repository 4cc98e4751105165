#pragma once

#include "tgpt/error.hpp"
#include "tgpt/model.hpp"

#include <nlohmann/json.hpp>
#include <zlib.h>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>

namespace tgpt::checkpoint {

inline constexpr std::array<char, 4> kMagic{'T', 'G', 'P', 'T'};
inline constexpr std::uint32_t kFormatVersion = 1;

/// Version string reported by the service and the CLI for a format version.
inline std::string model_version_string(std::uint32_t version = kFormatVersion) {
    return "tgpt-ckpt-v" + std::to_string(version);
}

struct LoadedModel {
    model::ModelConfig config;
    model::WeightStore weights;
    std::string model_version;
};

inline std::uint32_t crc32_of(std::string_view bytes) {
    uLong crc = ::crc32(0L, Z_NULL, 0);
    const auto* p = reinterpret_cast<const Bytef*>(bytes.data());
    std::size_t left = bytes.size();
    while (left > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(left, 1u << 30));
        crc = ::crc32(crc, p, chunk);
        p += chunk;
        left -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline void put_f64(std::string& out, double d) {
    const auto bits = std::bit_cast<std::uint64_t>(d);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

class Reader {
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }

    double f64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return std::bit_cast<double>(v);
    }

    std::string_view bytes(std::size_t n, const char* what) {
        need(n, what);
        const auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    [[nodiscard]] std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

private:
    void need(std::size_t n, const char* what) const {
        if (n > remaining()) throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
    }

    std::string_view bytes_;
    std::size_t pos_ = 0;
};

inline void put_record(std::string& out, const std::string& name, const model::Array& a) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(a.rank()));
    for (std::size_t d : a.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : a.data()) put_f64(out, v);
}

}  // namespace detail

/**
 * @brief Serialises a model.
 *
 * Layout (little-endian): "TGPT", u32 format version, u32 length + canonical
 * JSON config, u32 record count, records of (u32 name length, name, u32 rank,
 * u32 dims, f64 payload), and a trailing CRC32 of every preceding byte.
 */
inline std::string encode(const model::WeightStore& weights, const model::ModelConfig& config) {
    if (const auto problem = model::check_weights(weights, config)) throw ConfigError("cannot save model: " + *problem);
    std::string out(kMagic.begin(), kMagic.end());
    detail::put_u32(out, kFormatVersion);
    const std::string json = model::to_json(config).dump();
    detail::put_u32(out, static_cast<std::uint32_t>(json.size()));
    out += json;
    detail::put_u32(out, static_cast<std::uint32_t>(weights.params.size() + weights.buffers.size()));
    for (const auto& [name, a] : weights.params) detail::put_record(out, name, a);
    for (const auto& [name, a] : weights.buffers) detail::put_record(out, name, a);
    detail::put_u32(out, crc32_of(out));
    return out;
}

inline LoadedModel decode(std::string_view bytes) {
    if (bytes.size() < kMagic.size() || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin()))
        throw CheckpointError("not a checkpoint file (bad magic)");
    detail::Reader header(bytes.substr(kMagic.size()));
    const std::uint32_t version = header.u32("format version");
    if (version != kFormatVersion)
        throw CheckpointError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                              std::to_string(kFormatVersion) + ")");
    if (bytes.size() < kMagic.size() + 8) throw CheckpointError("checkpoint truncated");
    const std::string_view body = bytes.substr(0, bytes.size() - 4);
    detail::Reader tail(bytes.substr(bytes.size() - 4));
    if (tail.u32("checksum") != crc32_of(body)) throw CheckpointError("checkpoint checksum mismatch (corrupt or truncated file)");

    detail::Reader r(body.substr(kMagic.size() + 4));
    const std::uint32_t json_len = r.u32("config length");
    const auto json_text = r.bytes(json_len, "config");
    LoadedModel out;
    out.model_version = model_version_string(version);
    try {
        out.config = model::model_config_from_json(nlohmann::json::parse(json_text));
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("checkpoint config is not valid JSON: ") + e.what());
    } catch (const ConfigError& e) {
        throw CheckpointError(std::string("checkpoint config is invalid: ") + e.what());
    }
    const auto buffer_shapes = model::buffer_layout(out.config);
    const std::uint32_t count = r.u32("record count");
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = r.u32("record name length");
        std::string name(r.bytes(name_len, "record name"));
        const std::uint32_t rank = r.u32("record rank");
        if (rank > 8) throw CheckpointError("record '" + name + "' has implausible rank " + std::to_string(rank));
        model::Shape shape(rank);
        std::size_t n = 1;
        for (auto& d : shape) {
            d = r.u32("record dims");
            if (d == 0) throw CheckpointError("record '" + name + "' has a zero dimension");
            n *= d;
            if (n > r.remaining() / 8 + 1) throw CheckpointError("checkpoint truncated in record '" + name + "'");
        }
        std::vector<double> values(n);
        for (double& v : values) v = r.f64("record payload");
        auto& target = buffer_shapes.count(name) ? out.weights.buffers : out.weights.params;
        if (!target.emplace(name, model::Array(std::move(shape), std::move(values))).second)
            throw CheckpointError("duplicate record '" + name + "'");
    }
    if (r.remaining() != 0) throw CheckpointError("trailing bytes after the last record");
    if (const auto problem = model::check_weights(out.weights, out.config))
        throw CheckpointError("checkpoint disagrees with its config: " + *problem);
    return out;
}

inline void save(const model::WeightStore& weights, const model::ModelConfig& config, const std::string& path) {
    const std::string bytes = encode(weights, config);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot open '" + path + "' for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw Error("failed writing checkpoint '" + path + "'");
}

inline std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open '" + path + "'");
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline LoadedModel load(const std::string& path) {
    try {
        return decode(read_file(path));
    } catch (const CheckpointError& e) {
        throw CheckpointError(path + ": " + e.what());
    }
}

}  // namespace tgpt::checkpoint
