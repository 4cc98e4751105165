#include "tgpt/checkpoint.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <random>

using namespace tgpt;
using namespace tgpt::model;
namespace ck = tgpt::checkpoint;

namespace {

ModelConfig small_config() {
    ModelConfig c;
    c.input_length = 6;
    c.max_horizon = 3;
    c.d_model = 8;
    c.n_heads = 2;
    c.n_encoder_layers = 1;
    c.n_decoder_layers = 2;
    c.ff_dim = 12;
    c.dropout = 0.05;
    c.n_exo_channels = 1;
    return c;
}

std::uint32_t read_u32(const std::string& b, std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(b[at + i])) << (8 * i);
    return v;
}

void write_u32(std::string& b, std::size_t at, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b[at + i] = static_cast<char>((v >> (8 * i)) & 0xff);
}

// Recomputes the trailing checksum so that only structural checks can reject the bytes.
std::string reseal(std::string b) {
    b.resize(b.size() - 4);
    const auto crc = ck::crc32_of(b);
    b.append(4, '\0');
    write_u32(b, b.size() - 4, crc);
    return b;
}

// Bit-level comparison, so NaN payloads or signed zeros cannot slip through.
bool bitwise_equal(const WeightStore& a, const WeightStore& b) {
    auto same = [](const std::map<std::string, Array>& x, const std::map<std::string, Array>& y) {
        if (x.size() != y.size()) return false;
        for (const auto& [name, arr] : x) {
            const auto it = y.find(name);
            if (it == y.end() || it->second.shape() != arr.shape()) return false;
            if (std::memcmp(arr.data().data(), it->second.data().data(), arr.size() * sizeof(double)) != 0) return false;
        }
        return true;
    };
    return same(a.params, b.params) && same(a.buffers, b.buffers);
}

}  // namespace

TEST_CASE("Checkpoint round-trip", "[checkpoint]") {
    const auto c = small_config();
    auto w = init_weights(c, 3);
    w.params.at("head.bias")[0] = -0.0;
    w.params.at("head.weight")[1] = 5e-324;
    const std::string bytes = ck::encode(w, c);
    CHECK(bytes.substr(0, 4) == "TGPT");
    CHECK(read_u32(bytes, 4) == ck::kFormatVersion);

    const auto loaded = ck::decode(bytes);
    CHECK(loaded.config == c);
    CHECK(bitwise_equal(loaded.weights, w));
    CHECK(loaded.model_version == "tgpt-ckpt-v1");
    CHECK(ck::encode(loaded.weights, loaded.config) == bytes);

    SECTION("through a file") {
        const auto path = (std::filesystem::temp_directory_path() / "tgpt_ckpt_roundtrip.bin").string();
        ck::save(w, c, path);
        CHECK(bitwise_equal(ck::load(path).weights, w));
        std::filesystem::remove(path);
        CHECK_THROWS_AS(ck::load(path), DataError);
    }

    SECTION("encode refuses weights that disagree with the config") {
        auto bad = w;
        bad.params.erase("head.bias");
        CHECK_THROWS_AS(ck::encode(bad, c), ConfigError);
    }
}

TEST_CASE("Checkpoint rejection", "[checkpoint]") {
    const auto c = small_config();
    const std::string bytes = ck::encode(init_weights(c, 4), c);

    SECTION("flipped version byte") {
        auto b = bytes;
        b[4] ^= 0x01;
        CHECK_THROWS_WITH(ck::decode(b), Catch::Matchers::ContainsSubstring("version"));
        CHECK_THROWS_AS(ck::decode(reseal(b)), CheckpointError);
    }

    SECTION("bad magic") {
        auto b = bytes;
        b[0] = 'X';
        CHECK_THROWS_WITH(ck::decode(b), Catch::Matchers::ContainsSubstring("magic"));
    }

    SECTION("config d_model disagrees with stored tensors") {
        const std::uint32_t json_len = read_u32(bytes, 8);
        auto json = nlohmann::json::parse(bytes.substr(12, json_len));
        json["d_model"] = 16;
        const std::string patched = json.dump();
        auto b = bytes.substr(0, 8);
        b.append(4, '\0');
        write_u32(b, 8, static_cast<std::uint32_t>(patched.size()));
        b += patched + bytes.substr(12 + json_len);
        CHECK_THROWS_WITH(ck::decode(reseal(b)), Catch::Matchers::ContainsSubstring("disagrees"));
    }

    SECTION("truncation at every length") {
        for (std::size_t n = 0; n < bytes.size(); n += 7) CHECK_THROWS_AS(ck::decode(bytes.substr(0, n)), CheckpointError);
        CHECK_THROWS_AS(ck::decode(bytes.substr(0, bytes.size() - 1)), CheckpointError);
    }

    SECTION("structural damage behind a valid checksum") {
        auto extra = bytes.substr(0, bytes.size() - 4) + std::string(8, '\0') + "0000";
        CHECK_THROWS_WITH(ck::decode(reseal(extra)), Catch::Matchers::ContainsSubstring("trailing"));
        auto broken_json = bytes;
        broken_json[12] = '[';
        CHECK_THROWS_WITH(ck::decode(reseal(broken_json)), Catch::Matchers::ContainsSubstring("config"));
        const std::uint32_t json_len = read_u32(bytes, 8);
        auto more_records = bytes;
        write_u32(more_records, 12 + json_len, read_u32(bytes, 12 + json_len) + 1);
        CHECK_THROWS_AS(ck::decode(reseal(more_records)), CheckpointError);
        auto huge_rank = bytes;
        const std::size_t first_record = 16 + json_len;
        const std::uint32_t name_len = read_u32(bytes, first_record);
        write_u32(huge_rank, first_record + 4 + name_len, 1000);
        CHECK_THROWS_AS(ck::decode(reseal(huge_rank)), CheckpointError);
    }

    SECTION("non-finite payload") {
        auto w = init_weights(c, 4);
        auto b = ck::encode(w, c);
        const std::uint32_t json_len = read_u32(b, 8);
        const std::size_t first_record = 16 + json_len;
        const std::uint32_t name_len = read_u32(b, first_record);
        const std::uint32_t rank = read_u32(b, first_record + 4 + name_len);
        const std::size_t payload = first_record + 8 + name_len + 4 * rank;
        const auto nan_bits = std::bit_cast<std::uint64_t>(std::numeric_limits<double>::quiet_NaN());
        for (int i = 0; i < 8; ++i) b[payload + i] = static_cast<char>((nan_bits >> (8 * i)) & 0xff);
        CHECK_THROWS_WITH(ck::decode(reseal(b)), Catch::Matchers::ContainsSubstring("non-finite"));
    }

    SECTION("random byte mutations") {
        std::mt19937_64 rng(99);
        std::uniform_int_distribution<std::size_t> pos(0, bytes.size() - 1);
        std::uniform_int_distribution<int> delta(1, 255);
        for (int trial = 0; trial < 500; ++trial) {
            auto b = bytes;
            const int edits = 1 + trial % 4;
            for (int e = 0; e < edits; ++e) b[pos(rng)] ^= static_cast<char>(delta(rng));
            if (b == bytes) continue;
            CAPTURE(trial);
            CHECK_THROWS_AS(ck::decode(b), CheckpointError);
        }
    }
}
