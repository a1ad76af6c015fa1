#include <catch2/catch_amalgamated.hpp>

#include <optional>

#include "iosim/xcache.hpp"

using namespace iosim;

namespace {

// Reference translation: resolve every 512 B block independently and then
// classify. Kept deliberately naive.
std::optional<u64> block_to_pba(const ExtentMap& map, u64 file_block) {
    for (const auto& e : map.extents()) {
        const u64 first = e.file_off / kBlockBytes;
        const u64 count = e.len / kBlockBytes;
        if (file_block >= first && file_block < first + count) return e.pba + (file_block - first);
    }
    return std::nullopt;
}

TranslateResult translate_ref(const ExtentMap& map, u64 off, u64 len) {
    if (off % kBlockBytes != 0 || len == 0 || off + len > map.file_len())
        return {TranslateResult::Kind::Invalid, 0};
    std::vector<u64> pbas;
    for (u64 b = off / kBlockBytes; b < (off + len) / kBlockBytes; ++b) {
        auto p = block_to_pba(map, b);
        if (!p) return {TranslateResult::Kind::Invalid, 0};
        pbas.push_back(*p);
    }
    for (std::size_t i = 1; i < pbas.size(); ++i)
        if (pbas[i] != pbas[i - 1] + 1) return {TranslateResult::Kind::Split, 0};
    return {TranslateResult::Kind::Single, pbas[0]};
}

} // namespace

TEST_CASE("offset arithmetic within one extent") {
    ExtentMap map({Extent{0, 100, 4096}}, 4096);
    const auto r = map.translate(512, 512);
    REQUIRE(r.is_single());
    CHECK(r.pba == 101);
}

TEST_CASE("range across a physical discontinuity is a split") {
    ExtentMap map({Extent{0, 100, 4096}, Extent{4096, 500, 4096}}, 8192);
    CHECK(map.translate(3584, 1024).is_split());
    CHECK(map.translate(3584, 512).is_single());
    CHECK(map.translate(4096, 512).is_single());
}

TEST_CASE("physically contiguous neighbours translate as one range") {
    // 0..4096 at pba 100, 4096..8192 at pba 108: adjacent on the device.
    ExtentMap map({Extent{0, 100, 4096}, Extent{4096, 108, 4096}}, 8192);
    const auto r = map.translate(3584, 1024);
    REQUIRE(r.is_single());
    CHECK(r.pba == 107);
    CHECK(map.physical_runs(0, 8192).size() == 1);
}

TEST_CASE("out-of-bounds and holes are invalid") {
    ExtentMap map({Extent{0, 100, 4096}, Extent{8192, 500, 4096}}, 12288);
    CHECK(!map.covers_fully());
    CHECK(map.translate(4096, 512).is_invalid()); // hole
    CHECK(map.translate(12288, 512).is_invalid());
    ExtentMap covered({Extent{0, 100, 4096}}, 4096);
    CHECK(covered.covers_fully());
}

TEST_CASE("a dropped cache translates to invalid") {
    ExtentMap map({Extent{0, 100, 4096}}, 4096);
    ExtentCache cache(map, 1);
    CHECK(cache.translate(0, 512).is_single());
    cache.invalidate();
    CHECK(cache.translate(0, 512).is_invalid());
    CHECK(!cache.valid());
}

TEST_CASE("extent validation rejects overlaps and misalignment") {
    CHECK_THROWS_AS(ExtentMap({Extent{0, 100, 4096}, Extent{2048, 300, 4096}}, 8192), std::invalid_argument);
    CHECK_THROWS_AS(ExtentMap({Extent{0, 100, 4096}, Extent{4096, 102, 4096}}, 8192), std::invalid_argument);
    CHECK_THROWS_AS(ExtentMap({Extent{0, 100, 100}}, 4096), std::invalid_argument);
    CHECK_THROWS_AS(ExtentMap({Extent{0, 100, 8192}}, 4096), std::invalid_argument);
}

TEST_CASE("property: translate agrees with the per-block reference on small files") {
    SplitMix64 rng(0xca5e);
    for (int trial = 0; trial < 40; ++trial) {
        // Build a random map of up to 16 extents, occasionally with holes.
        const u32 n_extents = 1 + static_cast<u32>(rng.next() % 16);
        const bool holes = (rng.next() % 4) == 0;
        std::vector<Extent> extents;
        u64 file_off = 0;
        u64 pba = 10;
        for (u32 i = 0; i < n_extents; ++i) {
            if (holes && (rng.next() % 5) == 0) file_off += kBlockBytes * (1 + rng.next() % 3);
            const u64 len = kBlockBytes * (1 + rng.next() % 8);
            extents.push_back(Extent{file_off, pba, len});
            file_off += len;
            pba += len / kBlockBytes + (rng.next() % 3); // sometimes contiguous
        }
        const u64 file_len = file_off;
        ExtentMap map(extents, file_len);
        for (u64 off = 0; off < file_len; off += kBlockBytes) {
            for (u64 len = kBlockBytes; len <= 8 * kBlockBytes; len += kBlockBytes) {
                if (off + len > file_len) break;
                const auto got = map.translate(off, len);
                const auto want = translate_ref(map, off, len);
                INFO("trial " << trial << " off " << off << " len " << len);
                CHECK(got.kind == want.kind);
                if (want.kind == TranslateResult::Kind::Single) CHECK(got.pba == want.pba);
            }
        }
    }
}
