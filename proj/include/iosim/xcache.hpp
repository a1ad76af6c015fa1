#pragma once

#include <algorithm>
#include <optional>
#include <stdexcept>
#include <vector>

#include "iosim/common.hpp"

namespace iosim {

// A contiguous run of physical blocks backing a contiguous file range.
// Offsets and lengths are bytes (block multiples); pba counts 512 B blocks.
struct Extent {
    u64 file_off = 0;
    u64 pba = 0;
    u64 len = 0;
};

struct PhysicalRun {
    u64 pba = 0;
    u64 len = 0; // bytes
};

struct TranslateResult {
    enum class Kind { Single, Split, Invalid };
    Kind kind = Kind::Invalid;
    u64 pba = 0; // valid for Single only
    bool is_single() const { return kind == Kind::Single; }
    bool is_split() const { return kind == Kind::Split; }
    bool is_invalid() const { return kind == Kind::Invalid; }
};

// File-offset to physical-block translation. Extents are kept sorted by file
// offset, non-overlapping in both file and physical space.
class ExtentMap {
public:
    ExtentMap() = default;

    ExtentMap(std::vector<Extent> extents, u64 file_len) : extents_(std::move(extents)), file_len_(file_len) {
        std::sort(extents_.begin(), extents_.end(),
                  [](const Extent& a, const Extent& b) { return a.file_off < b.file_off; });
        for (const auto& e : extents_) {
            if (e.len == 0 || e.len % kBlockBytes != 0 || e.file_off % kBlockBytes != 0)
                throw std::invalid_argument("extent offsets and lengths must be nonzero block multiples");
        }
        for (std::size_t i = 1; i < extents_.size(); ++i) {
            if (extents_[i - 1].file_off + extents_[i - 1].len > extents_[i].file_off)
                throw std::invalid_argument("extents overlap in file space");
        }
        std::vector<std::pair<u64, u64>> phys;
        phys.reserve(extents_.size());
        for (const auto& e : extents_) phys.emplace_back(e.pba, e.pba + e.len / kBlockBytes);
        std::sort(phys.begin(), phys.end());
        for (std::size_t i = 1; i < phys.size(); ++i)
            if (phys[i - 1].second > phys[i].first)
                throw std::invalid_argument("extents overlap in physical space");
        if (!extents_.empty()) {
            const auto& last = extents_.back();
            if (last.file_off + last.len > file_len_)
                throw std::invalid_argument("extent extends past file length");
        }
    }

    static ExtentMap single(u64 pba, u64 file_len) {
        return ExtentMap({Extent{0, pba, file_len}}, file_len);
    }

    const std::vector<Extent>& extents() const { return extents_; }
    u64 file_len() const { return file_len_; }

    bool covers_fully() const {
        u64 next = 0;
        for (const auto& e : extents_) {
            if (e.file_off != next) return false;
            next = e.file_off + e.len;
        }
        return next == file_len_;
    }

    // Physical runs backing [off, off+len), with physically adjacent pieces
    // merged. Empty result when the range is out of bounds or crosses a hole.
    std::vector<PhysicalRun> physical_runs(u64 off, u64 len) const {
        std::vector<PhysicalRun> runs;
        if (len == 0 || off % kBlockBytes != 0 || len % kBlockBytes != 0) return runs;
        if (off + len > file_len_ || off + len < off) return runs;
        u64 cur = off;
        u64 end = off + len;
        for (const auto& e : extents_) {
            if (cur >= end) break;
            if (e.file_off > cur) return {}; // hole
            if (e.file_off + e.len <= cur) continue;
            const u64 take = std::min(end, e.file_off + e.len) - cur;
            const u64 pba = e.pba + (cur - e.file_off) / kBlockBytes;
            if (!runs.empty() && runs.back().pba + runs.back().len / kBlockBytes == pba)
                runs.back().len += take; // physically contiguous neighbours act as one range
            else
                runs.push_back(PhysicalRun{pba, take});
            cur += take;
        }
        if (cur < end) return {};
        return runs;
    }

    TranslateResult translate(u64 off, u64 len) const {
        if (len % kBlockBytes != 0) throw std::invalid_argument("translate: len must be a block multiple");
        auto runs = physical_runs(off, len);
        if (runs.empty()) return {TranslateResult::Kind::Invalid, 0};
        if (runs.size() == 1) return {TranslateResult::Kind::Single, runs[0].pba};
        return {TranslateResult::Kind::Split, 0};
    }

private:
    std::vector<Extent> extents_;
    u64 file_len_ = 0;
};

// Driver-layer soft-state snapshot of a file's extents. Installed by the
// function-attach call, dropped wholesale on invalidation; translation
// against a dropped cache always reports Invalid.
class ExtentCache {
public:
    ExtentCache() = default;
    ExtentCache(ExtentMap snapshot, u32 generation) : map_(std::move(snapshot)), generation_(generation), valid_(true) {}

    bool valid() const { return valid_; }
    u32 generation() const { return generation_; }
    const ExtentMap& snapshot() const { return map_; }

    void invalidate() { valid_ = false; }

    TranslateResult translate(u64 off, u64 len) const {
        if (!valid_) return {TranslateResult::Kind::Invalid, 0};
        return map_.translate(off, len);
    }

    std::vector<PhysicalRun> physical_runs(u64 off, u64 len) const {
        if (!valid_) return {};
        return map_.physical_runs(off, len);
    }

private:
    ExtentMap map_;
    u32 generation_ = 0;
    bool valid_ = false;
};

} // namespace iosim
