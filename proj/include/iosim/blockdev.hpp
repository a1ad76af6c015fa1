#pragma once

#include <algorithm>
#include <cstring>
#include <optional>
#include <queue>
#include <span>
#include <stdexcept>
#include <vector>

#include "iosim/common.hpp"

namespace iosim {

// Simulated time. Integer nanoseconds, never decreasing.
struct VirtualClock {
    u64 now_ns = 0;

    void advance_to(u64 t) {
        if (t < now_ns) throw std::logic_error("virtual clock moved backwards");
        now_ns = t;
    }
};

struct DeviceConfig {
    u64 service_ns = 3224;     // fixed per-I/O service latency
    u32 parallelism = 64;      // max I/Os in service concurrently
    u64 max_iops = 5'000'000;  // device-wide completion-rate cap
    u32 inflight_limit = 1024; // submitted-but-not-completed bound
    u64 seed = 0;              // determinism seed (recorded, no stochastic paths yet)

    void validate() const {
        std::string bad;
        if (service_ns == 0) bad += " service_ns";
        if (parallelism == 0) bad += " parallelism";
        if (max_iops == 0) bad += " max_iops";
        if (inflight_limit == 0) bad += " inflight_limit";
        if (!bad.empty()) throw std::invalid_argument("invalid device config:" + bad);
    }

    // Minimum spacing between any two completions. Rounded up so the
    // configured rate is never exceeded.
    u64 completion_spacing_ns() const { return div_ceil(kNsPerSec, max_iops); }
};

// Identifies a chain-issued ("tagged") I/O. Present only on requests issued
// through an installed function's descriptor.
struct IoTag {
    u32 file = 0;
    u32 generation = 0;
    u64 chain = 0;
};

struct DeviceRequest {
    u64 request_id = 0;
    u64 pba = 0;       // physical block address, 512 B blocks
    u32 len = 0;       // bytes, multiple of 512
    u64 submit_ns = 0;
    std::optional<IoTag> tag;
};

struct Completion {
    u64 request_id = 0;
    u64 complete_ns = 0;
    std::vector<std::byte> data;
};

// One device I/O as recorded in the event log. The log is the ground truth
// for the audits (parallelism occupancy, completion-rate cap, extent safety,
// pages-read accounting).
struct IoRecord {
    u64 seq = 0; // submission sequence number, device-wide
    u64 request_id = 0;
    u64 pba = 0;
    u32 len = 0;
    u64 submit_ns = 0;
    u64 service_start_ns = 0;
    u64 complete_ns = 0;
    bool tagged = false;
    IoTag tag;
};

// Deterministic single-queue model of a storage device: fixed service
// latency, bounded internal parallelism, and a device-wide completion-rate
// cap. Backing blocks hold real bytes so traversals operate on genuine data.
class Device {
public:
    Device(DeviceConfig cfg, std::vector<std::byte> backing) : cfg_(cfg), store_(std::move(backing)) {
        cfg_.validate();
        if (store_.size() % kBlockBytes != 0)
            throw std::invalid_argument("backing store must be a whole number of 512 B blocks");
    }

    static Device with_blocks(DeviceConfig cfg, u64 nblocks) {
        return Device(cfg, std::vector<std::byte>(nblocks * kBlockBytes));
    }

    const DeviceConfig& config() const { return cfg_; }
    u64 capacity_blocks() const { return store_.size() / kBlockBytes; }
    u64 now_ns() const { return clock_.now_ns; }
    u64 inflight() const { return inflight_; }

    // Zero-latency write path; used only to lay out images for read-only runs.
    void write_bytes(u64 pba, std::span<const std::byte> bytes) {
        if (bytes.size() % kBlockBytes != 0) throw std::invalid_argument("write must be block-sized");
        check_range(pba, static_cast<u32>(bytes.size()));
        std::memcpy(store_.data() + pba * kBlockBytes, bytes.data(), bytes.size());
    }

    std::span<const std::byte> peek_bytes(u64 pba, u32 len) const {
        check_range(pba, len);
        return {store_.data() + pba * kBlockBytes, len};
    }

    // Schedules the request's completion and returns its timestamp.
    // Completion time respects, in order: FIFO queueing for a free service
    // slot, the fixed service latency, and the device-wide completion
    // spacing. Deterministic: ties are broken by submission sequence.
    u64 submit(DeviceRequest req) {
        if (req.len < kBlockBytes || req.len % kBlockBytes != 0)
            throw std::invalid_argument("request len must be a positive multiple of 512");
        check_range(req.pba, req.len);
        if (inflight_ >= cfg_.inflight_limit) throw std::runtime_error("device queue overflow");
        if (req.submit_ns < last_submit_ns_)
            throw std::logic_error("submissions must be issued in time order");
        last_submit_ns_ = req.submit_ns;

        u64 slot_free = 0;
        if (slots_.size() < cfg_.parallelism) {
            slot_free = req.submit_ns;
        } else {
            slot_free = slots_.top();
            slots_.pop();
        }
        const u64 start = std::max(req.submit_ns, slot_free);
        const u64 service_done = start + cfg_.service_ns;
        if (slots_.size() < cfg_.parallelism) slots_.push(service_done);
        const u64 complete = std::max(service_done, last_completion_ns_ + cfg_.completion_spacing_ns());
        last_completion_ns_ = complete;

        const u64 seq = next_seq_++;
        log_.push_back(IoRecord{seq, req.request_id, req.pba, req.len, req.submit_ns, start, complete,
                                req.tag.has_value(), req.tag.value_or(IoTag{})});
        pending_.push(Pending{complete, seq, req.request_id, req.pba, req.len});
        ++inflight_;
        return complete;
    }

    // Pops the earliest pending completion and advances the clock to it.
    std::optional<Completion> step() {
        if (pending_.empty()) return std::nullopt;
        Pending p = pending_.top();
        pending_.pop();
        --inflight_;
        clock_.advance_to(p.complete_ns);
        Completion c;
        c.request_id = p.request_id;
        c.complete_ns = p.complete_ns;
        const auto bytes = peek_bytes(p.pba, p.len);
        c.data.assign(bytes.begin(), bytes.end());
        return c;
    }

    const std::vector<IoRecord>& log() const { return log_; }
    void clear_log() { log_.clear(); }

private:
    struct Pending {
        u64 complete_ns;
        u64 seq;
        u64 request_id;
        u64 pba;
        u32 len;
        bool operator>(const Pending& o) const {
            if (complete_ns != o.complete_ns) return complete_ns > o.complete_ns;
            return seq > o.seq;
        }
    };

    void check_range(u64 pba, u32 len) const {
        const u64 blocks = len / kBlockBytes;
        if (pba + blocks > capacity_blocks() || pba > pba + blocks)
            throw std::out_of_range("I/O outside device capacity");
    }

    DeviceConfig cfg_;
    std::vector<std::byte> store_;
    VirtualClock clock_;
    u64 next_seq_ = 0;
    u64 inflight_ = 0;
    u64 last_submit_ns_ = 0;
    u64 last_completion_ns_ = 0;
    // Free-at times of occupied service slots; fewer entries than
    // `parallelism` means a slot is immediately available.
    std::priority_queue<u64, std::vector<u64>, std::greater<u64>> slots_;
    std::priority_queue<Pending, std::vector<Pending>, std::greater<Pending>> pending_;
    std::vector<IoRecord> log_;
};

// Event-log audits. These recompute device guarantees from the record alone.
namespace audit {

// Max I/Os simultaneously in service (by [service_start, service_start+service) overlap).
inline u64 peak_in_service(const std::vector<IoRecord>& log, u64 service_ns) {
    std::vector<std::pair<u64, int>> edges;
    edges.reserve(log.size() * 2);
    for (const auto& r : log) {
        edges.emplace_back(r.service_start_ns, +1);
        edges.emplace_back(r.service_start_ns + service_ns, -1);
    }
    std::sort(edges.begin(), edges.end());
    u64 peak = 0;
    i64 cur = 0;
    for (const auto& [t, d] : edges) {
        cur += d;
        peak = std::max<u64>(peak, static_cast<u64>(std::max<i64>(cur, 0)));
    }
    return peak;
}

// Max completions falling in any window of `window_ns`.
inline u64 peak_completions_per_window(const std::vector<IoRecord>& log, u64 window_ns) {
    std::vector<u64> times;
    times.reserve(log.size());
    for (const auto& r : log) times.push_back(r.complete_ns);
    std::sort(times.begin(), times.end());
    u64 peak = 0;
    std::size_t lo = 0;
    for (std::size_t hi = 0; hi < times.size(); ++hi) {
        while (times[hi] - times[lo] >= window_ns) ++lo;
        peak = std::max<u64>(peak, hi - lo + 1);
    }
    return peak;
}

inline u64 min_completion_gap(const std::vector<IoRecord>& log) {
    std::vector<u64> times;
    times.reserve(log.size());
    for (const auto& r : log) times.push_back(r.complete_ns);
    std::sort(times.begin(), times.end());
    u64 min_gap = std::numeric_limits<u64>::max();
    for (std::size_t i = 1; i < times.size(); ++i) min_gap = std::min(min_gap, times[i] - times[i - 1]);
    return min_gap;
}

} // namespace audit

} // namespace iosim
