#pragma once

#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "iosim/btree.hpp"
#include "iosim/common.hpp"
#include "iosim/iostack.hpp"
#include "iosim/profile.hpp"

namespace iosim::bench {

// One benchmark cell.
struct BenchConfig {
    DispatchMode mode = DispatchMode::Baseline;
    u32 depth = 1;
    u32 workers = 1;
    bool uring = false;
    u32 batch = 0;    // ring-call size; only with uring
    u32 pipeline = 3; // sync in-flight per worker; 1 = strict synchronous loop
    u64 duration_ns = 50'000'000;
    u64 seed = 1;
    u32 hop_limit = 16;
    double invalidate_mean_s = 0;
};

// Everything shared between the cells of a sweep: calibration, the index
// image, where it lives on the device, and the key population.
struct BenchEnv {
    LatencyProfile profile{};
    DeviceConfig device{};
    u32 cores = 6;
    btree::TreeImage image;
    ExtentMap map;
    std::vector<u64> keys;
    sfunc::Program lookup; // generic body; per-lookup key rides in r7
    u64 capacity_blocks = 0;
};

inline u64 capacity_for(const ExtentMap& map, u64 slack_blocks = 64) {
    u64 max_end = 0;
    for (const auto& e : map.extents()) max_end = std::max(max_end, e.pba + e.len / kBlockBytes);
    return max_end + slack_blocks;
}

inline BenchEnv make_env(btree::TreeImage image, ExtentMap map) {
    BenchEnv env;
    env.image = std::move(image);
    env.map = std::move(map);
    env.keys = btree::collect_keys(env.image);
    env.lookup = btree::compile_lookup_body();
    env.capacity_blocks = capacity_for(env.map);
    return env;
}

// Shapes used by the standard sweeps: wide fanout for shallow trees, narrow
// for deep ones, keeping images desk-scale at every depth.
inline u32 standard_fanout(u32 depth) {
    static constexpr u32 table[] = {31, 31, 31, 10, 6, 4, 3, 3, 2, 2};
    return (depth >= 1 && depth <= 10) ? table[depth - 1] : 2;
}

inline BenchEnv standard_env(u32 depth, u32 page_size = 512) {
    btree::TreeImage img = btree::build_full(depth, standard_fanout(depth), page_size);
    ExtentMap map = ExtentMap::single(0, img.bytes.size());
    return make_env(std::move(img), std::move(map));
}

struct Metrics {
    double lookups_per_sec = 0;
    double mean_latency_ns = 0;
    u64 p99_latency_ns = 0;
    double device_iops = 0;
    double cpu_utilization = 0;
    u64 resubmit_driver = 0;
    u64 resubmit_syscall = 0;
    u64 aborts_extent = 0;
    u64 aborts_bound = 0;
    bool audit_ok = true;
    stack::WorkloadStats raw;
};

// Runs one cell on a fresh simulator instance. Deterministic per
// (config, env): identical seeds give identical metrics to the last digit.
inline Metrics run(const BenchConfig& cfg, const BenchEnv& env) {
    if (cfg.depth != env.image.depth)
        throw std::invalid_argument("config depth does not match the image depth");
    if (cfg.uring && cfg.batch < 1) throw std::invalid_argument("uring runs need batch >= 1");
    if (!cfg.uring && cfg.batch > 0)
        throw std::invalid_argument("batch given for a synchronous run");
    if (cfg.duration_ns == 0) throw std::invalid_argument("duration must be positive");

    stack::SimConfig sc;
    sc.profile = env.profile;
    sc.device = env.device;
    sc.cores = env.cores;
    sc.capacity_blocks = env.capacity_blocks;
    stack::Simulation sim(sc);
    const stack::FileId fid = sim.add_file("index", env.map, env.image.bytes);

    stack::WorkloadSpec spec;
    spec.file = fid;
    spec.mode = cfg.mode;
    spec.uring = cfg.uring;
    spec.batch = cfg.batch;
    spec.workers = cfg.workers;
    spec.pipeline = cfg.pipeline;
    spec.duration_ns = cfg.duration_ns;
    spec.seed = cfg.seed;
    spec.hop_limit = cfg.hop_limit;
    spec.read_len = env.image.page_size;
    spec.keys = &env.keys;
    spec.program = &env.lookup;
    spec.invalidate_mean_s = cfg.invalidate_mean_s;

    stack::WorkloadStats stats = sim.run_workload(spec);

    Metrics m;
    m.lookups_per_sec = stats.lookups_per_sec();
    m.mean_latency_ns = stats.mean_latency_ns();
    m.p99_latency_ns = stats.p99_latency_ns();
    m.device_iops = stats.device_iops();
    m.cpu_utilization = stats.cpu_utilization(env.cores);
    m.resubmit_driver = stats.resubmit_driver;
    m.resubmit_syscall = stats.resubmit_syscall;
    m.aborts_extent = stats.aborts_extent;
    m.aborts_bound = stats.aborts_bound;
    m.audit_ok = sim.audit_tagged_submissions();
    m.raw = std::move(stats);
    return m;
}

// ---- sweeps -------------------------------------------------------------

struct SweepOptions {
    u64 duration_ns = 50'000'000;
    u64 seed = 1;
    u32 pipeline = 3;
    u32 hop_limit = 16;
    u32 page_size = 512;
};

struct SpeedupCell {
    u32 depth = 0;
    u32 workers = 0;
    double hook_lps = 0;
    double base_lps = 0;
    double ratio = 0;
};

// Throughput ratio of `mode` against Baseline over a (depth, workers) grid;
// both sides of each cell run with the same seed.
inline std::vector<SpeedupCell> speedup_sweep(DispatchMode mode, const std::vector<u32>& depths,
                                              const std::vector<u32>& workers_list,
                                              const SweepOptions& opt = {}) {
    std::vector<SpeedupCell> out;
    for (u32 d : depths) {
        const BenchEnv env = standard_env(d, opt.page_size);
        for (u32 w : workers_list) {
            BenchConfig cfg;
            cfg.depth = d;
            cfg.workers = w;
            cfg.pipeline = opt.pipeline;
            cfg.duration_ns = opt.duration_ns;
            cfg.seed = opt.seed;
            cfg.hop_limit = opt.hop_limit;
            cfg.mode = mode;
            const Metrics hook = run(cfg, env);
            cfg.mode = DispatchMode::Baseline;
            const Metrics base = run(cfg, env);
            out.push_back(SpeedupCell{d, w, hook.lookups_per_sec, base.lookups_per_sec,
                                      base.lookups_per_sec > 0 ? hook.lookups_per_sec / base.lookups_per_sec : 0});
        }
    }
    return out;
}

struct LatencyCell {
    u32 depth = 0;
    double baseline_ns = 0;
    double syscall_ns = 0;
    double driver_ns = 0;
};

// Mean chain latency per mode, one strictly synchronous worker.
inline std::vector<LatencyCell> latency_sweep(const std::vector<u32>& depths, const SweepOptions& opt = {}) {
    std::vector<LatencyCell> out;
    for (u32 d : depths) {
        const BenchEnv env = standard_env(d, opt.page_size);
        BenchConfig cfg;
        cfg.depth = d;
        cfg.workers = 1;
        cfg.pipeline = 1;
        cfg.duration_ns = opt.duration_ns;
        cfg.seed = opt.seed;
        cfg.hop_limit = opt.hop_limit;
        LatencyCell cell;
        cell.depth = d;
        cfg.mode = DispatchMode::Baseline;
        cell.baseline_ns = run(cfg, env).mean_latency_ns;
        cfg.mode = DispatchMode::SyscallHook;
        cell.syscall_ns = run(cfg, env).mean_latency_ns;
        cfg.mode = DispatchMode::DriverHook;
        cell.driver_ns = run(cfg, env).mean_latency_ns;
        out.push_back(cell);
    }
    return out;
}

struct UringCell {
    u32 depth = 0;
    u32 batch = 0;
    double driver_lps = 0;
    double base_lps = 0;
    double ratio = 0;
};

// Single-threaded ring-batched lookups: driver-hook reissue against an
// unmodified batched baseline at the same batch size.
inline std::vector<UringCell> uring_sweep(const std::vector<u32>& depths, const std::vector<u32>& batches,
                                          const SweepOptions& opt = {}) {
    std::vector<UringCell> out;
    for (u32 d : depths) {
        const BenchEnv env = standard_env(d, opt.page_size);
        for (u32 k : batches) {
            BenchConfig cfg;
            cfg.depth = d;
            cfg.workers = 1;
            cfg.uring = true;
            cfg.batch = k;
            cfg.duration_ns = opt.duration_ns;
            cfg.seed = opt.seed;
            cfg.hop_limit = opt.hop_limit;
            cfg.mode = DispatchMode::DriverHook;
            const Metrics hook = run(cfg, env);
            cfg.mode = DispatchMode::Baseline;
            const Metrics base = run(cfg, env);
            out.push_back(UringCell{d, k, hook.lookups_per_sec, base.lookups_per_sec,
                                    base.lookups_per_sec > 0 ? hook.lookups_per_sec / base.lookups_per_sec : 0});
        }
    }
    return out;
}

// ---- CSV ------------------------------------------------------------------

inline const char* csv_header() {
    return "run_id,mode,depth,workers,batch,lookups_per_sec,mean_lat_ns,p99_lat_ns,device_iops,"
           "cpu_util,resubmit_driver,resubmit_syscall,aborts_extent,aborts_bound";
}

inline std::string csv_row(u64 run_id, const BenchConfig& cfg, const Metrics& m) {
    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "%llu,%s,%u,%u,%u,%.3f,%.3f,%llu,%.3f,%.6f,%llu,%llu,%llu,%llu",
                  static_cast<unsigned long long>(run_id), to_string(cfg.mode), cfg.depth, cfg.workers,
                  cfg.batch, m.lookups_per_sec, m.mean_latency_ns,
                  static_cast<unsigned long long>(m.p99_latency_ns), m.device_iops, m.cpu_utilization,
                  static_cast<unsigned long long>(m.resubmit_driver),
                  static_cast<unsigned long long>(m.resubmit_syscall),
                  static_cast<unsigned long long>(m.aborts_extent),
                  static_cast<unsigned long long>(m.aborts_bound));
    return std::string(buf);
}

} // namespace iosim::bench
