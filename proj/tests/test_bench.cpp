#include <catch2/catch_amalgamated.hpp>

#include "iosim/bench.hpp"

using namespace iosim;
using namespace iosim::bench;

namespace {

BenchConfig cfg_for(u32 depth, DispatchMode mode, u32 workers, u64 duration_ns = 20'000'000) {
    BenchConfig cfg;
    cfg.depth = depth;
    cfg.mode = mode;
    cfg.workers = workers;
    cfg.duration_ns = duration_ns;
    return cfg;
}

} // namespace

TEST_CASE("configuration conflicts are rejected") {
    const BenchEnv env = standard_env(2);
    BenchConfig cfg = cfg_for(2, DispatchMode::Baseline, 1);
    cfg.batch = 4; // batch without uring
    CHECK_THROWS_AS(run(cfg, env), std::invalid_argument);
    cfg.batch = 0;
    cfg.uring = true; // uring without batch
    CHECK_THROWS_AS(run(cfg, env), std::invalid_argument);
    cfg.uring = false;
    cfg.depth = 3; // depth/image mismatch
    CHECK_THROWS_AS(run(cfg, env), std::invalid_argument);
}

TEST_CASE("depth 1 gives a speedup of exactly 1 in any mode") {
    const BenchEnv env = standard_env(1);
    const Metrics base = run(cfg_for(1, DispatchMode::Baseline, 4), env);
    const Metrics sh = run(cfg_for(1, DispatchMode::SyscallHook, 4), env);
    const Metrics dh = run(cfg_for(1, DispatchMode::DriverHook, 4), env);
    CHECK(base.raw.lookups_ok == sh.raw.lookups_ok);
    CHECK(base.raw.lookups_ok == dh.raw.lookups_ok);
    CHECK(base.lookups_per_sec == dh.lookups_per_sec);
}

TEST_CASE("conservation: lookups times depth equals device reads in clean runs") {
    for (u32 d : {1u, 3u, 6u}) {
        const BenchEnv env = standard_env(d);
        for (DispatchMode mode : {DispatchMode::Baseline, DispatchMode::DriverHook}) {
            const Metrics m = run(cfg_for(d, mode, 3), env);
            CHECK(m.raw.lookups_ok * d == m.raw.device_reads);
            CHECK(m.raw.splits == 0);
            CHECK(m.raw.aborts_extent == 0);
            CHECK(m.raw.wrong_results == 0);
            CHECK(m.audit_ok);
        }
    }
}

TEST_CASE("identical config and seed reproduce metrics to the last digit") {
    const BenchEnv env = standard_env(3);
    BenchConfig cfg = cfg_for(3, DispatchMode::DriverHook, 5);
    cfg.seed = 99;
    const Metrics a = run(cfg, env);
    const Metrics b = run(cfg, env);
    CHECK(csv_row(1, cfg, a) == csv_row(1, cfg, b));
    CHECK(a.raw.latencies_ns == b.raw.latencies_ns);
    cfg.seed = 100; // a different seed samples different keys
    const Metrics c = run(cfg, env);
    CHECK(a.raw.lookups_ok == c.raw.lookups_ok); // same load, different keys
}

TEST_CASE("one synchronous worker sees the closed-form latency exactly") {
    const LatencyProfile p;
    for (u32 d : {1u, 3u, 10u}) {
        const BenchEnv env = standard_env(d);
        for (DispatchMode mode : {DispatchMode::Baseline, DispatchMode::SyscallHook, DispatchMode::DriverHook}) {
            BenchConfig cfg = cfg_for(d, mode, 1, 5'000'000);
            cfg.pipeline = 1;
            const Metrics m = run(cfg, env);
            CHECK(m.mean_latency_ns == static_cast<double>(chain_latency_ns(p, mode, d)));
            CHECK(m.p99_latency_ns == chain_latency_ns(p, mode, d));
        }
    }
}

TEST_CASE("cpu charge never exceeds cores times elapsed time") {
    const BenchEnv env = standard_env(4);
    const Metrics m = run(cfg_for(4, DispatchMode::Baseline, 12), env);
    CHECK(m.raw.cpu_busy_ns <= 6 * m.raw.end_ns);
    u64 per_core_sum = 0;
    for (u64 b : m.raw.core_busy_ns) {
        CHECK(b <= m.raw.end_ns);
        per_core_sum += b;
    }
    CHECK(per_core_sum == m.raw.cpu_busy_ns);
}

TEST_CASE("baseline throughput saturates the cores at 6 workers") {
    const BenchEnv env = standard_env(6);
    std::vector<double> lps;
    for (u32 w : {1u, 2u, 4u, 6u, 8u, 12u}) lps.push_back(run(cfg_for(6, DispatchMode::Baseline, w), env).lookups_per_sec);
    CHECK(lps[1] > lps[0] * 1.9); // scales while cores are free
    CHECK(lps[3] > lps[2] * 1.4);
    CHECK(lps[4] <= lps[3] * 1.01); // flat past 6 workers (drain accounting noise only)
    CHECK(lps[5] <= lps[3] * 1.01);
    // And the saturated level is the core-bound prediction 6e9/(d*3048).
    const double cap = 6e9 / (6 * 3048.0);
    CHECK(lps[3] == Catch::Approx(cap).epsilon(0.02));
}

TEST_CASE("driver-hook cells at 12 workers sit at the device-vs-cpu calibration point") {
    for (u32 d : {6u, 8u}) {
        const BenchEnv env = standard_env(d);
        const Metrics dh = run(cfg_for(d, DispatchMode::DriverHook, 12), env);
        const Metrics bl = run(cfg_for(d, DispatchMode::Baseline, 12), env);
        const double ratio = dh.lookups_per_sec / bl.lookups_per_sec;
        CHECK(ratio > 2.3);
        CHECK(ratio < 2.7);
        // Device saturated at its completion-rate cap.
        CHECK(dh.device_iops == Catch::Approx(5e6).epsilon(0.01));
    }
}

TEST_CASE("syscall-hook ratio approaches the software-cost quotient") {
    const BenchEnv env = standard_env(10);
    const Metrics sh = run(cfg_for(10, DispatchMode::SyscallHook, 12), env);
    const Metrics bl = run(cfg_for(10, DispatchMode::Baseline, 12), env);
    const double ratio = sh.lookups_per_sec / bl.lookups_per_sec;
    CHECK(ratio > 1.15);
    CHECK(ratio < 1.28);
}

TEST_CASE("ring batching raises the driver-hook ratio") {
    const BenchEnv env = standard_env(3);
    const auto run_uring = [&](DispatchMode mode, u32 k) {
        BenchConfig cfg = cfg_for(3, mode, 1);
        cfg.uring = true;
        cfg.batch = k;
        return run(cfg, env).lookups_per_sec;
    };
    const double r1 = run_uring(DispatchMode::DriverHook, 1) / run_uring(DispatchMode::Baseline, 1);
    const double r8 = run_uring(DispatchMode::DriverHook, 8) / run_uring(DispatchMode::Baseline, 8);
    CHECK(r8 > r1);
    CHECK(r1 == Catch::Approx(18816.0 / 13146.0).epsilon(0.005));
}

TEST_CASE("scheduled invalidations only abort, never corrupt") {
    const BenchEnv env = standard_env(3);
    BenchConfig cfg = cfg_for(3, DispatchMode::DriverHook, 4, 30'000'000);
    cfg.pipeline = 2;
    cfg.invalidate_mean_s = 0.004; // a handful of events in 30 ms
    const Metrics m = run(cfg, env);
    CHECK(m.raw.invalidation_events > 0);
    CHECK(m.raw.aborts_extent == m.raw.chains_hit_by_invalidation);
    CHECK(m.raw.wrong_results == 0);
    CHECK(m.raw.lookups_ok > 0);
    CHECK(m.raw.reinstalls >= m.raw.invalidation_events);
    CHECK(m.audit_ok);
    // Aborted chains left their partial reads behind: reads >= ok * d.
    CHECK(m.raw.device_reads >= m.raw.lookups_ok * 3);
}

TEST_CASE("csv rows carry the pinned schema") {
    CHECK(std::string(csv_header()) ==
          "run_id,mode,depth,workers,batch,lookups_per_sec,mean_lat_ns,p99_lat_ns,device_iops,"
          "cpu_util,resubmit_driver,resubmit_syscall,aborts_extent,aborts_bound");
    const BenchEnv env = standard_env(1);
    BenchConfig cfg = cfg_for(1, DispatchMode::DriverHook, 1, 1'000'000);
    cfg.pipeline = 1;
    const Metrics m = run(cfg, env);
    const std::string row = csv_row(7, cfg, m);
    CHECK(row.rfind("7,driver,1,1,0,", 0) == 0);
    CHECK(row.find('"') == std::string::npos);
    // 14 fields.
    CHECK(std::count(row.begin(), row.end(), ',') == 13);
}
