// Command-line front end: build index images, verify storage functions, run
// benchmark cells from a config file, and emit the standard sweep reports.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "iosim/bench.hpp"
#include "iosim/btree.hpp"
#include "iosim/config.hpp"
#include "iosim/iostack.hpp"
#include "iosim/sfunc.hpp"

namespace {

using namespace iosim;

constexpr int kExitOk = 0;
constexpr int kExitRejected = 1; // verifier rejection
constexpr int kExitUsage = 2;    // config/parse/usage errors

struct GlobalOpts {
    u64 seed = 1;
    std::string profile_path;
};

void apply_profile_overlay(const GlobalOpts& g, LatencyProfile& profile, DeviceConfig& device) {
    if (g.profile_path.empty()) return;
    const config::RunConfig overlay = config::load(g.profile_path);
    profile = overlay.profile;
    device = overlay.device;
    device.service_ns = profile.device_ns;
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), f, v);
    return buf;
}

// ---- build-tree -------------------------------------------------------------

int cmd_build_tree(u64 keys, u32 depth, u32 fanout, u32 page_size, const std::string& out_path,
                   u32 scatter, u64 scatter_gap) {
    if ((keys == 0) == (depth == 0)) {
        std::cerr << "build-tree: give exactly one of --keys or --depth\n";
        return kExitUsage;
    }
    btree::TreeImage img =
        depth ? btree::build_full(depth, fanout, page_size) : btree::build(btree::make_kvs(keys), fanout, page_size);
    btree::save_image(img, out_path);
    std::cout << "depth " << img.depth << " fanout " << img.fanout << " pages " << img.pages() << " root_off 0"
              << " page_size " << img.page_size << " keys " << img.n_keys << "\n";
    if (scatter > 1) {
        const ExtentMap map = btree::scatter_extents(img.bytes.size(), img.page_size, scatter, 0, scatter_gap);
        for (const auto& e : map.extents())
            std::cout << "extent = " << e.file_off << "," << e.pba << "," << e.len << "\n";
    }
    return kExitOk;
}

// ---- verify -----------------------------------------------------------------

int cmd_verify(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        std::cerr << "verify: cannot open " << path << "\n";
        return kExitUsage;
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    sfunc::Program prog;
    try {
        prog = sfunc::assemble(ss.str());
    } catch (const sfunc::ParseError& e) {
        std::cerr << "verify: parse error at line " << e.line << ": " << e.what() << "\n";
        return kExitUsage;
    }
    if (auto err = sfunc::verify(prog)) {
        std::cout << "reject: " << to_string(err->reason) << " at instruction " << err->index << "\n";
        return kExitRejected;
    }
    std::cout << "ok: " << prog.code.size() << " instructions, return buffer cap " << prog.ret_buf_cap << "\n";
    return kExitOk;
}

// ---- bench ------------------------------------------------------------------

bench::BenchEnv env_for_depth(const config::RunConfig& rc, u32 depth) {
    if (!rc.bench.image.empty()) {
        btree::TreeImage img = btree::load_image(rc.bench.image, rc.bench.page_size);
        if (img.depth != depth)
            throw std::invalid_argument("config depth " + std::to_string(depth) + " does not match image depth " +
                                        std::to_string(img.depth));
        ExtentMap map = ExtentMap::single(0, img.bytes.size());
        if (!rc.bench.file.empty()) {
            auto it = rc.files.find(rc.bench.file);
            if (it == rc.files.end())
                throw std::invalid_argument("no [file." + rc.bench.file + "] section for the image layout");
            u64 max_end = 0;
            for (const auto& e : it->second.extents) max_end = std::max(max_end, e.file_off + e.len);
            map = ExtentMap(it->second.extents, max_end);
        }
        bench::BenchEnv env = bench::make_env(std::move(img), std::move(map));
        env.profile = rc.profile;
        env.device = rc.device;
        return env;
    }
    bench::BenchEnv env = bench::standard_env(depth, rc.bench.page_size);
    env.profile = rc.profile;
    env.device = rc.device;
    return env;
}

int cmd_bench(const GlobalOpts& g, const std::string& config_path, const std::string& csv_path) {
    config::RunConfig rc = config::load(config_path);
    if (!g.profile_path.empty()) apply_profile_overlay(g, rc.profile, rc.device);
    rc.device.service_ns = rc.profile.device_ns;

    std::ofstream csv;
    if (!csv_path.empty()) {
        const bool fresh = !std::filesystem::exists(csv_path) || std::filesystem::file_size(csv_path) == 0;
        csv.open(csv_path, std::ios::app);
        if (!csv) throw std::runtime_error("cannot open csv for append: " + csv_path);
        if (fresh) csv << bench::csv_header() << "\n";
    }

    const bool uring = rc.bench.io == "uring";
    const std::vector<u32> batches = uring ? rc.bench.batches : std::vector<u32>{0};
    u64 run_id = 0;
    for (const auto& mode_name : rc.bench.modes) {
        const DispatchMode mode = dispatch_mode_from_string(mode_name);
        for (u32 d : rc.bench.depths) {
            const bench::BenchEnv env = env_for_depth(rc, d);
            for (u32 w : rc.bench.workers) {
                for (u32 k : batches) {
                    bench::BenchConfig cfg;
                    cfg.mode = mode;
                    cfg.depth = d;
                    cfg.workers = w;
                    cfg.uring = uring;
                    cfg.batch = k;
                    cfg.pipeline = rc.bench.pipeline;
                    cfg.duration_ns = rc.bench.duration_ms * 1'000'000ULL;
                    cfg.seed = rc.bench.seed;
                    cfg.hop_limit = rc.bench.hop_limit;
                    cfg.invalidate_mean_s = static_cast<double>(rc.bench.invalidate_mean_s);
                    const bench::Metrics m = bench::run(cfg, env);
                    const std::string row = bench::csv_row(++run_id, cfg, m);
                    if (csv.is_open()) csv << row << "\n";
                    std::cout << row << "\n";
                }
            }
        }
    }
    std::cout << "runs: " << run_id << "\n";
    return kExitOk;
}

// ---- figures ----------------------------------------------------------------

int cmd_figures(const GlobalOpts& g, const std::string& out_dir, u64 duration_ms) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);

    LatencyProfile profile;
    DeviceConfig device;
    apply_profile_overlay(g, profile, device);
    device.service_ns = profile.device_ns;

    bench::SweepOptions opt;
    opt.duration_ns = duration_ms * 1'000'000ULL;
    opt.seed = g.seed;

    const std::vector<u32> depths{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    const std::vector<u32> workers{1, 2, 4, 6, 8, 12};
    const std::vector<u32> batches{1, 2, 4, 8};

    const auto fig3a = bench::speedup_sweep(DispatchMode::SyscallHook, depths, workers, opt);
    const auto fig3b = bench::speedup_sweep(DispatchMode::DriverHook, depths, workers, opt);
    const auto fig3c = bench::latency_sweep(depths, opt);
    const auto fig3d = bench::uring_sweep(depths, batches, opt);

    const auto write_speedup = [&](const std::string& name, const std::vector<bench::SpeedupCell>& cells) {
        std::ofstream out(fs::path(out_dir) / name, std::ios::trunc);
        out << "depth,workers,hook_lookups_per_sec,baseline_lookups_per_sec,ratio\n";
        double best = 0;
        for (const auto& c : cells) {
            char buf[160];
            std::snprintf(buf, sizeof(buf), "%u,%u,%.3f,%.3f,%.4f", c.depth, c.workers, c.hook_lps, c.base_lps,
                          c.ratio);
            out << buf << "\n";
            best = std::max(best, c.ratio);
        }
        return best;
    };

    const double best3a = write_speedup("fig3a.csv", fig3a);
    const double best3b = write_speedup("fig3b.csv", fig3b);

    double best_reduction = 0;
    {
        std::ofstream out(fs::path(out_dir) / "fig3c.csv", std::ios::trunc);
        out << "depth,baseline_mean_ns,syscall_mean_ns,driver_mean_ns,syscall_reduction_pct,driver_reduction_pct\n";
        for (const auto& c : fig3c) {
            const double sr = c.baseline_ns > 0 ? 100.0 * (1.0 - c.syscall_ns / c.baseline_ns) : 0;
            const double dr = c.baseline_ns > 0 ? 100.0 * (1.0 - c.driver_ns / c.baseline_ns) : 0;
            char buf[200];
            std::snprintf(buf, sizeof(buf), "%u,%.3f,%.3f,%.3f,%.3f,%.3f", c.depth, c.baseline_ns, c.syscall_ns,
                          c.driver_ns, sr, dr);
            out << buf << "\n";
            best_reduction = std::max(best_reduction, dr);
        }
    }

    double best3d = 0;
    {
        std::ofstream out(fs::path(out_dir) / "fig3d.csv", std::ios::trunc);
        out << "depth,batch,driver_lookups_per_sec,baseline_lookups_per_sec,ratio\n";
        for (const auto& c : fig3d) {
            char buf[160];
            std::snprintf(buf, sizeof(buf), "%u,%u,%.3f,%.3f,%.4f", c.depth, c.batch, c.driver_lps, c.base_lps,
                          c.ratio);
            out << buf << "\n";
            best3d = std::max(best3d, c.ratio);
        }
    }

    const LatencyProfile& p = profile;
    const double ceiling =
        100.0 * (1.0 - static_cast<double>(p.driver_ns + p.device_ns + p.sfunc_exec_ns) /
                           static_cast<double>(p.total_path_ns()));
    std::cout << "fig3a (syscall hook) max throughput ratio: " << fmt("%.3f", best3a) << "\n";
    std::cout << "fig3b (driver hook) max throughput ratio: " << fmt("%.3f", best3b) << "\n";
    std::cout << "fig3c max driver-hook latency reduction: " << fmt("%.1f", best_reduction) << "%\n";
    std::cout << "fig3d (batched, driver hook) max throughput ratio: " << fmt("%.3f", best3d) << "\n";
    std::cout << "note: the per-hop cost model caps the latency reduction at " << fmt("%.1f", ceiling)
              << "% asymptotically; measured systems report up to ~49%, which lies above this model's"
              << " path arithmetic (queueing and depth effects outside the model).\n";
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"iosim: storage-path offload simulator"};
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--seed", g.seed, "global determinism seed");
    app.add_option("--profile", g.profile_path, "config file supplying [profile]/[device] calibration");

    auto* bt = app.add_subcommand("build-tree", "build an on-disk index image (.btx)");
    u64 bt_keys = 0;
    u32 bt_depth = 0, bt_fanout = 31, bt_page = 512, bt_scatter = 1;
    u64 bt_gap = 2048;
    std::string bt_out;
    bt->add_option("--keys", bt_keys, "number of keys (natural depth)");
    bt->add_option("--depth", bt_depth, "build a full tree of this depth");
    bt->add_option("--fanout", bt_fanout, "children per node (1..31)");
    bt->add_option("--page-size", bt_page, "page size in bytes, multiple of 512");
    bt->add_option("--out", bt_out, "output image path")->required();
    bt->add_option("--scatter", bt_scatter, "split the layout across N discontiguous extents");
    bt->add_option("--scatter-gap", bt_gap, "physical gap between scattered extents, blocks");

    auto* vf = app.add_subcommand("verify", "verify a storage-function program");
    std::string vf_path;
    vf->add_option("program", vf_path, "program text file")->required();

    auto* bn = app.add_subcommand("bench", "run benchmark cells from a config file");
    std::string bn_config, bn_csv;
    bn->add_option("--config", bn_config, "run config (INI)")->required();
    bn->add_option("--csv", bn_csv, "append result rows to this CSV file");

    auto* fg = app.add_subcommand("figures", "emit the four standard sweep reports");
    std::string fg_out;
    u64 fg_duration = 50;
    fg->add_option("--out", fg_out, "output directory")->required();
    fg->add_option("--duration-ms", fg_duration, "virtual milliseconds per cell");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (bt->parsed()) return cmd_build_tree(bt_keys, bt_depth, bt_fanout, bt_page, bt_out, bt_scatter, bt_gap);
        if (vf->parsed()) return cmd_verify(vf_path);
        if (bn->parsed()) return cmd_bench(g, bn_config, bn_csv);
        if (fg->parsed()) return cmd_figures(g, fg_out, fg_duration);
    } catch (const config::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}
