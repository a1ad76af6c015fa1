#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "iosim/blockdev.hpp"
#include "iosim/common.hpp"
#include "iosim/profile.hpp"
#include "iosim/xcache.hpp"

namespace iosim::config {

struct ConfigError : std::runtime_error {
    int line;
    ConfigError(int line_, const std::string& what_)
        : std::runtime_error("line " + std::to_string(line_) + ": " + what_), line(line_) {}
};

struct BenchSection {
    std::vector<std::string> modes{"baseline"};
    std::vector<u32> depths{3};
    std::vector<u32> workers{1};
    std::vector<u32> batches{8};
    std::string io = "sync"; // sync | uring
    u32 pipeline = 3;
    u64 duration_ms = 1000;
    u64 seed = 1;
    u32 hop_limit = 16;
    u64 invalidate_mean_s = 0;
    std::string image; // optional .btx path; standard shapes are built when absent
    u32 page_size = 512;
    std::string file; // optional [file.<name>] extent layout for the image
    bool batch_key_seen = false;
};

// Extent rows accumulated from repeated `extent = file_off,pba,len` lines.
struct FileSection {
    std::vector<Extent> extents;
};

struct RunConfig {
    LatencyProfile profile{};
    DeviceConfig device{};
    BenchSection bench{};
    std::map<std::string, FileSection> files;
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    std::size_t e = s.find_last_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, e - b + 1);
}

inline u64 parse_u64(const std::string& v, int line) {
    try {
        std::size_t pos = 0;
        const u64 x = std::stoull(v, &pos, 0);
        if (pos != v.size()) throw ConfigError(line, "trailing characters in integer '" + v + "'");
        return x;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        throw ConfigError(line, "expected an integer, got '" + v + "'");
    }
}

inline std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : v) {
        if (c == ',') {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(trim(cur));
    return out;
}

inline std::vector<u32> parse_u32_list(const std::string& v, int line) {
    std::vector<u32> out;
    for (const auto& tok : split_list(v)) out.push_back(static_cast<u32>(parse_u64(tok, line)));
    return out;
}

} // namespace detail

// Fail-closed: unknown sections and keys are errors, so a typo cannot
// silently mis-calibrate the model. The [profile] `device` row is the single
// source for the device service time; the loader copies it into the device
// config.
inline RunConfig parse(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string raw;
    int lineno = 0;
    std::string section;
    std::string file_name;

    while (std::getline(in, raw)) {
        ++lineno;
        std::string line = raw;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;

        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(lineno, "unterminated section header");
            section = line.substr(1, line.size() - 2);
            if (section.rfind("file.", 0) == 0) {
                file_name = section.substr(5);
                if (file_name.empty()) throw ConfigError(lineno, "empty file section name");
                cfg.files[file_name]; // create
            } else if (section != "profile" && section != "device" && section != "bench") {
                throw ConfigError(lineno, "unknown section [" + section + "]");
            }
            continue;
        }

        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(lineno, "expected key = value");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string val = detail::trim(line.substr(eq + 1));
        if (key.empty() || val.empty()) throw ConfigError(lineno, "empty key or value");

        if (section == "profile") {
            const u64 x = detail::parse_u64(val, lineno);
            if (key == "crossing") cfg.profile.crossing_ns = x;
            else if (key == "syscall") cfg.profile.syscall_ns = x;
            else if (key == "fs") cfg.profile.fs_ns = x;
            else if (key == "bio") cfg.profile.bio_ns = x;
            else if (key == "driver") cfg.profile.driver_ns = x;
            else if (key == "device") cfg.profile.device_ns = x;
            else if (key == "sfunc_exec") cfg.profile.sfunc_exec_ns = x;
            else throw ConfigError(lineno, "unknown [profile] key '" + key + "'");
        } else if (section == "device") {
            const u64 x = detail::parse_u64(val, lineno);
            if (key == "parallelism") cfg.device.parallelism = static_cast<u32>(x);
            else if (key == "max_iops") cfg.device.max_iops = x;
            else if (key == "inflight_limit") cfg.device.inflight_limit = static_cast<u32>(x);
            else if (key == "seed") cfg.device.seed = x;
            else throw ConfigError(lineno, "unknown [device] key '" + key + "'");
        } else if (section == "bench") {
            if (key == "mode") cfg.bench.modes = detail::split_list(val);
            else if (key == "depth") cfg.bench.depths = detail::parse_u32_list(val, lineno);
            else if (key == "workers") cfg.bench.workers = detail::parse_u32_list(val, lineno);
            else if (key == "batch") {
                cfg.bench.batches = detail::parse_u32_list(val, lineno);
                cfg.bench.batch_key_seen = true;
            } else if (key == "io") {
                if (val != "sync" && val != "uring") throw ConfigError(lineno, "io must be sync or uring");
                cfg.bench.io = val;
            } else if (key == "pipeline") cfg.bench.pipeline = static_cast<u32>(detail::parse_u64(val, lineno));
            else if (key == "duration_ms") cfg.bench.duration_ms = detail::parse_u64(val, lineno);
            else if (key == "duration_s") cfg.bench.duration_ms = detail::parse_u64(val, lineno) * 1000;
            else if (key == "seed") cfg.bench.seed = detail::parse_u64(val, lineno);
            else if (key == "hop_limit") cfg.bench.hop_limit = static_cast<u32>(detail::parse_u64(val, lineno));
            else if (key == "invalidate_mean_s") cfg.bench.invalidate_mean_s = detail::parse_u64(val, lineno);
            else if (key == "image") cfg.bench.image = val;
            else if (key == "page_size") cfg.bench.page_size = static_cast<u32>(detail::parse_u64(val, lineno));
            else if (key == "file") cfg.bench.file = val;
            else throw ConfigError(lineno, "unknown [bench] key '" + key + "'");
        } else if (!file_name.empty() && section == "file." + file_name) {
            if (key != "extent") throw ConfigError(lineno, "unknown [file] key '" + key + "'");
            const auto parts = detail::split_list(val);
            if (parts.size() != 3) throw ConfigError(lineno, "extent needs file_off,pba,len");
            Extent e;
            e.file_off = detail::parse_u64(parts[0], lineno);
            e.pba = detail::parse_u64(parts[1], lineno);
            e.len = detail::parse_u64(parts[2], lineno);
            cfg.files[file_name].extents.push_back(e);
        } else {
            throw ConfigError(lineno, "key '" + key + "' outside any known section");
        }

    }

    if (cfg.bench.io == "sync" && cfg.bench.batch_key_seen)
        throw ConfigError(0, "batch applies only to io = uring runs");
    if (cfg.device.seed == 0) cfg.device.seed = cfg.bench.seed;
    cfg.device.service_ns = cfg.profile.device_ns;
    cfg.device.validate();
    return cfg;
}

inline RunConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

} // namespace iosim::config
