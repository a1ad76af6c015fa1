#pragma once

#include <stdexcept>
#include <string>

#include "iosim/common.hpp"

namespace iosim {

// Which layer reissues the next hop of a dependent-I/O chain.
//   Baseline    - every hop makes the full user-space round trip.
//   SyscallHook - hops after the first are reissued from the syscall
//                 dispatch layer (saves the user/kernel crossing and the
//                 syscall dispatch work).
//   DriverHook  - hops after the first are reissued from the storage
//                 driver's completion handler (only driver work, the
//                 storage function, and the device remain on the path).
enum class DispatchMode { Baseline, SyscallHook, DriverHook };

inline const char* to_string(DispatchMode m) {
    switch (m) {
    case DispatchMode::Baseline: return "baseline";
    case DispatchMode::SyscallHook: return "syscall";
    case DispatchMode::DriverHook: return "driver";
    }
    return "?";
}

inline DispatchMode dispatch_mode_from_string(const std::string& s) {
    if (s == "baseline") return DispatchMode::Baseline;
    if (s == "syscall") return DispatchMode::SyscallHook;
    if (s == "driver") return DispatchMode::DriverHook;
    throw std::invalid_argument("unknown dispatch mode: " + s);
}

// Per-layer nanosecond costs of a 512 B random read through the storage
// stack. Each value lumps the submission and completion halves of its layer.
// `device_ns` is carried here for path arithmetic; the authoritative device
// service time lives in DeviceConfig and the two are kept equal by the
// config loader.
struct LatencyProfile {
    u64 crossing_ns = 351;   // user/kernel boundary crossing
    u64 syscall_ns = 199;    // syscall dispatch
    u64 fs_ns = 2006;        // file system
    u64 bio_ns = 379;        // block I/O layer
    u64 driver_ns = 113;     // storage driver
    u64 device_ns = 3224;    // device service
    u64 sfunc_exec_ns = 100; // one storage-function invocation

    // Full path, one hop, user space to device and back.
    constexpr u64 total_path_ns() const {
        return crossing_ns + syscall_ns + fs_ns + bio_ns + driver_ns + device_ns;
    }

    // CPU portion of a full-path hop (everything but the device).
    constexpr u64 software_ns() const { return total_path_ns() - device_ns; }
};

struct HopCost {
    u64 latency_ns = 0;
    u64 cpu_ns = 0;
};

// Cost of hop `hop_index` (1-based) of a chain dispatched in `mode`.
// The first hop of any mode is a full-path round trip. Later hops only pay
// the layers below their dispatch hook; the driver hook additionally pays
// one storage-function invocation per reissue.
inline HopCost path_cost(const LatencyProfile& p, DispatchMode mode, u64 hop_index) {
    if (hop_index < 1) throw std::invalid_argument("path_cost: hop_index must be >= 1");
    if (hop_index == 1 || mode == DispatchMode::Baseline)
        return {p.total_path_ns(), p.software_ns()};
    switch (mode) {
    case DispatchMode::SyscallHook:
        return {p.total_path_ns() - p.crossing_ns - p.syscall_ns,
                p.software_ns() - p.crossing_ns - p.syscall_ns};
    case DispatchMode::DriverHook:
        return {p.driver_ns + p.device_ns + p.sfunc_exec_ns, p.driver_ns + p.sfunc_exec_ns};
    default:
        return {p.total_path_ns(), p.software_ns()};
    }
}

// Closed-form latency of an uncontended d-hop chain.
inline u64 chain_latency_ns(const LatencyProfile& p, DispatchMode mode, u64 depth) {
    u64 total = 0;
    for (u64 h = 1; h <= depth; ++h) total += path_cost(p, mode, h).latency_ns;
    return total;
}

// Closed-form CPU charge of a d-hop chain.
inline u64 chain_cpu_ns(const LatencyProfile& p, DispatchMode mode, u64 depth) {
    u64 total = 0;
    for (u64 h = 1; h <= depth; ++h) total += path_cost(p, mode, h).cpu_ns;
    return total;
}

} // namespace iosim
