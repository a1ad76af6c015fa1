#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <queue>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "iosim/blockdev.hpp"
#include "iosim/common.hpp"
#include "iosim/profile.hpp"
#include "iosim/sfunc.hpp"
#include "iosim/xcache.hpp"

namespace iosim::stack {

using FileId = u32;

struct SimConfig {
    LatencyProfile profile;
    DeviceConfig device;
    u32 cores = 6;
    u64 capacity_blocks = 1 << 20; // 512 MiB backing by default
};

struct InstallHandle {
    FileId file = 0;
    u32 generation = 0;
};

enum class ChainStatus : u8 {
    Running,
    Ok,          // function returned a buffer (possibly empty = key absent)
    Dropped,     // function dropped the completion
    AbortExtent, // extent cache invalidated mid-chain (EEXTENT)
    AbortBound,  // resubmission budget exhausted (EBOUND)
    Fault,       // runtime trap: bad offset, misaligned resubmit, OOB access
};

struct ChainResult {
    u64 chain_id = 0;
    ChainStatus status = ChainStatus::Running;
    std::vector<std::byte> buffer;
    u64 start_ns = 0;
    u64 end_ns = 0;
    u64 latency_ns = 0;
    u32 pages_read = 0;   // hops completed (one page each)
    u32 device_reads = 0; // physical requests issued (> pages when split)
    u32 splits = 0;       // hops demoted to the full path
};

struct ReadResult {
    std::vector<std::byte> data;
    u64 latency_ns = 0;
    u64 cpu_ns = 0;
};

// Closed-loop load generation for one benchmark cell. Each worker is pinned
// to core (id mod cores) and keeps up to `pipeline` lookups in flight.
// pipeline=1 is a classic synchronous thread (used for latency experiments);
// larger values model a thread that overlaps submission work with
// outstanding completions, which is what lets a worker sweep saturate the
// cores or the device in throughput experiments.
struct WorkloadSpec {
    FileId file = 0;
    DispatchMode mode = DispatchMode::Baseline;
    bool uring = false;
    u32 batch = 0; // uring only: submissions per ring call
    u32 workers = 1;
    u32 pipeline = 1;
    u64 duration_ns = 0;
    u64 seed = 1;
    u32 hop_limit = 16;
    u32 read_len = 512; // page size of the image
    const std::vector<u64>* keys = nullptr;
    const sfunc::Program* program = nullptr; // search key taken from r7
    double invalidate_mean_s = 0;            // 0 = no background invalidations
};

struct WorkloadStats {
    u64 duration_ns = 0;
    u64 end_ns = 0; // drain end
    u64 lookups_ok = 0;
    u64 dropped = 0;
    u64 aborts_extent = 0;
    u64 aborts_bound = 0;
    u64 faults = 0;
    u64 wrong_results = 0;
    u64 resubmit_driver = 0;
    u64 resubmit_syscall = 0;
    u64 resubmit_user = 0;
    u64 splits = 0;
    u64 device_reads = 0;
    u64 pages_read = 0;
    u64 invalidation_events = 0;
    u64 chains_hit_by_invalidation = 0;
    u64 reinstalls = 0; // includes the initial install
    u64 cpu_busy_ns = 0;
    std::vector<u64> core_busy_ns;
    std::vector<u64> latencies_ns; // successful lookups only

    double lookups_per_sec() const {
        return duration_ns ? static_cast<double>(lookups_ok) * 1e9 / static_cast<double>(duration_ns) : 0.0;
    }
    double device_iops() const {
        return duration_ns ? static_cast<double>(device_reads) * 1e9 / static_cast<double>(duration_ns) : 0.0;
    }
    double mean_latency_ns() const {
        if (latencies_ns.empty()) return 0.0;
        long double s = 0;
        for (u64 v : latencies_ns) s += v;
        return static_cast<double>(s / latencies_ns.size());
    }
    u64 p99_latency_ns() const {
        if (latencies_ns.empty()) return 0;
        std::vector<u64> v = latencies_ns;
        std::sort(v.begin(), v.end());
        const std::size_t idx = (v.size() * 99 + 99) / 100; // ceil(0.99 n), 1-based
        return v[std::min(idx, v.size()) - 1];
    }
    double cpu_utilization(u32 cores) const {
        if (!duration_ns || !cores) return 0.0;
        return static_cast<double>(cpu_busy_ns) / (static_cast<double>(duration_ns) * cores);
    }
};

// The costed kernel-path model. One deterministic event loop drives the CPU
// cores, the device, dispatch-hook resubmissions, the extent cache, and the
// background invalidation stream.
//
// Hop timeline: a hop's software cost runs as one CPU job on the owning
// worker's core, then the device services the physical read(s); the next hop
// starts from the completion. The completion path back to user space is
// folded into the first hop's full-path charge, so an uncontended chain's
// latency is exactly the per-hop closed form. Driver-hook completion work
// (driver + function execution) is charged to the submitting worker's core
// and takes priority over new submissions, like interrupt work.
class Simulation {
public:
    explicit Simulation(SimConfig cfg)
        : cfg_(cfg), device_(Device::with_blocks(cfg.device, cfg.capacity_blocks)) {
        if (cfg_.cores == 0) throw std::invalid_argument("need at least one core");
        cores_.resize(cfg_.cores);
    }

    const SimConfig& config() const { return cfg_; }
    Device& device() { return device_; }
    const Device& device() const { return device_; }
    u64 now() const { return now_ns_; }

    // Default read size for run_chain/read-style ops (page size of the image).
    void set_default_read_len(u32 len) { default_read_len_ = len; }

    // Registers a file: extent map plus content, written to the backing store
    // at the mapped physical blocks.
    FileId add_file(std::string name, ExtentMap map, std::span<const std::byte> bytes) {
        if (bytes.size() > map.file_len()) throw std::invalid_argument("file content longer than extent map");
        for (const auto& e : map.extents()) {
            if (e.file_off >= bytes.size()) continue;
            const u64 n = std::min<u64>(e.len, bytes.size() - e.file_off);
            std::vector<std::byte> padded(div_ceil(n, kBlockBytes) * kBlockBytes, std::byte{0});
            std::copy(bytes.begin() + static_cast<std::ptrdiff_t>(e.file_off),
                      bytes.begin() + static_cast<std::ptrdiff_t>(e.file_off + n), padded.begin());
            device_.write_bytes(e.pba, padded);
        }
        files_.push_back(File{std::move(name), std::move(map), ExtentCache{}, 0, false, {}});
        return static_cast<FileId>(files_.size() - 1);
    }

    // Attaches a verified function to the file: snapshots its extents into
    // the driver-layer cache and tags the file's chain I/Os from here on.
    // Re-installing bumps the generation and aborts in-flight chains.
    InstallHandle install(FileId f, const sfunc::Program& program) {
        File& file = file_at(f);
        if (auto err = sfunc::verify(program))
            throw std::invalid_argument(std::string("program rejected by verifier: ") + to_string(err->reason) +
                                        " at " + std::to_string(err->index));
        if (!file.map.covers_fully()) throw std::invalid_argument("cannot install on a file with holes");
        if (file.installed) {
            abort_tagged_chains(f, now_ns_);
            close_gen_span(f, file.generation, now_ns_);
        }
        file.generation += 1;
        file.cache = ExtentCache(file.map, file.generation);
        file.installed = true;
        file.program = program;
        install_history_.push_back(GenSpan{f, file.generation, now_ns_, kOpenEnd, file.map.extents()});
        return InstallHandle{f, file.generation};
    }

    // Drops the driver-layer extent cache: in-flight tagged chains abort with
    // EEXTENT; no tagged submission happens until the next install. Returns
    // the number of aborted chains.
    u64 invalidate(FileId f) {
        File& file = file_at(f);
        if (!file.installed) return 0;
        file.installed = false;
        file.cache.invalidate();
        close_gen_span(f, file.generation, now_ns_);
        return abort_tagged_chains(f, now_ns_);
    }

    // Queues an invalidation at an absolute simulated time. At equal
    // timestamps invalidations are processed before device completions, so a
    // hop landing at the same instant sees the dropped cache.
    void schedule_invalidation(FileId f, u64 at_ns) { schedule(at_ns, 0, f); }

    // Cumulative counters since the last workload (single-shot operations
    // accumulate here as well).
    const WorkloadStats& counters() const { return stats_; }

    u64 total_cpu_busy_ns() const {
        u64 total = 0;
        for (const auto& core : cores_) total += core.busy_ns;
        return total;
    }

    // Deterministic exponential-like event spacing with the given mean,
    // capped at `until_ns`.
    static std::vector<u64> invalidation_times(double mean_s, u64 seed, u64 until_ns) {
        std::vector<u64> times;
        if (!(mean_s > 0) || !std::isfinite(mean_s)) return times;
        SplitMix64 rng(mix64(seed ^ 0x1a2b3c4d5e6f7788ULL));
        const double mean_ns = mean_s * 1e9;
        double t = 0;
        while (true) {
            t += std::max(1.0, -mean_ns * std::log(rng.next_unit()));
            if (t >= static_cast<double>(until_ns)) return times;
            times.push_back(static_cast<u64>(t));
        }
    }

    // --- single-shot operations (each drives the loop to completion) -------

    // Plain synchronous read through the full path. One hop; a range across
    // discontiguous extents becomes multiple physical reads transparently.
    ReadResult read_sync(FileId f, u64 off, u32 len) {
        File& file = file_at(f);
        if (len == 0 || len % kBlockBytes != 0 || off % kBlockBytes != 0)
            throw std::invalid_argument("read must be block-aligned");
        if (off + len > file.map.file_len()) throw std::out_of_range("read beyond end of file");
        if (file.map.physical_runs(off, len).empty()) throw std::out_of_range("read crosses an unmapped hole");

        Chain& c = new_chain(f, DispatchMode::Baseline, 16, nullptr, {}, 0, len);
        const u64 id = c.id;
        c.single_read = true;
        c.cur_off = off;
        c.start_ns = now_ns_;
        queue_cpu_job(c.worker_core, JobClass::Emission, cfg_.profile.software_ns(), id, now_ns_);
        drain_until_done(id);
        ChainResult res = take_result(id);
        return ReadResult{std::move(res.buffer), res.latency_ns, cfg_.profile.software_ns()};
    }

    // One dependent-I/O chain: hop 1 is a full-path read; each completion
    // runs the function, and Resubmit schedules the next hop at the mode's
    // cost. DriverHook requires the same program to be installed on the file.
    ChainResult run_chain(FileId f, const sfunc::Program& program, u64 start_off, DispatchMode mode,
                          u32 hop_limit = 16, sfunc::Registers init_regs = {}) {
        File& file = file_at(f);
        if (auto err = sfunc::verify(program))
            throw std::invalid_argument(std::string("unverified program: ") + to_string(err->reason));
        if (mode == DispatchMode::DriverHook && (!file.installed || !(file.program == program)))
            throw std::logic_error("driver-hook chains need the program installed on the file");
        if (hop_limit < 1) throw std::invalid_argument("hop_limit must be >= 1");

        Chain& c = new_chain(f, mode, hop_limit, &program, init_regs, 0, default_read_len_);
        const u64 id = c.id;
        c.cur_off = start_off;
        c.start_ns = now_ns_;
        queue_cpu_job(c.worker_core, JobClass::Emission, cfg_.profile.software_ns(), id, now_ns_);
        drain_until_done(id);
        return take_result(id);
    }

    // Batched submission: one ring call covers up to `batch` chain starts and
    // charges the user/kernel crossing once. Baseline reissues each hop level
    // with another ring call once the previous level fully completes; hook
    // modes resubmit in-kernel. The next batch starts when the current one
    // has fully completed (completions are reaped per batch).
    std::vector<ChainResult> submit_batch(FileId f, const sfunc::Program& program,
                                          const std::vector<u64>& start_offs, u32 batch, DispatchMode mode,
                                          u32 hop_limit = 16,
                                          const std::vector<sfunc::Registers>* init_regs = nullptr) {
        File& file = file_at(f);
        if (batch < 1) throw std::invalid_argument("batch must be >= 1");
        if (auto err = sfunc::verify(program))
            throw std::invalid_argument(std::string("unverified program: ") + to_string(err->reason));
        if (mode == DispatchMode::DriverHook && (!file.installed || !(file.program == program)))
            throw std::logic_error("driver-hook chains need the program installed on the file");

        std::vector<ChainResult> out;
        out.reserve(start_offs.size());
        for (std::size_t base = 0; base < start_offs.size(); base += batch) {
            const std::size_t n = std::min<std::size_t>(batch, start_offs.size() - base);
            const u64 round_start = now_ns_;
            std::vector<u64> ids;
            ids.reserve(n);
            queue_cpu_job(0, JobClass::Emission, cfg_.profile.crossing_ns, kCrossingJob, round_start);
            for (std::size_t i = 0; i < n; ++i) {
                Chain& c = new_chain(f, mode, hop_limit, &program,
                                     init_regs ? (*init_regs)[base + i] : sfunc::Registers{}, 0,
                                     default_read_len_);
                c.uring = true;
                c.cur_off = start_offs[base + i];
                c.start_ns = round_start;
                ids.push_back(c.id);
                queue_cpu_job(0, JobClass::Emission, cfg_.profile.software_ns() - cfg_.profile.crossing_ns,
                              c.id, round_start);
            }
            round_.active = true;
            round_.chain_ids = ids;
            round_.live = static_cast<u32>(ids.size());
            round_.parked = 0;
            round_.barrier_ns = round_start;
            for (u64 id : ids) drain_until_done(id);
            round_.active = false;
            for (u64 id : ids) out.push_back(take_result(id));
        }
        return out;
    }

    WorkloadStats run_workload(const WorkloadSpec& spec);

    // --- audits over the device event log -----------------------------------

    // Every tagged submission must target blocks inside the extents installed
    // for its generation, inside that generation's [install, invalidate)
    // window.
    bool audit_tagged_submissions(std::string* why = nullptr) const {
        for (const auto& rec : device_.log()) {
            if (!rec.tagged) continue;
            const GenSpan* span = find_span(rec.tag.file, rec.tag.generation);
            if (!span) return fail(why, "tagged I/O with unknown generation");
            if (rec.submit_ns < span->installed_ns || rec.submit_ns >= span->closed_ns)
                return fail(why, "tagged I/O outside its install window");
            const u64 lo = rec.pba;
            const u64 hi = rec.pba + rec.len / kBlockBytes;
            bool inside = false;
            for (const auto& e : span->extents) {
                if (lo >= e.pba && hi <= e.pba + e.len / kBlockBytes) {
                    inside = true;
                    break;
                }
            }
            if (!inside) return fail(why, "tagged I/O outside installed extents");
        }
        return true;
    }

    u64 tagged_submissions_in(u64 from_ns, u64 to_ns, FileId f) const {
        u64 n = 0;
        for (const auto& rec : device_.log())
            if (rec.tagged && rec.tag.file == f && rec.submit_ns >= from_ns && rec.submit_ns < to_ns) ++n;
        return n;
    }

    u64 tagged_reads_for_chain(u64 chain_id) const {
        u64 n = 0;
        for (const auto& rec : device_.log())
            if (rec.tagged && rec.tag.chain == chain_id) ++n;
        return n;
    }

private:
    static constexpr u64 kOpenEnd = std::numeric_limits<u64>::max();
    static constexpr u64 kCrossingJob = std::numeric_limits<u64>::max();

    struct File {
        std::string name;
        ExtentMap map;
        ExtentCache cache;
        u32 generation = 0;
        bool installed = false;
        sfunc::Program program;
    };

    struct GenSpan {
        FileId file;
        u32 generation;
        u64 installed_ns;
        u64 closed_ns;
        std::vector<Extent> extents;
    };

    enum class JobClass : u8 { Continuation = 0, Emission = 1 };
    enum class Route : u8 { FullPath, Driver };

    struct Chain {
        u64 id = 0;
        FileId file = 0;
        u32 generation = 0;
        bool tagged = false;
        DispatchMode mode = DispatchMode::Baseline;
        bool uring = false;
        bool single_read = false;
        const sfunc::Program* program = nullptr;
        sfunc::Registers init_regs{};
        sfunc::ChainBudget budget;
        u32 read_len = 512;
        u32 worker = 0;
        u32 worker_core = 0;
        Route route = Route::FullPath;
        u64 cur_off = 0;
        u64 start_ns = 0;
        u32 pages_read = 0;
        u32 device_reads = 0;
        u32 splits = 0;
        u32 outstanding = 0;
        std::vector<PhysicalRun> hop_runs;
        ChainStatus status = ChainStatus::Running;
        u64 expect_key = 0;
        bool check_value = false;
        bool parked = false;
    };

    struct Event {
        u64 time;
        u8 klass; // 0 invalidation, 1 device completion, 2 cpu job done
        u64 seq;
        u64 payload; // file id / request id / core index
        bool operator>(const Event& o) const {
            if (time != o.time) return time > o.time;
            if (klass != o.klass) return klass > o.klass;
            return seq > o.seq;
        }
    };

    struct CpuJob {
        JobClass cls = JobClass::Emission;
        u64 seq = 0;
        u64 duration = 0;
        u64 chain_id = 0;
        bool operator<(const CpuJob& o) const { // completion work cuts ahead
            if (cls != o.cls) return static_cast<u8>(cls) < static_cast<u8>(o.cls);
            return seq < o.seq;
        }
    };

    struct Core {
        bool busy = false;
        u64 busy_ns = 0;
        CpuJob running{};
        std::vector<CpuJob> queued;
    };

    struct Worker {
        u32 id = 0;
        u32 core = 0;
        SplitMix64 rng{0};
        u32 inflight = 0; // sync pipeline occupancy
        // uring batch state
        std::vector<u64> batch_ids;
        u32 live = 0;
        u32 parked = 0;
        u64 barrier_ns = 0;
    };

    struct RoundState { // single-shot submit_batch bookkeeping
        bool active = false;
        std::vector<u64> chain_ids;
        u32 live = 0;
        u32 parked = 0;
        u64 barrier_ns = 0;
    };

    // ---- small helpers ------------------------------------------------------

    File& file_at(FileId f) {
        if (f >= files_.size()) throw std::out_of_range("unknown file id");
        return files_[f];
    }

    static bool fail(std::string* why, const char* msg) {
        if (why) *why = msg;
        return false;
    }

    const GenSpan* find_span(FileId f, u32 gen) const {
        for (const auto& s : install_history_)
            if (s.file == f && s.generation == gen) return &s;
        return nullptr;
    }

    void close_gen_span(FileId f, u32 gen, u64 t) {
        for (auto& s : install_history_)
            if (s.file == f && s.generation == gen && s.closed_ns == kOpenEnd) s.closed_ns = t;
    }

    Chain& new_chain(FileId f, DispatchMode mode, u32 hop_limit, const sfunc::Program* program,
                     sfunc::Registers init_regs, u32 worker, u32 read_len) {
        const u64 id = next_chain_id_++;
        Chain c;
        c.id = id;
        c.file = f;
        c.mode = mode;
        c.tagged = (mode == DispatchMode::DriverHook);
        c.generation = files_[f].generation;
        c.program = program;
        c.init_regs = init_regs;
        c.budget = sfunc::ChainBudget{hop_limit, 0};
        c.worker = worker;
        c.worker_core = worker % cfg_.cores;
        c.read_len = read_len;
        auto [it, inserted] = chains_.emplace(id, std::move(c));
        (void)inserted;
        return it->second;
    }

    ChainResult take_result(u64 id) {
        auto it = results_.find(id);
        if (it == results_.end()) throw std::logic_error("missing chain result");
        ChainResult out = std::move(it->second);
        results_.erase(it);
        return out;
    }

    u64 workload_end_gate() const { return workload_start_ns_ + active_spec_.duration_ns; }

    void schedule(u64 time, u8 klass, u64 payload) {
        events_.push(Event{time, klass, next_event_seq_++, payload});
    }

    void queue_cpu_job(u32 core_idx, JobClass cls, u64 duration, u64 chain_id, u64 ready_ns) {
        Core& core = cores_[core_idx];
        CpuJob job{cls, next_job_seq_++, duration, chain_id};
        if (!core.busy)
            start_job(core_idx, job, ready_ns);
        else
            core.queued.push_back(job);
    }

    void start_job(u32 core_idx, const CpuJob& job, u64 t) {
        Core& core = cores_[core_idx];
        core.busy = true;
        core.running = job;
        schedule(t + job.duration, 2, core_idx);
    }

    // ---- event processing ---------------------------------------------------

    void process_one_event() {
        const Event ev = events_.top();
        events_.pop();
        if (ev.time < now_ns_) throw std::logic_error("event time went backwards");
        now_ns_ = ev.time;
        switch (ev.klass) {
        case 0: on_invalidation_event(static_cast<FileId>(ev.payload)); break;
        case 1: on_device_done(ev.payload); break;
        case 2: on_job_done(static_cast<u32>(ev.payload)); break;
        default: throw std::logic_error("unknown event class");
        }
    }

    void drain_all() {
        while (!events_.empty()) process_one_event();
    }

    void drain_until_done(u64 chain_id) {
        while (results_.find(chain_id) == results_.end()) {
            if (events_.empty()) throw std::logic_error("simulation stalled with a chain in flight");
            process_one_event();
        }
    }

    void on_invalidation_event(FileId f) {
        stats_.invalidation_events += 1;
        File& file = files_[f];
        if (!file.installed) return;
        file.installed = false;
        file.cache.invalidate();
        close_gen_span(f, file.generation, now_ns_);
        stats_.chains_hit_by_invalidation += abort_tagged_chains(f, now_ns_);
    }

    u64 abort_tagged_chains(FileId f, u64 t) {
        // chains_ is ordered by id, so the abort sweep is deterministic.
        std::vector<u64> victims;
        for (auto& [id, c] : chains_)
            if (c.status == ChainStatus::Running && c.tagged && c.file == f) victims.push_back(id);
        for (u64 id : victims) finish_chain(chains_.at(id), ChainStatus::AbortExtent, t);
        return victims.size();
    }

    void on_device_done(u64 expected_request) {
        auto comp = device_.step();
        if (!comp || comp->request_id != expected_request)
            throw std::logic_error("device completion out of order");
        auto pit = piece_owner_.find(comp->request_id);
        if (pit == piece_owner_.end()) throw std::logic_error("completion for unknown request");
        const u64 chain_id = pit->second;
        piece_owner_.erase(pit);

        auto cit = chains_.find(chain_id);
        if (cit == chains_.end()) throw std::logic_error("completion for unknown chain");
        Chain& c = cit->second;
        c.outstanding -= 1;
        if (c.status != ChainStatus::Running) {
            // A discarded I/O of an aborted chain draining out.
            if (c.outstanding == 0) chains_.erase(cit);
            return;
        }
        if (c.outstanding > 0) return; // other split pieces still in flight
        hop_complete(c, now_ns_);
    }

    void on_job_done(u32 core_idx) {
        Core& core = cores_[core_idx];
        const CpuJob job = core.running;
        core.busy_ns += job.duration;
        stats_.cpu_busy_ns += job.duration;
        core.busy = false;

        if (job.chain_id != kCrossingJob) {
            auto it = chains_.find(job.chain_id);
            if (it != chains_.end() && it->second.status == ChainStatus::Running)
                submit_hop(it->second, now_ns_);
        }

        if (!core.queued.empty()) {
            auto best = std::min_element(core.queued.begin(), core.queued.end());
            const CpuJob next = *best;
            core.queued.erase(best);
            start_job(core_idx, next, now_ns_);
        }
    }

    // Issues the chain's current hop at time t. Driver-routed hops translate
    // through the soft-state cache and must be physically contiguous;
    // full-path hops use the file system's map and may split into several
    // physical reads.
    void submit_hop(Chain& c, u64 t) {
        File& file = files_[c.file];
        std::vector<PhysicalRun> runs;
        if (c.route == Route::Driver) {
            if (!file.installed || file.generation != c.generation) {
                finish_chain(c, ChainStatus::AbortExtent, t);
                return;
            }
            const TranslateResult tr = file.cache.translate(c.cur_off, c.read_len);
            if (!tr.is_single()) {
                finish_chain(c, tr.is_invalid() ? ChainStatus::AbortExtent : ChainStatus::Fault, t);
                return;
            }
            runs = {PhysicalRun{tr.pba, c.read_len}};
        } else {
            if (c.tagged && (!file.installed || file.generation != c.generation)) {
                finish_chain(c, ChainStatus::AbortExtent, t);
                return;
            }
            runs = file.map.physical_runs(c.cur_off, c.read_len);
            if (runs.empty()) {
                finish_chain(c, ChainStatus::Fault, t);
                return;
            }
        }
        c.hop_runs = runs;
        c.outstanding = static_cast<u32>(runs.size());
        for (const auto& run : runs) {
            DeviceRequest req;
            req.request_id = next_request_id_++;
            req.pba = run.pba;
            req.len = static_cast<u32>(run.len);
            req.submit_ns = t;
            if (c.tagged) req.tag = IoTag{c.file, c.generation, c.id};
            const u64 done = device_.submit(req);
            piece_owner_.emplace(req.request_id, c.id);
            schedule(done, 1, req.request_id);
            c.device_reads += 1;
            stats_.device_reads += 1;
        }
    }

    void hop_complete(Chain& c, u64 t) {
        c.pages_read += 1;
        stats_.pages_read += 1;

        if (c.single_read) {
            finish_chain(c, ChainStatus::Ok, t, assemble_data(c));
            return;
        }

        // The function sees the leading 512 B block of the completed page.
        const auto window = device_.peek_bytes(c.hop_runs[0].pba, static_cast<u32>(kBlockBytes));
        sfunc::ExecResult exec = sfunc::execute(*c.program, window, c.budget, c.init_regs);
        switch (exec.status) {
        case sfunc::ExecResult::Status::Return:
            finish_chain(c, ChainStatus::Ok, t, std::move(exec.buffer));
            return;
        case sfunc::ExecResult::Status::Drop:
            finish_chain(c, ChainStatus::Dropped, t);
            return;
        case sfunc::ExecResult::Status::FaultHopLimit:
            finish_chain(c, ChainStatus::AbortBound, t);
            return;
        case sfunc::ExecResult::Status::FaultOob:
        case sfunc::ExecResult::Status::FaultMisaligned:
            finish_chain(c, ChainStatus::Fault, t);
            return;
        case sfunc::ExecResult::Status::Resubmit:
            break;
        }

        c.cur_off = exec.resubmit_off;
        if (c.uring && c.mode == DispatchMode::Baseline) {
            park_for_next_round(c, t);
            return;
        }

        const LatencyProfile& p = cfg_.profile;
        switch (c.mode) {
        case DispatchMode::Baseline:
            stats_.resubmit_user += 1;
            c.route = Route::FullPath;
            queue_cpu_job(c.worker_core, JobClass::Continuation, p.software_ns(), c.id, t);
            break;
        case DispatchMode::SyscallHook:
            stats_.resubmit_syscall += 1;
            c.route = Route::FullPath;
            queue_cpu_job(c.worker_core, JobClass::Continuation,
                          p.software_ns() - p.crossing_ns - p.syscall_ns, c.id, t);
            break;
        case DispatchMode::DriverHook: {
            File& file = files_[c.file];
            if (!file.installed || file.generation != c.generation) {
                finish_chain(c, ChainStatus::AbortExtent, t);
                return;
            }
            const TranslateResult tr = file.cache.translate(c.cur_off, c.read_len);
            if (tr.is_invalid()) {
                // The function produced an offset outside the file.
                finish_chain(c, ChainStatus::Fault, t);
                return;
            }
            if (tr.is_single()) {
                stats_.resubmit_driver += 1;
                c.route = Route::Driver;
                queue_cpu_job(c.worker_core, JobClass::Continuation, p.driver_ns + p.sfunc_exec_ns, c.id, t);
            } else {
                // Split fallback: the driver cannot recycle the descriptor
                // across discontiguous extents. This hop runs as a normal
                // full-path read whose completion returns to the application;
                // the hop after it is again eligible for driver reissue.
                c.splits += 1;
                stats_.splits += 1;
                c.route = Route::FullPath;
                queue_cpu_job(c.worker_core, JobClass::Continuation, p.software_ns(), c.id, t);
            }
            break;
        }
        }
    }

    std::vector<std::byte> assemble_data(const Chain& c) {
        std::vector<std::byte> data;
        data.reserve(c.read_len);
        for (const auto& run : c.hop_runs) {
            const auto bytes = device_.peek_bytes(run.pba, static_cast<u32>(run.len));
            data.insert(data.end(), bytes.begin(), bytes.end());
        }
        return data;
    }

    static u64 value_of(const std::vector<std::byte>& b) {
        u64 v = 0;
        for (u32 i = 0; i < 8 && i < b.size(); ++i) v |= static_cast<u64>(std::to_integer<u8>(b[i])) << (8 * i);
        return v;
    }

    void finish_chain(Chain& c, ChainStatus status, u64 t, std::vector<std::byte> buffer = {}) {
        c.status = status;
        ChainResult res;
        res.chain_id = c.id;
        res.status = status;
        res.buffer = std::move(buffer);
        res.start_ns = c.start_ns;
        res.end_ns = t;
        res.latency_ns = t - c.start_ns;
        res.pages_read = c.pages_read;
        res.device_reads = c.device_reads;
        res.splits = c.splits;

        switch (status) {
        case ChainStatus::Ok:
            stats_.lookups_ok += 1;
            stats_.latencies_ns.push_back(res.latency_ns);
            if (c.check_value) {
                const bool good = res.buffer.size() == 8 && value_of(res.buffer) == mix64(c.expect_key);
                if (!good) stats_.wrong_results += 1;
            }
            break;
        case ChainStatus::Dropped: stats_.dropped += 1; break;
        case ChainStatus::AbortExtent: stats_.aborts_extent += 1; break;
        case ChainStatus::AbortBound: stats_.aborts_bound += 1; break;
        case ChainStatus::Fault: stats_.faults += 1; break;
        case ChainStatus::Running: break;
        }

        if (collect_results_) results_.emplace(c.id, std::move(res));
        notify_owner(c, t);
        if (c.outstanding == 0) chains_.erase(c.id);
    }

    // ---- batch/worker bookkeeping -------------------------------------------

    void park_for_next_round(Chain& c, u64 t) {
        c.parked = true;
        if (workload_active_) {
            Worker& w = workers_[c.worker];
            w.parked += 1;
            w.barrier_ns = std::max(w.barrier_ns, t);
            if (w.parked == w.live) resume_round(w.core, w.batch_ids, w.parked, w.barrier_ns);
        } else if (round_.active) {
            round_.parked += 1;
            round_.barrier_ns = std::max(round_.barrier_ns, t);
            if (round_.parked == round_.live) resume_round(0, round_.chain_ids, round_.parked, round_.barrier_ns);
        }
    }

    // Launch the next ring call for every parked chain of a baseline batch.
    void resume_round(u32 core, const std::vector<u64>& ids, u32& parked_counter, u64 t) {
        parked_counter = 0;
        queue_cpu_job(core, JobClass::Emission, cfg_.profile.crossing_ns, kCrossingJob, t);
        for (u64 id : ids) {
            auto it = chains_.find(id);
            if (it == chains_.end() || it->second.status != ChainStatus::Running) continue;
            Chain& c = it->second;
            if (!c.parked) continue;
            c.parked = false;
            c.route = Route::FullPath;
            stats_.resubmit_user += 1;
            queue_cpu_job(core, JobClass::Emission, cfg_.profile.software_ns() - cfg_.profile.crossing_ns, c.id, t);
        }
    }

    void notify_owner(Chain& c, u64 t) {
        if (c.uring && !workload_active_) {
            if (!round_.active) return;
            if (c.parked && round_.parked > 0) round_.parked -= 1;
            c.parked = false;
            if (round_.live > 0) round_.live -= 1;
            round_.barrier_ns = std::max(round_.barrier_ns, t);
            if (round_.live > 0 && c.mode == DispatchMode::Baseline && round_.parked == round_.live)
                resume_round(0, round_.chain_ids, round_.parked, round_.barrier_ns);
            return;
        }
        if (!workload_active_ || c.worker >= workers_.size()) return;
        Worker& w = workers_[c.worker];
        if (!c.uring) {
            if (w.inflight > 0) w.inflight -= 1;
            try_emit(w, t);
            return;
        }
        if (c.parked && w.parked > 0) w.parked -= 1;
        c.parked = false;
        if (w.live > 0) w.live -= 1;
        w.barrier_ns = std::max(w.barrier_ns, t);
        if (w.live == 0)
            start_uring_batch(w, w.barrier_ns);
        else if (c.mode == DispatchMode::Baseline && w.parked == w.live)
            resume_round(w.core, w.batch_ids, w.parked, w.barrier_ns);
    }

    void ensure_installed_for_workload() {
        File& file = files_[active_spec_.file];
        if (file.installed) return;
        file.generation += 1;
        file.cache = ExtentCache(file.map, file.generation);
        file.installed = true;
        file.program = *active_spec_.program;
        install_history_.push_back(
            GenSpan{active_spec_.file, file.generation, now_ns_, kOpenEnd, file.map.extents()});
        stats_.reinstalls += 1;
    }

    void try_emit(Worker& w, u64 t) {
        const WorkloadSpec& spec = active_spec_;
        while (w.inflight < spec.pipeline && t < workload_end_gate()) {
            if (spec.mode == DispatchMode::DriverHook) ensure_installed_for_workload();
            const u64 key = (*spec.keys)[w.rng.next() % spec.keys->size()];
            sfunc::Registers regs{};
            regs[7] = key;
            Chain& c = new_chain(spec.file, spec.mode, spec.hop_limit, spec.program, regs, w.id, spec.read_len);
            c.expect_key = key;
            c.check_value = true;
            c.cur_off = 0; // root page
            c.start_ns = t;
            w.inflight += 1;
            queue_cpu_job(w.core, JobClass::Emission, cfg_.profile.software_ns(), c.id, t);
        }
    }

    void start_uring_batch(Worker& w, u64 t) {
        const WorkloadSpec& spec = active_spec_;
        if (t >= workload_end_gate()) return;
        if (spec.mode == DispatchMode::DriverHook) ensure_installed_for_workload();
        w.batch_ids.clear();
        w.live = spec.batch;
        w.parked = 0;
        w.barrier_ns = t;
        queue_cpu_job(w.core, JobClass::Emission, cfg_.profile.crossing_ns, kCrossingJob, t);
        for (u32 i = 0; i < spec.batch; ++i) {
            const u64 key = (*spec.keys)[w.rng.next() % spec.keys->size()];
            sfunc::Registers regs{};
            regs[7] = key;
            Chain& c = new_chain(spec.file, spec.mode, spec.hop_limit, spec.program, regs, w.id, spec.read_len);
            c.uring = true;
            c.expect_key = key;
            c.check_value = true;
            c.cur_off = 0;
            c.start_ns = t;
            w.batch_ids.push_back(c.id);
            queue_cpu_job(w.core, JobClass::Emission, cfg_.profile.software_ns() - cfg_.profile.crossing_ns,
                          c.id, t);
        }
    }

    // ---- state --------------------------------------------------------------

    SimConfig cfg_;
    Device device_;
    std::vector<Core> cores_;
    std::vector<File> files_;
    std::vector<GenSpan> install_history_;

    u64 now_ns_ = 0;
    u64 next_event_seq_ = 0;
    u64 next_job_seq_ = 0;
    u64 next_chain_id_ = 1;
    u64 next_request_id_ = 1;

    std::priority_queue<Event, std::vector<Event>, std::greater<Event>> events_;
    std::map<u64, Chain> chains_;
    std::unordered_map<u64, u64> piece_owner_;
    std::unordered_map<u64, ChainResult> results_;
    bool collect_results_ = true;

    RoundState round_;

    bool workload_active_ = false;
    WorkloadSpec active_spec_;
    u64 workload_start_ns_ = 0;
    std::vector<Worker> workers_;
    WorkloadStats stats_;
    u32 default_read_len_ = 512;
};

inline WorkloadStats Simulation::run_workload(const WorkloadSpec& spec) {
    if (spec.workers < 1) throw std::invalid_argument("workers must be >= 1");
    if (spec.duration_ns == 0) throw std::invalid_argument("duration must be positive");
    if (!spec.keys || spec.keys->empty()) throw std::invalid_argument("workload needs a key population");
    if (!spec.program) throw std::invalid_argument("workload needs a program");
    if (spec.uring && spec.batch < 1) throw std::invalid_argument("uring workload needs batch >= 1");
    if (!spec.uring && spec.batch > 0) throw std::invalid_argument("batch only applies to uring workloads");
    if (!spec.uring && spec.pipeline < 1) throw std::invalid_argument("pipeline must be >= 1");
    if (auto err = sfunc::verify(*spec.program))
        throw std::invalid_argument("workload program failed verification");

    workload_active_ = true;
    collect_results_ = false;
    active_spec_ = spec;
    workload_start_ns_ = now_ns_;
    stats_ = WorkloadStats{};
    stats_.duration_ns = spec.duration_ns;
    device_.clear_log();

    std::vector<u64> busy_at_start;
    for (const auto& core : cores_) busy_at_start.push_back(core.busy_ns);

    workers_.clear();
    workers_.resize(spec.workers);
    for (u32 i = 0; i < spec.workers; ++i) {
        workers_[i].id = i;
        workers_[i].core = i % cfg_.cores;
        workers_[i].rng = SplitMix64(mix64(spec.seed ^ (0x5eedULL + i)));
    }

    if (spec.invalidate_mean_s > 0)
        for (u64 t : invalidation_times(spec.invalidate_mean_s, spec.seed, spec.duration_ns))
            schedule(workload_start_ns_ + t, 0, spec.file);

    for (auto& w : workers_) {
        if (spec.uring)
            start_uring_batch(w, now_ns_);
        else
            try_emit(w, now_ns_);
    }

    drain_all();

    stats_.end_ns = now_ns_;
    stats_.core_busy_ns.clear();
    for (std::size_t i = 0; i < cores_.size(); ++i)
        stats_.core_busy_ns.push_back(cores_[i].busy_ns - busy_at_start[i]);
    workload_active_ = false;
    collect_results_ = true;

    WorkloadStats out = std::move(stats_);
    stats_ = WorkloadStats{};
    return out;
}

} // namespace iosim::stack
