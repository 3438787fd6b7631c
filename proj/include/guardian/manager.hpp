#pragma once

// grdManager: owns the simulated device, the partition bounds table and the
// symbol table. Each connection gets a reader thread; LAUNCH and D2D are queued
// per client and executed by one dispatch thread visiting the queues
// round-robin. Everything else runs on the reader thread under the state lock,
// after the client's own queue has drained.

#include "guardian/allocator.hpp"
#include "guardian/error.hpp"
#include "guardian/interp.hpp"
#include "guardian/patcher.hpp"
#include "guardian/wire.hpp"

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace grd {

enum class DispatchPolicy : std::uint8_t {
    eager,     // run tasks as soon as any queue is non-empty
    on_demand, // run tasks only while some client waits on its queue (deterministic)
};

struct ManagerConfig {
    std::uint64_t device_base = kDefaultDeviceBase;
    std::uint64_t device_size = kDefaultDeviceSize;
    PatchOptions patch;
    bool unprotected = false;      // register modules unpatched and launch them as-is
    bool native_when_solo = false; // launch the native variant while a single client is connected
    DispatchPolicy dispatch = DispatchPolicy::eager;
    std::uint64_t step_limit = kDefaultStepLimit;
    bool record_traces = false;    // keep the AccessTrace of every launch in the dispatch log
    std::optional<std::filesystem::path> modules_dir;
};

enum class TaskKind : std::uint8_t { launch, d2d };

struct DispatchRecord {
    std::uint64_t order = 0;  // global dispatch index
    std::uint64_t session = 0;
    AppId app = 0;
    std::uint64_t seq = 0;    // per-client submission index
    TaskKind kind = TaskKind::launch;
    std::string name;         // kernel name, or "d2d"
    bool native = false;
    wire::Status status = wire::Status::ok;
    std::string message;
    std::uint64_t oob_exits = 0;
    std::uint64_t instructions = 0;
    std::optional<AccessTrace> trace;
};

class Manager {
public:
    explicit Manager(ManagerConfig config = {});
    ~Manager();
    Manager(const Manager &) = delete;
    Manager &operator=(const Manager &) = delete;

    const ManagerConfig &config() const noexcept { return config_; }

    // Serves one already-connected stream socket on a new reader thread. The
    // manager owns and eventually closes `fd`.
    void serve_fd(int fd);

    // In-process connection: returns the client end of a socketpair.
    int connect();

    // Accepts on a unix socket at `path` until SHUTDOWN or stop().
    void listen_and_serve(const std::string &path);

    // Blocks until a client sent SHUTDOWN and the queues drained.
    void wait_shutdown();
    void stop();

    std::vector<DispatchRecord> dispatch_log() const;
    std::vector<std::string> log_lines() const;
    std::size_t connected_clients() const;

    // Registers every *.ptx under `dir` (patched unless unprotected). Returns
    // the number of kernels registered.
    std::size_t preload_modules(const std::filesystem::path &dir);

    // Snapshot of device memory; for tests and grd-run --trace.
    SimMemory memory_snapshot() const;
    std::optional<PartitionRecord> partition_of(AppId app) const;

private:
    struct Task {
        std::uint64_t seq = 0;
        TaskKind kind = TaskKind::launch;
        wire::LaunchRequest launch;
        std::uint64_t dst = 0, src = 0, len = 0;
    };
    struct Session {
        std::uint64_t id = 0;
        int fd = -1;
        std::optional<AppId> app;
        std::deque<Task> queue;
        bool in_flight = false;
        unsigned waiting = 0;
        std::uint64_t next_seq = 0;
        std::vector<wire::TaskOutcome> outcomes; // since last SYNC
        bool closed = false;
    };
    using Reply = std::pair<wire::Status, std::vector<std::uint8_t>>;

    ManagerConfig config_;
    mutable std::mutex mu_;
    std::condition_variable work_cv_;  // dispatcher wakeups
    std::condition_variable done_cv_;  // queue drained / task finished
    PartitionBoundsTable table_;
    SimMemory memory_;
    SymbolTable symbols_;
    std::map<std::uint64_t, std::shared_ptr<Session>> sessions_; // cyclic order = id order
    std::uint64_t next_session_ = 1;
    AppId next_app_ = 1;
    std::uint64_t rr_cursor_ = 0; // session id dispatched last
    std::vector<DispatchRecord> log_;
    std::vector<std::string> messages_;
    bool shutdown_requested_ = false;
    bool stopping_ = false;
    int listen_fd_ = -1;
    std::thread dispatcher_;
    std::vector<std::thread> readers_;

    void reader_loop(std::shared_ptr<Session> s);
    Reply handle(Session &s, const wire::Frame &f, std::unique_lock<std::mutex> &lock);
    void wait_queue_drained(Session &s, std::unique_lock<std::mutex> &lock);
    void dispatcher_loop();
    bool dispatch_wanted() const;
    std::shared_ptr<Session> next_session_with_work();
    void run_task(Session &s, Task &t, DispatchRecord &rec);
    void disconnect(Session &s);
    std::vector<std::string> register_module(const std::string &text, const std::string &origin);
    void note(std::string line);

    Reply do_init(Session &s, wire::Reader &r);
    Reply do_malloc(Session &s, wire::Reader &r);
    Reply do_free(Session &s, wire::Reader &r);
    Reply do_h2d(Session &s, wire::Reader &r);
    Reply do_d2h(Session &s, wire::Reader &r);
    Reply do_d2d(Session &s, wire::Reader &r);
    Reply do_load(Session &s, wire::Reader &r);
    Reply do_launch(Session &s, const wire::Frame &f);
};

wire::Status status_for(Errc code) noexcept;

} // namespace grd
