#include "guardian/manager.hpp"

#include "guardian/error.hpp"
#include "guardian/ptx/parser.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>
#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

namespace grd {

using wire::Status;

namespace {

std::vector<std::uint8_t> message_payload(const std::string &msg) {
    wire::Writer w;
    w.str(msg);
    return w.take();
}

std::string describe(const Error &e) {
    std::string out(errc_name(e.code()));
    if (e.line() > 0) out += " at line " + std::to_string(e.line());
    return out + ": " + e.what();
}

bool ends_with(std::string_view s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

// Mode of a kernel that arrived already sandboxed, from its trailing params.
std::optional<SandboxMode> infer_mode(const ptx::KernelDef &k) {
    if (k.params.empty()) return std::nullopt;
    const auto &last = k.params.back().name;
    if (ends_with(last, "_grd_mask")) return SandboxMode::fence_bitwise;
    if (ends_with(last, "_grd_inv")) return SandboxMode::fence_modulo;
    if (ends_with(last, "_grd_end")) return SandboxMode::check;
    return std::nullopt;
}

} // namespace

wire::Status status_for(Errc code) noexcept {
    switch (code) {
    case Errc::syntax_error:
    case Errc::address_size_32: return Status::syntax_error;
    case Errc::unsupported_feature:
    case Errc::already_sandboxed: return Status::unsupported;
    case Errc::device_oom: return Status::device_oom;
    case Errc::partition_oom: return Status::partition_oom;
    case Errc::not_power_of_two:
    case Errc::invalid_size: return Status::invalid_size;
    case Errc::unknown_alloc: return Status::unknown_alloc;
    case Errc::unknown_app: return Status::no_partition;
    case Errc::duplicate_app: return Status::already_initialized;
    case Errc::unknown_kernel: return Status::unknown_kernel;
    case Errc::device_fault:
    case Errc::step_limit_exceeded:
    case Errc::type_fault: return Status::task_failed;
    case Errc::arity_mismatch:
    case Errc::invalid_config:
    case Errc::protocol_error: return Status::bad_message;
    }
    return Status::bad_message;
}

Manager::Manager(ManagerConfig config)
    : config_(std::move(config)), table_(config_.device_base, config_.device_size),
      memory_(config_.device_base, config_.device_size) {
    if (config_.modules_dir) preload_modules(*config_.modules_dir);
    dispatcher_ = std::thread([this] { dispatcher_loop(); });
}

Manager::~Manager() {
    stop();
    if (dispatcher_.joinable()) dispatcher_.join();
    std::vector<std::thread> readers;
    {
        std::lock_guard lock(mu_);
        readers.swap(readers_);
    }
    for (auto &t : readers) t.join();
}

void Manager::note(std::string line) {
    if (messages_.size() < 10000) messages_.push_back(line);
}

std::vector<std::string> Manager::log_lines() const {
    std::lock_guard lock(mu_);
    return messages_;
}

std::vector<DispatchRecord> Manager::dispatch_log() const {
    std::lock_guard lock(mu_);
    return log_;
}

std::size_t Manager::connected_clients() const {
    std::lock_guard lock(mu_);
    return static_cast<std::size_t>(std::count_if(sessions_.begin(), sessions_.end(), [](const auto &kv) {
        return kv.second->app.has_value() && !kv.second->closed;
    }));
}

SimMemory Manager::memory_snapshot() const {
    std::lock_guard lock(mu_);
    return memory_;
}

std::optional<PartitionRecord> Manager::partition_of(AppId app) const {
    std::lock_guard lock(mu_);
    const auto *p = table_.find(app);
    if (!p) return std::nullopt;
    return *p;
}

// ---------------------------------------------------------------------------
// Connections

void Manager::serve_fd(int fd) {
    std::lock_guard lock(mu_);
    if (stopping_) {
        ::close(fd);
        return;
    }
    auto s = std::make_shared<Session>();
    s->id = next_session_++;
    s->fd = fd;
    sessions_.emplace(s->id, s);
    readers_.emplace_back([this, s] { reader_loop(s); });
}

int Manager::connect() {
    int fds[2];
    if (::socketpair(AF_UNIX, SOCK_STREAM, 0, fds) != 0) throw Error(Errc::protocol_error, "socketpair failed");
    serve_fd(fds[0]);
    return fds[1];
}

void Manager::listen_and_serve(const std::string &path) {
    sockaddr_un addr{};
    addr.sun_family = AF_UNIX;
    if (path.size() >= sizeof(addr.sun_path)) throw Error(Errc::invalid_config, "socket path too long: " + path);
    std::copy(path.begin(), path.end(), addr.sun_path);
    const int fd = ::socket(AF_UNIX, SOCK_STREAM, 0);
    if (fd < 0) throw Error(Errc::invalid_config, "socket() failed");
    ::unlink(path.c_str());
    if (::bind(fd, reinterpret_cast<sockaddr *>(&addr), sizeof(addr)) != 0 || ::listen(fd, 16) != 0) {
        ::close(fd);
        throw Error(Errc::invalid_config, "cannot listen on " + path);
    }
    {
        std::lock_guard lock(mu_);
        if (stopping_) {
            ::close(fd);
            return;
        }
        listen_fd_ = fd;
    }
    for (;;) {
        const int c = ::accept(fd, nullptr, nullptr);
        if (c < 0) {
            if (errno == EINTR) continue;
            break;
        }
        serve_fd(c);
    }
    {
        std::lock_guard lock(mu_);
        listen_fd_ = -1;
    }
    ::close(fd);
    ::unlink(path.c_str());
}

void Manager::wait_shutdown() {
    std::unique_lock lock(mu_);
    done_cv_.wait(lock, [&] { return stopping_; });
}

void Manager::stop() {
    std::lock_guard lock(mu_);
    if (stopping_) return;
    stopping_ = true;
    for (auto &[id, s] : sessions_) ::shutdown(s->fd, SHUT_RDWR);
    if (listen_fd_ >= 0) ::shutdown(listen_fd_, SHUT_RDWR);
    work_cv_.notify_all();
    done_cv_.notify_all();
}

void Manager::reader_loop(std::shared_ptr<Session> s) {
    for (;;) {
        std::optional<wire::Frame> frame;
        try {
            frame = wire::read_frame(s->fd);
        } catch (const Error &e) {
            std::lock_guard lock(mu_);
            note("session " + std::to_string(s->id) + ": " + e.what());
            break;
        }
        if (!frame) break;
        Reply reply;
        bool shutdown = false;
        {
            std::unique_lock lock(mu_);
            try {
                reply = handle(*s, *frame, lock);
            } catch (const Error &e) {
                reply = {status_for(e.code()), message_payload(describe(e))};
            }
            shutdown = frame->code == static_cast<std::uint16_t>(wire::MsgType::shutdown) && reply.first == Status::ok;
        }
        try {
            wire::write_frame(s->fd, static_cast<std::uint16_t>(reply.first), reply.second);
        } catch (const Error &e) {
            std::lock_guard lock(mu_);
            note("session " + std::to_string(s->id) + ": " + e.what());
            break;
        }
        if (shutdown) stop();
    }
    disconnect(*s);
}

void Manager::disconnect(Session &s) {
    std::unique_lock lock(mu_);
    s.closed = true;
    s.queue.clear();
    done_cv_.wait(lock, [&] { return !s.in_flight; });
    if (s.app && table_.find(*s.app)) {
        table_.destroy_partition(*s.app);
        note("app " + std::to_string(*s.app) + " disconnected; partition released");
    }
    sessions_.erase(s.id);
    ::close(s.fd);
    s.fd = -1;
    done_cv_.notify_all();
    work_cv_.notify_all();
}

void Manager::wait_queue_drained(Session &s, std::unique_lock<std::mutex> &lock) {
    ++s.waiting;
    work_cv_.notify_all();
    done_cv_.wait(lock, [&] { return (s.queue.empty() && !s.in_flight) || stopping_; });
    --s.waiting;
}

Manager::Reply Manager::handle(Session &s, const wire::Frame &f, std::unique_lock<std::mutex> &lock) {
    using wire::MsgType;
    const auto type = static_cast<MsgType>(f.code);
    if (f.code < 1 || f.code > 10) {
        return {Status::bad_message, message_payload("unknown message type " + std::to_string(f.code))};
    }
    wire::Reader r(f.payload);
    try {
        if (type == MsgType::launch) return do_launch(s, f);
        if (type == MsgType::memcpy_d2d) return do_d2d(s, r);
        wait_queue_drained(s, lock);
        switch (type) {
        case MsgType::init: return do_init(s, r);
        case MsgType::malloc: return do_malloc(s, r);
        case MsgType::free: return do_free(s, r);
        case MsgType::memcpy_h2d: return do_h2d(s, r);
        case MsgType::memcpy_d2h: return do_d2h(s, r);
        case MsgType::load_module: return do_load(s, r);
        case MsgType::sync: {
            r.expect_done();
            auto outcomes = std::move(s.outcomes);
            s.outcomes.clear();
            const bool failed = std::any_of(outcomes.begin(), outcomes.end(),
                                            [](const wire::TaskOutcome &o) { return o.status != Status::ok; });
            return {failed ? Status::task_failed : Status::ok, wire::encode_outcomes(outcomes)};
        }
        case MsgType::shutdown: {
            r.expect_done();
            shutdown_requested_ = true;
            work_cv_.notify_all();
            done_cv_.wait(lock, [&] {
                return stopping_ || std::all_of(sessions_.begin(), sessions_.end(), [](const auto &kv) {
                           return kv.second->queue.empty() && !kv.second->in_flight;
                       });
            });
            note("shutdown requested by session " + std::to_string(s.id));
            return {Status::ok, {}};
        }
        default: break;
        }
    } catch (const Error &e) {
        return {status_for(e.code()), message_payload(describe(e))};
    }
    return {Status::bad_message, message_payload("unhandled message")};
}

Manager::Reply Manager::do_init(Session &s, wire::Reader &r) {
    const auto bytes = r.u64();
    r.expect_done();
    if (s.app) return {Status::already_initialized, message_payload("session already owns a partition")};
    const auto app = next_app_;
    const auto &p = table_.create_partition(app, bytes);
    ++next_app_;
    s.app = app;
    note("app " + std::to_string(app) + " partition base=0x" + [&] {
        std::ostringstream os;
        os << std::hex << p.base << " size=0x" << p.size;
        return os.str();
    }());
    wire::Writer w;
    w.u32(app).u64(p.base).u64(p.size);
    return {Status::ok, w.take()};
}

Manager::Reply Manager::do_malloc(Session &s, wire::Reader &r) {
    const auto size = r.u64();
    r.expect_done();
    if (!s.app) return {Status::no_partition, message_payload("INIT first")};
    wire::Writer w;
    w.u64(table_.device_malloc(*s.app, size));
    return {Status::ok, w.take()};
}

Manager::Reply Manager::do_free(Session &s, wire::Reader &r) {
    const auto addr = r.u64();
    r.expect_done();
    if (!s.app) return {Status::no_partition, message_payload("INIT first")};
    table_.device_free(*s.app, addr);
    return {Status::ok, {}};
}

Manager::Reply Manager::do_h2d(Session &s, wire::Reader &r) {
    const auto dst = r.u64();
    const auto len = r.u64();
    const auto data = r.bytes(len);
    r.expect_done();
    if (!s.app) return {Status::no_partition, message_payload("INIT first")};
    if (!table_.check_range(*s.app, dst, len)) {
        return {Status::oob_transfer, message_payload("destination outside the caller's partition")};
    }
    memory_.write(dst, data);
    return {Status::ok, {}};
}

Manager::Reply Manager::do_d2h(Session &s, wire::Reader &r) {
    const auto src = r.u64();
    const auto len = r.u64();
    r.expect_done();
    if (!s.app) return {Status::no_partition, message_payload("INIT first")};
    if (len > wire::kMaxPayload) return {Status::invalid_size, message_payload("read too large")};
    if (!table_.check_range(*s.app, src, len)) {
        return {Status::oob_transfer, message_payload("source outside the caller's partition")};
    }
    return {Status::ok, memory_.read_bytes(src, len)};
}

Manager::Reply Manager::do_d2d(Session &s, wire::Reader &r) {
    Task t;
    t.kind = TaskKind::d2d;
    t.dst = r.u64();
    t.src = r.u64();
    t.len = r.u64();
    r.expect_done();
    if (!s.app) return {Status::no_partition, message_payload("INIT first")};
    if (!table_.check_range(*s.app, t.src, t.len) || !table_.check_range(*s.app, t.dst, t.len)) {
        return {Status::oob_transfer, message_payload("copy range outside the caller's partition")};
    }
    t.seq = s.next_seq++;
    s.queue.push_back(std::move(t));
    work_cv_.notify_all();
    wire::Writer w;
    w.u64(s.queue.back().seq);
    return {Status::ok, w.take()};
}

Manager::Reply Manager::do_load(Session &s, wire::Reader &r) {
    const auto text = r.rest_as_string();
    const auto names = register_module(text, "session " + std::to_string(s.id));
    wire::Writer w;
    w.u32(static_cast<std::uint32_t>(names.size()));
    for (const auto &n : names) w.str(n);
    return {Status::ok, w.take()};
}

Manager::Reply Manager::do_launch(Session &s, const wire::Frame &f) {
    auto req = wire::decode_launch(f.payload);
    if (!s.app) return {Status::no_partition, message_payload("INIT first")};
    const auto *entry = symbols_.lookup(req.name);
    if (!entry) return {Status::unknown_kernel, message_payload("no kernel named " + req.name)};
    const auto fence = entry->mode ? fence_param_count({*entry->mode, false}) : 0;
    const auto want = entry->sandboxed.arity() - fence;
    if (req.args.size() != want) {
        return {Status::bad_message, message_payload("kernel " + req.name + " takes " + std::to_string(want) +
                                                     " arguments, got " + std::to_string(req.args.size()))};
    }
    Task t;
    t.kind = TaskKind::launch;
    t.launch = std::move(req);
    t.seq = s.next_seq++;
    s.queue.push_back(std::move(t));
    work_cv_.notify_all();
    wire::Writer w;
    w.u64(s.queue.back().seq);
    return {Status::ok, w.take()};
}

std::vector<std::string> Manager::register_module(const std::string &text, const std::string &origin) {
    const auto module = ptx::parse_module(text);
    const auto native = make_loaded_module(module);
    std::shared_ptr<const LoadedModule> runnable = native;
    std::optional<SandboxMode> mode;
    if (!config_.unprotected) {
        runnable = make_loaded_module(sandbox_module(module, config_.patch).module);
        mode = config_.patch.mode;
    }
    std::vector<std::string> names;
    for (const auto *k : module.entries()) {
        if (k->declaration_only) continue;
        SymbolEntry entry{find_kernel(runnable, k->name), std::nullopt, mode};
        if (mode) entry.native = find_kernel(native, k->name);
        if (symbols_.insert(k->name, std::move(entry))) note("kernel " + k->name + " replaced by " + origin);
        names.push_back(k->name);
    }
    return names;
}

std::size_t Manager::preload_modules(const std::filesystem::path &dir) {
    std::vector<std::filesystem::path> files;
    for (const auto &e : std::filesystem::recursive_directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".ptx") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::lock_guard lock(mu_);
    std::size_t count = 0;
    for (const auto &f : files) {
        std::ifstream in(f);
        std::stringstream ss;
        ss << in.rdbuf();
        try {
            count += register_module(ss.str(), f.string()).size();
        } catch (const Error &e) {
            if (e.code() != Errc::already_sandboxed || config_.unprotected) {
                note(f.string() + ": " + describe(e));
                continue;
            }
            // trusted pre-patched input: keep it as is
            const auto module = ptx::parse_module(ss.str());
            const auto loaded = make_loaded_module(module);
            for (const auto *k : module.entries()) {
                if (k->declaration_only) continue;
                const auto mode = infer_mode(*k);
                if (!mode) {
                    note(f.string() + ": cannot tell the sandbox mode of " + k->name);
                    continue;
                }
                if (symbols_.insert(k->name, SymbolEntry{find_kernel(loaded, k->name), std::nullopt, mode})) {
                    note("kernel " + k->name + " replaced by " + f.string());
                }
                ++count;
            }
        }
    }
    return count;
}

// ---------------------------------------------------------------------------
// Dispatch

bool Manager::dispatch_wanted() const {
    return std::any_of(sessions_.begin(), sessions_.end(), [&](const auto &kv) {
        const auto &s = *kv.second;
        if (s.queue.empty()) return false;
        return config_.dispatch == DispatchPolicy::eager || shutdown_requested_ ||
               std::any_of(sessions_.begin(), sessions_.end(), [](const auto &o) { return o.second->waiting > 0; });
    });
}

std::shared_ptr<Manager::Session> Manager::next_session_with_work() {
    auto it = sessions_.upper_bound(rr_cursor_);
    for (std::size_t n = 0; n <= sessions_.size(); ++n, ++it) {
        if (it == sessions_.end()) it = sessions_.begin();
        if (it == sessions_.end()) break;
        if (!it->second->queue.empty()) {
            rr_cursor_ = it->first;
            return it->second;
        }
    }
    return nullptr;
}

void Manager::dispatcher_loop() {
    std::unique_lock lock(mu_);
    for (;;) {
        work_cv_.wait(lock, [&] { return stopping_ || dispatch_wanted(); });
        if (stopping_) break;
        auto s = next_session_with_work();
        if (!s) continue;
        Task task = std::move(s->queue.front());
        s->queue.pop_front();
        s->in_flight = true;
        DispatchRecord rec;
        rec.order = log_.size();
        rec.session = s->id;
        rec.app = s->app.value_or(0);
        rec.seq = task.seq;
        rec.kind = task.kind;
        rec.name = task.kind == TaskKind::launch ? task.launch.name : "d2d";
        run_task(*s, task, rec);
        s->outcomes.push_back({rec.seq, rec.status, rec.message});
        s->in_flight = false;
        log_.push_back(std::move(rec));
        done_cv_.notify_all();
    }
}

void Manager::run_task(Session &s, Task &t, DispatchRecord &rec) {
    try {
        const auto &part = table_.partition(s.app.value());
        if (t.kind == TaskKind::d2d) {
            const auto bytes = memory_.read_bytes(t.src, t.len);
            memory_.write(t.dst, bytes);
            return;
        }
        const auto *entry = symbols_.lookup(t.launch.name);
        if (!entry) throw Error(Errc::unknown_kernel, "no kernel named " + t.launch.name);
        LaunchConfig cfg{t.launch.grid, t.launch.block, t.launch.args, config_.step_limit};
        const KernelHandle *handle = &entry->sandboxed;
        const bool solo = config_.native_when_solo && entry->native &&
                          std::count_if(sessions_.begin(), sessions_.end(), [](const auto &kv) {
                              return kv.second->app.has_value() && !kv.second->closed;
                          }) == 1;
        if (solo) {
            handle = &*entry->native;
            rec.native = true;
        } else if (entry->mode) {
            for (auto v : fence_arguments({*entry->mode, config_.patch.inline_reciprocal}, part.base, part.size)) {
                cfg.args.push_back(ArgValue::u64(v));
            }
        }
        auto trace = launch(*handle, cfg, memory_);
        rec.oob_exits = trace.oob_exits;
        rec.instructions = trace.instructions;
        if (config_.record_traces) rec.trace = std::move(trace);
    } catch (const Error &e) {
        rec.status = e.code() == Errc::unknown_kernel ? Status::unknown_kernel : Status::task_failed;
        rec.message = describe(e);
    }
}

} // namespace grd
