#include "guardian/scenario.hpp"

#include "guardian/client.hpp"
#include "guardian/error.hpp"

#include <charconv>
#include <chrono>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

namespace grd {

namespace {

std::vector<std::string> split_ws(std::string_view line) {
    std::vector<std::string> out;
    std::istringstream in{std::string(line)};
    std::string tok;
    while (in >> tok) out.push_back(tok);
    return out;
}

[[noreturn]] void script_error(int line, const std::string &msg) { throw Error(Errc::syntax_error, msg, line); }

std::optional<std::uint64_t> parse_uint(std::string_view s) {
    int base = 10;
    if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
        s.remove_prefix(2);
        base = 16;
    }
    std::uint64_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, base);
    if (ec != std::errc() || p != s.data() + s.size() || s.empty()) return std::nullopt;
    return v;
}

// Signed integers wrap to two's complement.
std::optional<std::uint64_t> parse_int(std::string_view s) {
    if (!s.empty() && s[0] == '-') {
        const auto v = parse_uint(s.substr(1));
        if (!v) return std::nullopt;
        return ~*v + 1;
    }
    return parse_uint(s);
}

bool is_identifier(std::string_view s) {
    if (s.empty() || !(std::isalpha(static_cast<unsigned char>(s[0])) || s[0] == '_')) return false;
    for (char c : s) {
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_') return false;
    }
    return true;
}

// `var`, `var+N`, `var-N` or an integer.
struct AddrExpr {
    std::string var;
    std::uint64_t offset = 0;
};

std::optional<AddrExpr> parse_addr_expr(std::string_view s) {
    if (auto v = parse_int(s)) return AddrExpr{{}, *v};
    const auto op = s.find_first_of("+-");
    AddrExpr e{std::string(s.substr(0, op)), 0};
    if (!is_identifier(e.var)) return std::nullopt;
    if (op != std::string_view::npos) {
        const auto off = parse_uint(s.substr(op + 1));
        if (!off) return std::nullopt;
        e.offset = s[op] == '+' ? *off : ~*off + 1;
    }
    return e;
}

struct LaunchArgToken {
    AddrExpr value;
    ArgKind kind = ArgKind::scalar32;
    float f = 0;
};

std::optional<LaunchArgToken> parse_launch_arg(std::string_view s) {
    LaunchArgToken t;
    std::string_view body = s;
    std::string_view suffix;
    if (const auto colon = s.rfind(':'); colon != std::string_view::npos) {
        body = s.substr(0, colon);
        suffix = s.substr(colon + 1);
    }
    if (suffix == "f32") {
        try {
            t.f = std::stof(std::string(body));
        } catch (...) {
            return std::nullopt;
        }
        t.kind = ArgKind::f32;
        return t;
    }
    const auto e = parse_addr_expr(body);
    if (!e) return std::nullopt;
    t.value = *e;
    if (suffix.empty()) {
        t.kind = e->var.empty() ? ArgKind::scalar32 : ArgKind::dev_addr;
    } else if (suffix == "u32") {
        t.kind = ArgKind::scalar32;
    } else if (suffix == "u64") {
        t.kind = ArgKind::scalar64;
    } else if (suffix == "addr") {
        t.kind = ArgKind::dev_addr;
    } else {
        return std::nullopt;
    }
    return t;
}

void check_var_ref(const ScenarioOp &op, const std::set<std::string> &vars, std::string_view token) {
    const auto e = parse_addr_expr(token);
    if (!e) script_error(op.line, "bad address expression '" + std::string(token) + "'");
    if (!e->var.empty() && !vars.count(e->var)) {
        script_error(op.line, "variable '" + e->var + "' used before its malloc in client " + op.client);
    }
}

void need_args(const ScenarioOp &op, std::size_t n, const char *usage) {
    if (op.args.size() != n) script_error(op.line, std::string("usage: <client> ") + usage);
}

} // namespace

std::uint64_t parse_size(std::string_view token) {
    std::uint64_t mult = 1;
    if (!token.empty()) {
        switch (token.back()) {
        case 'K': mult = 1ULL << 10; break;
        case 'M': mult = 1ULL << 20; break;
        case 'G': mult = 1ULL << 30; break;
        default: break;
        }
        if (mult != 1) token.remove_suffix(1);
    }
    const auto v = parse_uint(token);
    if (!v) throw Error(Errc::syntax_error, "bad size '" + std::string(token) + "'");
    return *v * mult;
}

std::vector<std::uint8_t> parse_hex(std::string_view token) {
    std::size_t repeat = 1;
    if (const auto star = token.find('*'); star != std::string_view::npos) {
        const auto n = parse_uint(token.substr(star + 1));
        if (!n || *n > (1u << 24)) throw Error(Errc::syntax_error, "bad repeat count in '" + std::string(token) + "'");
        repeat = static_cast<std::size_t>(*n);
        token = token.substr(0, star);
    }
    if (token.size() % 2 != 0) throw Error(Errc::syntax_error, "odd number of hex digits in '" + std::string(token) + "'");
    std::vector<std::uint8_t> unit;
    for (std::size_t i = 0; i < token.size(); i += 2) {
        std::uint8_t b = 0;
        const auto [p, ec] = std::from_chars(token.data() + i, token.data() + i + 2, b, 16);
        if (ec != std::errc() || p != token.data() + i + 2) {
            throw Error(Errc::syntax_error, "bad hex byte '" + std::string(token.substr(i, 2)) + "'");
        }
        unit.push_back(b);
    }
    std::vector<std::uint8_t> out;
    out.reserve(unit.size() * repeat);
    for (std::size_t i = 0; i < repeat; ++i) out.insert(out.end(), unit.begin(), unit.end());
    return out;
}

std::string to_hex(const std::vector<std::uint8_t> &bytes) {
    static const char *digits = "0123456789abcdef";
    std::string s;
    s.reserve(bytes.size() * 2);
    for (auto b : bytes) {
        s += digits[b >> 4];
        s += digits[b & 15];
    }
    return s;
}

ScenarioScript parse_scenario(std::string_view text, const std::filesystem::path &base_dir) {
    ScenarioScript script;
    script.base_dir = base_dir;
    std::map<std::string, std::set<std::string>> vars;
    std::set<std::string> disconnected;
    std::istringstream in{std::string(text)};
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        if (const auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
        auto toks = split_ws(raw);
        if (toks.empty()) continue;
        try {
            if (toks[0] == "client") {
                if (toks.size() != 4 || toks[2] != "partition") script_error(line_no, "usage: client <id> partition <bytes>");
                if (!is_identifier(toks[1])) script_error(line_no, "bad client id '" + toks[1] + "'");
                if (vars.count(toks[1])) script_error(line_no, "client " + toks[1] + " declared twice");
                if (!script.ops.empty()) script_error(line_no, "client declarations must precede operations");
                script.clients.push_back({toks[1], parse_size(toks[3]), line_no});
                vars[toks[1]];
                continue;
            }
            ScenarioOp op;
            op.line = line_no;
            op.client = toks[0];
            if (!vars.count(op.client)) script_error(line_no, "unknown client '" + op.client + "'");
            if (disconnected.count(op.client)) script_error(line_no, "client " + op.client + " already disconnected");
            if (toks.size() < 2) script_error(line_no, "missing operation");
            op.verb = toks[1];
            std::vector<std::string> rest(toks.begin() + 2, toks.end());
            for (std::size_t i = 0; i < rest.size(); ++i) {
                if (rest[i] != "expect") continue;
                if (i + 2 != rest.size()) script_error(line_no, "expect takes exactly one value at the end of the line");
                const auto &value = rest[i + 1];
                if (auto st = wire::status_from_name(value)) {
                    op.expect_status = *st;
                } else if (op.verb == "d2h") {
                    if (value != "*") parse_hex(value);
                    op.expect_data = value;
                } else {
                    script_error(line_no, "unknown status '" + value + "'");
                }
                rest.resize(i);
                break;
            }
            op.args = std::move(rest);
            auto &mine = vars[op.client];
            if (op.verb == "malloc") {
                need_args(op, 2, "malloc <var> <bytes>");
                if (!is_identifier(op.args[0])) script_error(line_no, "bad variable name '" + op.args[0] + "'");
                parse_size(op.args[1]);
                mine.insert(op.args[0]);
            } else if (op.verb == "free") {
                need_args(op, 1, "free <var>");
                check_var_ref(op, mine, op.args[0]);
            } else if (op.verb == "h2d") {
                need_args(op, 3, "h2d <var> <offset> <hexbytes>");
                check_var_ref(op, mine, op.args[0]);
                if (!parse_int(op.args[1])) script_error(line_no, "bad offset");
                parse_hex(op.args[2]);
            } else if (op.verb == "d2h") {
                need_args(op, 3, "d2h <var> <offset> <len> expect <hexbytes|*>");
                check_var_ref(op, mine, op.args[0]);
                if (!parse_int(op.args[1])) script_error(line_no, "bad offset");
                parse_size(op.args[2]);
                if (!op.expect_data && !op.expect_status) script_error(line_no, "d2h needs an expect clause");
                if (op.expect_data && op.expect_data != "*" && parse_hex(*op.expect_data).size() != parse_size(op.args[2])) {
                    script_error(line_no, "expected bytes do not match the read length");
                }
            } else if (op.verb == "d2d") {
                need_args(op, 5, "d2d <dstvar> <dstoff> <srcvar> <srcoff> <len>");
                check_var_ref(op, mine, op.args[0]);
                check_var_ref(op, mine, op.args[2]);
                if (!parse_int(op.args[1]) || !parse_int(op.args[3])) script_error(line_no, "bad offset");
                parse_size(op.args[4]);
            } else if (op.verb == "load") {
                need_args(op, 1, "load <path.ptx>");
            } else if (op.verb == "launch") {
                if (op.args.size() < 5 || op.args[1] != "grid" || op.args[3] != "block" ||
                    (op.args.size() > 5 && op.args[5] != "args")) {
                    script_error(line_no, "usage: <client> launch <kernel> grid <g> block <b> [args <arg>...]");
                }
                parse_size(op.args[2]);
                parse_size(op.args[4]);
                for (std::size_t i = 6; i < op.args.size(); ++i) {
                    const auto a = parse_launch_arg(op.args[i]);
                    if (!a) script_error(line_no, "bad launch argument '" + op.args[i] + "'");
                    if (!a->value.var.empty() && !mine.count(a->value.var)) {
                        script_error(line_no, "variable '" + a->value.var + "' used before its malloc in client " + op.client);
                    }
                }
            } else if (op.verb == "sync" || op.verb == "disconnect") {
                need_args(op, 0, "sync | <client> disconnect");
                if (op.verb == "disconnect") disconnected.insert(op.client);
            } else {
                script_error(line_no, "unknown operation '" + op.verb + "'");
            }
            script.ops.push_back(std::move(op));
        } catch (const Error &e) {
            if (e.line() > 0) throw;
            throw Error(e.code(), e.what(), line_no);
        }
    }
    return script;
}

ScenarioScript load_scenario(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::invalid_config, "cannot read " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_scenario(ss.str(), path.parent_path());
}

ScenarioScript solo_script(const ScenarioScript &script, const std::string &client) {
    ScenarioScript out;
    out.base_dir = script.base_dir;
    for (const auto &c : script.clients) {
        if (c.id == client) out.clients.push_back(c);
    }
    if (out.clients.empty()) throw Error(Errc::invalid_config, "no client named " + client);
    for (const auto &op : script.ops) {
        if (op.client == client) out.ops.push_back(op);
    }
    return out;
}

namespace {

struct LiveClient {
    Client conn;
    InitInfo info;
    std::map<std::string, std::uint64_t> vars;
    bool open = true;
};

class Runner {
public:
    Runner(const ScenarioScript &script, const ScenarioRunOptions &options) : script_(script), options_(options) {}

    ScenarioResult run() {
        if (!options_.connect_path) {
            auto cfg = options_.manager;
            cfg.dispatch = DispatchPolicy::on_demand;
            manager_ = std::make_unique<Manager>(cfg);
        }
        for (const auto &c : script_.clients) {
            auto conn = manager_ ? Client(manager_->connect()) : Client::connect_unix(*options_.connect_path);
            auto &live = clients_.emplace(c.id, LiveClient{std::move(conn), {}, {}, true}).first->second;
            const auto r = live.conn.init(c.partition_bytes, &live.info);
            if (!r.ok()) {
                fail(c.line, c.id + " init: " + wire::status_name(r.status) + " " + r.message());
                live.open = false;
                continue;
            }
            result_.apps[c.id] = live.info.app;
        }
        for (const auto &op : script_.ops) {
            auto &c = clients_.at(op.client);
            if (!c.open) {
                fail(op.line, op.client + " is not connected");
                continue;
            }
            try {
                execute(op, c);
            } catch (const Error &e) {
                fail(op.line, op.client + " " + op.verb + ": " + e.what());
            }
            ++result_.ops_run;
        }
        finish();
        return std::move(result_);
    }

private:
    const ScenarioScript &script_;
    const ScenarioRunOptions &options_;
    std::unique_ptr<Manager> manager_;
    std::map<std::string, LiveClient> clients_;
    ScenarioResult result_;

    void fail(int line, const std::string &msg) {
        result_.ok = false;
        result_.failures.push_back("line " + std::to_string(line) + ": " + msg);
    }

    std::uint64_t resolve(const LiveClient &c, std::string_view token) const {
        const auto e = parse_addr_expr(token).value();
        if (e.var.empty()) return e.offset;
        const auto it = c.vars.find(e.var);
        if (it == c.vars.end()) throw Error(Errc::invalid_config, "variable '" + e.var + "' has no allocation");
        return it->second + e.offset;
    }

    void check_status(const ScenarioOp &op, const Reply &r) {
        const auto want = op.expect_status.value_or(wire::Status::ok);
        if (r.status == want) return;
        std::string msg = op.client + " " + op.verb + ": expected " + wire::status_name(want) + ", got " +
                          wire::status_name(r.status);
        if (const auto text = r.message(); !text.empty()) msg += " (" + text + ")";
        fail(op.line, msg);
    }

    void execute(const ScenarioOp &op, LiveClient &c) {
        const auto &a = op.args;
        if (op.verb == "malloc") {
            std::uint64_t addr = 0;
            const auto r = c.conn.malloc(parse_size(a[1]), &addr);
            check_status(op, r);
            if (r.ok()) c.vars[a[0]] = addr;
        } else if (op.verb == "free") {
            check_status(op, c.conn.free(resolve(c, a[0])));
        } else if (op.verb == "h2d") {
            check_status(op, c.conn.h2d(resolve(c, a[0]) + *parse_int(a[1]), parse_hex(a[2])));
        } else if (op.verb == "d2h") {
            std::vector<std::uint8_t> bytes;
            const auto r = c.conn.d2h(resolve(c, a[0]) + *parse_int(a[1]), parse_size(a[2]), &bytes);
            check_status(op, r);
            if (!r.ok()) return;
            result_.reads[op.client].push_back({op.line, bytes});
            if (op.expect_data && *op.expect_data != "*") {
                const auto want = parse_hex(*op.expect_data);
                if (want != bytes) {
                    fail(op.line, op.client + " d2h: expected " + to_hex(want) + ", got " + to_hex(bytes));
                }
            }
        } else if (op.verb == "d2d") {
            check_status(op, c.conn.d2d(resolve(c, a[0]) + *parse_int(a[1]), resolve(c, a[2]) + *parse_int(a[3]),
                                        parse_size(a[4])));
        } else if (op.verb == "load") {
            auto path = std::filesystem::path(a[0]);
            if (path.is_relative()) path = script_.base_dir / path;
            std::ifstream in(path);
            if (!in) throw Error(Errc::invalid_config, "cannot read " + path.string());
            std::stringstream ss;
            ss << in.rdbuf();
            check_status(op, c.conn.load_module(ss.str()));
        } else if (op.verb == "launch") {
            wire::LaunchRequest req;
            req.name = a[0];
            req.grid = static_cast<std::uint32_t>(parse_size(a[2]));
            req.block = static_cast<std::uint32_t>(parse_size(a[4]));
            for (std::size_t i = 6; i < a.size(); ++i) {
                const auto t = parse_launch_arg(a[i]).value();
                if (t.kind == ArgKind::f32) {
                    req.args.push_back(ArgValue::f32(t.f));
                    continue;
                }
                std::uint64_t v = t.value.var.empty() ? t.value.offset : resolve(c, a[i].substr(0, a[i].rfind(':')));
                if (t.kind == ArgKind::scalar32) v &= 0xffffffffULL;
                req.args.push_back({t.kind, v});
            }
            check_status(op, c.conn.launch(req));
        } else if (op.verb == "sync") {
            std::vector<wire::TaskOutcome> outcomes;
            const auto r = c.conn.sync(&outcomes);
            check_status(op, r);
            if (!op.expect_status && r.status == wire::Status::task_failed) {
                for (const auto &o : outcomes) {
                    if (o.status != wire::Status::ok) fail(op.line, op.client + " task " + std::to_string(o.seq) + ": " + o.message);
                }
            }
        } else if (op.verb == "disconnect") {
            close_settled(c);
        }
    }

    // Closes the connection and, in-process, waits for the manager to release
    // the partition so later steps (and the log) see a settled state.
    template <class C> void close_settled(C &c) {
        const auto before = manager_ ? manager_->connected_clients() : 0;
        c.conn.close();
        c.open = false;
        for (int i = 0; manager_ && manager_->connected_clients() >= before && i < 5000; ++i) {
            std::this_thread::sleep_for(std::chrono::milliseconds(1));
        }
    }

    void finish() {
        for (auto &[id, c] : clients_) {
            if (!c.open) continue;
            std::vector<wire::TaskOutcome> outcomes;
            try {
                const auto r = c.conn.sync(&outcomes);
                for (const auto &o : outcomes) {
                    if (o.status != wire::Status::ok) fail(0, id + " unsynchronised task " + std::to_string(o.seq) + ": " + o.message);
                }
                if (r.status != wire::Status::ok && r.status != wire::Status::task_failed) {
                    fail(0, id + " final sync: " + wire::status_name(r.status));
                }
            } catch (const Error &e) {
                fail(0, id + " final sync: " + e.what());
            }
        }
        if (manager_) {
            const auto mem = manager_->memory_snapshot();
            for (const auto &[id, c] : clients_) {
                if (!c.open) continue;
                if (const auto p = manager_->partition_of(c.info.app)) result_.partitions[id] = mem.read_bytes(p->base, p->size);
            }
            result_.dispatch = manager_->dispatch_log();
        }
        // everyone but the first live client leaves one at a time; that one sends SHUTDOWN
        bool first = true;
        for (auto &[id, c] : clients_) {
            if (!c.open) continue;
            if (first) {
                first = false;
                continue;
            }
            if (manager_) close_settled(c);
        }
        for (auto &[id, c] : clients_) {
            if (!c.open) continue;
            try {
                c.conn.shutdown();
            } catch (const Error &) {
            }
            break;
        }
        if (manager_) {
            manager_->wait_shutdown();
            result_.manager_log = manager_->log_lines();
        }
    }
};

} // namespace

ScenarioResult run_scenario(const ScenarioScript &script, const ScenarioRunOptions &options) {
    return Runner(script, options).run();
}

std::string format_trace(const ScenarioResult &result) {
    std::map<AppId, std::string> names;
    for (const auto &[id, app] : result.apps) names[app] = id;
    std::ostringstream os;
    for (const auto &d : result.dispatch) {
        const auto it = names.find(d.app);
        os << "dispatch " << d.order << " client " << (it == names.end() ? std::to_string(d.app) : it->second)
           << " seq " << d.seq << ' ' << (d.kind == TaskKind::launch ? "launch " : "") << d.name
           << (d.native ? " native" : "") << ' ' << wire::status_name(d.status) << " oob_exits=" << d.oob_exits
           << " instructions=" << d.instructions << '\n';
        if (!d.trace) continue;
        for (const auto &e : d.trace->entries) {
            if (e.space == ptx::StateSpace::param) continue;
            os << "  thread " << e.thread << ' ' << access_kind_name(e.kind) << ' ' << ptx::state_space_name(e.space)
               << " 0x" << std::hex << e.address << std::dec << ' ' << e.width << " (" << e.function << " #" << e.statement
               << ")\n";
        }
    }
    return os.str();
}

} // namespace grd
