#include "guardian/wire.hpp"

#include "guardian/error.hpp"

#include <array>
#include <cerrno>
#include <cstring>
#include <sys/socket.h>
#include <unistd.h>

namespace grd::wire {

namespace {

constexpr std::array<const char *, 13> kStatusNames = {
    "OK",           "BAD_MESSAGE",   "NO_PARTITION",  "OOB_TRANSFER",  "UNKNOWN_KERNEL",
    "SYNTAX_ERROR", "DEVICE_OOM",    "PARTITION_OOM", "INVALID_SIZE",  "UNKNOWN_ALLOC",
    "TASK_FAILED",  "ALREADY_INITIALIZED", "UNSUPPORTED",
};

// false on EOF before the first byte
bool read_exact(int fd, std::uint8_t *buf, std::size_t n, bool eof_ok) {
    std::size_t got = 0;
    while (got < n) {
        const auto r = ::read(fd, buf + got, n - got);
        if (r < 0 && errno == EINTR) continue;
        if (r < 0) throw Error(Errc::protocol_error, std::string("read failed: ") + std::strerror(errno));
        if (r == 0) {
            if (got == 0 && eof_ok) return false;
            throw Error(Errc::protocol_error, "connection closed inside a frame");
        }
        got += static_cast<std::size_t>(r);
    }
    return true;
}

void write_all(int fd, const std::uint8_t *buf, std::size_t n) {
    while (n > 0) {
        const auto r = ::send(fd, buf, n, MSG_NOSIGNAL);
        if (r < 0 && errno == EINTR) continue;
        if (r < 0) throw Error(Errc::protocol_error, std::string("write failed: ") + std::strerror(errno));
        buf += r;
        n -= static_cast<std::size_t>(r);
    }
}

} // namespace

const char *status_name(Status s) noexcept {
    const auto i = static_cast<std::size_t>(s);
    return i < kStatusNames.size() ? kStatusNames[i] : "UNKNOWN_STATUS";
}

std::optional<Status> status_from_name(std::string_view name) noexcept {
    for (std::size_t i = 0; i < kStatusNames.size(); ++i) {
        if (name == kStatusNames[i]) return static_cast<Status>(i);
    }
    return std::nullopt;
}

const char *msg_type_name(MsgType t) noexcept {
    switch (t) {
    case MsgType::init: return "INIT";
    case MsgType::malloc: return "MALLOC";
    case MsgType::free: return "FREE";
    case MsgType::memcpy_h2d: return "MEMCPY_H2D";
    case MsgType::memcpy_d2h: return "MEMCPY_D2H";
    case MsgType::memcpy_d2d: return "MEMCPY_D2D";
    case MsgType::load_module: return "LOAD_MODULE";
    case MsgType::launch: return "LAUNCH";
    case MsgType::sync: return "SYNC";
    case MsgType::shutdown: return "SHUTDOWN";
    }
    return "UNKNOWN";
}

std::vector<std::uint8_t> encode_frame(std::uint16_t code, std::span<const std::uint8_t> payload) {
    if (payload.size() > kMaxPayload) throw Error(Errc::protocol_error, "payload too large");
    Writer w;
    w.u32(static_cast<std::uint32_t>(payload.size())).u16(code).bytes(payload);
    return w.take();
}

std::optional<Frame> read_frame(int fd) {
    std::array<std::uint8_t, 6> header{};
    if (!read_exact(fd, header.data(), header.size(), true)) return std::nullopt;
    Reader r(header);
    const auto len = r.u32();
    Frame f;
    f.code = r.u16();
    if (len > kMaxPayload) throw Error(Errc::protocol_error, "frame length " + std::to_string(len) + " over limit");
    f.payload.resize(len);
    if (len > 0) read_exact(fd, f.payload.data(), len, false);
    return f;
}

void write_frame(int fd, std::uint16_t code, std::span<const std::uint8_t> payload) {
    const auto bytes = encode_frame(code, payload);
    write_all(fd, bytes.data(), bytes.size());
}

Writer &Writer::u8(std::uint8_t v) {
    out_.push_back(v);
    return *this;
}

Writer &Writer::u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    return *this;
}

Writer &Writer::u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    return *this;
}

Writer &Writer::u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    return *this;
}

Writer &Writer::bytes(std::span<const std::uint8_t> b) {
    out_.insert(out_.end(), b.begin(), b.end());
    return *this;
}

Writer &Writer::str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
    return *this;
}

std::span<const std::uint8_t> Reader::take(std::uint64_t n) {
    if (n > in_.size() - pos_) throw Error(Errc::protocol_error, "payload too short");
    auto s = in_.subspan(pos_, static_cast<std::size_t>(n));
    pos_ += static_cast<std::size_t>(n);
    return s;
}

std::uint8_t Reader::u8() { return take(1)[0]; }

std::uint16_t Reader::u16() {
    const auto s = take(2);
    return static_cast<std::uint16_t>(s[0] | (s[1] << 8));
}

std::uint32_t Reader::u32() {
    const auto s = take(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | s[static_cast<std::size_t>(i)];
    return v;
}

std::uint64_t Reader::u64() {
    const auto s = take(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | s[static_cast<std::size_t>(i)];
    return v;
}

std::vector<std::uint8_t> Reader::bytes(std::uint64_t n) {
    const auto s = take(n);
    return {s.begin(), s.end()};
}

std::string Reader::str() {
    const auto s = take(u32());
    return {s.begin(), s.end()};
}

std::string Reader::rest_as_string() {
    const auto s = take(in_.size() - pos_);
    return {s.begin(), s.end()};
}

void Reader::expect_done() const {
    if (!done()) throw Error(Errc::protocol_error, "trailing bytes in payload");
}

std::vector<std::uint8_t> encode_launch(const LaunchRequest &r) {
    Writer w;
    w.str(r.name).u32(r.grid).u32(r.block).u32(static_cast<std::uint32_t>(r.args.size()));
    for (const auto &a : r.args) w.u8(static_cast<std::uint8_t>(a.kind)).u64(a.bits);
    return w.take();
}

LaunchRequest decode_launch(std::span<const std::uint8_t> payload) {
    Reader r(payload);
    LaunchRequest out;
    out.name = r.str();
    out.grid = r.u32();
    out.block = r.u32();
    const auto n = r.u32();
    if (n > 4096) throw Error(Errc::protocol_error, "too many launch arguments");
    for (std::uint32_t i = 0; i < n; ++i) {
        const auto kind = r.u8();
        if (kind > static_cast<std::uint8_t>(ArgKind::dev_addr)) throw Error(Errc::protocol_error, "bad argument kind");
        out.args.push_back({static_cast<ArgKind>(kind), r.u64()});
    }
    r.expect_done();
    return out;
}

std::vector<std::uint8_t> encode_outcomes(const std::vector<TaskOutcome> &outcomes) {
    Writer w;
    w.u32(static_cast<std::uint32_t>(outcomes.size()));
    for (const auto &o : outcomes) w.u64(o.seq).u16(static_cast<std::uint16_t>(o.status)).str(o.message);
    return w.take();
}

std::vector<TaskOutcome> decode_outcomes(std::span<const std::uint8_t> payload) {
    Reader r(payload);
    const auto n = r.u32();
    if (n > payload.size()) throw Error(Errc::protocol_error, "outcome count exceeds payload");
    std::vector<TaskOutcome> out(n);
    for (auto &o : out) {
        o.seq = r.u64();
        o.status = static_cast<Status>(r.u16());
        o.message = r.str();
    }
    r.expect_done();
    return out;
}

} // namespace grd::wire
