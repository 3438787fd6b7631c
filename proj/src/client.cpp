#include "guardian/client.hpp"

#include "guardian/error.hpp"

#include <algorithm>
#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

namespace grd {

using wire::MsgType;

std::string Reply::message() const {
    if (ok() || payload.empty()) return {};
    try {
        wire::Reader r(payload);
        return r.str();
    } catch (const Error &) {
        return {};
    }
}

Client Client::connect_unix(const std::string &path) {
    sockaddr_un addr{};
    addr.sun_family = AF_UNIX;
    if (path.size() >= sizeof(addr.sun_path)) throw Error(Errc::invalid_config, "socket path too long: " + path);
    std::copy(path.begin(), path.end(), addr.sun_path);
    const int fd = ::socket(AF_UNIX, SOCK_STREAM, 0);
    if (fd < 0 || ::connect(fd, reinterpret_cast<sockaddr *>(&addr), sizeof(addr)) != 0) {
        if (fd >= 0) ::close(fd);
        throw Error(Errc::protocol_error, "cannot connect to " + path);
    }
    return Client(fd);
}

Client::~Client() { close(); }

Client &Client::operator=(Client &&other) noexcept {
    if (this != &other) {
        close();
        fd_ = other.fd_;
        other.fd_ = -1;
    }
    return *this;
}

void Client::close() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
}

Reply Client::raw(std::uint16_t code, const std::vector<std::uint8_t> &payload) {
    if (fd_ < 0) throw Error(Errc::protocol_error, "client is closed");
    wire::write_frame(fd_, code, payload);
    auto frame = wire::read_frame(fd_);
    if (!frame) throw Error(Errc::protocol_error, "manager closed the connection");
    return {static_cast<wire::Status>(frame->code), std::move(frame->payload)};
}

Reply Client::request(MsgType type, const std::vector<std::uint8_t> &payload) {
    return raw(static_cast<std::uint16_t>(type), payload);
}

Reply Client::init(std::uint64_t bytes, InitInfo *info) {
    wire::Writer w;
    w.u64(bytes);
    auto r = request(MsgType::init, w.data());
    if (r.ok() && info) {
        wire::Reader rd(r.payload);
        info->app = rd.u32();
        info->base = rd.u64();
        info->size = rd.u64();
    }
    return r;
}

Reply Client::malloc(std::uint64_t size, std::uint64_t *addr) {
    wire::Writer w;
    w.u64(size);
    auto r = request(MsgType::malloc, w.data());
    if (r.ok() && addr) *addr = wire::Reader(r.payload).u64();
    return r;
}

Reply Client::free(std::uint64_t addr) {
    wire::Writer w;
    w.u64(addr);
    return request(MsgType::free, w.data());
}

Reply Client::h2d(std::uint64_t dst, const std::vector<std::uint8_t> &bytes) {
    wire::Writer w;
    w.u64(dst).u64(bytes.size()).bytes(bytes);
    return request(MsgType::memcpy_h2d, w.data());
}

Reply Client::d2h(std::uint64_t src, std::uint64_t len, std::vector<std::uint8_t> *out) {
    wire::Writer w;
    w.u64(src).u64(len);
    auto r = request(MsgType::memcpy_d2h, w.data());
    if (r.ok() && out) *out = r.payload;
    return r;
}

Reply Client::d2d(std::uint64_t dst, std::uint64_t src, std::uint64_t len) {
    wire::Writer w;
    w.u64(dst).u64(src).u64(len);
    return request(MsgType::memcpy_d2d, w.data());
}

Reply Client::load_module(const std::string &ptx_text) {
    return request(MsgType::load_module, std::vector<std::uint8_t>(ptx_text.begin(), ptx_text.end()));
}

Reply Client::launch(const wire::LaunchRequest &req) { return request(MsgType::launch, wire::encode_launch(req)); }

Reply Client::sync(std::vector<wire::TaskOutcome> *outcomes) {
    auto r = request(MsgType::sync);
    if (outcomes && (r.ok() || r.status == wire::Status::task_failed)) *outcomes = wire::decode_outcomes(r.payload);
    return r;
}

Reply Client::shutdown() { return request(MsgType::shutdown); }

} // namespace grd
