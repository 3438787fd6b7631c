#pragma once

// Blocking client for the manager protocol. Every call sends one request and
// reads its response; LAUNCH and D2D return once the task is queued and their
// outcomes come back with the next SYNC.

#include "guardian/wire.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace grd {

struct Reply {
    wire::Status status = wire::Status::ok;
    std::vector<std::uint8_t> payload;

    bool ok() const noexcept { return status == wire::Status::ok; }
    // Error text carried by a non-OK reply, empty otherwise.
    std::string message() const;
};

struct InitInfo {
    AppId app = 0;
    std::uint64_t base = 0;
    std::uint64_t size = 0;
};

class Client {
public:
    explicit Client(int fd) : fd_(fd) {}
    static Client connect_unix(const std::string &path);
    ~Client();
    Client(Client &&other) noexcept : fd_(other.fd_) { other.fd_ = -1; }
    Client &operator=(Client &&other) noexcept;
    Client(const Client &) = delete;
    Client &operator=(const Client &) = delete;

    Reply request(wire::MsgType type, const std::vector<std::uint8_t> &payload = {});
    Reply raw(std::uint16_t code, const std::vector<std::uint8_t> &payload);

    Reply init(std::uint64_t bytes, InitInfo *info = nullptr);
    Reply malloc(std::uint64_t size, std::uint64_t *addr = nullptr);
    Reply free(std::uint64_t addr);
    Reply h2d(std::uint64_t dst, const std::vector<std::uint8_t> &bytes);
    Reply d2h(std::uint64_t src, std::uint64_t len, std::vector<std::uint8_t> *out = nullptr);
    Reply d2d(std::uint64_t dst, std::uint64_t src, std::uint64_t len);
    Reply load_module(const std::string &ptx_text);
    Reply launch(const wire::LaunchRequest &req);
    Reply sync(std::vector<wire::TaskOutcome> *outcomes = nullptr);
    Reply shutdown();

    void close();
    int fd() const noexcept { return fd_; }

private:
    int fd_ = -1;
};

} // namespace grd
