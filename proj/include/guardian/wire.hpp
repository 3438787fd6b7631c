#pragma once

// Client <-> manager framing: u32 payload length | u16 code | payload, all
// little-endian. Requests carry a MsgType in `code`, responses a Status.

#include "guardian/interp.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace grd::wire {

enum class MsgType : std::uint16_t {
    init = 1,
    malloc = 2,
    free = 3,
    memcpy_h2d = 4,
    memcpy_d2h = 5,
    memcpy_d2d = 6,
    load_module = 7,
    launch = 8,
    sync = 9,
    shutdown = 10,
};

enum class Status : std::uint16_t {
    ok = 0,
    bad_message = 1,
    no_partition = 2,
    oob_transfer = 3,
    unknown_kernel = 4,
    syntax_error = 5,
    device_oom = 6,
    partition_oom = 7,
    invalid_size = 8,
    unknown_alloc = 9,
    task_failed = 10,
    already_initialized = 11,
    unsupported = 12,
};

const char *status_name(Status s) noexcept; // "OK", "OOB_TRANSFER", ...
std::optional<Status> status_from_name(std::string_view name) noexcept;
const char *msg_type_name(MsgType t) noexcept;

inline constexpr std::uint32_t kMaxPayload = 256u << 20;

struct Frame {
    std::uint16_t code = 0;
    std::vector<std::uint8_t> payload;
};

std::vector<std::uint8_t> encode_frame(std::uint16_t code, std::span<const std::uint8_t> payload);

// Blocking socket I/O. read_frame returns nullopt on orderly EOF before a
// header; short reads inside a frame and oversized lengths throw
// Errc::protocol_error. write_frame throws protocol_error when the peer is gone.
std::optional<Frame> read_frame(int fd);
void write_frame(int fd, std::uint16_t code, std::span<const std::uint8_t> payload);

class Writer {
public:
    Writer &u8(std::uint8_t v);
    Writer &u16(std::uint16_t v);
    Writer &u32(std::uint32_t v);
    Writer &u64(std::uint64_t v);
    Writer &bytes(std::span<const std::uint8_t> b);
    Writer &str(std::string_view s); // u32 length + bytes
    const std::vector<std::uint8_t> &data() const noexcept { return out_; }
    std::vector<std::uint8_t> take() { return std::move(out_); }

private:
    std::vector<std::uint8_t> out_;
};

// Reads past the end throw Errc::protocol_error.
class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
    std::uint8_t u8();
    std::uint16_t u16();
    std::uint32_t u32();
    std::uint64_t u64();
    std::vector<std::uint8_t> bytes(std::uint64_t n);
    std::string str();
    std::string rest_as_string();
    bool done() const noexcept { return pos_ == in_.size(); }
    void expect_done() const;

private:
    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
    std::span<const std::uint8_t> take(std::uint64_t n);
};

struct LaunchRequest {
    std::string name;
    std::uint32_t grid = 1;
    std::uint32_t block = 1;
    std::vector<ArgValue> args;
};

std::vector<std::uint8_t> encode_launch(const LaunchRequest &r);
LaunchRequest decode_launch(std::span<const std::uint8_t> payload);

// One finished queued task, reported in the SYNC response.
struct TaskOutcome {
    std::uint64_t seq = 0;
    Status status = Status::ok;
    std::string message;
    bool operator==(const TaskOutcome &) const = default;
};

std::vector<std::uint8_t> encode_outcomes(const std::vector<TaskOutcome> &outcomes);
std::vector<TaskOutcome> decode_outcomes(std::span<const std::uint8_t> payload);

} // namespace grd::wire
