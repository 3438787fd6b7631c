#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace grd {

enum class Errc : std::uint8_t {
    syntax_error,
    unsupported_feature,
    address_size_32,
    already_sandboxed,
    not_power_of_two,
    device_oom,
    partition_oom,
    duplicate_app,
    unknown_app,
    unknown_alloc,
    invalid_size,
    invalid_config,
    device_fault,
    step_limit_exceeded,
    type_fault,
    unknown_kernel,
    arity_mismatch,
    protocol_error,
};

std::string_view errc_name(Errc code) noexcept;

// Single exception type for the library. `line` is the 1-based source line
// for parser errors and 0 otherwise.
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string &message, int line = 0)
        : std::runtime_error(message), code_(code), line_(line) {}

    Errc code() const noexcept { return code_; }
    int line() const noexcept { return line_; }

private:
    Errc code_;
    int line_;
};

} // namespace grd
