#pragma once

// Offline kernel sandboxing: appends partition parameters to every kernel and
// inserts address fencing or checking code before each global, local or
// generic memory access and each indirect branch.

#include "guardian/ptx/ast.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace grd {

enum class SandboxMode : std::uint8_t { fence_bitwise, fence_modulo, check };

const char *sandbox_mode_name(SandboxMode mode) noexcept;   // "fence-bitwise", ...
std::optional<SandboxMode> sandbox_mode_from_name(std::string_view name) noexcept;

struct PatchOptions {
    SandboxMode mode = SandboxMode::fence_bitwise;
    // FenceModulo only: replace `rem.u64` with a multiply-by-reciprocal
    // sequence fed by an extra `inv` parameter.
    bool inline_reciprocal = false;
};

// Label every Check-mode violation branches to; the epilogue is `ret`.
inline constexpr std::string_view kOobLabel = "GRD_OOB";
inline constexpr std::string_view kReservedParamTag = "_grd_";

// Partition size minus one. Throws Errc::not_power_of_two.
std::uint64_t compute_mask(std::uint64_t partition_size);

// floor(2^64 / size) for size >= 2.
std::uint64_t reciprocal(std::uint64_t size);

// Values appended to a sandboxed kernel's argument list, in parameter order:
// FenceBitwise (base, mask); FenceModulo (base, size[, inv]); Check (base, end).
std::vector<std::uint64_t> fence_arguments(const PatchOptions &options, std::uint64_t base,
                                           std::uint64_t size);
std::size_t fence_param_count(const PatchOptions &options) noexcept;

// Reference formulas for a single fenced address.
inline std::uint64_t fence_bitwise(std::uint64_t addr, std::uint64_t base, std::uint64_t mask) {
    return (addr & mask) | base;
}
inline std::uint64_t fence_modulo(std::uint64_t addr, std::uint64_t base, std::uint64_t size) {
    return base + (addr - base) % size;
}

struct KernelReport {
    std::string kernel;
    ptx::KernelKind kind = ptx::KernelKind::entry;
    unsigned loads = 0;             // instrumented loads
    unsigned stores = 0;            // instrumented stores
    unsigned atomics = 0;           // instrumented atom/red
    unsigned indirect_branches = 0; // guarded brx.idx
    unsigned direct = 0;            // instrumented accesses using [reg]
    unsigned base_offset = 0;       // instrumented accesses using [reg+off]
    std::map<std::string, unsigned> skipped{{"shared", 0}, {"param", 0}, {"const", 0}};
    unsigned instructions_added = 0; // bounds instructions around accesses and branches
    unsigned param_loads_added = 0;
    unsigned params_added = 0;
    unsigned registers_added = 0;
    unsigned call_sites_patched = 0;

    unsigned instrumented() const { return loads + stores + atomics; }
    unsigned skipped_total() const;
};

struct InstrumentationReport {
    SandboxMode mode = SandboxMode::fence_bitwise;
    std::vector<KernelReport> kernels;
};

struct SandboxedKernel {
    ptx::KernelDef kernel;
    KernelReport report;
};

// Sandboxes one kernel in isolation. Calls to module functions are not
// rewritten here; use sandbox_module for that. Throws Errc::already_sandboxed
// or Errc::unsupported_feature.
SandboxedKernel sandbox_kernel(const ptx::KernelDef &kernel, const PatchOptions &options);

struct SandboxedModule {
    ptx::PtxModule module;
    InstrumentationReport report;
};

SandboxedModule sandbox_module(const ptx::PtxModule &module, const PatchOptions &options);

// Stable-key JSON document (see docs/report.md).
std::string instrumentation_report_json(const InstrumentationReport &report, int indent = 2);

} // namespace grd
