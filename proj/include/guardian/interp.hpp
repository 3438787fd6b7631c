#pragma once

// Deterministic interpreter for the PTX subset over a simulated device memory.
// Threads run one after another in linear-id order; every memory access is
// recorded in an AccessTrace.

#include "guardian/allocator.hpp"
#include "guardian/patcher.hpp"
#include "guardian/ptx/ast.hpp"
#include "guardian/ptx/memops.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace grd {

// Sparse, zero-initialised byte store for [base, base+size). Accesses outside
// the range throw Errc::device_fault.
class SimMemory {
public:
    static constexpr std::uint64_t kPageSize = 4096;

    SimMemory(std::uint64_t device_base, std::uint64_t device_size);

    std::uint64_t device_base() const noexcept { return base_; }
    std::uint64_t device_size() const noexcept { return size_; }
    bool contains(std::uint64_t addr, std::uint64_t len) const noexcept;

    void read(std::uint64_t addr, std::span<std::uint8_t> out) const;
    void write(std::uint64_t addr, std::span<const std::uint8_t> data);
    std::vector<std::uint8_t> read_bytes(std::uint64_t addr, std::uint64_t len) const;
    std::uint64_t read_uint(std::uint64_t addr, unsigned width) const;
    void write_uint(std::uint64_t addr, std::uint64_t value, unsigned width);

    // Byte-wise equality over [lo, hi); missing pages compare as zero.
    bool equal_range(const SimMemory &other, std::uint64_t lo, std::uint64_t hi) const;
    // Equality everywhere except [base, base+size).
    bool equal_outside(const SimMemory &other, std::uint64_t base, std::uint64_t size) const;
    bool operator==(const SimMemory &other) const;

private:
    using Page = std::vector<std::uint8_t>;
    std::uint64_t base_;
    std::uint64_t size_;
    std::map<std::uint64_t, Page> pages_; // page index -> bytes

    void check(std::uint64_t addr, std::uint64_t len) const;
    const Page *page(std::uint64_t index) const;
};

enum class ArgKind : std::uint8_t { scalar64, scalar32, f32, dev_addr };

struct ArgValue {
    ArgKind kind = ArgKind::scalar64;
    std::uint64_t bits = 0;

    static ArgValue u64(std::uint64_t v) { return {ArgKind::scalar64, v}; }
    static ArgValue u32(std::uint32_t v) { return {ArgKind::scalar32, v}; }
    static ArgValue address(std::uint64_t v) { return {ArgKind::dev_addr, v}; }
    static ArgValue f32(float v);
    bool operator==(const ArgValue &) const = default;
};

inline constexpr std::uint64_t kDefaultStepLimit = 1'000'000;
inline constexpr std::uint64_t kMaxThreads = std::uint64_t{1} << 20;
inline constexpr std::size_t kSharedBytesPerBlock = 48 * 1024;

struct LaunchConfig {
    std::uint32_t grid_dim_x = 1;
    std::uint32_t block_dim_x = 1;
    std::vector<ArgValue> args;
    std::uint64_t step_limit = kDefaultStepLimit; // per thread
};

enum class AccessKind : std::uint8_t { load, store, atomic };

const char *access_kind_name(AccessKind kind) noexcept;

struct AccessRecord {
    std::uint64_t thread = 0;    // ctaid * ntid + tid
    std::string function;        // kernel or .func executing the access
    std::size_t statement = 0;   // index into that function's body
    AccessKind kind = AccessKind::load;
    ptx::StateSpace space = ptx::StateSpace::global;
    std::uint64_t address = 0;   // device address; offset for param/shared
    unsigned width = 0;          // bytes
    bool operator==(const AccessRecord &) const = default;
};

struct AccessTrace {
    std::vector<AccessRecord> entries;
    std::uint64_t oob_exits = 0;     // branches taken to the GRD_OOB epilogue
    std::uint64_t instructions = 0;  // executed instructions over all threads
    bool operator==(const AccessTrace &) const = default;

    // True when every global/local/generic access lies in [base, base+size).
    bool device_accesses_within(std::uint64_t base, std::uint64_t size) const;
};

struct LoadedModule;

// Executable kernel: shares ownership of the module it came from.
class KernelHandle {
public:
    KernelHandle() = default;
    KernelHandle(std::shared_ptr<const LoadedModule> module, const ptx::KernelDef *kernel)
        : module_(std::move(module)), kernel_(kernel) {}

    const ptx::KernelDef &kernel() const { return *kernel_; }
    const std::string &name() const { return kernel_->name; }
    std::size_t arity() const { return kernel_->params.size(); }
    const LoadedModule &module() const { return *module_; }
    explicit operator bool() const { return kernel_ != nullptr; }

private:
    std::shared_ptr<const LoadedModule> module_;
    const ptx::KernelDef *kernel_ = nullptr;
};

struct SymbolEntry {
    KernelHandle sandboxed;                 // what launches run
    std::optional<KernelHandle> native;     // uninstrumented variant, if loaded
    std::optional<SandboxMode> mode;        // nullopt when the module was not patched
};

// Kernel name -> executable handles (pointerToSymbol).
class SymbolTable {
public:
    // Returns true when an existing entry was replaced.
    bool insert(const std::string &name, SymbolEntry entry);
    const SymbolEntry *lookup(std::string_view name) const;
    std::size_t size() const noexcept { return entries_.size(); }
    std::vector<std::string> names() const;

private:
    std::map<std::string, SymbolEntry, std::less<>> entries_;
};

std::shared_ptr<const LoadedModule> make_loaded_module(ptx::PtxModule module);
KernelHandle find_kernel(const std::shared_ptr<const LoadedModule> &module, std::string_view name);

// Registers every `.entry` of `module` in `symtab`. Returns one warning per
// replaced name.
std::vector<std::string> load_module(const ptx::PtxModule &module, SymbolTable &symtab);

// Runs every thread to completion. Throws Errc::device_fault,
// step_limit_exceeded, type_fault or arity_mismatch.
AccessTrace launch(const KernelHandle &kernel, const LaunchConfig &config, SimMemory &memory);

struct PairVerdict {
    bool original_faulted = false;      // the original run raised an execution error
    bool original_in_partition = false; // every original device access was in the partition
    bool memories_identical = false;    // final memories of both runs are equal
    bool sandboxed_contained = false;   // every sandboxed device access was in the partition
    bool others_untouched = false;      // sandboxed run left memory outside the partition as it was
    std::uint64_t oob_exits = 0;
    AccessTrace original;
    AccessTrace sandboxed;
    SimMemory original_memory;
    SimMemory sandboxed_memory;
};

// Runs `original` with `config` and `sandboxed` with the fence arguments for
// the partition appended, each on its own copy of `memory`.
PairVerdict run_pair(const KernelHandle &original, const KernelHandle &sandboxed, const LaunchConfig &config,
                     const PatchOptions &fence, std::uint64_t partition_base, std::uint64_t partition_size,
                     const SimMemory &memory);

} // namespace grd
