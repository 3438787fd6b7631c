#pragma once

// Partition bounds table: carves power-of-two, size-aligned partitions out of
// the simulated device with a buddy allocator and sub-allocates inside each
// partition with a first-fit free list.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <vector>

namespace grd {

using AppId = std::uint32_t;

inline constexpr std::uint64_t kDefaultDeviceBase = 0x7fa2c0000000ULL;
inline constexpr std::uint64_t kDefaultDeviceSize = 256ULL << 20;
inline constexpr std::uint64_t kMinPartitionSize = 4096;
inline constexpr std::uint64_t kAllocAlignment = 256;

struct PartitionRecord {
    AppId app_id = 0;
    std::uint64_t base = 0;
    std::uint64_t size = 0;
    std::uint64_t mask = 0;
    std::map<std::uint64_t, std::uint64_t> free_list;   // offset -> length
    std::map<std::uint64_t, std::uint64_t> live_allocs; // device address -> length

    std::uint64_t end() const { return base + size; }
};

// [addr, addr+len) inside [base, base+size) without 64-bit wraparound.
// A zero-length range is inside iff base <= addr <= base+size.
constexpr bool range_within(std::uint64_t base, std::uint64_t size, std::uint64_t addr,
                            std::uint64_t len) noexcept {
    return addr >= base && len <= size && addr - base <= size - len;
}

class PartitionBoundsTable {
public:
    explicit PartitionBoundsTable(std::uint64_t device_base = kDefaultDeviceBase,
                                  std::uint64_t device_size = kDefaultDeviceSize);

    std::uint64_t device_base() const noexcept { return device_base_; }
    std::uint64_t device_size() const noexcept { return device_size_; }

    const PartitionRecord &create_partition(AppId app, std::uint64_t requested_bytes);
    void destroy_partition(AppId app);

    std::uint64_t device_malloc(AppId app, std::uint64_t size);
    void device_free(AppId app, std::uint64_t addr);

    bool check_range(AppId app, std::uint64_t addr, std::uint64_t len) const;

    const PartitionRecord &partition(AppId app) const;
    const PartitionRecord *find(AppId app) const;
    const std::map<AppId, PartitionRecord> &records() const noexcept { return records_; }

    // Free buddy blocks per order, as device offsets. Index = log2(block size).
    const std::vector<std::set<std::uint64_t>> &buddy_free_lists() const noexcept { return free_blocks_; }

    // Throws Errc::invalid_config describing the first broken invariant.
    void verify() const;

private:
    std::uint64_t device_base_;
    std::uint64_t device_size_;
    unsigned max_order_;
    std::vector<std::set<std::uint64_t>> free_blocks_;
    std::map<AppId, PartitionRecord> records_;

    PartitionRecord &mutable_partition(AppId app);
    void debug_verify() const;
};

} // namespace grd
