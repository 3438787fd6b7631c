#include "guardian/allocator.hpp"
#include "guardian/error.hpp"

#include <bit>
#include <sstream>

namespace grd {

namespace {

constexpr unsigned kMinOrder = 12; // log2(kMinPartitionSize)

std::string hex(std::uint64_t v) {
    std::ostringstream os;
    os << "0x" << std::hex << v;
    return os.str();
}

std::uint64_t round_up(std::uint64_t v, std::uint64_t align) { return (v + align - 1) & ~(align - 1); }

} // namespace

PartitionBoundsTable::PartitionBoundsTable(std::uint64_t device_base, std::uint64_t device_size)
    : device_base_(device_base), device_size_(device_size) {
    if (!std::has_single_bit(device_size) || device_size < kMinPartitionSize) {
        throw Error(Errc::invalid_config, "device size must be a power of two of at least 4 KiB");
    }
    if ((device_base & (device_size - 1)) != 0) {
        throw Error(Errc::invalid_config, "device base " + hex(device_base) + " is not aligned to the device size");
    }
    if (device_base + device_size < device_base) {
        throw Error(Errc::invalid_config, "device range wraps around the address space");
    }
    max_order_ = static_cast<unsigned>(std::countr_zero(device_size));
    free_blocks_.resize(max_order_ + 1);
    free_blocks_[max_order_].insert(0);
}

const PartitionRecord &PartitionBoundsTable::create_partition(AppId app, std::uint64_t requested_bytes) {
    if (records_.count(app)) throw Error(Errc::duplicate_app, "app " + std::to_string(app) + " already has a partition");
    if (requested_bytes == 0) throw Error(Errc::invalid_size, "partition request of 0 bytes");
    if (requested_bytes > device_size_) {
        throw Error(Errc::device_oom, "partition request of " + std::to_string(requested_bytes) + " bytes exceeds the device");
    }
    const std::uint64_t size = std::bit_ceil(std::max(requested_bytes, kMinPartitionSize));
    const auto order = static_cast<unsigned>(std::countr_zero(size));

    unsigned found = order;
    while (found <= max_order_ && free_blocks_[found].empty()) ++found;
    if (found > max_order_) {
        throw Error(Errc::device_oom, "no free block of " + std::to_string(size) + " bytes for app " + std::to_string(app));
    }
    const std::uint64_t offset = *free_blocks_[found].begin();
    free_blocks_[found].erase(free_blocks_[found].begin());
    while (found > order) {
        --found;
        free_blocks_[found].insert(offset + (std::uint64_t{1} << found)); // upper half stays free
    }

    PartitionRecord rec;
    rec.app_id = app;
    rec.base = device_base_ + offset;
    rec.size = size;
    rec.mask = size - 1;
    rec.free_list.emplace(0, size);
    const auto &inserted = records_.emplace(app, std::move(rec)).first->second;
    debug_verify();
    return inserted;
}

void PartitionBoundsTable::destroy_partition(AppId app) {
    auto it = records_.find(app);
    if (it == records_.end()) throw Error(Errc::unknown_app, "unknown app " + std::to_string(app));
    std::uint64_t offset = it->second.base - device_base_;
    auto order = static_cast<unsigned>(std::countr_zero(it->second.size));
    records_.erase(it);
    while (order < max_order_) {
        const std::uint64_t buddy = offset ^ (std::uint64_t{1} << order);
        auto &list = free_blocks_[order];
        auto b = list.find(buddy);
        if (b == list.end()) break;
        list.erase(b);
        offset = std::min(offset, buddy);
        ++order;
    }
    free_blocks_[order].insert(offset);
    debug_verify();
}

PartitionRecord &PartitionBoundsTable::mutable_partition(AppId app) {
    auto it = records_.find(app);
    if (it == records_.end()) throw Error(Errc::unknown_app, "unknown app " + std::to_string(app));
    return it->second;
}

const PartitionRecord &PartitionBoundsTable::partition(AppId app) const {
    auto it = records_.find(app);
    if (it == records_.end()) throw Error(Errc::unknown_app, "unknown app " + std::to_string(app));
    return it->second;
}

const PartitionRecord *PartitionBoundsTable::find(AppId app) const {
    auto it = records_.find(app);
    return it == records_.end() ? nullptr : &it->second;
}

std::uint64_t PartitionBoundsTable::device_malloc(AppId app, std::uint64_t size) {
    auto &rec = mutable_partition(app);
    if (size == 0) throw Error(Errc::invalid_size, "device_malloc of 0 bytes");
    if (size > rec.size) throw Error(Errc::partition_oom, "allocation larger than the partition");
    const std::uint64_t len = round_up(size, kAllocAlignment);
    for (auto it = rec.free_list.begin(); it != rec.free_list.end(); ++it) {
        const auto [offset, extent] = *it;
        if (extent < len) continue;
        rec.free_list.erase(it);
        if (extent > len) rec.free_list.emplace(offset + len, extent - len);
        const std::uint64_t addr = rec.base + offset;
        rec.live_allocs.emplace(addr, len);
        debug_verify();
        return addr;
    }
    throw Error(Errc::partition_oom, "partition of app " + std::to_string(app) + " cannot fit " +
                                         std::to_string(size) + " bytes");
}

void PartitionBoundsTable::device_free(AppId app, std::uint64_t addr) {
    auto &rec = mutable_partition(app);
    auto live = rec.live_allocs.find(addr);
    if (live == rec.live_allocs.end()) {
        throw Error(Errc::unknown_alloc, "no allocation at " + hex(addr) + " for app " + std::to_string(app));
    }
    std::uint64_t offset = addr - rec.base;
    std::uint64_t len = live->second;
    rec.live_allocs.erase(live);

    auto next = rec.free_list.lower_bound(offset);
    if (next != rec.free_list.end() && next->first == offset + len) {
        len += next->second;
        next = rec.free_list.erase(next);
    }
    if (next != rec.free_list.begin()) {
        auto prev = std::prev(next);
        if (prev->first + prev->second == offset) {
            offset = prev->first;
            len += prev->second;
            rec.free_list.erase(prev);
        }
    }
    rec.free_list.emplace(offset, len);
    debug_verify();
}

bool PartitionBoundsTable::check_range(AppId app, std::uint64_t addr, std::uint64_t len) const {
    const auto &rec = partition(app);
    return range_within(rec.base, rec.size, addr, len);
}

void PartitionBoundsTable::verify() const {
    const auto fail = [](const std::string &why) { throw Error(Errc::invalid_config, "invariant violated: " + why); };

    // partitions and free buddy blocks tile the device exactly
    std::map<std::uint64_t, std::uint64_t> tiles; // offset -> size
    for (const auto &[app, rec] : records_) {
        if (!std::has_single_bit(rec.size) || rec.size < kMinPartitionSize) fail("partition size not a power of two");
        if (rec.mask != rec.size - 1) fail("mask != size - 1");
        if ((rec.base & rec.mask) != 0) fail("partition base not size aligned");
        if (rec.base < device_base_ || !range_within(device_base_, device_size_, rec.base, rec.size)) {
            fail("partition outside the device");
        }
        if (!tiles.emplace(rec.base - device_base_, rec.size).second) fail("duplicate partition base");

        // free extents and live allocations tile [0, size)
        std::map<std::uint64_t, std::uint64_t> extents(rec.free_list.begin(), rec.free_list.end());
        for (const auto &[addr, len] : rec.live_allocs) {
            if (addr % kAllocAlignment != 0) fail("allocation not 256-byte aligned");
            if (!extents.emplace(addr - rec.base, len).second) fail("allocation overlaps a free extent");
        }
        std::uint64_t cursor = 0;
        for (const auto &[off, len] : extents) {
            if (off != cursor || len == 0) fail("partition extents do not tile");
            cursor += len;
        }
        if (cursor != rec.size) fail("partition extents do not cover the partition");
        std::uint64_t prev_end = UINT64_MAX;
        for (const auto &[off, len] : rec.free_list) {
            if (off == prev_end) fail("adjacent free extents not merged");
            prev_end = off + len;
        }
    }
    for (unsigned order = 0; order < free_blocks_.size(); ++order) {
        const std::uint64_t size = std::uint64_t{1} << order;
        for (auto off : free_blocks_[order]) {
            if (order < kMinOrder) fail("buddy block below minimum order");
            if (off % size != 0) fail("buddy block misaligned");
            if (order < max_order_ && free_blocks_[order].count(off ^ size)) fail("free buddies not coalesced");
            if (!tiles.emplace(off, size).second) fail("free block overlaps");
        }
    }
    std::uint64_t cursor = 0;
    for (const auto &[off, size] : tiles) {
        if (off != cursor) fail("device blocks overlap or leave a gap");
        cursor += size;
    }
    if (cursor != device_size_) fail("device blocks do not cover the device");
}

void PartitionBoundsTable::debug_verify() const {
#ifdef GRD_VERIFY_INVARIANTS
    verify();
#endif
}

} // namespace grd
