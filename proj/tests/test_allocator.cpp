#include "oracles.hpp"

#include "guardian/allocator.hpp"
#include "guardian/error.hpp"

#include <gtest/gtest.h>

#include <functional>
#include <random>

using namespace grd;

namespace {

Errc error_of(const std::function<void()> &f) {
    try {
        f();
    } catch (const Error &e) {
        return e.code();
    }
    ADD_FAILURE() << "expected an error";
    return Errc::protocol_error;
}

} // namespace

TEST(Partition, FirstSixteenMiB) {
    PartitionBoundsTable t;
    const auto &p = t.create_partition(1, 16ULL << 20);
    EXPECT_EQ(p.base, 0x7fa2c0000000ULL);
    EXPECT_EQ(p.size, 0x1000000ULL);
    EXPECT_EQ(p.mask, 0xFFFFFFULL);
    t.verify();
}

TEST(Partition, MinimumSize) {
    PartitionBoundsTable t;
    const auto &p = t.create_partition(1, 1);
    EXPECT_EQ(p.size, 4096u);
    EXPECT_EQ(p.mask, 0xFFFu);
}

TEST(Partition, RoundsUpToPowerOfTwo) {
    PartitionBoundsTable t;
    EXPECT_EQ(t.create_partition(1, 5000).size, 8192u);
    EXPECT_EQ(t.create_partition(2, (16ULL << 20) + 1).size, 32ULL << 20);
}

TEST(Partition, ExhaustSmallDevice) {
    PartitionBoundsTable t(0x7fa2c0000000ULL, 32ULL << 20);
    const auto a = t.create_partition(1, 16ULL << 20).base;
    const auto b = t.create_partition(2, 16ULL << 20).base;
    EXPECT_EQ(b, a + 0x1000000);
    EXPECT_EQ(error_of([&] { t.create_partition(3, 16ULL << 20); }), Errc::device_oom);
    EXPECT_EQ(error_of([&] { t.create_partition(3, 64ULL << 20); }), Errc::device_oom);
}

TEST(Partition, Errors) {
    PartitionBoundsTable t;
    t.create_partition(1, 4096);
    EXPECT_EQ(error_of([&] { t.create_partition(1, 4096); }), Errc::duplicate_app);
    EXPECT_EQ(error_of([&] { t.create_partition(2, 0); }), Errc::invalid_size);
    EXPECT_EQ(error_of([&] { t.destroy_partition(9); }), Errc::unknown_app);
    EXPECT_EQ(error_of([&] { t.device_malloc(9, 16); }), Errc::unknown_app);
    EXPECT_EQ(error_of([&] { PartitionBoundsTable(0x1000, 3 << 20); }), Errc::invalid_config);
    EXPECT_EQ(error_of([&] { PartitionBoundsTable(0x1000, 1 << 20); }), Errc::invalid_config);
}

TEST(Partition, DestroyCoalesces) {
    PartitionBoundsTable t;
    const auto first = t.create_partition(1, 4096).base;
    t.create_partition(2, 1 << 20);
    t.destroy_partition(1);
    EXPECT_EQ(t.create_partition(3, 4096).base, first);
    t.destroy_partition(3);
    t.destroy_partition(2);
    // back to a single free block covering the device
    const auto &lists = t.buddy_free_lists();
    for (std::size_t order = 0; order + 1 < lists.size(); ++order) EXPECT_TRUE(lists[order].empty()) << order;
    EXPECT_EQ(lists.back().size(), 1u);
}

// Random create/destroy against a whole-device bitmap: a request succeeds
// exactly when a free aligned block of the rounded size exists, the block it
// receives was free, and every invariant holds after each step.
TEST(Partition, RandomOpsAgainstBitmap) {
    std::mt19937_64 rng(5);
    const std::uint64_t device = 16ULL << 20;
    PartitionBoundsTable t(0x7fa2c0000000ULL, device);
    oracle::BitmapDevice bitmap(device);
    std::vector<AppId> live;
    AppId next = 1;
    for (int op = 0; op < 2000; ++op) {
        if (live.empty() || rng() % 3 != 0) {
            const std::uint64_t bytes = 1 + rng() % (rng() % 4 == 0 ? (8ULL << 20) : (256ULL << 10));
            const bool possible = bitmap.can_place(bytes);
            try {
                const auto &p = t.create_partition(next, bytes);
                ASSERT_TRUE(possible) << "allocator found space the oracle says does not exist";
                ASSERT_EQ(p.size, bitmap.rounded(bytes));
                ASSERT_EQ(p.base & p.mask, 0u);
                ASSERT_TRUE(bitmap.region_free(p.base - t.device_base(), p.size));
                bitmap.occupy(static_cast<int>(next), p.base - t.device_base(), p.size);
                live.push_back(next++);
            } catch (const Error &e) {
                ASSERT_EQ(e.code(), Errc::device_oom);
                ASSERT_FALSE(possible) << "buddy allocator failed although an aligned free block exists";
            }
        } else {
            const auto i = rng() % live.size();
            t.destroy_partition(live[i]);
            bitmap.release(static_cast<int>(live[i]));
            live.erase(live.begin() + static_cast<std::ptrdiff_t>(i));
        }
        ASSERT_NO_THROW(t.verify());
        std::uint64_t owned = 0;
        for (const auto &[app, rec] : t.records()) owned += rec.size;
        ASSERT_EQ(device - owned, bitmap.free_bytes());
    }
}

TEST(SubAlloc, FirstFitFromBase) {
    PartitionBoundsTable t;
    const auto &p = t.create_partition(1, 16ULL << 20);
    EXPECT_EQ(t.device_malloc(1, 1024), p.base);
    EXPECT_EQ(t.device_malloc(1, 1), p.base + 1024);
    EXPECT_EQ(t.device_malloc(1, 300), p.base + 1280);
    EXPECT_EQ(error_of([&] { t.device_malloc(1, 0); }), Errc::invalid_size);
}

TEST(SubAlloc, ExhaustWith256ByteBlocks) {
    PartitionBoundsTable t;
    const auto size = t.create_partition(1, 64 << 10).size;
    std::uint64_t granted = 0;
    for (;;) {
        try {
            t.device_malloc(1, 256);
            granted += 256;
        } catch (const Error &e) {
            EXPECT_EQ(e.code(), Errc::partition_oom);
            break;
        }
    }
    EXPECT_EQ(granted, size);
}

TEST(SubAlloc, FreeRestoresSingleExtent) {
    PartitionBoundsTable t;
    const auto &p = t.create_partition(1, 8192);
    const auto a = t.device_malloc(1, 100);
    const auto b = t.device_malloc(1, 700);
    t.device_free(1, a);
    t.device_free(1, b);
    ASSERT_EQ(p.free_list.size(), 1u);
    EXPECT_EQ(p.free_list.begin()->first, 0u);
    EXPECT_EQ(p.free_list.begin()->second, 8192u);
    EXPECT_TRUE(p.live_allocs.empty());
}

TEST(SubAlloc, ExactAddressFree) {
    PartitionBoundsTable t;
    const auto base = t.create_partition(1, 8192).base;
    t.device_malloc(1, 64);
    EXPECT_EQ(error_of([&] { t.device_free(1, base + 8); }), Errc::unknown_alloc);
    EXPECT_EQ(error_of([&] { t.device_free(2, base); }), Errc::unknown_app);
    t.device_free(1, base);
    EXPECT_EQ(error_of([&] { t.device_free(1, base); }), Errc::unknown_alloc);
}

// 10k random malloc/free against a granule bitmap doing first-fit on its own.
TEST(SubAlloc, FuzzAgainstGranuleOracle) {
    std::mt19937_64 rng(17);
    PartitionBoundsTable t;
    const auto &p = t.create_partition(7, 1 << 20);
    oracle::GranuleMap oracle(p.size);
    std::vector<std::uint64_t> live;
    for (int op = 0; op < 10000; ++op) {
        if (live.empty() || rng() % 5 < 3) {
            const std::uint64_t size = 1 + rng() % (rng() % 8 == 0 ? 65536 : 2048);
            const auto expect = oracle.malloc(size);
            try {
                const auto addr = t.device_malloc(7, size);
                ASSERT_TRUE(expect.has_value());
                ASSERT_EQ(addr, p.base + *expect);
                ASSERT_EQ(addr % 256, 0u);
                live.push_back(addr);
            } catch (const Error &e) {
                ASSERT_EQ(e.code(), Errc::partition_oom);
                ASSERT_FALSE(expect.has_value());
            }
        } else {
            const auto i = rng() % live.size();
            t.device_free(7, live[i]);
            ASSERT_TRUE(oracle.free(live[i] - p.base));
            live.erase(live.begin() + static_cast<std::ptrdiff_t>(i));
        }
        ASSERT_EQ(p.free_list, oracle.free_runs());
        std::uint64_t live_bytes = 0;
        for (const auto &[a, len] : p.live_allocs) live_bytes += len;
        ASSERT_EQ(live_bytes, oracle.used_bytes());
    }
    t.verify();
}

TEST(CheckRange, InteriorAndEdges) {
    PartitionBoundsTable t;
    const auto &p = t.create_partition(1, 4096);
    const auto b = p.base, s = p.size;
    EXPECT_TRUE(t.check_range(1, b + 16, 64));
    EXPECT_TRUE(t.check_range(1, b + s - 64, 64));
    EXPECT_FALSE(t.check_range(1, b + s - 63, 64));
    EXPECT_FALSE(t.check_range(1, b - 1, 2));
    EXPECT_TRUE(t.check_range(1, b + s, 0));
    EXPECT_FALSE(t.check_range(1, b + s + 1, 0));
    EXPECT_FALSE(t.check_range(1, ~std::uint64_t{0} - 7, 16));
    EXPECT_EQ(error_of([&] { t.check_range(2, b, 1); }), Errc::unknown_app);
}

TEST(CheckRange, BoundaryEnumerationMatchesBruteForce) {
    const std::uint64_t base = 0x7fa2c0001000ULL, size = 4096;
    for (std::int64_t da = -3; da <= 3; ++da) {
        for (const std::uint64_t anchor : {base, base + size}) {
            for (const std::uint64_t len : std::initializer_list<std::uint64_t>{0, 1, 2, 63, 64, 65, size - 1, size, size + 1}) {
                const std::uint64_t addr = anchor + static_cast<std::uint64_t>(da);
                ASSERT_EQ(range_within(base, size, addr, len), oracle::brute_force_within(base, size, addr, len))
                    << addr - base << " " << len;
                // ranges that end at an edge, +-1
                if (len <= addr) {
                    const std::uint64_t start = addr - len;
                    ASSERT_EQ(range_within(base, size, start, len), oracle::brute_force_within(base, size, start, len));
                }
            }
        }
    }
    // wraparound
    const std::uint64_t top = ~std::uint64_t{0};
    for (std::uint64_t len : {1ULL, 8ULL, 9ULL, 16ULL}) {
        ASSERT_EQ(range_within(top - 4095, 4096, top - 7, len), oracle::brute_force_within(top - 4095, 4096, top - 7, len));
        ASSERT_EQ(range_within(base, size, top - 7, len), oracle::brute_force_within(base, size, top - 7, len));
    }
}

TEST(CheckRange, RandomAgainstBruteForce) {
    std::mt19937_64 rng(23);
    for (int i = 0; i < 20000; ++i) {
        const std::uint64_t size = 1 + rng() % 512;
        // partitions never wrap; ranges may
        const std::uint64_t base = rng() % 2 ? rng() % (~std::uint64_t{0} - 512) : ~std::uint64_t{0} - size + 1 - rng() % 1024;
        const std::uint64_t addr = rng() % 2 ? base + (rng() % 1100) - 300 : rng();
        const std::uint64_t len = rng() % 700;
        ASSERT_EQ(range_within(base, size, addr, len), oracle::brute_force_within(base, size, addr, len));
    }
}
