#pragma once

// Independent reference models used by the tests. None of these share code
// with the library beyond plain data types.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace grd::oracle {

std::string read_file(const std::string &path);
std::string data_path(const std::string &relative); // under tests/

// Byte-by-byte membership of [addr, addr+len) in [base, base+size), with
// addresses computed in 128 bits so wraparound counts as outside.
bool brute_force_within(std::uint64_t base, std::uint64_t size, std::uint64_t addr, std::uint64_t len);

// Number of lines whose instruction root is ld, st, atom or red.
unsigned count_memory_lines(const std::string &ptx_text);

// Instructions in a PTX text: lines ending in ';' that are not directives.
unsigned count_instruction_lines(const std::string &ptx_text);

// Whole-device bitmap over 4 KiB units.
class BitmapDevice {
public:
    BitmapDevice(std::uint64_t device_size, std::uint64_t unit = 4096);

    // Size a request of `bytes` receives (power of two, at least one unit).
    std::uint64_t rounded(std::uint64_t bytes) const;
    // A free, size-aligned block of rounded(bytes) exists.
    bool can_place(std::uint64_t bytes) const;
    bool region_free(std::uint64_t offset, std::uint64_t size) const;
    void occupy(int owner, std::uint64_t offset, std::uint64_t size);
    void release(int owner);
    std::uint64_t free_bytes() const;

private:
    std::uint64_t unit_;
    std::vector<int> owner_; // -1 free
};

// Partition-local first-fit over 256-byte granules.
class GranuleMap {
public:
    explicit GranuleMap(std::uint64_t partition_size, std::uint64_t granule = 256);

    std::optional<std::uint64_t> malloc(std::uint64_t size); // offset
    bool free(std::uint64_t offset);
    std::uint64_t used_bytes() const;
    // (offset, length) runs of free granules, maximal.
    std::map<std::uint64_t, std::uint64_t> free_runs() const;

private:
    std::uint64_t granule_;
    std::vector<bool> used_;
    std::map<std::uint64_t, std::uint64_t> live_; // offset -> granules
};

} // namespace grd::oracle

namespace grd::oracle {

// Exhaustive over a 16-bit address space: every power-of-two size s, every
// s-aligned base b and every address a. Returns the number of (a, b, s) where
// (a AND (s-1)) OR b differs from b + ((a - b) mod s), and the count of
// triples examined.
struct Exhaustive16 {
    std::uint64_t disagreements = 0;
    std::uint64_t triples = 0;
};
Exhaustive16 exhaustive_mode_agreement16();

} // namespace grd::oracle

namespace grd::oracle {

// Driver-side log of a scheduling run under on-demand dispatch: submissions
// in order, and for every completed wait the dispatch count observed when it
// returned.
struct SchedEvent {
    enum Kind { submit, wait_done } kind;
    int client = 0;
    std::size_t dispatched = 0; // wait_done only
};

struct DispatchSeen {
    int client = 0;
    std::uint64_t seq = 0;
};

// Replays the queues and checks per-client FIFO, that a finished wait left its
// client's queue empty, and round-robin fairness: between two dispatches of X,
// every client that had work when X was first dispatched is served once.
std::vector<std::string> check_schedule(int clients, const std::vector<SchedEvent> &events,
                                        const std::vector<DispatchSeen> &dispatches);

} // namespace grd::oracle
