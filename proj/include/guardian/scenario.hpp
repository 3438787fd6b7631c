#pragma once

// Line-oriented multi-client scripts (grammar in docs/scenario.md) and the
// runner behind grd-run.

#include "guardian/manager.hpp"
#include "guardian/wire.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace grd {

struct ScenarioClient {
    std::string id;
    std::uint64_t partition_bytes = 0;
    int line = 0;
};

struct ScenarioOp {
    int line = 0;
    std::string client;
    std::string verb;               // malloc free h2d d2h d2d load launch sync disconnect
    std::vector<std::string> args;  // verb-specific tokens, `expect ...` removed
    std::optional<wire::Status> expect_status;
    std::optional<std::string> expect_data; // d2h only: hex pattern or "*"
};

struct ScenarioScript {
    std::vector<ScenarioClient> clients;
    std::vector<ScenarioOp> ops;
    std::filesystem::path base_dir; // `load` paths are relative to this
};

// Throws Errc::syntax_error with the offending line.
ScenarioScript parse_scenario(std::string_view text, const std::filesystem::path &base_dir = {});
ScenarioScript load_scenario(const std::filesystem::path &path);

// Keeps one client's declaration and operations.
ScenarioScript solo_script(const ScenarioScript &script, const std::string &client);

// Byte counts: decimal or 0x hex with an optional K/M/G suffix.
std::uint64_t parse_size(std::string_view token);
// Hex byte strings; `<hex>*<n>` repeats the pattern n times.
std::vector<std::uint8_t> parse_hex(std::string_view token);
std::string to_hex(const std::vector<std::uint8_t> &bytes);

struct ScenarioRunOptions {
    ManagerConfig manager;                  // used for the in-process manager
    std::optional<std::string> connect_path; // use an external manager instead
};

struct ReadRecord {
    int line = 0;
    std::vector<std::uint8_t> bytes;
    bool operator==(const ReadRecord &) const = default;
};

struct ScenarioResult {
    bool ok = true;
    std::vector<std::string> failures;
    std::map<std::string, std::vector<ReadRecord>> reads;            // per client, in order
    std::map<std::string, std::vector<std::uint8_t>> partitions;     // final contents (in-process only)
    std::map<std::string, AppId> apps;
    std::vector<DispatchRecord> dispatch;                           // in-process only
    std::vector<std::string> manager_log;
    std::size_t ops_run = 0;
};

ScenarioResult run_scenario(const ScenarioScript &script, const ScenarioRunOptions &options);

// Dispatch order plus per-launch access traces, one item per line.
std::string format_trace(const ScenarioResult &result);

} // namespace grd
