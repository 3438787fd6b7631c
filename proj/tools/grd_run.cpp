// grd-run: execute a multi-client scenario against an in-process manager (or
// an external one with --connect) and check every expectation.
//
// Exit status: 0 all expectations held, 1 an expectation or operation failed,
// 2 the script does not parse.

#include "guardian/error.hpp"
#include "guardian/scenario.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <iostream>

int main(int argc, char **argv) {
    CLI::App app{"Run a multi-client scenario script"};
    std::string path;
    std::string mode_name = "fence-bitwise";
    std::string connect;
    std::string solo;
    bool trace = false;
    bool reads = false;
    grd::ScenarioRunOptions options;
    app.add_option("scenario", path, "scenario file")->required()->check(CLI::ExistingFile);
    app.add_option("--mode", mode_name, "fence-bitwise | fence-modulo | check")
        ->check(CLI::IsMember({"fence-bitwise", "fence-modulo", "check"}));
    app.add_flag("--inline-reciprocal", options.manager.patch.inline_reciprocal, "fence-modulo without rem");
    app.add_flag("--unprotected", options.manager.unprotected, "load kernels without patching");
    app.add_flag("--native-when-solo", options.manager.native_when_solo, "launch unpatched kernels while one client is connected");
    app.add_option("--step-limit", options.manager.step_limit, "per-thread instruction limit");
    app.add_option("--solo", solo, "run only this client's lines");
    app.add_option("--connect", connect, "use the manager listening on this unix socket");
    app.add_flag("--trace", trace, "print dispatch order and access traces");
    app.add_flag("--reads", reads, "print every d2h result");
    CLI11_PARSE(app, argc, argv);

    options.manager.patch.mode = *grd::sandbox_mode_from_name(mode_name);
    options.manager.record_traces = trace;
    if (!connect.empty()) options.connect_path = connect;
    std::signal(SIGPIPE, SIG_IGN);

    grd::ScenarioScript script;
    try {
        script = grd::load_scenario(path);
        if (!solo.empty()) script = grd::solo_script(script, solo);
    } catch (const grd::Error &e) {
        std::cerr << path;
        if (e.line() > 0) std::cerr << ':' << e.line();
        std::cerr << ": " << e.what() << '\n';
        return 2;
    }

    grd::ScenarioResult result;
    try {
        result = grd::run_scenario(script, options);
    } catch (const grd::Error &e) {
        std::cerr << path << ": " << grd::errc_name(e.code()) << ": " << e.what() << '\n';
        return 1;
    }
    if (trace) {
        std::cout << grd::format_trace(result);
        for (const auto &line : result.manager_log) std::cout << "manager: " << line << '\n';
    }
    if (reads) {
        for (const auto &[client, list] : result.reads) {
            for (const auto &r : list) std::cout << "read " << client << " line " << r.line << ' ' << grd::to_hex(r.bytes) << '\n';
        }
    }
    for (const auto &f : result.failures) std::cerr << path << ": " << f << '\n';
    std::cout << (result.ok ? "ok" : "FAILED") << ": " << result.ops_run << " operations, " << result.failures.size()
              << " failures\n";
    return result.ok ? 0 : 1;
}
