// grd-manager: serve the simulated device over a unix socket until a client
// sends SHUTDOWN.

#include "guardian/error.hpp"
#include "guardian/manager.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <iostream>

int main(int argc, char **argv) {
    CLI::App app{"Guardian manager over a simulated device"};
    std::string listen = "/tmp/grd-manager.sock";
    std::string mode_name = "fence-bitwise";
    std::string dispatch = "eager";
    std::string modules_dir;
    std::uint64_t device_base = grd::kDefaultDeviceBase;
    std::uint64_t device_size = grd::kDefaultDeviceSize;
    grd::ManagerConfig cfg;
    app.add_option("--listen", listen, "unix socket path");
    app.add_option("--device-base", device_base, "device base address");
    app.add_option("--device-size", device_size, "device size in bytes (power of two)");
    app.add_option("--mode", mode_name, "fence-bitwise | fence-modulo | check")
        ->check(CLI::IsMember({"fence-bitwise", "fence-modulo", "check"}));
    app.add_flag("--inline-reciprocal", cfg.patch.inline_reciprocal, "fence-modulo without rem");
    app.add_option("--modules-dir", modules_dir, "patch and register every *.ptx here at startup")
        ->check(CLI::ExistingDirectory);
    app.add_flag("--native-when-solo", cfg.native_when_solo, "launch unpatched kernels while one client is connected");
    app.add_flag("--unprotected", cfg.unprotected, "register kernels without patching (demonstration only)");
    app.add_option("--dispatch", dispatch, "eager | on-demand")->check(CLI::IsMember({"eager", "on-demand"}));
    app.add_option("--step-limit", cfg.step_limit, "per-thread instruction limit");
    CLI11_PARSE(app, argc, argv);

    cfg.device_base = device_base;
    cfg.device_size = device_size;
    cfg.patch.mode = *grd::sandbox_mode_from_name(mode_name);
    cfg.dispatch = dispatch == "eager" ? grd::DispatchPolicy::eager : grd::DispatchPolicy::on_demand;
    if (!modules_dir.empty()) cfg.modules_dir = modules_dir;
    std::signal(SIGPIPE, SIG_IGN);

    try {
        grd::Manager manager(cfg);
        std::cerr << "grd-manager: listening on " << listen << " (" << mode_name
                  << (cfg.unprotected ? ", unprotected" : "") << ")\n";
        manager.listen_and_serve(listen);
        for (const auto &line : manager.log_lines()) std::cerr << "grd-manager: " << line << '\n';
    } catch (const grd::Error &e) {
        std::cerr << "grd-manager: " << grd::errc_name(e.code()) << ": " << e.what() << '\n';
        return 1;
    }
    return 0;
}
