// grd-patch: sandbox every kernel of a PTX file.
//
// Exit status: 0 ok, 1 parse error, 2 unsupported feature, 3 other failure.

#include "guardian/error.hpp"
#include "guardian/patcher.hpp"
#include "guardian/ptx/parser.hpp"
#include "guardian/ptx/printer.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

namespace {

int exit_code_for(grd::Errc code) {
    switch (code) {
    case grd::Errc::syntax_error:
    case grd::Errc::address_size_32:
        return 1;
    case grd::Errc::unsupported_feature:
        return 2;
    default:
        return 3;
    }
}

bool write_file(const std::string &path, const std::string &text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    return static_cast<bool>(out);
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Sandbox PTX kernels with address fencing or checking"};
    std::string input;
    std::string output;
    std::string mode_name = "fence-bitwise";
    std::string report_path;
    bool lenient = false;
    bool inline_reciprocal = false;
    app.add_option("input", input, "PTX file")->required()->check(CLI::ExistingFile);
    app.add_option("-o,--output", output, "output path (default: stdout)");
    app.add_option("--mode", mode_name, "fence-bitwise | fence-modulo | check")
        ->check(CLI::IsMember({"fence-bitwise", "fence-modulo", "check"}));
    app.add_flag("--lenient", lenient, "keep unknown non-memory statements verbatim");
    app.add_flag("--inline-reciprocal", inline_reciprocal, "fence-modulo: multiply by reciprocal instead of rem");
    app.add_option("--report", report_path, "write the instrumentation report (JSON) here");
    CLI11_PARSE(app, argc, argv);

    std::ifstream in(input, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();

    grd::PatchOptions options;
    options.mode = *grd::sandbox_mode_from_name(mode_name);
    options.inline_reciprocal = inline_reciprocal;

    try {
        auto parsed = grd::ptx::parse_module_ex(buf.str(), {.strict = !lenient});
        for (const auto &w : parsed.warnings) std::cerr << input << ": warning: " << w << '\n';
        const auto sandboxed = grd::sandbox_module(parsed.module, options);
        const auto text = grd::ptx::emit_module(sandboxed.module);
        if (output.empty()) {
            std::cout << text;
        } else if (!write_file(output, text)) {
            std::cerr << "grd-patch: cannot write " << output << '\n';
            return 3;
        }
        if (!report_path.empty() && !write_file(report_path, grd::instrumentation_report_json(sandboxed.report) + "\n")) {
            std::cerr << "grd-patch: cannot write " << report_path << '\n';
            return 3;
        }
    } catch (const grd::Error &e) {
        std::cerr << input;
        if (e.line() > 0) std::cerr << ':' << e.line();
        std::cerr << ": " << grd::errc_name(e.code()) << ": " << e.what() << '\n';
        return exit_code_for(e.code());
    }
    return 0;
}
