// grd-inspect: count kernels and memory instructions per PTX file.

#include "guardian/error.hpp"
#include "guardian/inspect.hpp"
#include "guardian/ptx/parser.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;

int main(int argc, char **argv) {
    CLI::App app{"Count kernels, loads and stores in PTX files"};
    std::vector<std::string> paths;
    bool json = false;
    bool lenient = false;
    app.add_option("paths", paths, "PTX files or directories (searched for *.ptx)")->required();
    app.add_flag("--json", json, "print JSON instead of the table");
    app.add_flag("--lenient", lenient, "keep unknown non-memory statements verbatim");
    CLI11_PARSE(app, argc, argv);

    std::vector<fs::path> files;
    bool failed = false;
    for (const auto &p : paths) {
        std::error_code ec;
        if (fs::is_directory(p, ec)) {
            std::vector<fs::path> found;
            for (const auto &entry : fs::recursive_directory_iterator(p)) {
                if (entry.is_regular_file() && entry.path().extension() == ".ptx") found.push_back(entry.path());
            }
            std::sort(found.begin(), found.end());
            files.insert(files.end(), found.begin(), found.end());
        } else if (fs::is_regular_file(p, ec)) {
            files.emplace_back(p);
        } else {
            std::cerr << p << ": no such file or directory\n";
            failed = true;
        }
    }

    std::vector<grd::CorpusRow> rows;
    grd::CorpusRow total;
    total.name = "total";
    for (const auto &f : files) {
        std::ifstream in(f, std::ios::binary);
        std::stringstream buf;
        buf << in.rdbuf();
        try {
            const auto module = grd::ptx::parse_module(buf.str(), {.strict = !lenient});
            rows.push_back(grd::inspect_module(f.string(), module));
            total += rows.back();
        } catch (const grd::Error &e) {
            std::cerr << f.string();
            if (e.line() > 0) std::cerr << ':' << e.line();
            std::cerr << ": " << grd::errc_name(e.code()) << ": " << e.what() << '\n';
            failed = true;
        }
    }
    std::cout << (json ? grd::rows_json(rows, total) + "\n" : grd::format_table(rows, total));
    return failed ? 1 : 0;
}
