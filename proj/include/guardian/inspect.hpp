#pragma once

// Static per-file accounting of kernels and memory instructions.

#include "guardian/ptx/ast.hpp"

#include <string>
#include <vector>

namespace grd {

struct CorpusRow {
    std::string name;
    unsigned kernels = 0;  // .entry definitions
    unsigned funcs = 0;    // .func definitions
    unsigned loads = 0;    // every ld, any state space
    unsigned stores = 0;   // every st
    unsigned atomics = 0;  // atom and red
    unsigned indirect_branches = 0;

    CorpusRow &operator+=(const CorpusRow &other);
};

CorpusRow inspect_module(const std::string &name, const ptx::PtxModule &module);

// Column layout: name, #kernels, #func, #total loads, #total stores, #atomics,
// #indirect branches. The last row is the total.
std::string format_table(const std::vector<CorpusRow> &rows, const CorpusRow &total);
std::string rows_json(const std::vector<CorpusRow> &rows, const CorpusRow &total, int indent = 2);

} // namespace grd
