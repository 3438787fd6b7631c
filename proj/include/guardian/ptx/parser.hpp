#pragma once

#include "guardian/ptx/ast.hpp"

#include <string>
#include <string_view>
#include <vector>

namespace grd::ptx {

struct ParseOptions {
    // Strict mode rejects anything outside the documented subset. Lenient mode
    // keeps unknown non-memory statements and module directives verbatim and
    // records a warning; memory instructions are always parsed in full.
    bool strict = true;
};

struct ParseResult {
    PtxModule module;
    std::vector<std::string> warnings;
};

// Throws grd::Error (syntax_error, unsupported_feature, address_size_32).
ParseResult parse_module_ex(std::string_view text, const ParseOptions &options = {});

inline PtxModule parse_module(std::string_view text, const ParseOptions &options = {}) {
    return parse_module_ex(text, options).module;
}

} // namespace grd::ptx
