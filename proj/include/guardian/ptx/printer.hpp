#pragma once

#include "guardian/ptx/ast.hpp"

#include <string>

namespace grd::ptx {

// Canonical text form: one statement per line, a single tab of indentation
// inside kernel bodies, labels flush left.
std::string emit_module(const PtxModule &module);
std::string emit_kernel(const KernelDef &kernel);
std::string emit_instruction(const Instruction &instruction);
std::string emit_operand(const Operand &operand);

} // namespace grd::ptx
