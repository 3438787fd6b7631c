#pragma once

#include "guardian/ptx/ast.hpp"

#include <cstddef>
#include <optional>
#include <string_view>
#include <vector>

namespace grd::ptx {

enum class StateSpace : std::uint8_t { global, local, shared, param, const_, generic };
enum class AddressingMode : std::uint8_t { direct, base_offset, symbolic };

const char *state_space_name(StateSpace space) noexcept;
const char *addressing_mode_name(AddressingMode mode) noexcept;

struct MemoryOp {
    std::size_t statement_index;
    Opcode opcode;
    StateSpace space;
    AddressingMode addressing;

    // global, local and generic accesses are fenced; the rest are left alone
    bool instrumentable() const noexcept {
        return space == StateSpace::global || space == StateSpace::local ||
               space == StateSpace::generic;
    }
};

StateSpace state_space_of(const Instruction &instruction) noexcept;

// Index of the single AddressOperand of a memory instruction.
std::optional<std::size_t> address_operand_index(const Instruction &instruction) noexcept;

std::vector<MemoryOp> list_memory_ops(const KernelDef &kernel);

// Width in bytes of one element of the instruction's type suffix (0 if none).
unsigned type_width(std::string_view type) noexcept;

} // namespace grd::ptx
