#include "guardian/ptx/memops.hpp"

#include <algorithm>

namespace grd::ptx {

const char *state_space_name(StateSpace space) noexcept {
    switch (space) {
    case StateSpace::global: return "global";
    case StateSpace::local: return "local";
    case StateSpace::shared: return "shared";
    case StateSpace::param: return "param";
    case StateSpace::const_: return "const";
    case StateSpace::generic: return "generic";
    }
    return "?";
}

const char *addressing_mode_name(AddressingMode mode) noexcept {
    switch (mode) {
    case AddressingMode::direct: return "direct";
    case AddressingMode::base_offset: return "base+offset";
    case AddressingMode::symbolic: return "symbolic";
    }
    return "?";
}

StateSpace state_space_of(const Instruction &ins) noexcept {
    for (const auto &m : ins.modifiers) {
        if (m == "global") return StateSpace::global;
        if (m == "local") return StateSpace::local;
        if (m == "shared") return StateSpace::shared;
        if (m == "param") return StateSpace::param;
        if (m == "const") return StateSpace::const_;
    }
    return StateSpace::generic;
}

std::optional<std::size_t> address_operand_index(const Instruction &ins) noexcept {
    for (std::size_t i = 0; i < ins.operands.size(); ++i) {
        if (std::holds_alternative<AddressOperand>(ins.operands[i])) return i;
    }
    return std::nullopt;
}

unsigned type_width(std::string_view type) noexcept {
    if (type == "b8" || type == "u8" || type == "s8") return 1;
    if (type == "b16" || type == "u16" || type == "s16") return 2;
    if (type == "b32" || type == "u32" || type == "s32" || type == "f32") return 4;
    if (type == "b64" || type == "u64" || type == "s64" || type == "f64") return 8;
    return 0;
}

std::vector<MemoryOp> list_memory_ops(const KernelDef &kernel) {
    std::vector<MemoryOp> ops;
    for (std::size_t i = 0; i < kernel.body.size(); ++i) {
        const auto *ins = kernel.body[i].instruction();
        if (!ins || !is_memory_opcode(ins->opcode)) continue;
        const auto idx = address_operand_index(*ins);
        const auto space = state_space_of(*ins);
        AddressingMode mode = AddressingMode::direct;
        if (idx) {
            // a param name is the parameter's address, so `[name]` is direct
            const auto &addr = std::get<AddressOperand>(ins->operands[*idx]);
            if (addr.symbolic && space != StateSpace::param) mode = AddressingMode::symbolic;
            else if (addr.offset != 0) mode = AddressingMode::base_offset;
        }
        ops.push_back(MemoryOp{i, ins->opcode, space, mode});
    }
    return ops;
}

} // namespace grd::ptx
