#pragma once

// In-memory representation of the supported PTX subset. See docs/ptx-subset.md
// for the grammar.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace grd::ptx {

enum class Opcode : std::uint8_t {
    ld, st, atom, red,
    mov, add, sub, mul, mad, div, rem,
    and_, or_, xor_, not_, shl, shr, min, max,
    setp, selp, cvt, cvta,
    bra, brx_idx, call, ret, bar,
};

const char *opcode_name(Opcode op) noexcept;
std::optional<Opcode> opcode_from_name(std::string_view name) noexcept;

inline bool is_memory_opcode(Opcode op) noexcept {
    return op == Opcode::ld || op == Opcode::st || op == Opcode::atom || op == Opcode::red;
}

struct Register {
    std::string name; // includes the leading '%'
    bool negated = false; // `!%p` form, only meaningful for predicates
    bool operator==(const Register &) const = default;
};

struct Immediate {
    enum class Kind : std::uint8_t { integer, f32, f64 };
    Kind kind = Kind::integer;
    std::int64_t int_value = 0; // integer literal (two's complement for hex > INT64_MAX)
    double float_value = 0.0;
    std::string spelling;       // exact source text, printed back verbatim
    bool operator==(const Immediate &) const = default;
};

struct AddressOperand {
    std::string base;        // register name (with '%') or symbol name
    bool symbolic = false;   // true when base is a symbol (param name etc.)
    std::int32_t offset = 0;
    bool operator==(const AddressOperand &) const = default;
};

struct VectorGroup {
    std::vector<std::string> regs;
    bool operator==(const VectorGroup &) const = default;
};

struct SpecialRegister {
    std::string name; // %tid.x, %ntid.x, %ctaid.x, %nctaid.x
    bool operator==(const SpecialRegister &) const = default;
};

struct LabelRef {
    std::string name;
    bool operator==(const LabelRef &) const = default;
};

struct LabelArray {
    std::vector<std::string> labels;
    bool operator==(const LabelArray &) const = default;
};

// Callee of a `call` instruction.
struct FuncRef {
    std::string name;
    bool operator==(const FuncRef &) const = default;
};

// Parenthesised operand list of `call`: return registers or arguments.
struct ArgList {
    std::vector<Register> items;
    bool operator==(const ArgList &) const = default;
};

using Operand = std::variant<Register, Immediate, AddressOperand, VectorGroup,
                             SpecialRegister, LabelRef, LabelArray, FuncRef, ArgList>;

struct Predicate {
    std::string reg;
    bool negated = false;
    bool operator==(const Predicate &) const = default;
};

struct Instruction {
    std::optional<Predicate> predicate;
    Opcode opcode = Opcode::mov;
    std::vector<std::string> modifiers; // without the leading '.'
    std::vector<Operand> operands;

    bool has_modifier(std::string_view m) const;
    bool operator==(const Instruction &) const = default;
};

struct Label {
    std::string name;
    bool operator==(const Label &) const = default;
};

struct RegName {
    std::string prefix;                 // `%r` for `%r<3>`, or the full name
    std::optional<std::uint32_t> count; // bank size; nullopt for a single register
    bool operator==(const RegName &) const = default;
};

struct RegDecl {
    std::string type; // "b32", "pred", ...
    std::vector<RegName> names;
    bool operator==(const RegDecl &) const = default;
};

// A statement kept as source text (lenient mode only).
struct Verbatim {
    std::string text;
    bool operator==(const Verbatim &) const = default;
};

struct Statement {
    std::vector<std::string> comments; // `//` lines preceding the statement, text after `//`
    std::variant<Instruction, Label, RegDecl, Verbatim> node;

    const Instruction *instruction() const { return std::get_if<Instruction>(&node); }
    Instruction *instruction() { return std::get_if<Instruction>(&node); }
    bool operator==(const Statement &) const = default;
};

struct ParamDecl {
    std::vector<std::string> comments; // `//` lines preceding the declaration
    std::string type; // "u64", "b8", ...
    std::string name;
    std::optional<std::uint32_t> align;
    std::optional<std::uint32_t> array_size;
    bool operator==(const ParamDecl &) const = default;
};

enum class KernelKind : std::uint8_t { entry, func };

struct KernelDef {
    std::string name;
    KernelKind kind = KernelKind::entry;
    std::vector<std::string> linkage; // "visible", "extern", "weak"
    std::vector<ParamDecl> return_params; // `.func (.param ...) name(...)`
    std::vector<ParamDecl> params;
    std::vector<std::string> attributes; // performance directives, verbatim
    bool declaration_only = false;       // prototype without a body
    std::vector<std::string> trailing_comments; // comments before the closing brace
    std::vector<Statement> body;

    bool is_visible() const;
    std::vector<RegDecl> reg_decls() const;
    bool operator==(const KernelDef &) const = default;
};

struct ModuleComment {
    std::string text; // verbatim module-level line (comment or unmodelled directive)
    bool operator==(const ModuleComment &) const = default;
};

using ModuleItem = std::variant<KernelDef, ModuleComment>;

struct PtxModule {
    int version_major = 0;
    int version_minor = 0;
    std::string target;
    int address_size = 64;
    std::vector<ModuleItem> items; // source order

    std::vector<const KernelDef *> entries() const;
    std::vector<const KernelDef *> funcs() const;
    std::vector<const KernelDef *> kernels() const; // entries and funcs in order
    const KernelDef *find(std::string_view name) const;
    std::vector<std::string> passthrough() const;
    bool operator==(const PtxModule &) const = default;
};

} // namespace grd::ptx
