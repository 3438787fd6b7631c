#include "guardian/ptx/ast.hpp"
#include "guardian/error.hpp"

#include <algorithm>
#include <array>
#include <utility>

namespace grd {

std::string_view errc_name(Errc code) noexcept {
    switch (code) {
    case Errc::syntax_error: return "SyntaxError";
    case Errc::unsupported_feature: return "UnsupportedFeature";
    case Errc::address_size_32: return "AddressSize32";
    case Errc::already_sandboxed: return "AlreadySandboxed";
    case Errc::not_power_of_two: return "NotPowerOfTwo";
    case Errc::device_oom: return "DeviceOom";
    case Errc::partition_oom: return "PartitionOom";
    case Errc::duplicate_app: return "DuplicateApp";
    case Errc::unknown_app: return "UnknownApp";
    case Errc::unknown_alloc: return "UnknownAlloc";
    case Errc::invalid_size: return "InvalidSize";
    case Errc::invalid_config: return "InvalidConfig";
    case Errc::device_fault: return "DeviceFault";
    case Errc::step_limit_exceeded: return "StepLimitExceeded";
    case Errc::type_fault: return "TypeFault";
    case Errc::unknown_kernel: return "UnknownKernel";
    case Errc::arity_mismatch: return "ArityMismatch";
    case Errc::protocol_error: return "ProtocolError";
    }
    return "Unknown";
}

} // namespace grd

namespace grd::ptx {

namespace {

constexpr std::array<std::pair<Opcode, const char *>, 28> kOpcodeNames{{
    {Opcode::ld, "ld"},       {Opcode::st, "st"},       {Opcode::atom, "atom"},
    {Opcode::red, "red"},     {Opcode::mov, "mov"},     {Opcode::add, "add"},
    {Opcode::sub, "sub"},     {Opcode::mul, "mul"},     {Opcode::mad, "mad"},
    {Opcode::div, "div"},     {Opcode::rem, "rem"},     {Opcode::and_, "and"},
    {Opcode::or_, "or"},      {Opcode::xor_, "xor"},    {Opcode::not_, "not"},
    {Opcode::shl, "shl"},     {Opcode::shr, "shr"},     {Opcode::min, "min"},
    {Opcode::max, "max"},     {Opcode::setp, "setp"},   {Opcode::selp, "selp"},
    {Opcode::cvt, "cvt"},     {Opcode::cvta, "cvta"},   {Opcode::bra, "bra"},
    {Opcode::brx_idx, "brx.idx"}, {Opcode::call, "call"}, {Opcode::ret, "ret"},
    {Opcode::bar, "bar"},
}};

} // namespace

const char *opcode_name(Opcode op) noexcept {
    for (const auto &[code, name] : kOpcodeNames) {
        if (code == op) return name;
    }
    return "?";
}

std::optional<Opcode> opcode_from_name(std::string_view name) noexcept {
    for (const auto &[code, spelled] : kOpcodeNames) {
        if (name == spelled) return code;
    }
    return std::nullopt;
}

bool Instruction::has_modifier(std::string_view m) const {
    return std::find(modifiers.begin(), modifiers.end(), m) != modifiers.end();
}

bool KernelDef::is_visible() const {
    return std::find(linkage.begin(), linkage.end(), "visible") != linkage.end();
}

std::vector<RegDecl> KernelDef::reg_decls() const {
    std::vector<RegDecl> out;
    for (const auto &st : body) {
        if (const auto *decl = std::get_if<RegDecl>(&st.node)) out.push_back(*decl);
    }
    return out;
}

std::vector<const KernelDef *> PtxModule::entries() const {
    std::vector<const KernelDef *> out;
    for (const auto &item : items) {
        if (const auto *k = std::get_if<KernelDef>(&item); k && k->kind == KernelKind::entry) {
            out.push_back(k);
        }
    }
    return out;
}

std::vector<const KernelDef *> PtxModule::funcs() const {
    std::vector<const KernelDef *> out;
    for (const auto &item : items) {
        if (const auto *k = std::get_if<KernelDef>(&item); k && k->kind == KernelKind::func) {
            out.push_back(k);
        }
    }
    return out;
}

std::vector<const KernelDef *> PtxModule::kernels() const {
    std::vector<const KernelDef *> out;
    for (const auto &item : items) {
        if (const auto *k = std::get_if<KernelDef>(&item)) out.push_back(k);
    }
    return out;
}

const KernelDef *PtxModule::find(std::string_view name) const {
    const KernelDef *declaration = nullptr;
    for (const auto &item : items) {
        if (const auto *k = std::get_if<KernelDef>(&item); k && k->name == name) {
            if (!k->declaration_only) return k;
            declaration = k;
        }
    }
    return declaration;
}

std::vector<std::string> PtxModule::passthrough() const {
    std::vector<std::string> out;
    for (const auto &item : items) {
        if (const auto *c = std::get_if<ModuleComment>(&item)) out.push_back(c->text);
    }
    return out;
}

} // namespace grd::ptx
