#include "guardian/ptx/printer.hpp"

#include <sstream>

namespace grd::ptx {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::string join(const std::vector<std::string> &items, const char *sep) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out += sep;
        out += items[i];
    }
    return out;
}

void emit_comments(std::ostream &os, const std::vector<std::string> &comments, const char *indent) {
    for (const auto &c : comments) os << indent << "//" << (c.empty() ? "" : " ") << c << '\n';
}

std::string emit_param(const ParamDecl &p) {
    std::string out = ".param";
    if (p.align) out += " .align " + std::to_string(*p.align);
    out += " ." + p.type + " " + p.name;
    if (p.array_size) out += "[" + std::to_string(*p.array_size) + "]";
    return out;
}

void emit_param_list(std::ostream &os, const std::vector<ParamDecl> &params) {
    if (params.empty()) {
        os << "()";
        return;
    }
    os << "(\n";
    for (std::size_t i = 0; i < params.size(); ++i) {
        emit_comments(os, params[i].comments, "\t");
        os << '\t' << emit_param(params[i]) << (i + 1 < params.size() ? "," : "") << '\n';
    }
    os << ")";
}

std::string emit_reg_decl(const RegDecl &decl) {
    std::vector<std::string> names;
    for (const auto &n : decl.names) {
        names.push_back(n.count ? n.prefix + "<" + std::to_string(*n.count) + ">" : n.prefix);
    }
    return ".reg ." + decl.type + " " + join(names, ", ") + ";";
}

} // namespace

std::string emit_operand(const Operand &operand) {
    return std::visit(
        overloaded{
            [](const Register &r) { return (r.negated ? "!" : "") + r.name; },
            [](const Immediate &i) { return i.spelling; },
            [](const AddressOperand &a) {
                std::string out = "[" + a.base;
                if (a.offset > 0) out += "+" + std::to_string(a.offset);
                if (a.offset < 0) out += std::to_string(a.offset);
                return out + "]";
            },
            [](const VectorGroup &g) { return "{" + join(g.regs, ", ") + "}"; },
            [](const SpecialRegister &s) { return s.name; },
            [](const LabelRef &l) { return l.name; },
            [](const LabelArray &a) { return "{" + join(a.labels, ", ") + "}"; },
            [](const FuncRef &f) { return f.name; },
            [](const ArgList &l) {
                std::vector<std::string> names;
                for (const auto &r : l.items) names.push_back(r.name);
                return "(" + join(names, ", ") + ")";
            },
        },
        operand);
}

std::string emit_instruction(const Instruction &ins) {
    std::string out;
    if (ins.predicate) out += "@" + std::string(ins.predicate->negated ? "!" : "") + ins.predicate->reg + " ";
    out += opcode_name(ins.opcode);
    for (const auto &m : ins.modifiers) out += "." + m;
    for (std::size_t i = 0; i < ins.operands.size(); ++i) {
        out += i == 0 ? " " : ", ";
        out += emit_operand(ins.operands[i]);
    }
    return out + ";";
}

std::string emit_kernel(const KernelDef &k) {
    std::ostringstream os;
    for (const auto &l : k.linkage) os << '.' << l << ' ';
    os << (k.kind == KernelKind::entry ? ".entry " : ".func ");
    if (!k.return_params.empty()) {
        emit_param_list(os, k.return_params);
        os << ' ';
    }
    os << k.name;
    emit_param_list(os, k.params);
    os << '\n';
    for (const auto &a : k.attributes) os << a << '\n';
    if (k.declaration_only) {
        os << ";\n";
        return os.str();
    }
    os << "{\n";
    for (const auto &st : k.body) {
        emit_comments(os, st.comments, "\t");
        std::visit(overloaded{
                       [&](const Instruction &ins) { os << '\t' << emit_instruction(ins) << '\n'; },
                       [&](const Label &l) { os << l.name << ":\n"; },
                       [&](const RegDecl &d) { os << '\t' << emit_reg_decl(d) << '\n'; },
                       [&](const Verbatim &v) { os << '\t' << v.text << '\n'; },
                   },
                   st.node);
    }
    emit_comments(os, k.trailing_comments, "\t");
    os << "}\n";
    return os.str();
}

std::string emit_module(const PtxModule &m) {
    std::ostringstream os;
    os << ".version " << m.version_major << '.' << m.version_minor << '\n';
    os << ".target " << m.target << '\n';
    os << ".address_size " << m.address_size << '\n';
    for (const auto &item : m.items) {
        std::visit(overloaded{
                       [&](const KernelDef &k) { os << '\n' << emit_kernel(k); },
                       [&](const ModuleComment &c) { os << c.text << '\n'; },
                   },
                   item);
    }
    return os.str();
}

} // namespace grd::ptx
