#include "guardian/patcher.hpp"
#include "guardian/error.hpp"
#include "guardian/ptx/memops.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <set>

namespace grd {

using namespace ptx;

const char *sandbox_mode_name(SandboxMode mode) noexcept {
    switch (mode) {
    case SandboxMode::fence_bitwise: return "fence-bitwise";
    case SandboxMode::fence_modulo: return "fence-modulo";
    case SandboxMode::check: return "check";
    }
    return "?";
}

std::optional<SandboxMode> sandbox_mode_from_name(std::string_view name) noexcept {
    if (name == "fence-bitwise") return SandboxMode::fence_bitwise;
    if (name == "fence-modulo") return SandboxMode::fence_modulo;
    if (name == "check") return SandboxMode::check;
    return std::nullopt;
}

std::uint64_t compute_mask(std::uint64_t partition_size) {
    if (!std::has_single_bit(partition_size)) {
        throw Error(Errc::not_power_of_two, "partition size " + std::to_string(partition_size) +
                                                " is not a power of two");
    }
    return partition_size - 1;
}

std::uint64_t reciprocal(std::uint64_t size) {
    if (size < 2) throw Error(Errc::invalid_size, "reciprocal needs a size of at least 2");
    const auto wide = (static_cast<unsigned __int128>(1) << 64) / size;
    return static_cast<std::uint64_t>(wide);
}

std::size_t fence_param_count(const PatchOptions &options) noexcept {
    return options.mode == SandboxMode::fence_modulo ? 3 : 2;
}

std::vector<std::uint64_t> fence_arguments(const PatchOptions &options, std::uint64_t base,
                                           std::uint64_t size) {
    switch (options.mode) {
    case SandboxMode::fence_bitwise:
        return {base, compute_mask(size)};
    case SandboxMode::fence_modulo:
        return {base, size, reciprocal(size)};
    case SandboxMode::check:
        return {base, base + size};
    }
    return {};
}

unsigned KernelReport::skipped_total() const {
    unsigned n = 0;
    for (const auto &[space, count] : skipped) n += count;
    return n;
}

namespace {

Register reg(const std::string &name) { return Register{name}; }

Immediate imm(std::int64_t v) {
    return Immediate{Immediate::Kind::integer, v, 0.0, std::to_string(v)};
}

Instruction make(Opcode op, std::vector<std::string> mods, std::vector<Operand> operands,
                 std::optional<Predicate> pred = std::nullopt) {
    Instruction ins;
    ins.predicate = std::move(pred);
    ins.opcode = op;
    ins.modifiers = std::move(mods);
    ins.operands = std::move(operands);
    return ins;
}

std::set<std::string> register_names(const KernelDef &k) {
    std::set<std::string> names;
    for (const auto &d : k.reg_decls()) {
        for (const auto &n : d.names) names.insert(n.prefix);
    }
    return names;
}

// A prefix that no declared register name or bank prefix starts with.
std::string unique_prefix(const std::set<std::string> &existing, std::string candidate) {
    const auto clashes = [&](const std::string &p) {
        return std::any_of(existing.begin(), existing.end(), [&](const std::string &e) {
            return e.compare(0, p.size(), p) == 0 || p.compare(0, e.size(), e) == 0;
        });
    };
    // appending would keep the clashing prefix, so grow it from the front
    while (clashes(candidate)) candidate.insert(1, "_");
    return candidate;
}

std::string unique_param(const KernelDef &k, const std::string &wanted) {
    const auto taken = [&](const std::string &n) {
        const auto match = [&](const ParamDecl &p) { return p.name == n; };
        return std::any_of(k.params.begin(), k.params.end(), match) ||
               std::any_of(k.return_params.begin(), k.return_params.end(), match);
    };
    if (!taken(wanted)) return wanted;
    for (int i = 1;; ++i) {
        auto name = wanted + "_" + std::to_string(i);
        if (!taken(name)) return name;
    }
}

std::vector<std::string> fence_param_suffixes(const PatchOptions &options) {
    switch (options.mode) {
    case SandboxMode::fence_bitwise: return {"base", "mask"};
    case SandboxMode::fence_modulo: return {"base", "size", "inv"};
    case SandboxMode::check: return {"base", "end"};
    }
    return {};
}

bool is_sandboxed(const KernelDef &k) {
    const auto tagged = [](const ParamDecl &p) {
        return p.name.find(kReservedParamTag) != std::string::npos;
    };
    if (std::any_of(k.params.begin(), k.params.end(), tagged)) return true;
    return std::any_of(k.body.begin(), k.body.end(), [](const Statement &s) {
        const auto *l = std::get_if<Label>(&s.node);
        return l && l->name == kOobLabel;
    });
}

struct Fence {
    std::string scratch, base, second, inv, tmp, pred, idx;
};

class KernelPatcher {
public:
    KernelPatcher(const KernelDef &k, const PatchOptions &options) : in_(k), options_(options) {}

    SandboxedKernel run() {
        if (is_sandboxed(in_)) {
            throw Error(Errc::already_sandboxed, "kernel " + in_.name + " is already sandboxed");
        }
        SandboxedKernel out{in_, {}};
        KernelDef &k = out.kernel;
        report_.kernel = k.name;
        report_.kind = k.kind;

        std::vector<std::string> param_names;
        for (const auto &suffix : fence_param_suffixes(options_)) {
            auto name = unique_param(in_, in_.name + std::string(kReservedParamTag) + suffix);
            k.params.push_back(ParamDecl{{}, "u64", name, std::nullopt, std::nullopt});
            param_names.push_back(std::move(name));
        }
        report_.params_added = static_cast<unsigned>(param_names.size());
        if (k.declaration_only) {
            out.report = report_;
            return out;
        }

        const auto existing = register_names(in_);
        const auto bank = unique_prefix(existing, "%grdreg");
        const bool recip = options_.mode == SandboxMode::fence_modulo && options_.inline_reciprocal;
        const auto bank_size = static_cast<std::uint32_t>(param_names.size() + 1 + (recip ? 1 : 0));
        fence_.scratch = bank + "0";
        fence_.base = bank + "1";
        fence_.second = bank + "2";
        if (options_.mode == SandboxMode::fence_modulo) fence_.inv = bank + "3";
        if (recip) fence_.tmp = bank + "4";
        fence_.pred = unique_prefix(existing, "%grdp") + "0";
        fence_.idx = unique_prefix(existing, "%grdidx") + "0";

        std::vector<Statement> body;
        std::size_t i = 0;
        while (i < in_.body.size() && std::holds_alternative<RegDecl>(in_.body[i].node)) {
            body.push_back(in_.body[i++]);
        }
        body.push_back(Statement{{}, RegDecl{"b64", {RegName{bank, bank_size}}}});
        const std::size_t decl_slot = body.size();
        for (std::size_t p = 0; p < param_names.size(); ++p) {
            body.push_back(Statement{{}, make(Opcode::ld, {"param", "u64"},
                                              {reg(bank + std::to_string(p + 1)),
                                               AddressOperand{param_names[p], true, 0}})});
        }
        report_.param_loads_added = static_cast<unsigned>(param_names.size());
        unsigned registers = bank_size;

        for (; i < in_.body.size(); ++i) rewrite(in_.body[i], body);

        std::vector<Statement> extra_decls;
        if (uses_pred_) {
            extra_decls.push_back(Statement{{}, RegDecl{"pred", {RegName{fence_.pred.substr(0, fence_.pred.size() - 1), 1}}}});
            ++registers;
        }
        if (uses_idx_) {
            extra_decls.push_back(Statement{{}, RegDecl{"b32", {RegName{fence_.idx.substr(0, fence_.idx.size() - 1), 1}}}});
            ++registers;
        }
        body.insert(body.begin() + static_cast<std::ptrdiff_t>(decl_slot), extra_decls.begin(), extra_decls.end());
        if (uses_oob_) {
            body.push_back(Statement{{}, Label{std::string(kOobLabel)}});
            body.push_back(Statement{{}, make(Opcode::ret, {}, {})});
        }
        report_.registers_added = registers;
        k.body = std::move(body);
        out.report = report_;
        return out;
    }

private:
    const KernelDef &in_;
    PatchOptions options_;
    KernelReport report_;
    Fence fence_;
    bool uses_pred_ = false;
    bool uses_idx_ = false;
    bool uses_oob_ = false;

    void emit(std::vector<Statement> &body, Instruction ins) {
        body.push_back(Statement{{}, std::move(ins)});
        ++report_.instructions_added;
    }

    // Check mode: a guarded access is only checked where its guard holds. The
    // guard is folded into the first compare and predicates the second, so
    // inactive threads see %grdp false without an extra branch.
    Operand guard_operand(const Instruction &ins) const {
        Register r{ins.predicate->reg};
        r.negated = ins.predicate->negated;
        return r;
    }

    void check_branch(std::vector<Statement> &body) {
        emit(body, make(Opcode::bra, {}, {LabelRef{std::string(kOobLabel)}}, Predicate{fence_.pred, false}));
        uses_oob_ = true;
        uses_pred_ = true;
    }

    void rewrite(const Statement &st, std::vector<Statement> &body) {
        const auto *ins = st.instruction();
        if (!ins) {
            body.push_back(st);
            return;
        }
        if (is_memory_opcode(ins->opcode)) return rewrite_access(st, *ins, body);
        if (ins->opcode == Opcode::brx_idx) return rewrite_indirect_branch(st, *ins, body);
        if (ins->opcode == Opcode::call) return rewrite_call(st, *ins, body);
        body.push_back(st);
    }

    void rewrite_access(const Statement &st, const Instruction &ins, std::vector<Statement> &body) {
        const auto space = state_space_of(ins);
        if (space == StateSpace::shared || space == StateSpace::param || space == StateSpace::const_) {
            ++report_.skipped[state_space_name(space)];
            body.push_back(st);
            return;
        }
        const auto idx = *address_operand_index(ins);
        const auto &addr = std::get<AddressOperand>(ins.operands[idx]);
        if (addr.symbolic) {
            throw Error(Errc::unsupported_feature, "symbolic address operand [" + addr.base + "] in " + in_.name);
        }
        if (ins.opcode == Opcode::ld) ++report_.loads;
        else if (ins.opcode == Opcode::st) ++report_.stores;
        else ++report_.atomics;

        const auto first = body.size();

        std::string source = addr.base;
        if (addr.offset != 0) {
            ++report_.base_offset;
            emit(body, make(Opcode::add, {"s64"}, {reg(fence_.scratch), reg(addr.base), imm(addr.offset)}));
            source = fence_.scratch;
        } else {
            ++report_.direct;
        }
        const auto &s = fence_.scratch;
        switch (options_.mode) {
        case SandboxMode::fence_bitwise:
            emit(body, make(Opcode::and_, {"b64"}, {reg(s), reg(source), reg(fence_.second)}));
            emit(body, make(Opcode::or_, {"b64"}, {reg(s), reg(s), reg(fence_.base)}));
            source = s;
            break;
        case SandboxMode::fence_modulo:
            emit(body, make(Opcode::sub, {"s64"}, {reg(s), reg(source), reg(fence_.base)}));
            if (options_.inline_reciprocal) {
                const auto &t = fence_.tmp;
                emit(body, make(Opcode::mul, {"hi", "u64"}, {reg(t), reg(s), reg(fence_.inv)}));
                emit(body, make(Opcode::mul, {"lo", "u64"}, {reg(t), reg(t), reg(fence_.second)}));
                emit(body, make(Opcode::sub, {"s64"}, {reg(s), reg(s), reg(t)}));
                emit(body, make(Opcode::setp, {"ge", "u64"}, {reg(fence_.pred), reg(s), reg(fence_.second)}));
                emit(body, make(Opcode::sub, {"s64"}, {reg(s), reg(s), reg(fence_.second)}, Predicate{fence_.pred, false}));
                uses_pred_ = true;
            } else {
                emit(body, make(Opcode::rem, {"u64"}, {reg(s), reg(s), reg(fence_.second)}));
            }
            emit(body, make(Opcode::add, {"s64"}, {reg(s), reg(s), reg(fence_.base)}));
            source = s;
            break;
        case SandboxMode::check:
            if (ins.predicate) {
                emit(body, make(Opcode::setp, {"lt", "and", "u64"},
                                {reg(fence_.pred), reg(source), reg(fence_.base), guard_operand(ins)}));
                emit(body, make(Opcode::setp, {"ge", "or", "u64"},
                                {reg(fence_.pred), reg(source), reg(fence_.second), reg(fence_.pred)}, *ins.predicate));
            } else {
                emit(body, make(Opcode::setp, {"lt", "u64"}, {reg(fence_.pred), reg(source), reg(fence_.base)}));
                emit(body, make(Opcode::setp, {"ge", "or", "u64"},
                                {reg(fence_.pred), reg(source), reg(fence_.second), reg(fence_.pred)}));
            }
            check_branch(body);
            break;
        }
        // comments stay in front of the whole rewritten sequence
        body[first].comments = st.comments;

        Instruction patched = ins;
        patched.operands[idx] = AddressOperand{source, false, 0};
        body.push_back(Statement{{}, std::move(patched)});
    }

    void rewrite_indirect_branch(const Statement &st, const Instruction &ins, std::vector<Statement> &body) {
        ++report_.indirect_branches;
        const auto &index = std::get<Register>(ins.operands[0]);
        const auto targets = static_cast<std::int64_t>(std::get<LabelArray>(ins.operands[1]).labels.size());
        const auto first = body.size();
        Instruction patched = ins;
        if (options_.mode == SandboxMode::check) {
            if (ins.predicate) {
                emit(body, make(Opcode::setp, {"ge", "and", "u32"},
                                {reg(fence_.pred), reg(index.name), imm(targets), guard_operand(ins)}));
            } else {
                emit(body, make(Opcode::setp, {"ge", "u32"}, {reg(fence_.pred), reg(index.name), imm(targets)}));
            }
            check_branch(body);
            body[first].comments = st.comments;
            body.push_back(Statement{{}, std::move(patched)});
            return;
        }
        emit(body, make(Opcode::rem, {"u32"}, {reg(fence_.idx), reg(index.name), imm(targets)}));
        uses_idx_ = true;
        body[first].comments = st.comments;
        patched.operands[0] = reg(fence_.idx);
        body.push_back(Statement{{}, std::move(patched)});
    }

    void rewrite_call(const Statement &st, const Instruction &ins, std::vector<Statement> &body) {
        Instruction patched = ins;
        const auto callee = std::find_if(patched.operands.begin(), patched.operands.end(), [](const Operand &o) {
            return std::holds_alternative<FuncRef>(o);
        });
        auto args_pos = callee + 1;
        if (args_pos == patched.operands.end() || !std::holds_alternative<ArgList>(*args_pos)) {
            args_pos = patched.operands.insert(args_pos, ArgList{});
        }
        auto &args = std::get<ArgList>(*args_pos);
        const auto count = fence_param_count(options_);
        for (std::size_t p = 0; p < count; ++p) {
            const auto &name = p == 0 ? fence_.base : p == 1 ? fence_.second : fence_.inv;
            args.items.push_back(reg(name));
        }
        ++report_.call_sites_patched;
        body.push_back(Statement{st.comments, std::move(patched)});
    }
};

Error annotate(const Error &e, const std::string &kernel) {
    return Error(e.code(), "kernel " + kernel + ": " + e.what(), e.line());
}

} // namespace

SandboxedKernel sandbox_kernel(const KernelDef &kernel, const PatchOptions &options) {
    return KernelPatcher(kernel, options).run();
}

SandboxedModule sandbox_module(const PtxModule &module, const PatchOptions &options) {
    std::set<std::string> funcs;
    for (const auto *f : module.funcs()) {
        if (!f->declaration_only) funcs.insert(f->name);
    }

    SandboxedModule out;
    out.module = module;
    out.report.mode = options.mode;
    for (auto &item : out.module.items) {
        auto *k = std::get_if<KernelDef>(&item);
        if (!k) continue;
        try {
            for (const auto &st : k->body) {
                const auto *ins = st.instruction();
                if (!ins || ins->opcode != Opcode::call) continue;
                for (const auto &op : ins->operands) {
                    const auto *f = std::get_if<FuncRef>(&op);
                    if (f && !funcs.count(f->name)) {
                        throw Error(Errc::unsupported_feature, "call to function " + f->name +
                                                                   " which is not defined in the module");
                    }
                }
            }
            auto result = sandbox_kernel(*k, options);
            *k = std::move(result.kernel);
            if (!k->declaration_only) out.report.kernels.push_back(std::move(result.report));
        } catch (const Error &e) {
            throw annotate(e, k->name);
        }
    }
    return out;
}

std::string instrumentation_report_json(const InstrumentationReport &report, int indent) {
    using json = nlohmann::ordered_json;
    json totals = {{"kernels", 0}, {"funcs", 0}, {"loads", 0}, {"stores", 0}, {"atomics", 0},
                   {"indirect_branches", 0}, {"instrumented", 0},
                   {"skipped", {{"shared", 0}, {"param", 0}, {"const", 0}}},
                   {"instructions_added", 0}, {"param_loads_added", 0}, {"params_added", 0},
                   {"registers_added", 0}};
    json kernels = json::array();
    for (const auto &k : report.kernels) {
        json skipped = json::object();
        for (const char *space : {"shared", "param", "const"}) {
            const auto it = k.skipped.find(space);
            const unsigned n = it == k.skipped.end() ? 0 : it->second;
            skipped[space] = n;
            totals["skipped"][space] = totals["skipped"][space].get<unsigned>() + n;
        }
        kernels.push_back({{"kernel", k.kernel},
                           {"loads", k.loads},
                           {"stores", k.stores},
                           {"atomics", k.atomics},
                           {"indirect_branches", k.indirect_branches},
                           {"kind", k.kind == KernelKind::entry ? "entry" : "func"},
                           {"instrumented", k.instrumented()},
                           {"direct", k.direct},
                           {"base_offset", k.base_offset},
                           {"skipped", skipped},
                           {"instructions_added", k.instructions_added},
                           {"param_loads_added", k.param_loads_added},
                           {"params_added", k.params_added},
                           {"registers_added", k.registers_added},
                           {"call_sites_patched", k.call_sites_patched}});
        const auto bump = [&](const char *key, unsigned v) { totals[key] = totals[key].get<unsigned>() + v; };
        bump(k.kind == KernelKind::entry ? "kernels" : "funcs", 1);
        bump("loads", k.loads);
        bump("stores", k.stores);
        bump("atomics", k.atomics);
        bump("indirect_branches", k.indirect_branches);
        bump("instrumented", k.instrumented());
        bump("instructions_added", k.instructions_added);
        bump("param_loads_added", k.param_loads_added);
        bump("params_added", k.params_added);
        bump("registers_added", k.registers_added);
    }
    json doc = {{"mode", sandbox_mode_name(report.mode)}, {"kernels", kernels}, {"totals", totals}};
    return doc.dump(indent);
}

} // namespace grd
