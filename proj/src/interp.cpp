#include "guardian/interp.hpp"
#include "guardian/error.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

namespace grd {

using namespace ptx;

// ---------------------------------------------------------------------------
// SimMemory

namespace {

std::string hex(std::uint64_t v) {
    std::ostringstream os;
    os << "0x" << std::hex << v;
    return os.str();
}

} // namespace

SimMemory::SimMemory(std::uint64_t device_base, std::uint64_t device_size) : base_(device_base), size_(device_size) {
    if (device_size == 0 || device_base + device_size < device_base) {
        throw Error(Errc::invalid_config, "invalid simulated device range");
    }
}

bool SimMemory::contains(std::uint64_t addr, std::uint64_t len) const noexcept {
    return range_within(base_, size_, addr, len);
}

void SimMemory::check(std::uint64_t addr, std::uint64_t len) const {
    if (!contains(addr, len)) {
        throw Error(Errc::device_fault, "access of " + std::to_string(len) + " bytes at " + hex(addr) +
                                            " is outside device memory");
    }
}

const SimMemory::Page *SimMemory::page(std::uint64_t index) const {
    auto it = pages_.find(index);
    return it == pages_.end() ? nullptr : &it->second;
}

void SimMemory::read(std::uint64_t addr, std::span<std::uint8_t> out) const {
    check(addr, out.size());
    std::uint64_t off = addr - base_;
    std::size_t done = 0;
    while (done < out.size()) {
        const auto index = off / kPageSize;
        const auto in_page = off % kPageSize;
        const auto n = std::min<std::uint64_t>(kPageSize - in_page, out.size() - done);
        if (const auto *p = page(index)) {
            std::memcpy(out.data() + done, p->data() + in_page, n);
        } else {
            std::memset(out.data() + done, 0, n);
        }
        done += n;
        off += n;
    }
}

void SimMemory::write(std::uint64_t addr, std::span<const std::uint8_t> data) {
    check(addr, data.size());
    std::uint64_t off = addr - base_;
    std::size_t done = 0;
    while (done < data.size()) {
        const auto index = off / kPageSize;
        const auto in_page = off % kPageSize;
        const auto n = std::min<std::uint64_t>(kPageSize - in_page, data.size() - done);
        auto &p = pages_[index];
        if (p.empty()) p.assign(kPageSize, 0);
        std::memcpy(p.data() + in_page, data.data() + done, n);
        done += n;
        off += n;
    }
}

std::vector<std::uint8_t> SimMemory::read_bytes(std::uint64_t addr, std::uint64_t len) const {
    check(addr, len);
    std::vector<std::uint8_t> out(len);
    read(addr, out);
    return out;
}

std::uint64_t SimMemory::read_uint(std::uint64_t addr, unsigned width) const {
    std::uint8_t buf[8] = {};
    read(addr, std::span<std::uint8_t>(buf, width));
    std::uint64_t v = 0;
    for (unsigned i = 0; i < width; ++i) v |= std::uint64_t{buf[i]} << (8 * i);
    return v;
}

void SimMemory::write_uint(std::uint64_t addr, std::uint64_t value, unsigned width) {
    std::uint8_t buf[8];
    for (unsigned i = 0; i < width; ++i) buf[i] = static_cast<std::uint8_t>(value >> (8 * i));
    write(addr, std::span<const std::uint8_t>(buf, width));
}

bool SimMemory::equal_range(const SimMemory &other, std::uint64_t lo, std::uint64_t hi) const {
    static const Page zero(kPageSize, 0);
    if (hi <= lo) return true;
    const auto lo_off = lo - base_;
    const auto hi_off = hi - base_;
    std::vector<std::uint64_t> indices;
    for (const auto &[i, p] : pages_) indices.push_back(i);
    for (const auto &[i, p] : other.pages_) indices.push_back(i);
    std::sort(indices.begin(), indices.end());
    indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
    for (auto index : indices) {
        const std::uint64_t page_lo = index * kPageSize;
        const std::uint64_t page_hi = page_lo + kPageSize;
        if (page_hi <= lo_off || page_lo >= hi_off) continue;
        const auto *a = page(index);
        const auto *b = other.page(index);
        const Page &pa = a ? *a : zero;
        const Page &pb = b ? *b : zero;
        const auto from = std::max(page_lo, lo_off) - page_lo;
        const auto to = std::min(page_hi, hi_off) - page_lo;
        if (std::memcmp(pa.data() + from, pb.data() + from, to - from) != 0) return false;
    }
    return true;
}

bool SimMemory::equal_outside(const SimMemory &other, std::uint64_t base, std::uint64_t size) const {
    return equal_range(other, base_, std::max(base, base_)) &&
           equal_range(other, std::min(base + size, base_ + size_), base_ + size_);
}

bool SimMemory::operator==(const SimMemory &other) const {
    return base_ == other.base_ && size_ == other.size_ && equal_range(other, base_, base_ + size_);
}

ArgValue ArgValue::f32(float v) { return {ArgKind::f32, std::bit_cast<std::uint32_t>(v)}; }

const char *access_kind_name(AccessKind kind) noexcept {
    switch (kind) {
    case AccessKind::load: return "load";
    case AccessKind::store: return "store";
    case AccessKind::atomic: return "atomic";
    }
    return "?";
}

bool AccessTrace::device_accesses_within(std::uint64_t base, std::uint64_t size) const {
    return std::all_of(entries.begin(), entries.end(), [&](const AccessRecord &r) {
        const bool device = r.space == StateSpace::global || r.space == StateSpace::local ||
                            r.space == StateSpace::generic;
        return !device || range_within(base, size, r.address, r.width);
    });
}

// ---------------------------------------------------------------------------
// Loaded modules and the symbol table

struct FuncInfo {
    const KernelDef *def = nullptr;
    std::unordered_map<std::string, std::size_t> labels;
};

struct LoadedModule {
    PtxModule module;
    std::unordered_map<std::string, FuncInfo> functions;
};

std::shared_ptr<const LoadedModule> make_loaded_module(PtxModule module) {
    auto loaded = std::make_shared<LoadedModule>();
    loaded->module = std::move(module);
    for (const auto *k : loaded->module.kernels()) {
        if (k->declaration_only) continue;
        FuncInfo info;
        info.def = k;
        for (std::size_t i = 0; i < k->body.size(); ++i) {
            if (const auto *l = std::get_if<Label>(&k->body[i].node)) info.labels.emplace(l->name, i);
        }
        loaded->functions[k->name] = std::move(info);
    }
    return loaded;
}

KernelHandle find_kernel(const std::shared_ptr<const LoadedModule> &module, std::string_view name) {
    auto it = module->functions.find(std::string(name));
    if (it == module->functions.end()) {
        throw Error(Errc::unknown_kernel, "kernel " + std::string(name) + " is not in the module");
    }
    return KernelHandle(module, it->second.def);
}

bool SymbolTable::insert(const std::string &name, SymbolEntry entry) {
    auto [it, inserted] = entries_.insert_or_assign(name, std::move(entry));
    return !inserted;
}

const SymbolEntry *SymbolTable::lookup(std::string_view name) const {
    auto it = entries_.find(name);
    return it == entries_.end() ? nullptr : &it->second;
}

std::vector<std::string> SymbolTable::names() const {
    std::vector<std::string> out;
    for (const auto &[name, entry] : entries_) out.push_back(name);
    return out;
}

std::vector<std::string> load_module(const PtxModule &module, SymbolTable &symtab) {
    const auto loaded = make_loaded_module(module);
    std::vector<std::string> warnings;
    for (const auto *k : loaded->module.entries()) {
        if (k->declaration_only) continue;
        if (symtab.insert(k->name, SymbolEntry{KernelHandle(loaded, k), std::nullopt, std::nullopt})) {
            warnings.push_back("kernel " + k->name + " replaced by a later load");
        }
    }
    return warnings;
}

// ---------------------------------------------------------------------------
// Execution

namespace {

struct TypeInfo {
    unsigned width = 0; // bytes
    bool is_signed = false;
    bool is_float = false;
    bool is_pred = false;
};

std::optional<TypeInfo> type_info(std::string_view t) {
    if (t == "pred") return TypeInfo{1, false, false, true};
    const unsigned w = type_width(t);
    if (w == 0) return std::nullopt;
    return TypeInfo{w, t.front() == 's', t.front() == 'f', false};
}

std::uint64_t width_mask(unsigned bytes) {
    return bytes >= 8 ? ~std::uint64_t{0} : (std::uint64_t{1} << (8 * bytes)) - 1;
}

std::uint64_t trunc(std::uint64_t v, unsigned bytes) { return v & width_mask(bytes); }

std::int64_t sext(std::uint64_t v, unsigned bytes) {
    if (bytes >= 8) return static_cast<std::int64_t>(v);
    const unsigned shift = 64 - 8 * bytes;
    return static_cast<std::int64_t>(v << shift) >> shift;
}

double to_double(std::uint64_t bits, const TypeInfo &t) {
    if (t.width == 4) return std::bit_cast<float>(static_cast<std::uint32_t>(bits));
    return std::bit_cast<double>(bits);
}

std::uint64_t from_double(double v, const TypeInfo &t) {
    if (t.width == 4) return std::bit_cast<std::uint32_t>(static_cast<float>(v));
    return std::bit_cast<std::uint64_t>(v);
}

std::vector<TypeInfo> types_of(const Instruction &ins) {
    std::vector<TypeInfo> out;
    for (const auto &m : ins.modifiers) {
        if (auto t = type_info(m)) out.push_back(*t);
    }
    return out;
}

unsigned vector_arity(const Instruction &ins) {
    if (ins.has_modifier("v2")) return 2;
    if (ins.has_modifier("v4")) return 4;
    return 1;
}

class ThreadRunner {
public:
    ThreadRunner(const LoadedModule &module, SimMemory &memory, std::vector<std::uint8_t> &shared,
                 AccessTrace &trace, const LaunchConfig &cfg, std::uint64_t cta, std::uint64_t tid)
        : module_(module), mem_(memory), shared_(shared), trace_(trace), cfg_(cfg), cta_(cta), tid_(tid),
          linear_(cta * cfg.block_dim_x + tid) {}

    void run(const FuncInfo &entry) {
        Frame frame;
        frame.fn = &entry;
        const auto &params = entry.def->params;
        for (std::size_t i = 0; i < params.size(); ++i) {
            const unsigned w = type_width(params[i].type);
            frame.params[params[i].name] = to_bytes(cfg_.args[i].bits, w);
        }
        stack_.push_back(std::move(frame));
        while (!stack_.empty()) step();
    }

private:
    struct Frame {
        const FuncInfo *fn = nullptr;
        std::unordered_map<std::string, std::uint64_t> regs;
        std::unordered_map<std::string, std::vector<std::uint8_t>> params;
        std::size_t pc = 0;
        std::vector<std::string> return_regs;
    };

    const LoadedModule &module_;
    SimMemory &mem_;
    std::vector<std::uint8_t> &shared_;
    AccessTrace &trace_;
    const LaunchConfig &cfg_;
    std::uint64_t cta_, tid_, linear_;
    std::uint64_t steps_ = 0;
    std::vector<Frame> stack_;

    static std::vector<std::uint8_t> to_bytes(std::uint64_t v, unsigned w) {
        std::vector<std::uint8_t> out(w);
        for (unsigned i = 0; i < w; ++i) out[i] = static_cast<std::uint8_t>(v >> (8 * i));
        return out;
    }

    static std::uint64_t from_bytes(const std::uint8_t *p, unsigned w) {
        std::uint64_t v = 0;
        for (unsigned i = 0; i < w; ++i) v |= std::uint64_t{p[i]} << (8 * i);
        return v;
    }

    Frame &frame() { return stack_.back(); }

    std::string where() const {
        const auto &f = stack_.back();
        return " (thread " + std::to_string(linear_) + ", " + f.fn->def->name + " statement " +
               std::to_string(f.pc) + ")";
    }

    [[noreturn]] void fault(Errc code, const std::string &why) const { throw Error(code, why + where()); }

    TypeInfo main_type(const Instruction &ins) const {
        const auto types = types_of(ins);
        if (types.empty()) fault(Errc::type_fault, std::string(opcode_name(ins.opcode)) + " without a type");
        return types.back();
    }

    std::uint64_t special(const std::string &name) const {
        const auto dim = name.back();
        const auto base = name.substr(0, name.size() - 2);
        if (dim != 'x') return (base == "%ntid" || base == "%nctaid") ? 1 : 0;
        if (base == "%tid") return tid_;
        if (base == "%ntid") return cfg_.block_dim_x;
        if (base == "%ctaid") return cta_;
        return cfg_.grid_dim_x;
    }

    std::uint64_t reg_value(const std::string &name) {
        auto &regs = frame().regs;
        auto it = regs.find(name);
        return it == regs.end() ? 0 : it->second;
    }

    void set_reg(const std::string &name, std::uint64_t v) { frame().regs[name] = v; }

    std::uint64_t read(const Operand &op, const TypeInfo &t) {
        if (const auto *r = std::get_if<Register>(&op)) {
            const auto v = reg_value(r->name);
            if (r->negated) return v == 0 ? 1 : 0;
            return t.is_pred ? (v != 0) : trunc(v, t.width);
        }
        if (const auto *imm = std::get_if<Immediate>(&op)) {
            if (imm->kind == Immediate::Kind::integer) {
                if (t.is_float) return from_double(static_cast<double>(imm->int_value), t);
                return t.is_pred ? (imm->int_value != 0) : trunc(static_cast<std::uint64_t>(imm->int_value), t.width);
            }
            if (!t.is_float) fault(Errc::type_fault, "float immediate used as an integer");
            return from_double(imm->float_value, t);
        }
        if (const auto *s = std::get_if<SpecialRegister>(&op)) return trunc(special(s->name), t.width);
        fault(Errc::type_fault, "operand kind cannot be read as a value");
    }

    const std::string &dest(const Instruction &ins, std::size_t i = 0) const {
        if (i >= ins.operands.size()) fault(Errc::type_fault, "missing operand");
        const auto *r = std::get_if<Register>(&ins.operands[i]);
        if (!r || r->negated) fault(Errc::type_fault, "destination must be a register");
        return r->name;
    }

    const Operand &src(const Instruction &ins, std::size_t i) const {
        if (i >= ins.operands.size()) fault(Errc::type_fault, "missing operand");
        return ins.operands[i];
    }

    void count_step() {
        if (++steps_ > cfg_.step_limit) {
            throw Error(Errc::step_limit_exceeded, "thread " + std::to_string(linear_) + " exceeded the step limit of " +
                                                       std::to_string(cfg_.step_limit) + " instructions");
        }
        ++trace_.instructions;
    }

    void step() {
        Frame &f = frame();
        const auto &body = f.fn->def->body;
        if (f.pc >= body.size()) {
            do_return();
            return;
        }
        const Statement &st = body[f.pc];
        if (std::holds_alternative<Label>(st.node) || std::holds_alternative<RegDecl>(st.node)) {
            ++f.pc;
            return;
        }
        if (std::holds_alternative<Verbatim>(st.node)) {
            fault(Errc::type_fault, "cannot execute verbatim statement '" + std::get<Verbatim>(st.node).text + "'");
        }
        const Instruction &ins = std::get<Instruction>(st.node);
        count_step();
        if (ins.predicate) {
            const bool p = reg_value(ins.predicate->reg) != 0;
            if (p == ins.predicate->negated) {
                ++f.pc;
                return;
            }
        }
        execute(ins);
    }

    void execute(const Instruction &ins) {
        switch (ins.opcode) {
        case Opcode::ld:
        case Opcode::st:
        case Opcode::atom:
        case Opcode::red:
            memory_op(ins);
            break;
        case Opcode::bra: {
            const auto &label = std::get<LabelRef>(ins.operands[0]).name;
            if (label == kOobLabel) ++trace_.oob_exits;
            jump(label);
            return;
        }
        case Opcode::brx_idx: {
            const auto index = read(src(ins, 0), TypeInfo{4, false, false, false});
            const auto &labels = std::get<LabelArray>(ins.operands[1]).labels;
            if (index >= labels.size()) {
                fault(Errc::type_fault, "brx.idx index " + std::to_string(index) + " outside a " +
                                            std::to_string(labels.size()) + "-entry target list");
            }
            jump(labels[index]);
            return;
        }
        case Opcode::call:
            call(ins);
            return;
        case Opcode::ret:
            do_return();
            return;
        case Opcode::bar:
            break; // threads run sequentially, so barriers are no-ops
        default:
            arithmetic(ins);
            break;
        }
        ++frame().pc;
    }

    void jump(const std::string &label) {
        const auto &labels = frame().fn->labels;
        auto it = labels.find(label);
        if (it == labels.end()) fault(Errc::type_fault, "branch to unknown label " + label);
        frame().pc = it->second;
    }

    void call(const Instruction &ins) {
        const ArgList *rets = nullptr;
        const ArgList *args = nullptr;
        const FuncRef *callee = nullptr;
        for (const auto &op : ins.operands) {
            if (const auto *f = std::get_if<FuncRef>(&op)) callee = f;
            else if (const auto *l = std::get_if<ArgList>(&op)) (callee ? args : rets) = l;
        }
        auto it = module_.functions.find(callee->name);
        if (it == module_.functions.end()) fault(Errc::type_fault, "call to undefined function " + callee->name);
        const FuncInfo &fn = it->second;
        const auto &params = fn.def->params;
        const auto &ret_params = fn.def->return_params;
        const std::size_t nargs = args ? args->items.size() : 0;
        const std::size_t nrets = rets ? rets->items.size() : 0;
        if (nargs != params.size() || nrets != ret_params.size()) {
            fault(Errc::type_fault, "call to " + callee->name + " does not match its parameter list");
        }
        if (stack_.size() >= 1024) fault(Errc::type_fault, "call depth limit exceeded");
        Frame next;
        next.fn = &fn;
        for (std::size_t i = 0; i < nargs; ++i) {
            next.params[params[i].name] = to_bytes(reg_value(args->items[i].name), type_width(params[i].type));
        }
        for (const auto &p : ret_params) next.params[p.name] = std::vector<std::uint8_t>(type_width(p.type), 0);
        for (std::size_t i = 0; i < nrets; ++i) next.return_regs.push_back(rets->items[i].name);
        ++frame().pc;
        stack_.push_back(std::move(next));
    }

    void do_return() {
        Frame done = std::move(stack_.back());
        stack_.pop_back();
        if (stack_.empty()) return;
        const auto &ret_params = done.fn->def->return_params;
        for (std::size_t i = 0; i < done.return_regs.size(); ++i) {
            const auto &bytes = done.params[ret_params[i].name];
            set_reg(done.return_regs[i], from_bytes(bytes.data(), static_cast<unsigned>(bytes.size())));
        }
    }

    // --- memory ---------------------------------------------------------

    void record(const Instruction &ins, StateSpace space, std::uint64_t addr, unsigned width) {
        AccessRecord r;
        r.thread = linear_;
        r.function = frame().fn->def->name;
        r.statement = frame().pc;
        r.kind = ins.opcode == Opcode::ld ? AccessKind::load
                 : ins.opcode == Opcode::st ? AccessKind::store
                                            : AccessKind::atomic;
        r.space = space;
        r.address = addr;
        r.width = width;
        trace_.entries.push_back(std::move(r));
    }

    // Resolves the address and returns a pointer-like accessor for param and
    // shared space, or nullptr for device memory.
    struct Target {
        std::uint8_t *local = nullptr; // param/shared storage
        std::uint64_t address = 0;     // device address or space offset
    };

    Target resolve(const Instruction &ins, StateSpace space, const AddressOperand &a, unsigned width) {
        Target t;
        if (space == StateSpace::param) {
            if (!a.symbolic) fault(Errc::type_fault, "param access through a register");
            auto it = frame().params.find(a.base);
            if (it == frame().params.end()) fault(Errc::type_fault, "unknown parameter " + a.base);
            if (a.offset < 0 || static_cast<std::uint64_t>(a.offset) + width > it->second.size()) {
                fault(Errc::type_fault, "parameter access out of range for " + a.base);
            }
            t.local = it->second.data() + a.offset;
            t.address = static_cast<std::uint64_t>(a.offset);
            return t;
        }
        if (a.symbolic) fault(Errc::type_fault, "symbolic address operand [" + a.base + "]");
        const std::uint64_t addr = reg_value(a.base) + static_cast<std::uint64_t>(static_cast<std::int64_t>(a.offset));
        if (addr % width != 0) {
            fault(Errc::device_fault, "misaligned " + std::to_string(width) + "-byte access at " + hex(addr));
        }
        if (space == StateSpace::const_) fault(Errc::type_fault, "const state space is not modelled");
        if (space == StateSpace::shared) {
            if (!range_within(0, shared_.size(), addr, width)) {
                fault(Errc::device_fault, "shared access at offset " + hex(addr) + " outside the block's shared memory");
            }
            t.local = shared_.data() + addr;
        } else if (!mem_.contains(addr, width)) {
            fault(Errc::device_fault, "access of " + std::to_string(width) + " bytes at " + hex(addr) +
                                          " is outside device memory");
        }
        (void)ins;
        t.address = addr;
        return t;
    }

    std::uint64_t load(const Target &t, unsigned w) {
        if (t.local) return from_bytes(t.local, w);
        return mem_.read_uint(t.address, w);
    }

    void store(const Target &t, std::uint64_t v, unsigned w) {
        if (t.local) {
            for (unsigned i = 0; i < w; ++i) t.local[i] = static_cast<std::uint8_t>(v >> (8 * i));
            return;
        }
        mem_.write_uint(t.address, v, w);
    }

    static Target offset_target(Target t, unsigned by) {
        if (t.local) t.local += by;
        t.address += by;
        return t;
    }

    void memory_op(const Instruction &ins) {
        const auto space = state_space_of(ins);
        const TypeInfo t = main_type(ins);
        if (t.is_pred) fault(Errc::type_fault, "memory access with .pred type");
        const unsigned n = vector_arity(ins);
        const unsigned total = t.width * n;
        const auto &addr = std::get<AddressOperand>(ins.operands[*address_operand_index(ins)]);
        const Target target = resolve(ins, space, addr, total);

        switch (ins.opcode) {
        case Opcode::ld: {
            std::vector<std::string> dsts;
            if (const auto *g = std::get_if<VectorGroup>(&ins.operands[0])) dsts = g->regs;
            else dsts.push_back(dest(ins));
            if (dsts.size() != n) fault(Errc::type_fault, "vector width does not match destination count");
            for (unsigned i = 0; i < n; ++i) {
                auto v = load(offset_target(target, i * t.width), t.width);
                if (t.is_signed) v = static_cast<std::uint64_t>(sext(v, t.width));
                set_reg(dsts[i], v);
            }
            break;
        }
        case Opcode::st: {
            std::vector<std::uint64_t> values;
            if (const auto *g = std::get_if<VectorGroup>(&ins.operands[1])) {
                for (const auto &r : g->regs) values.push_back(trunc(reg_value(r), t.width));
            } else {
                values.push_back(read(src(ins, 1), t));
            }
            if (values.size() != n) fault(Errc::type_fault, "vector width does not match source count");
            for (unsigned i = 0; i < n; ++i) store(offset_target(target, i * t.width), values[i], t.width);
            break;
        }
        case Opcode::atom:
        case Opcode::red: {
            if (n != 1) fault(Errc::type_fault, "vector atomics are not supported");
            const bool is_atom = ins.opcode == Opcode::atom;
            const std::uint64_t old = load(target, t.width);
            const std::uint64_t b = read(src(ins, is_atom ? 2 : 1), t);
            std::uint64_t next = old;
            const auto has = [&](const char *m) { return ins.has_modifier(m); };
            if (has("cas")) {
                const std::uint64_t c = read(src(ins, 3), t);
                next = old == b ? c : old;
            } else if (has("exch")) {
                next = b;
            } else if (has("add")) {
                next = t.is_float ? from_double(to_double(old, t) + to_double(b, t), t) : trunc(old + b, t.width);
            } else if (has("min") || has("max")) {
                const bool less = t.is_float ? to_double(b, t) < to_double(old, t)
                                  : t.is_signed ? sext(b, t.width) < sext(old, t.width)
                                                : b < old;
                next = has("min") ? (less ? b : old) : (less ? old : b);
                if (has("max") && b == old) next = old;
            } else if (has("inc")) {
                next = old >= b ? 0 : old + 1;
            } else if (has("dec")) {
                next = (old == 0 || old > b) ? b : old - 1;
            } else if (has("and")) {
                next = old & b;
            } else if (has("or")) {
                next = old | b;
            } else if (has("xor")) {
                next = old ^ b;
            } else {
                fault(Errc::type_fault, "atomic without a supported operation");
            }
            store(target, next, t.width);
            if (is_atom) set_reg(dest(ins), t.is_signed ? static_cast<std::uint64_t>(sext(old, t.width)) : old);
            break;
        }
        default:
            break;
        }
        record(ins, space, target.address, total);
    }

    // --- arithmetic -------------------------------------------------------

    static bool compare(std::string_view cmp, std::uint64_t a, std::uint64_t b, const TypeInfo &t) {
        if (t.is_float) {
            const double x = to_double(a, t), y = to_double(b, t);
            if (cmp == "eq") return x == y;
            if (cmp == "ne") return !std::isnan(x) && !std::isnan(y) && x != y;
            if (cmp == "lt") return x < y;
            if (cmp == "le") return x <= y;
            if (cmp == "gt") return x > y;
            if (cmp == "ge") return x >= y;
            return false;
        }
        const bool sign = t.is_signed && cmp != "lo" && cmp != "ls" && cmp != "hi" && cmp != "hs";
        const auto sa = sext(a, t.width), sb = sext(b, t.width);
        if (cmp == "eq") return a == b;
        if (cmp == "ne") return a != b;
        if (cmp == "lt") return sign ? sa < sb : a < b;
        if (cmp == "le") return sign ? sa <= sb : a <= b;
        if (cmp == "gt") return sign ? sa > sb : a > b;
        if (cmp == "ge") return sign ? sa >= sb : a >= b;
        if (cmp == "lo") return a < b;
        if (cmp == "ls") return a <= b;
        if (cmp == "hi") return a > b;
        if (cmp == "hs") return a >= b;
        return false;
    }

    std::uint64_t multiply(const Instruction &ins, const TypeInfo &t, std::uint64_t a, std::uint64_t b,
                           unsigned &result_width) {
        result_width = t.width;
        if (t.is_float) return from_double(to_double(a, t) * to_double(b, t), t);
        if (ins.has_modifier("wide")) {
            if (t.width > 4) fault(Errc::type_fault, "mul.wide needs a 16- or 32-bit type");
            result_width = t.width * 2;
            const auto product = t.is_signed ? static_cast<std::uint64_t>(sext(a, t.width) * sext(b, t.width))
                                             : a * b;
            return trunc(product, result_width);
        }
        if (ins.has_modifier("hi")) {
            if (t.is_signed) {
                const __int128 p = static_cast<__int128>(sext(a, t.width)) * sext(b, t.width);
                return trunc(static_cast<std::uint64_t>(p >> (8 * t.width)), t.width);
            }
            const unsigned __int128 p = static_cast<unsigned __int128>(a) * b;
            return trunc(static_cast<std::uint64_t>(p >> (8 * t.width)), t.width);
        }
        return trunc(a * b, t.width);
    }

    void arithmetic(const Instruction &ins) {
        switch (ins.opcode) {
        case Opcode::setp: return setp(ins);
        case Opcode::cvt: return convert(ins);
        default: break;
        }
        const TypeInfo t = main_type(ins);
        const std::string &d = dest(ins);
        const auto a = [&] { return read(src(ins, 1), t); };
        const auto b = [&] { return read(src(ins, 2), t); };
        const auto fl = [&](double v) { return from_double(v, t); };
        const auto fa = [&] { return to_double(a(), t); };
        const auto fb = [&] { return to_double(b(), t); };

        switch (ins.opcode) {
        case Opcode::mov:
        case Opcode::cvta:
            set_reg(d, a());
            return;
        case Opcode::add:
            set_reg(d, t.is_float ? fl(fa() + fb()) : trunc(a() + b(), t.width));
            return;
        case Opcode::sub:
            set_reg(d, t.is_float ? fl(fa() - fb()) : trunc(a() - b(), t.width));
            return;
        case Opcode::mul: {
            unsigned w = 0;
            set_reg(d, multiply(ins, t, a(), b(), w));
            return;
        }
        case Opcode::mad: {
            unsigned w = 0;
            const auto p = multiply(ins, t, a(), b(), w);
            if (t.is_float) {
                set_reg(d, fl(to_double(p, t) + to_double(read(src(ins, 3), t), t)));
            } else {
                const TypeInfo ct{w, t.is_signed, false, false};
                set_reg(d, trunc(p + read(src(ins, 3), ct), w));
            }
            return;
        }
        case Opcode::div:
        case Opcode::rem: {
            if (t.is_float) {
                if (ins.opcode == Opcode::rem) fault(Errc::type_fault, "rem on a float type");
                set_reg(d, fl(fa() / fb()));
                return;
            }
            const auto x = a(), y = b();
            if (y == 0) fault(Errc::type_fault, std::string(opcode_name(ins.opcode)) + " by zero");
            const bool is_div = ins.opcode == Opcode::div;
            if (t.is_signed) {
                const auto sx = sext(x, t.width), sy = sext(y, t.width);
                if (sy == -1) {
                    set_reg(d, is_div ? trunc(0 - x, t.width) : 0);
                    return;
                }
                set_reg(d, trunc(static_cast<std::uint64_t>(is_div ? sx / sy : sx % sy), t.width));
            } else {
                set_reg(d, is_div ? x / y : x % y);
            }
            return;
        }
        case Opcode::and_:
            set_reg(d, a() & b());
            return;
        case Opcode::or_:
            set_reg(d, a() | b());
            return;
        case Opcode::xor_:
            set_reg(d, a() ^ b());
            return;
        case Opcode::not_:
            set_reg(d, t.is_pred ? (a() == 0) : trunc(~a(), t.width));
            return;
        case Opcode::shl:
        case Opcode::shr: {
            const auto x = a();
            const auto amount = read(src(ins, 2), TypeInfo{4, false, false, false});
            const unsigned bits = 8 * t.width;
            std::uint64_t r = 0;
            if (ins.opcode == Opcode::shl) {
                r = amount >= bits ? 0 : trunc(x << amount, t.width);
            } else if (t.is_signed) {
                const auto s = sext(x, t.width);
                r = trunc(static_cast<std::uint64_t>(amount >= bits ? (s < 0 ? -1 : 0) : s >> amount), t.width);
            } else {
                r = amount >= bits ? 0 : x >> amount;
            }
            set_reg(d, r);
            return;
        }
        case Opcode::min:
        case Opcode::max: {
            const auto x = a(), y = b();
            bool x_less;
            if (t.is_float) x_less = to_double(x, t) < to_double(y, t);
            else if (t.is_signed) x_less = sext(x, t.width) < sext(y, t.width);
            else x_less = x < y;
            set_reg(d, (ins.opcode == Opcode::min) == x_less ? x : y);
            return;
        }
        case Opcode::selp: {
            const auto c = read(src(ins, 3), TypeInfo{1, false, false, true});
            set_reg(d, c ? a() : b());
            return;
        }
        default:
            fault(Errc::type_fault, std::string("cannot execute ") + opcode_name(ins.opcode));
        }
    }

    void setp(const Instruction &ins) {
        const TypeInfo t = main_type(ins);
        if (ins.modifiers.empty()) fault(Errc::type_fault, "setp without a comparison");
        const auto &cmp = ins.modifiers.front();
        bool r = compare(cmp, read(src(ins, 1), t), read(src(ins, 2), t), t);
        if (ins.modifiers.size() >= 3) {
            const auto &combine = ins.modifiers[1];
            if (combine == "and" || combine == "or" || combine == "xor") {
                const bool c = read(src(ins, 3), TypeInfo{1, false, false, true}) != 0;
                r = combine == "and" ? (r && c) : combine == "or" ? (r || c) : (r != c);
            }
        }
        set_reg(dest(ins), r ? 1 : 0);
    }

    void convert(const Instruction &ins) {
        const auto types = types_of(ins);
        if (types.size() != 2) fault(Errc::type_fault, "cvt needs destination and source types");
        const TypeInfo dt = types[0], st = types[1];
        const auto v = read(src(ins, 1), st);
        std::uint64_t out = 0;
        if (!dt.is_float && !st.is_float) {
            const auto wide = st.is_signed ? static_cast<std::uint64_t>(sext(v, st.width)) : v;
            out = trunc(wide, dt.width);
        } else if (dt.is_float && !st.is_float) {
            const double x = st.is_signed ? static_cast<double>(sext(v, st.width)) : static_cast<double>(v);
            out = from_double(x, dt);
        } else if (!dt.is_float && st.is_float) {
            double x = to_double(v, st);
            if (ins.has_modifier("rni")) x = std::nearbyint(x);
            else if (ins.has_modifier("rmi")) x = std::floor(x);
            else if (ins.has_modifier("rpi")) x = std::ceil(x);
            else x = std::trunc(x);
            const unsigned bits = 8 * dt.width;
            if (std::isnan(x)) {
                out = 0;
            } else if (dt.is_signed) {
                const double lo = -std::ldexp(1.0, static_cast<int>(bits) - 1);
                const double hi = std::ldexp(1.0, static_cast<int>(bits) - 1) - 1;
                const double c = std::clamp(x, lo, hi);
                out = trunc(static_cast<std::uint64_t>(c >= 9.2e18 ? std::numeric_limits<std::int64_t>::max()
                                                                   : static_cast<std::int64_t>(c)),
                            dt.width);
            } else {
                const double hi = std::ldexp(1.0, static_cast<int>(bits)) - 1;
                const double c = std::clamp(x, 0.0, hi);
                out = c >= 1.8e19 ? width_mask(dt.width) : trunc(static_cast<std::uint64_t>(c), dt.width);
            }
        } else {
            out = from_double(to_double(v, st), dt);
        }
        set_reg(dest(ins), out);
    }
};

void validate_args(const KernelDef &k, const LaunchConfig &cfg) {
    if (k.kind != KernelKind::entry) throw Error(Errc::type_fault, k.name + " is a .func and cannot be launched");
    if (cfg.args.size() != k.params.size()) {
        throw Error(Errc::arity_mismatch, "kernel " + k.name + " takes " + std::to_string(k.params.size()) +
                                              " arguments, got " + std::to_string(cfg.args.size()));
    }
    for (std::size_t i = 0; i < k.params.size(); ++i) {
        const auto &p = k.params[i];
        if (p.array_size) throw Error(Errc::type_fault, "array parameter " + p.name + " is not supported");
        const unsigned w = type_width(p.type);
        const ArgKind kind = cfg.args[i].kind;
        bool ok = false;
        if (p.type == "f32") ok = kind == ArgKind::f32;
        else if (w == 8) ok = kind == ArgKind::scalar64 || kind == ArgKind::dev_addr;
        else ok = kind == ArgKind::scalar32;
        if (!ok) {
            throw Error(Errc::type_fault, "argument " + std::to_string(i) + " does not match parameter ." + p.type +
                                              " " + p.name);
        }
    }
}

} // namespace

AccessTrace launch(const KernelHandle &kernel, const LaunchConfig &cfg, SimMemory &memory) {
    if (!kernel) throw Error(Errc::unknown_kernel, "empty kernel handle");
    const auto &k = kernel.kernel();
    validate_args(k, cfg);
    const std::uint64_t threads = std::uint64_t{cfg.grid_dim_x} * cfg.block_dim_x;
    if (threads == 0 || threads > kMaxThreads) {
        throw Error(Errc::invalid_config, "launch of " + std::to_string(threads) + " threads is outside [1, 2^20]");
    }
    const auto &module = kernel.module();
    const auto &entry = module.functions.at(k.name);
    AccessTrace trace;
    std::vector<std::uint8_t> shared;
    for (std::uint64_t cta = 0; cta < cfg.grid_dim_x; ++cta) {
        shared.assign(kSharedBytesPerBlock, 0);
        for (std::uint64_t tid = 0; tid < cfg.block_dim_x; ++tid) {
            ThreadRunner(module, memory, shared, trace, cfg, cta, tid).run(entry);
        }
    }
    return trace;
}

PairVerdict run_pair(const KernelHandle &original, const KernelHandle &sandboxed, const LaunchConfig &config,
                     const PatchOptions &fence, std::uint64_t partition_base, std::uint64_t partition_size,
                     const SimMemory &memory) {
    PairVerdict v{.original = {}, .sandboxed = {}, .original_memory = memory, .sandboxed_memory = memory};
    try {
        v.original = launch(original, config, v.original_memory);
        v.original_in_partition = v.original.device_accesses_within(partition_base, partition_size);
    } catch (const Error &e) {
        if (e.code() != Errc::device_fault && e.code() != Errc::type_fault &&
            e.code() != Errc::step_limit_exceeded) {
            throw;
        }
        v.original_faulted = true;
    }
    LaunchConfig boxed = config;
    for (auto value : fence_arguments(fence, partition_base, partition_size)) boxed.args.push_back(ArgValue::u64(value));
    v.sandboxed = launch(sandboxed, boxed, v.sandboxed_memory);
    v.oob_exits = v.sandboxed.oob_exits;
    v.sandboxed_contained = v.sandboxed.device_accesses_within(partition_base, partition_size);
    v.others_untouched = v.sandboxed_memory.equal_outside(memory, partition_base, partition_size);
    v.memories_identical = !v.original_faulted && v.original_memory == v.sandboxed_memory;
    return v;
}

} // namespace grd
