#include "guardian/ptx/parser.hpp"
#include "guardian/error.hpp"
#include "guardian/ptx/memops.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstring>
#include <limits>
#include <set>
#include <unordered_set>

namespace grd::ptx {

namespace {

const std::unordered_set<std::string_view> kKnownModifiers = {
    // state spaces
    "global", "local", "shared", "param", "const",
    // types
    "pred", "b8", "b16", "b32", "b64", "u8", "u16", "u32", "u64", "s8", "s16", "s32", "s64",
    "f32", "f64",
    // vectors
    "v2", "v4",
    // comparisons and boolean combiners
    "eq", "ne", "lt", "le", "gt", "ge", "lo", "ls", "hi", "hs", "and", "or", "xor",
    // multiply halves
    "wide",
    // rounding and float flags
    "rn", "rz", "rm", "rp", "rni", "rzi", "rmi", "rpi", "ftz", "sat", "approx", "full",
    // atomic operations
    "add", "min", "max", "exch", "cas", "inc", "dec",
    // cache and ordering qualifiers
    "nc", "ca", "cg", "cs", "lu", "cv", "wb", "wt", "volatile", "relaxed", "acquire", "release",
    "gpu", "sys", "cta",
    // misc
    "to", "uni", "sync",
};

const std::unordered_set<std::string_view> kKernelAttributes = {
    "maxntid", "reqntid", "minnctapersm", "maxnreg", "noreturn", "pragma",
};

const std::unordered_set<std::string_view> kModuleVariableSpaces = {
    "global", "const", "shared", "local", "tex", "surfref", "texref", "samplerref",
};

bool is_ident_start(char c) {
    return std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == '$';
}

bool is_ident_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '$';
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

bool is_identifier(std::string_view s) {
    if (s.empty() || !is_ident_start(s.front())) return false;
    return std::all_of(s.begin() + 1, s.end(), is_ident_char);
}

bool is_register_name(std::string_view s) {
    if (s.size() < 2 || s.front() != '%') return false;
    return std::all_of(s.begin() + 1, s.end(), is_ident_char);
}

bool is_special_register(std::string_view s) {
    static const std::set<std::string_view> specials = {
        "%tid.x",   "%tid.y",   "%tid.z",   "%ntid.x",   "%ntid.y",   "%ntid.z",
        "%ctaid.x", "%ctaid.y", "%ctaid.z", "%nctaid.x", "%nctaid.y", "%nctaid.z",
    };
    return specials.count(s) != 0;
}

std::vector<std::string_view> split_top_level(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    int depth = 0;
    std::size_t start = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const char c = s[i];
        if (c == '[' || c == '{' || c == '(') ++depth;
        else if (c == ']' || c == '}' || c == ')') --depth;
        else if (c == sep && depth == 0) {
            out.push_back(trim(s.substr(start, i - start)));
            start = i + 1;
        }
    }
    const auto last = trim(s.substr(start));
    if (!last.empty() || !out.empty()) out.push_back(last);
    return out;
}

// Parses a PTX integer literal (decimal, 0x hex, optional sign and trailing U).
std::optional<std::int64_t> parse_int_literal(std::string_view s) {
    s = trim(s);
    bool negative = false;
    if (!s.empty() && (s.front() == '-' || s.front() == '+')) {
        negative = s.front() == '-';
        s.remove_prefix(1);
    }
    if (!s.empty() && (s.back() == 'U' || s.back() == 'u')) s.remove_suffix(1);
    if (s.empty()) return std::nullopt;
    std::uint64_t value = 0;
    std::from_chars_result res{};
    if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
        res = std::from_chars(s.data() + 2, s.data() + s.size(), value, 16);
    } else {
        if (!std::all_of(s.begin(), s.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
            return std::nullopt;
        }
        res = std::from_chars(s.data(), s.data() + s.size(), value, 10);
    }
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) return std::nullopt;
    const auto as_signed = static_cast<std::int64_t>(value);
    return negative ? static_cast<std::int64_t>(0ULL - value) : as_signed;
}

std::optional<Immediate> parse_immediate(std::string_view s) {
    Immediate imm;
    imm.spelling = std::string(s);
    if (s.size() == 10 && (s.substr(0, 2) == "0f" || s.substr(0, 2) == "0F")) {
        std::uint32_t bits = 0;
        auto res = std::from_chars(s.data() + 2, s.data() + s.size(), bits, 16);
        if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) return std::nullopt;
        float f;
        std::memcpy(&f, &bits, sizeof f);
        imm.kind = Immediate::Kind::f32;
        imm.float_value = f;
        return imm;
    }
    if (s.size() == 18 && (s.substr(0, 2) == "0d" || s.substr(0, 2) == "0D")) {
        std::uint64_t bits = 0;
        auto res = std::from_chars(s.data() + 2, s.data() + s.size(), bits, 16);
        if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) return std::nullopt;
        double d;
        std::memcpy(&d, &bits, sizeof d);
        imm.kind = Immediate::Kind::f64;
        imm.float_value = d;
        return imm;
    }
    if (auto v = parse_int_literal(s)) {
        imm.kind = Immediate::Kind::integer;
        imm.int_value = *v;
        return imm;
    }
    // decimal float such as 1.5 or -2e3
    const bool looks_float = s.find_first_of(".eE") != std::string_view::npos &&
                             s.find("0x") == std::string_view::npos;
    if (looks_float) {
        try {
            std::size_t used = 0;
            const std::string text(s);
            const double d = std::stod(text, &used);
            if (used != text.size()) return std::nullopt;
            imm.kind = Immediate::Kind::f64;
            imm.float_value = d;
            return imm;
        } catch (const std::exception &) {
            return std::nullopt;
        }
    }
    return std::nullopt;
}

class Parser {
public:
    Parser(std::string_view src, const ParseOptions &options) : src_(src), strict_(options.strict) {}

    ParseResult run() {
        ParseResult result;
        PtxModule &m = result.module;
        bool seen_version = false, seen_target = false, seen_address_size = false;
        std::vector<std::string> pending;
        while (true) {
            skip_space(&pending);
            for (auto &c : pending) m.items.emplace_back(ModuleComment{"// " + c});
            pending.clear();
            if (eof()) break;
            const int line = line_;
            if (peek() != '.') syntax(line, "expected a directive at module scope");
            const std::string word = read_directive();
            if (word == "version") {
                const auto text = trim(rest_of_line());
                const auto dot = text.find('.');
                auto major = dot == std::string_view::npos ? std::nullopt : parse_int_literal(text.substr(0, dot));
                auto minor = dot == std::string_view::npos ? std::nullopt : parse_int_literal(text.substr(dot + 1));
                if (!major || !minor) syntax(line, "malformed .version");
                m.version_major = static_cast<int>(*major);
                m.version_minor = static_cast<int>(*minor);
                seen_version = true;
            } else if (word == "target") {
                m.target = std::string(trim(rest_of_line()));
                if (m.target.empty()) syntax(line, "missing .target architecture");
                seen_target = true;
            } else if (word == "address_size") {
                const auto v = parse_int_literal(rest_of_line());
                if (!v || (*v != 32 && *v != 64)) syntax(line, "malformed .address_size");
                if (*v == 32) {
                    throw Error(Errc::address_size_32,
                                "line " + std::to_string(line) + ": .address_size 32 is not supported", line);
                }
                m.address_size = 64;
                seen_address_size = true;
            } else if (word == "visible" || word == "extern" || word == "weak" || word == "entry" ||
                       word == "func") {
                if (!seen_version || !seen_target) syntax(line, "kernel before .version/.target");
                m.items.emplace_back(parse_kernel(word, line));
            } else if (kModuleVariableSpaces.count(word)) {
                const std::string text = "." + word + std::string(read_until_semicolon(line)) + ";";
                unsupported_or_warn(line, "module-scope variable declaration");
                m.items.emplace_back(ModuleComment{text});
            } else {
                const std::string text = "." + word + std::string(trim(rest_of_line()));
                unsupported_or_warn(line, "directive ." + word);
                m.items.emplace_back(ModuleComment{text});
            }
        }
        if (!seen_version) syntax(line_, "missing .version directive");
        if (!seen_target) syntax(line_, "missing .target directive");
        if (!seen_address_size) {
            throw Error(Errc::address_size_32, "missing .address_size (defaults to 32)", line_);
        }
        check_unique_names(m);
        result.warnings = std::move(warnings_);
        return result;
    }

private:
    std::string_view src_;
    std::size_t pos_ = 0;
    int line_ = 1;
    bool strict_;
    std::vector<std::string> warnings_;

    [[noreturn]] void syntax(int line, const std::string &why) const {
        throw Error(Errc::syntax_error, "line " + std::to_string(line) + ": " + why, line);
    }

    [[noreturn]] void unsupported(int line, const std::string &what) const {
        throw Error(Errc::unsupported_feature,
                    "line " + std::to_string(line) + ": unsupported feature: " + what, line);
    }

    void unsupported_or_warn(int line, const std::string &what) {
        if (strict_) unsupported(line, what);
        warnings_.push_back("line " + std::to_string(line) + ": kept verbatim: " + what);
    }

    bool eof() const { return pos_ >= src_.size(); }
    char peek(std::size_t ahead = 0) const {
        return pos_ + ahead < src_.size() ? src_[pos_ + ahead] : '\0';
    }
    char get() {
        const char c = src_[pos_++];
        if (c == '\n') ++line_;
        return c;
    }

    // Skips whitespace and block comments; `//` comments are collected.
    void skip_space(std::vector<std::string> *comments) {
        while (!eof()) {
            const char c = peek();
            if (std::isspace(static_cast<unsigned char>(c))) {
                get();
            } else if (c == '/' && peek(1) == '/') {
                pos_ += 2;
                const auto start = pos_;
                while (!eof() && peek() != '\n') ++pos_;
                if (comments) comments->emplace_back(trim(src_.substr(start, pos_ - start)));
            } else if (c == '/' && peek(1) == '*') {
                const int line = line_;
                pos_ += 2;
                while (!eof() && !(peek() == '*' && peek(1) == '/')) get();
                if (eof()) syntax(line, "unterminated block comment");
                pos_ += 2;
            } else {
                break;
            }
        }
    }

    void skip_inline_space() {
        while (!eof() && (peek() == ' ' || peek() == '\t' || peek() == '\r')) ++pos_;
    }

    std::string read_directive() {
        get(); // '.'
        const auto start = pos_;
        while (!eof() && is_ident_char(peek())) ++pos_;
        return std::string(src_.substr(start, pos_ - start));
    }

    std::string read_identifier(int line) {
        skip_space(nullptr);
        const auto start = pos_;
        if (eof() || !is_ident_start(peek())) syntax(line, "expected an identifier");
        while (!eof() && is_ident_char(peek())) ++pos_;
        return std::string(src_.substr(start, pos_ - start));
    }

    // Remainder of the current line with any trailing `//` comment removed.
    std::string_view rest_of_line() {
        const auto start = pos_;
        while (!eof() && peek() != '\n') ++pos_;
        auto text = src_.substr(start, pos_ - start);
        if (auto c = text.find("//"); c != std::string_view::npos) text = text.substr(0, c);
        return text;
    }

    std::string_view read_until_semicolon(int line) {
        const auto start = pos_;
        while (!eof() && peek() != ';') get();
        if (eof()) syntax(line, "missing ';'");
        const auto text = src_.substr(start, pos_ - start);
        get(); // ';'
        return text;
    }

    void expect(char c, int line, const char *what) {
        skip_space(nullptr);
        if (peek() != c) syntax(line, std::string("expected ") + what);
        get();
    }

    ParamDecl parse_param(int line, std::vector<std::string> comments) {
        ParamDecl p;
        p.comments = std::move(comments);
        skip_space(nullptr);
        if (peek() != '.') syntax(line_, "expected .param");
        if (read_directive() != "param") syntax(line_, "expected .param");
        while (true) {
            skip_space(nullptr);
            if (peek() != '.') break;
            const auto word = read_directive();
            if (word == "align") {
                skip_space(nullptr);
                const auto start = pos_;
                while (!eof() && std::isdigit(static_cast<unsigned char>(peek()))) ++pos_;
                auto v = parse_int_literal(src_.substr(start, pos_ - start));
                if (!v) syntax(line_, "malformed .align");
                p.align = static_cast<std::uint32_t>(*v);
            } else if (type_width(word) != 0 || word == "pred") {
                p.type = word;
            } else if (word == "ptr" || word == "global" || word == "const" || word == "local" ||
                       word == "shared") {
                unsupported(line_, "param attribute ." + word);
            } else {
                syntax(line_, "unknown param qualifier ." + word);
            }
        }
        if (p.type.empty()) syntax(line_, "param without a type");
        p.name = read_identifier(line);
        skip_space(nullptr);
        if (peek() == '[') {
            get();
            const auto start = pos_;
            while (!eof() && peek() != ']') ++pos_;
            auto v = parse_int_literal(src_.substr(start, pos_ - start));
            if (!v || *v <= 0) syntax(line_, "malformed param array size");
            get();
            p.array_size = static_cast<std::uint32_t>(*v);
        }
        return p;
    }

    std::vector<ParamDecl> parse_param_list(int line) {
        std::vector<ParamDecl> params;
        expect('(', line, "'('");
        std::vector<std::string> comments;
        skip_space(&comments);
        if (peek() == ')') {
            get();
            return params;
        }
        while (true) {
            params.push_back(parse_param(line, std::move(comments)));
            comments.clear();
            skip_space(&comments);
            if (peek() == ',') {
                get();
                skip_space(&comments);
                continue;
            }
            if (peek() == ')') {
                get();
                break;
            }
            syntax(line_, "expected ',' or ')' in parameter list");
        }
        return params;
    }

    KernelDef parse_kernel(std::string word, int line) {
        KernelDef k;
        while (word == "visible" || word == "extern" || word == "weak") {
            k.linkage.push_back(word);
            skip_space(nullptr);
            if (peek() != '.') syntax(line_, "expected .entry or .func");
            word = read_directive();
        }
        if (word == "entry") {
            k.kind = KernelKind::entry;
        } else if (word == "func") {
            k.kind = KernelKind::func;
        } else {
            syntax(line_, "expected .entry or .func");
        }
        skip_space(nullptr);
        if (k.kind == KernelKind::func && peek() == '(') k.return_params = parse_param_list(line);
        k.name = read_identifier(line);
        skip_space(nullptr);
        if (peek() == '(') k.params = parse_param_list(line);
        while (true) {
            skip_space(nullptr);
            if (peek() != '.') break;
            const int aline = line_;
            const auto attr = read_directive();
            if (!kKernelAttributes.count(attr)) unsupported(aline, "kernel attribute ." + attr);
            std::string text = "." + attr;
            const auto start = pos_;
            while (!eof() && peek() != '{' && peek() != ';' && peek() != '.' && peek() != '\n') ++pos_;
            const auto args = trim(src_.substr(start, pos_ - start));
            if (!args.empty()) text += " " + std::string(args);
            k.attributes.push_back(std::move(text));
        }
        skip_space(nullptr);
        if (peek() == ';') {
            get();
            k.declaration_only = true;
            return k;
        }
        if (peek() != '{') syntax(line_, "expected '{' to open kernel body");
        get();
        parse_body(k);
        check_kernel(k, line);
        return k;
    }

    void parse_body(KernelDef &k) {
        std::vector<std::string> comments;
        int depth = 0;
        while (true) {
            skip_space(&comments);
            if (eof()) syntax(line_, "unterminated kernel body");
            const int line = line_;
            const char c = peek();
            if (c == '}') {
                get();
                if (depth == 0) {
                    k.trailing_comments = std::move(comments);
                    return;
                }
                --depth;
                k.body.push_back(Statement{std::move(comments), Verbatim{"}"}});
                comments.clear();
                continue;
            }
            if (c == '{') {
                get();
                unsupported_or_warn(line, "nested scope block");
                ++depth;
                k.body.push_back(Statement{std::move(comments), Verbatim{"{"}});
                comments.clear();
                continue;
            }
            if (c == '.') {
                const auto save = pos_;
                const auto word = read_directive();
                if (word == "reg") {
                    k.body.push_back(Statement{std::move(comments), parse_reg_decl(line)});
                } else {
                    pos_ = save;
                    const std::string text(trim(read_until_semicolon(line)));
                    unsupported_or_warn(line, "body directive " + text.substr(0, text.find(' ')));
                    k.body.push_back(Statement{std::move(comments), Verbatim{text + ";"}});
                }
                comments.clear();
                continue;
            }
            if (is_ident_start(c)) {
                // label or opcode
                const auto save = pos_;
                const auto save_line = line_;
                const auto start = pos_;
                while (!eof() && is_ident_char(peek())) ++pos_;
                const auto ident = src_.substr(start, pos_ - start);
                skip_inline_space();
                if (peek() == ':') {
                    get();
                    k.body.push_back(Statement{std::move(comments), Label{std::string(ident)}});
                    comments.clear();
                    continue;
                }
                pos_ = save;
                line_ = save_line;
            } else if (c != '@') {
                syntax(line, std::string("unexpected character '") + c + "'");
            }
            const std::string text(trim(read_until_semicolon(line)));
            k.body.push_back(Statement{std::move(comments), parse_instruction(text, line)});
            comments.clear();
        }
    }

    RegDecl parse_reg_decl(int line) {
        RegDecl decl;
        skip_space(nullptr);
        if (peek() != '.') syntax(line, "expected register type");
        decl.type = read_directive();
        if (decl.type != "pred" && type_width(decl.type) == 0) syntax(line, "unknown register type ." + decl.type);
        const auto text = read_until_semicolon(line);
        for (auto part : split_top_level(text, ',')) {
            RegName name;
            const auto lt = part.find('<');
            if (lt != std::string_view::npos) {
                if (part.back() != '>') syntax(line, "malformed register bank");
                auto count = parse_int_literal(part.substr(lt + 1, part.size() - lt - 2));
                if (!count || *count <= 0) syntax(line, "malformed register bank size");
                name.prefix = std::string(trim(part.substr(0, lt)));
                name.count = static_cast<std::uint32_t>(*count);
            } else {
                name.prefix = std::string(part);
            }
            if (!is_register_name(name.prefix)) syntax(line, "bad register name '" + name.prefix + "'");
            decl.names.push_back(std::move(name));
        }
        if (decl.names.empty()) syntax(line, "empty .reg declaration");
        return decl;
    }

    std::variant<Instruction, Label, RegDecl, Verbatim> parse_instruction(const std::string &text, int line) {
        std::string_view rest = text;
        Instruction ins;
        if (!rest.empty() && rest.front() == '@') {
            rest.remove_prefix(1);
            Predicate pred;
            if (!rest.empty() && rest.front() == '!') {
                pred.negated = true;
                rest.remove_prefix(1);
            }
            std::size_t n = 0;
            while (n < rest.size() && !std::isspace(static_cast<unsigned char>(rest[n]))) ++n;
            pred.reg = std::string(rest.substr(0, n));
            if (!is_register_name(pred.reg)) syntax(line, "bad guard predicate '" + pred.reg + "'");
            ins.predicate = std::move(pred);
            rest = trim(rest.substr(n));
        }
        std::size_t n = 0;
        while (n < rest.size() && !std::isspace(static_cast<unsigned char>(rest[n]))) ++n;
        const auto mnemonic = rest.substr(0, n);
        const auto operand_text = trim(rest.substr(n));

        std::vector<std::string> parts;
        {
            std::size_t start = 0;
            for (std::size_t i = 0; i <= mnemonic.size(); ++i) {
                if (i == mnemonic.size() || mnemonic[i] == '.') {
                    parts.emplace_back(mnemonic.substr(start, i - start));
                    start = i + 1;
                }
            }
        }
        if (parts.empty() || parts[0].empty()) syntax(line, "missing opcode");
        std::optional<Opcode> op;
        std::size_t first_mod = 1;
        if (parts[0] == "brx" && parts.size() > 1 && parts[1] == "idx") {
            op = Opcode::brx_idx;
            first_mod = 2;
        } else {
            op = opcode_from_name(parts[0]);
        }
        if (!op) {
            unsupported_or_warn(line, "opcode " + parts[0]);
            return Verbatim{text + ";"};
        }
        ins.opcode = *op;
        ins.modifiers.assign(parts.begin() + static_cast<std::ptrdiff_t>(first_mod), parts.end());
        for (const auto &m : ins.modifiers) {
            if (m.empty()) syntax(line, "empty modifier in '" + std::string(mnemonic) + "'");
            if (kKnownModifiers.count(m)) continue;
            if (strict_) unsupported(line, "modifier ." + m);
            if (!is_memory_opcode(ins.opcode)) {
                warnings_.push_back("line " + std::to_string(line) + ": kept verbatim: modifier ." + m);
                return Verbatim{text + ";"};
            }
            warnings_.push_back("line " + std::to_string(line) + ": unknown modifier ." + m);
        }

        const auto pieces = operand_text.empty() ? std::vector<std::string_view>{}
                                                 : split_top_level(operand_text, ',');
        bool callee_seen = false;
        for (auto piece : pieces) {
            if (piece.empty()) syntax(line, "empty operand");
            auto operand = parse_operand(piece, ins, line, callee_seen);
            if (!operand) return Verbatim{text + ";"};
            ins.operands.push_back(std::move(*operand));
        }
        validate_instruction(ins, line);
        return ins;
    }

    std::optional<Operand> parse_operand(std::string_view s, const Instruction &ins, int line, bool &callee_seen) {
        const char c = s.front();
        if (c == '[') {
            if (s.back() != ']') syntax(line, "unterminated address operand");
            auto inner = trim(s.substr(1, s.size() - 2));
            AddressOperand addr;
            std::size_t split = std::string_view::npos;
            for (std::size_t i = 1; i < inner.size(); ++i) {
                if (inner[i] == '+' || inner[i] == '-') {
                    split = i;
                    break;
                }
            }
            auto base = trim(inner.substr(0, split));
            if (split != std::string_view::npos) {
                auto off_text = trim(inner.substr(split));
                if (off_text.front() == '+') off_text = trim(off_text.substr(1));
                auto off = parse_int_literal(off_text);
                if (!off) syntax(line, "malformed address offset '" + std::string(off_text) + "'");
                if (*off < std::numeric_limits<std::int32_t>::min() ||
                    *off > std::numeric_limits<std::int32_t>::max()) {
                    syntax(line, "address offset does not fit in 32 bits");
                }
                addr.offset = static_cast<std::int32_t>(*off);
            }
            if (is_register_name(base)) {
                addr.base = std::string(base);
            } else if (is_identifier(base)) {
                addr.base = std::string(base);
                addr.symbolic = true;
                if (!ins.has_modifier("param") && strict_) unsupported(line, "symbolic address operand");
            } else if (parse_int_literal(base)) {
                unsupported(line, "absolute address operand");
            } else {
                syntax(line, "malformed address base '" + std::string(base) + "'");
            }
            return addr;
        }
        if (c == '{') {
            if (s.back() != '}') syntax(line, "unterminated brace operand");
            const auto items = split_top_level(s.substr(1, s.size() - 2), ',');
            if (items.empty()) syntax(line, "empty brace operand");
            if (std::all_of(items.begin(), items.end(), is_register_name)) {
                VectorGroup g;
                for (auto r : items) g.regs.emplace_back(r);
                return g;
            }
            if (std::all_of(items.begin(), items.end(), is_identifier)) {
                LabelArray a;
                for (auto l : items) a.labels.emplace_back(l);
                return a;
            }
            syntax(line, "malformed brace operand");
        }
        if (c == '(') {
            if (s.back() != ')') syntax(line, "unterminated argument list");
            ArgList list;
            const auto inner = trim(s.substr(1, s.size() - 2));
            if (!inner.empty()) {
                for (auto r : split_top_level(inner, ',')) {
                    if (!is_register_name(r)) syntax(line, "call arguments must be registers");
                    list.items.push_back(Register{std::string(r)});
                }
            }
            return list;
        }
        if (c == '!') {
            auto name = trim(s.substr(1));
            if (!is_register_name(name)) syntax(line, "malformed negated predicate");
            return Register{std::string(name), true};
        }
        if (c == '%') {
            if (is_special_register(s)) return SpecialRegister{std::string(s)};
            if (!is_register_name(s)) {
                if (s.find('.') != std::string_view::npos) unsupported(line, "special register " + std::string(s));
                syntax(line, "malformed register '" + std::string(s) + "'");
            }
            return Register{std::string(s)};
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '-' || c == '+') {
            auto imm = parse_immediate(s);
            if (!imm) syntax(line, "malformed immediate '" + std::string(s) + "'");
            return *imm;
        }
        if (is_identifier(s)) {
            if (ins.opcode == Opcode::call && !callee_seen) {
                callee_seen = true;
                return FuncRef{std::string(s)};
            }
            if (ins.opcode == Opcode::bra) return LabelRef{std::string(s)};
            unsupported_or_warn(line, "symbolic operand " + std::string(s));
            return std::nullopt;
        }
        syntax(line, "malformed operand '" + std::string(s) + "'");
    }

    void validate_instruction(const Instruction &ins, int line) const {
        if (is_memory_opcode(ins.opcode)) {
            const auto count = std::count_if(ins.operands.begin(), ins.operands.end(), [](const Operand &o) {
                return std::holds_alternative<AddressOperand>(o);
            });
            if (count != 1) syntax(line, "memory instruction needs exactly one address operand");
            const auto idx = address_operand_index(ins);
            const bool store_form = ins.opcode == Opcode::st || ins.opcode == Opcode::red;
            if (!idx || *idx != (store_form ? 0U : 1U)) syntax(line, "address operand in the wrong position");
        }
        switch (ins.opcode) {
        case Opcode::bra:
            if (ins.operands.size() != 1 || !std::holds_alternative<LabelRef>(ins.operands[0])) {
                syntax(line, "bra expects a single label");
            }
            break;
        case Opcode::brx_idx:
            if (ins.operands.size() != 2 || !std::holds_alternative<Register>(ins.operands[0]) ||
                !std::holds_alternative<LabelArray>(ins.operands[1])) {
                syntax(line, "brx.idx expects an index register and a label list");
            }
            break;
        case Opcode::call: {
            const auto it = std::find_if(ins.operands.begin(), ins.operands.end(), [](const Operand &o) {
                return std::holds_alternative<FuncRef>(o);
            });
            if (it == ins.operands.end()) unsupported(line, "indirect call");
            break;
        }
        default:
            break;
        }
    }

    static std::vector<std::string> registers_used(const Instruction &ins) {
        std::vector<std::string> regs;
        if (ins.predicate) regs.push_back(ins.predicate->reg);
        for (const auto &op : ins.operands) {
            if (const auto *r = std::get_if<Register>(&op)) regs.push_back(r->name);
            else if (const auto *a = std::get_if<AddressOperand>(&op); a && !a->symbolic) regs.push_back(a->base);
            else if (const auto *g = std::get_if<VectorGroup>(&op)) regs.insert(regs.end(), g->regs.begin(), g->regs.end());
            else if (const auto *l = std::get_if<ArgList>(&op)) {
                for (const auto &r : l->items) regs.push_back(r.name);
            }
        }
        return regs;
    }

    static bool covered(const std::string &reg, const std::vector<RegDecl> &decls) {
        for (const auto &d : decls) {
            for (const auto &n : d.names) {
                if (!n.count) {
                    if (n.prefix == reg) return true;
                    continue;
                }
                if (reg.size() <= n.prefix.size() || reg.compare(0, n.prefix.size(), n.prefix) != 0) continue;
                const auto digits = std::string_view(reg).substr(n.prefix.size());
                if (!std::all_of(digits.begin(), digits.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
                    continue;
                }
                if (digits.size() > 1 && digits.front() == '0') continue;
                std::uint64_t index = 0;
                std::from_chars(digits.data(), digits.data() + digits.size(), index);
                if (index < *n.count) return true;
            }
        }
        return false;
    }

    void check_kernel(const KernelDef &k, int line) const {
        std::set<std::string> labels;
        for (const auto &st : k.body) {
            if (const auto *l = std::get_if<Label>(&st.node)) {
                if (!labels.insert(l->name).second) syntax(line, "duplicate label " + l->name + " in " + k.name);
            }
        }
        const bool has_verbatim = std::any_of(k.body.begin(), k.body.end(), [](const Statement &s) {
            return std::holds_alternative<Verbatim>(s.node);
        });
        const auto decls = k.reg_decls();
        for (const auto &st : k.body) {
            const auto *ins = st.instruction();
            if (!ins) continue;
            for (const auto &op : ins->operands) {
                if (const auto *l = std::get_if<LabelRef>(&op); l && !labels.count(l->name)) {
                    syntax(line, "undefined label " + l->name + " in " + k.name);
                }
                if (const auto *a = std::get_if<LabelArray>(&op)) {
                    for (const auto &name : a->labels) {
                        if (!labels.count(name)) syntax(line, "undefined label " + name + " in " + k.name);
                    }
                }
            }
            if (has_verbatim) continue; // verbatim scopes may declare registers
            for (const auto &reg : registers_used(*ins)) {
                if (!covered(reg, decls)) syntax(line, "undeclared register " + reg + " in " + k.name);
            }
        }
    }

    void check_unique_names(const PtxModule &m) const {
        std::set<std::string> defined;
        std::set<std::string> declared;
        for (const auto *k : m.kernels()) {
            auto &bucket = k->declaration_only ? declared : defined;
            if (!bucket.insert(k->name).second) syntax(0, "duplicate kernel name " + k->name);
        }
    }
};

} // namespace

ParseResult parse_module_ex(std::string_view text, const ParseOptions &options) {
    Parser parser(text, options);
    return parser.run();
}

} // namespace grd::ptx
