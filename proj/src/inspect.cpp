#include "guardian/inspect.hpp"
#include "guardian/ptx/memops.hpp"

#include <json.hpp>

#include <algorithm>
#include <iomanip>
#include <sstream>

namespace grd {

CorpusRow &CorpusRow::operator+=(const CorpusRow &o) {
    kernels += o.kernels;
    funcs += o.funcs;
    loads += o.loads;
    stores += o.stores;
    atomics += o.atomics;
    indirect_branches += o.indirect_branches;
    return *this;
}

CorpusRow inspect_module(const std::string &name, const ptx::PtxModule &module) {
    CorpusRow row;
    row.name = name;
    for (const auto *k : module.kernels()) {
        if (k->declaration_only) continue;
        ++(k->kind == ptx::KernelKind::entry ? row.kernels : row.funcs);
        for (const auto &op : ptx::list_memory_ops(*k)) {
            switch (op.opcode) {
            case ptx::Opcode::ld: ++row.loads; break;
            case ptx::Opcode::st: ++row.stores; break;
            default: ++row.atomics; break;
            }
        }
        for (const auto &st : k->body) {
            const auto *ins = st.instruction();
            if (ins && ins->opcode == ptx::Opcode::brx_idx) ++row.indirect_branches;
        }
    }
    return row;
}

std::string format_table(const std::vector<CorpusRow> &rows, const CorpusRow &total) {
    static const char *headers[] = {"name", "#kernels", "#func", "#total loads", "#total stores", "#atomics",
                                    "#indirect branches"};
    std::size_t name_width = std::string_view(headers[0]).size();
    for (const auto &r : rows) name_width = std::max(name_width, r.name.size());
    name_width = std::max(name_width, total.name.size());

    std::ostringstream os;
    os << std::left << std::setw(static_cast<int>(name_width)) << headers[0];
    for (int i = 1; i < 7; ++i) os << "  " << headers[i];
    os << '\n';
    const auto line = [&](const CorpusRow &r) {
        const unsigned values[] = {r.kernels, r.funcs, r.loads, r.stores, r.atomics, r.indirect_branches};
        os << std::left << std::setw(static_cast<int>(name_width)) << r.name;
        for (int i = 0; i < 6; ++i) {
            os << "  " << std::right << std::setw(static_cast<int>(std::string_view(headers[i + 1]).size()))
               << values[i];
        }
        os << '\n';
    };
    for (const auto &r : rows) line(r);
    line(total);
    return os.str();
}

namespace {

nlohmann::ordered_json row_json(const CorpusRow &r) {
    return {{"name", r.name},       {"kernels", r.kernels}, {"funcs", r.funcs},
            {"loads", r.loads},     {"stores", r.stores},   {"atomics", r.atomics},
            {"indirect_branches", r.indirect_branches}};
}

} // namespace

std::string rows_json(const std::vector<CorpusRow> &rows, const CorpusRow &total, int indent) {
    nlohmann::ordered_json doc;
    doc["files"] = nlohmann::ordered_json::array();
    for (const auto &r : rows) doc["files"].push_back(row_json(r));
    doc["total"] = row_json(total);
    return doc.dump(indent);
}

} // namespace grd
