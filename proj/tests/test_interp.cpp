#include "generator.hpp"
#include "oracles.hpp"

#include "guardian/error.hpp"
#include "guardian/interp.hpp"
#include "guardian/patcher.hpp"
#include "guardian/ptx/parser.hpp"

#include <gtest/gtest.h>

#include <bit>
#include <cstring>

using namespace grd;
using namespace grd::ptx;

namespace {

constexpr std::uint64_t kBase = 0x7fa2c0000000ULL;
const char *kHeader = ".version 7.7\n.target sm_86\n.address_size 64\n\n";

KernelHandle load(const std::string &text, const std::string &name) {
    return find_kernel(make_loaded_module(parse_module(text)), name);
}

KernelHandle load_sandboxed(const PtxModule &m, const std::string &name, PatchOptions opt = {}) {
    return find_kernel(make_loaded_module(sandbox_module(m, opt).module), name);
}

PtxModule golden(const std::string &name) { return parse_module(oracle::read_file(oracle::data_path("golden/" + name))); }

// One-thread kernel over `body`, with a u64 pointer param loaded into %rd1.
std::string unit(const std::string &body) {
    return std::string(kHeader) + ".visible .entry t(.param .u64 t_p)\n{\n.reg .pred %p<4>;\n.reg .b32 %r<10>;\n"
                                  ".reg .b64 %rd<10>;\n.reg .f32 %f<4>;\n.reg .f64 %fd<4>;\nld.param.u64 %rd1, [t_p];\n" +
           body + "ret;\n}\n";
}

SimMemory run_unit(const std::string &body, std::uint64_t out = kBase) {
    SimMemory mem(kBase, 1 << 20);
    launch(load(unit(body), "t"), {1, 1, {ArgValue::address(out)}}, mem);
    return mem;
}

std::uint64_t u64_at(const SimMemory &m, std::uint64_t addr) { return m.read_uint(addr, 8); }
std::uint32_t u32_at(const SimMemory &m, std::uint64_t addr) { return static_cast<std::uint32_t>(m.read_uint(addr, 4)); }

Errc launch_error(const std::string &body) {
    try {
        run_unit(body);
    } catch (const Error &e) {
        return e.code();
    }
    ADD_FAILURE() << "expected a launch error";
    return Errc::protocol_error;
}

} // namespace

TEST(SimMemory, SparseZeroFilled) {
    SimMemory m(kBase, 1 << 20);
    EXPECT_EQ(m.read_uint(kBase + 12345, 4), 0u);
    m.write_uint(kBase + 4094, 0x11223344, 4); // straddles a page boundary
    EXPECT_EQ(m.read_uint(kBase + 4094, 4), 0x11223344u);
    EXPECT_EQ(m.read_uint(kBase + 4096, 1), 0x22u);
    EXPECT_THROW(m.read_uint(kBase - 1, 1), Error);
    EXPECT_THROW(m.write_uint(kBase + (1 << 20) - 2, 0, 4), Error);
    SimMemory other(kBase, 1 << 20);
    EXPECT_FALSE(m == other);
    other.write_uint(kBase + 4094, 0x11223344, 4);
    EXPECT_TRUE(m == other);
    other.write_uint(kBase + 8192, 0, 8); // zero page compares equal to a missing one
    EXPECT_TRUE(m == other);
    other.write_uint(kBase + 8192, 1, 1);
    EXPECT_TRUE(m.equal_outside(other, kBase + 8192, 4096));
    EXPECT_FALSE(m.equal_outside(other, kBase, 4096));
}

// The store address is dst + 4*n, so every thread writes its tid to the same
// cell and the last thread wins.
TEST(Launch, SandboxedStoreTid) {
    const auto h = load_sandboxed(golden("store_tid.ptx"), "kernel");
    EXPECT_EQ(h.arity(), 4u);
    SimMemory mem(kBase, 512 << 20);
    const std::uint64_t base = 0x7fa2d0000000ULL, size = 16 << 20;
    LaunchConfig cfg{1, 8, {ArgValue::address(base), ArgValue::u32(4)}};
    for (auto v : fence_arguments({}, base, size)) cfg.args.push_back(ArgValue::u64(v));
    const auto trace = launch(h, cfg, mem);
    ASSERT_EQ(trace.entries.size(), 8u + 8 * 4); // 4 param loads per thread
    unsigned stores = 0;
    for (const auto &e : trace.entries) {
        if (e.kind != AccessKind::store) continue;
        ++stores;
        EXPECT_EQ(e.address, base + 16);
        EXPECT_EQ(e.width, 4u);
    }
    EXPECT_EQ(stores, 8u);
    EXPECT_TRUE(trace.device_accesses_within(base, size));
    EXPECT_EQ(u32_at(mem, base + 16), 7u);
}

TEST(Launch, TidIndexedStore) {
    const std::string text = std::string(kHeader) +
                             ".visible .entry a(.param .u64 a_p)\n{\n.reg .b32 %r<2>;\n.reg .b64 %rd<4>;\n"
                             "ld.param.u64 %rd1, [a_p];\nmov.u32 %r1, %tid.x;\nmul.wide.u32 %rd2, %r1, 4;\n"
                             "add.s64 %rd3, %rd1, %rd2;\nst.global.u32 [%rd3], %r1;\nret;\n}\n";
    const std::uint64_t base = 0x7fa2d0000000ULL, size = 16 << 20;
    SimMemory mem(kBase, 512 << 20);
    LaunchConfig cfg{1, 8, {ArgValue::address(base)}};
    for (auto v : fence_arguments({}, base, size)) cfg.args.push_back(ArgValue::u64(v));
    launch(load_sandboxed(parse_module(text), "a"), cfg, mem);
    for (std::uint32_t t = 0; t < 8; ++t) EXPECT_EQ(u32_at(mem, base + 4 * t), t);
}

TEST(Launch, EmptyKernel) {
    SimMemory mem(kBase, 1 << 20);
    const auto trace = launch(load(std::string(kHeader) + ".visible .entry e()\n{\nret;\n}\n", "e"), {2, 4, {}}, mem);
    EXPECT_TRUE(trace.entries.empty());
    EXPECT_EQ(trace.instructions, 8u);
}

// A raw address in the partition below is wrapped into the caller's
// partition by the mask.
TEST(Launch, MaskWrapsForeignAddress) {
    const auto m = golden("store_tid.ptx");
    const std::uint64_t base = 0x7fa2d0000000ULL, size = 16 << 20;
    const std::uint64_t dst = 0x7fa2cf000000ULL;
    SimMemory mem(kBase, 512 << 20);

    SimMemory raw = mem;
    const auto original = launch(find_kernel(make_loaded_module(m), "kernel"), {1, 1, {ArgValue::address(dst), ArgValue::u32(4)}}, raw);
    ASSERT_EQ(original.entries.back().address, 0x7fa2cf000010ULL);
    EXPECT_FALSE(original.device_accesses_within(base, size));

    LaunchConfig cfg{1, 1, {ArgValue::address(dst), ArgValue::u32(4)}};
    for (auto v : fence_arguments({}, base, size)) cfg.args.push_back(ArgValue::u64(v));
    const auto fenced = launch(load_sandboxed(m, "kernel"), cfg, mem);
    EXPECT_EQ(fenced.entries.back().address, 0x7fa2d0000010ULL);
    EXPECT_EQ((0x7fa2cf000010ULL & 0xFFFFFF) | 0x7fa2d0000000ULL, 0x7fa2d0000010ULL);
}

TEST(Launch, Deterministic) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto c = testgen::generate_case(seed, {});
        const auto h = load(c.kernel.text, c.kernel.entry);
        SimMemory a = c.memory, b = c.memory;
        const auto ta = launch(h, c.config, a);
        const auto tb = launch(h, c.config, b);
        EXPECT_EQ(ta, tb);
        EXPECT_TRUE(a == b);
    }
}

// Threads whose guard is false must not take the check exit even when the
// guarded address is outside the partition.
TEST(Launch, CheckModeHonoursGuards) {
    const std::string text = std::string(kHeader) +
                             ".visible .entry g(.param .u64 g_in, .param .u64 g_out)\n{\n.reg .pred %p<2>;\n"
                             ".reg .b32 %r<2>;\n.reg .b64 %rd<5>;\nld.param.u64 %rd1, [g_in];\nld.param.u64 %rd2, [g_out];\n"
                             "mov.u32 %r1, %tid.x;\nsetp.lt.u32 %p1, %r1, 2;\n@%p1 st.global.u32 [%rd2+4], %r1;\n"
                             "mul.wide.u32 %rd3, %r1, 4;\nadd.s64 %rd4, %rd1, %rd3;\nst.global.u32 [%rd4], %r1;\nret;\n}\n";
    const auto h = load_sandboxed(parse_module(text), "g", {SandboxMode::check});
    const std::uint64_t base = kBase + 4096, size = 4096;
    SimMemory mem(kBase, 1 << 20);
    LaunchConfig cfg{1, 8, {ArgValue::address(base), ArgValue::address(kBase)}};
    for (auto v : fence_arguments({SandboxMode::check}, base, size)) cfg.args.push_back(ArgValue::u64(v));
    const auto trace = launch(h, cfg, mem);
    EXPECT_EQ(trace.oob_exits, 2u);
    EXPECT_TRUE(trace.device_accesses_within(base, size));
    EXPECT_EQ(u32_at(mem, kBase + 4), 0u);
    for (std::uint32_t t = 2; t < 8; ++t) EXPECT_EQ(u32_at(mem, base + 4 * t), t);
}

TEST(Launch, Errors) {
    EXPECT_EQ(launch_error("ld.global.u32 %r1, [%rd1+-8];\n"), Errc::device_fault);
    EXPECT_EQ(launch_error("ld.global.u32 %r1, [%rd1+2];\n"), Errc::device_fault) << "misaligned";
    EXPECT_EQ(launch_error("mov.u32 %r1, 0;\ndiv.u32 %r2, %r2, %r1;\n"), Errc::type_fault);
    EXPECT_EQ(launch_error("rem.s32 %r2, %r2, 0;\n"), Errc::type_fault);
    EXPECT_EQ(launch_error("LOOP:\nbra LOOP;\n"), Errc::step_limit_exceeded);
    EXPECT_EQ(launch_error("ld.const.u32 %r1, [%rd1];\n"), Errc::type_fault);
    EXPECT_EQ(launch_error("mov.u32 %r1, 7;\nbrx.idx %r1, {A, B};\nA:\nB:\n"), Errc::type_fault);

    const auto h = load(unit(""), "t");
    SimMemory mem(kBase, 1 << 20);
    const auto code = [&](LaunchConfig cfg) {
        try {
            launch(h, cfg, mem);
        } catch (const Error &e) {
            return e.code();
        }
        return Errc::protocol_error;
    };
    EXPECT_EQ(code({1, 1, {}}), Errc::arity_mismatch);
    EXPECT_EQ(code({1, 1, {ArgValue::u32(1)}}), Errc::type_fault);
    EXPECT_EQ(code({1 << 11, 1 << 10, {ArgValue::u64(0)}}), Errc::invalid_config);
    EXPECT_THROW(find_kernel(make_loaded_module(golden("store_tid.ptx")), "nope"), Error);
}

TEST(Launch, StepLimitIsPerThread) {
    SimMemory mem(kBase, 1 << 20);
    const auto h = load(unit("mov.u32 %r1, 0;\nL:\nadd.u32 %r1, %r1, 1;\nsetp.lt.u32 %p1, %r1, 100;\n@%p1 bra L;\n"), "t");
    LaunchConfig cfg{1, 4, {ArgValue::address(kBase)}};
    cfg.step_limit = 400;
    EXPECT_NO_THROW(launch(h, cfg, mem));
    cfg.step_limit = 250;
    EXPECT_THROW(launch(h, cfg, mem), Error);
}

TEST(Semantics, IntegerArithmetic) {
    const auto m = run_unit(
        "mov.u32 %r1, 0xfffffffe;\nmov.u32 %r2, 3;\n"
        "add.u32 %r3, %r1, %r2;\nst.global.u32 [%rd1], %r3;\n"              // wraps to 1
        "mul.hi.u32 %r3, %r1, %r2;\nst.global.u32 [%rd1+4], %r3;\n"          // 2
        "mul.hi.s32 %r3, %r1, %r2;\nst.global.u32 [%rd1+8], %r3;\n"          // -1
        "mul.wide.s32 %rd2, %r1, %r2;\nst.global.u64 [%rd1+16], %rd2;\n"     // -6
        "mul.wide.u32 %rd2, %r1, %r2;\nst.global.u64 [%rd1+24], %rd2;\n"     // 0x2fffffffa
        "shr.s32 %r3, %r1, 1;\nst.global.u32 [%rd1+32], %r3;\n"              // -1
        "shr.u32 %r3, %r1, 1;\nst.global.u32 [%rd1+36], %r3;\n"              // 0x7fffffff
        "shl.b32 %r3, %r2, 40;\nst.global.u32 [%rd1+40], %r3;\n"             // 0
        "div.s32 %r3, %r1, %r2;\nst.global.u32 [%rd1+44], %r3;\n"            // 0
        "rem.s32 %r3, -7, %r2;\nst.global.u32 [%rd1+48], %r3;\n"             // -1
        "min.s32 %r3, %r1, %r2;\nst.global.u32 [%rd1+52], %r3;\n"            // -2
        "min.u32 %r3, %r1, %r2;\nst.global.u32 [%rd1+56], %r3;\n"            // 3
        "mad.lo.s32 %r3, %r1, %r2, 10;\nst.global.u32 [%rd1+60], %r3;\n"     // 4
        "not.b32 %r3, %r2;\nst.global.u32 [%rd1+64], %r3;\n"
        "mov.u64 %rd3, 0xffffffffffffffff;\nmul.hi.u64 %rd4, %rd3, %rd3;\nst.global.u64 [%rd1+72], %rd4;\n");
    EXPECT_EQ(u32_at(m, kBase), 1u);
    EXPECT_EQ(u32_at(m, kBase + 4), 2u);
    EXPECT_EQ(u32_at(m, kBase + 8), 0xffffffffu);
    EXPECT_EQ(u64_at(m, kBase + 16), static_cast<std::uint64_t>(-6));
    EXPECT_EQ(u64_at(m, kBase + 24), 0x2fffffffaULL);
    EXPECT_EQ(u32_at(m, kBase + 32), 0xffffffffu);
    EXPECT_EQ(u32_at(m, kBase + 36), 0x7fffffffu);
    EXPECT_EQ(u32_at(m, kBase + 40), 0u);
    EXPECT_EQ(u32_at(m, kBase + 44), 0u);
    EXPECT_EQ(u32_at(m, kBase + 48), 0xffffffffu);
    EXPECT_EQ(u32_at(m, kBase + 52), 0xfffffffeu);
    EXPECT_EQ(u32_at(m, kBase + 56), 3u);
    EXPECT_EQ(u32_at(m, kBase + 60), 4u);
    EXPECT_EQ(u32_at(m, kBase + 64), ~3u);
    EXPECT_EQ(u64_at(m, kBase + 72), 0xfffffffffffffffeULL);
}

TEST(Semantics, PredicatesAndSelect) {
    const auto m = run_unit(
        "mov.u32 %r1, 5;\nsetp.gt.s32 %p1, %r1, -1;\nsetp.gt.u32 %p2, %r1, -1;\n"
        "selp.b32 %r2, 10, 20, %p1;\nst.global.u32 [%rd1], %r2;\n"      // 10
        "selp.b32 %r2, 10, 20, %p2;\nst.global.u32 [%rd1+4], %r2;\n"    // 20
        "setp.eq.and.u32 %p3, %r1, 5, %p2;\nselp.b32 %r2, 1, 0, %p3;\nst.global.u32 [%rd1+8], %r2;\n"   // 0
        "setp.eq.or.u32 %p3, %r1, 5, !%p2;\nselp.b32 %r2, 1, 0, %p3;\nst.global.u32 [%rd1+12], %r2;\n"  // 1
        "@%p2 st.global.u32 [%rd1+16], %r1;\n@!%p2 st.global.u32 [%rd1+20], %r1;\n");
    EXPECT_EQ(u32_at(m, kBase), 10u);
    EXPECT_EQ(u32_at(m, kBase + 4), 20u);
    EXPECT_EQ(u32_at(m, kBase + 8), 0u);
    EXPECT_EQ(u32_at(m, kBase + 12), 1u);
    EXPECT_EQ(u32_at(m, kBase + 16), 0u);
    EXPECT_EQ(u32_at(m, kBase + 20), 5u);
}

TEST(Semantics, ConversionsAndFloats) {
    const auto m = run_unit(
        "mov.u32 %r1, 0xffffff80;\ncvt.s64.s32 %rd2, %r1;\nst.global.u64 [%rd1], %rd2;\n"
        "cvt.u64.u32 %rd2, %r1;\nst.global.u64 [%rd1+8], %rd2;\n"
        "cvt.rn.f32.s32 %f1, %r1;\nst.global.f32 [%rd1+16], %f1;\n"
        "mov.f32 %f2, 0f3FC00000;\nadd.f32 %f3, %f1, %f2;\nst.global.f32 [%rd1+20], %f3;\n"
        "cvt.rzi.s32.f32 %r2, %f3;\nst.global.u32 [%rd1+24], %r2;\n"
        "mov.f32 %f2, 0f4F800000;\ncvt.rzi.u32.f32 %r2, %f2;\nst.global.u32 [%rd1+28], %r2;\n"  // 2^32 saturates
        "cvt.f64.f32 %fd1, %f3;\nmul.f64 %fd2, %fd1, 0d4000000000000000;\nst.global.f64 [%rd1+32], %fd2;\n");
    EXPECT_EQ(u64_at(m, kBase), static_cast<std::uint64_t>(-128));
    EXPECT_EQ(u64_at(m, kBase + 8), 0xffffff80ULL);
    EXPECT_EQ(std::bit_cast<float>(u32_at(m, kBase + 16)), -128.0f);
    EXPECT_EQ(std::bit_cast<float>(u32_at(m, kBase + 20)), -126.5f);
    EXPECT_EQ(u32_at(m, kBase + 24), static_cast<std::uint32_t>(-126));
    EXPECT_EQ(u32_at(m, kBase + 28), 0xffffffffu);
    EXPECT_EQ(std::bit_cast<double>(u64_at(m, kBase + 32)), -253.0);
}

TEST(Semantics, VectorsAtomicsAndNarrowLoads) {
    SimMemory mem(kBase, 1 << 20);
    mem.write_uint(kBase + 256, 0x80, 1);
    const auto h = load(unit(
        "mov.u32 %r1, 1;\nmov.u32 %r2, 2;\nmov.u32 %r3, 3;\nmov.u32 %r4, 4;\n"
        "st.global.v4.u32 [%rd1], {%r1, %r2, %r3, %r4};\n"
        "ld.global.v2.u32 {%r5, %r6}, [%rd1+8];\nst.global.u32 [%rd1+16], %r6;\n"
        "atom.global.add.u32 %r7, [%rd1], 10;\nst.global.u32 [%rd1+20], %r7;\n"
        "atom.global.cas.b32 %r7, [%rd1+4], 2, 99;\n"
        "atom.global.exch.b32 %r8, [%rd1+8], 7;\nst.global.u32 [%rd1+24], %r8;\n"
        "red.global.max.u32 [%rd1+12], 50;\n"
        "atom.global.inc.u32 %r8, [%rd1+28], 0;\n"
        "ld.global.s8 %r9, [%rd1+256];\nst.global.u32 [%rd1+32], %r9;\n"
        "ld.global.u8 %r9, [%rd1+256];\nst.global.u32 [%rd1+36], %r9;\n"),
                          "t");
    const auto trace = launch(h, {1, 1, {ArgValue::address(kBase)}}, mem);
    EXPECT_EQ(u32_at(mem, kBase), 11u);
    EXPECT_EQ(u32_at(mem, kBase + 4), 99u);
    EXPECT_EQ(u32_at(mem, kBase + 8), 7u);
    EXPECT_EQ(u32_at(mem, kBase + 12), 50u);
    EXPECT_EQ(u32_at(mem, kBase + 16), 4u);
    EXPECT_EQ(u32_at(mem, kBase + 20), 1u);
    EXPECT_EQ(u32_at(mem, kBase + 24), 3u);
    EXPECT_EQ(u32_at(mem, kBase + 28), 0u);
    EXPECT_EQ(u32_at(mem, kBase + 32), 0xffffff80u);
    EXPECT_EQ(u32_at(mem, kBase + 36), 0x80u);
    unsigned atomics = 0;
    for (const auto &e : trace.entries) atomics += e.kind == AccessKind::atomic;
    EXPECT_EQ(atomics, 5u);
    EXPECT_EQ(trace.entries[1].width, 16u) << "v4 store is one 16-byte access";
}

TEST(Semantics, SharedMemoryIsPerBlock) {
    const std::string text = std::string(kHeader) +
                             ".visible .entry s(.param .u64 s_p)\n{\n.reg .b32 %r<4>;\n.reg .b64 %rd<4>;\n"
                             "ld.param.u64 %rd1, [s_p];\nmov.u32 %r1, %tid.x;\nmov.u32 %r2, %ctaid.x;\n"
                             "mov.u64 %rd2, 0;\natom.shared.add.u32 %r3, [%rd2], 1;\nbar.sync 0;\n"
                             "ld.shared.u32 %r3, [%rd2];\nmul.wide.u32 %rd3, %r2, 4;\nadd.s64 %rd3, %rd1, %rd3;\n"
                             "st.global.u32 [%rd3], %r3;\nret;\n}\n";
    SimMemory mem(kBase, 1 << 20);
    const auto trace = launch(load(text, "s"), {2, 3, {ArgValue::address(kBase)}}, mem);
    EXPECT_EQ(u32_at(mem, kBase), 3u);
    EXPECT_EQ(u32_at(mem, kBase + 4), 3u);
    EXPECT_EQ(trace.entries.size(), 6u * 4);
}

TEST(Semantics, CallAndIndirectBranch) {
    const std::string text = std::string(kHeader) +
                             ".func (.param .b32 f_ret) f(.param .b64 f_p, .param .b32 f_v)\n{\n.reg .b32 %x<3>;\n"
                             ".reg .b64 %y<2>;\nld.param.b64 %y1, [f_p];\nld.param.b32 %x1, [f_v];\n"
                             "st.global.u32 [%y1], %x1;\nadd.u32 %x2, %x1, 1;\nst.param.b32 [f_ret], %x2;\nret;\n}\n"
                             ".visible .entry k(.param .u64 k_p)\n{\n.reg .b32 %r<4>;\n.reg .b64 %rd<2>;\n"
                             "ld.param.u64 %rd1, [k_p];\nmov.u32 %r1, %tid.x;\nbrx.idx %r1, {A, B};\n"
                             "A:\nmov.u32 %r2, 100;\nbra J;\nB:\nmov.u32 %r2, 200;\nJ:\n"
                             "call (%r3), f, (%rd1, %r2);\nst.global.u32 [%rd1+4], %r3;\nret;\n}\n";
    SimMemory mem(kBase, 1 << 20);
    launch(load(text, "k"), {1, 1, {ArgValue::address(kBase)}}, mem);
    EXPECT_EQ(u32_at(mem, kBase), 100u);
    EXPECT_EQ(u32_at(mem, kBase + 4), 101u);
    SimMemory mem2(kBase, 1 << 20);
    launch(load(text, "k"), {1, 2, {ArgValue::address(kBase)}}, mem2);
    EXPECT_EQ(u32_at(mem2, kBase), 200u);
}

TEST(SymbolTable, LoadAndLookup) {
    SymbolTable symtab;
    const auto text = std::string(kHeader) + ".visible .entry a()\n{\nret;\n}\n.visible .entry b()\n{\nret;\n}\n";
    EXPECT_TRUE(load_module(parse_module(text), symtab).empty());
    EXPECT_NE(symtab.lookup("a"), nullptr);
    EXPECT_NE(symtab.lookup("b"), nullptr);
    EXPECT_EQ(symtab.lookup("c"), nullptr);
    const auto *before = &symtab.lookup("a")->sandboxed.kernel();
    const auto warnings = load_module(parse_module(text), symtab);
    EXPECT_EQ(warnings.size(), 2u);
    EXPECT_NE(&symtab.lookup("a")->sandboxed.kernel(), before);
    EXPECT_EQ(symtab.size(), 2u);

    SymbolTable boxed;
    load_module(sandbox_module(golden("store_tid.ptx"), {}).module, boxed);
    EXPECT_EQ(boxed.lookup("kernel")->sandboxed.arity(), 4u);
}

TEST(RunPair, InBounds) {
    for (std::uint64_t seed = 100; seed < 120; ++seed) {
        auto c = testgen::generate_case(seed, {});
        const auto m = parse_module(c.kernel.text);
        const auto orig = find_kernel(make_loaded_module(m), "gen");
        for (auto mode : {SandboxMode::fence_bitwise, SandboxMode::fence_modulo, SandboxMode::check}) {
            const auto v = run_pair(orig, load_sandboxed(m, "gen", {mode}), c.config, {mode}, c.base, c.size, c.memory);
            ASSERT_FALSE(v.original_faulted);
            ASSERT_TRUE(v.original_in_partition);
            ASSERT_TRUE(v.memories_identical) << c.kernel.text;
            ASSERT_TRUE(v.sandboxed_contained);
            ASSERT_EQ(v.oob_exits, 0u);
        }
    }
}

TEST(RunPair, OutOfBounds) {
    for (std::uint64_t seed = 200; seed < 230; ++seed) {
        auto c = testgen::generate_case(seed, {.adversarial = true});
        const auto m = parse_module(c.kernel.text);
        const auto orig = find_kernel(make_loaded_module(m), "gen");
        for (auto mode : {SandboxMode::fence_bitwise, SandboxMode::fence_modulo}) {
            const auto v = run_pair(orig, load_sandboxed(m, "gen", {mode}), c.config, {mode}, c.base, c.size, c.memory);
            ASSERT_FALSE(v.original_in_partition && !v.original_faulted);
            ASSERT_TRUE(v.sandboxed_contained);
            ASSERT_TRUE(v.others_untouched);
        }
        const auto v = run_pair(orig, load_sandboxed(m, "gen", {SandboxMode::check}), c.config, {SandboxMode::check},
                                c.base, c.size, c.memory);
        ASSERT_TRUE(v.sandboxed_contained);
        ASSERT_TRUE(v.others_untouched);
        ASSERT_GE(v.oob_exits, 1u);
    }
}

// Inline-reciprocal modulo against rem.u64 for arbitrary (not only power of
// two) sizes.
TEST(RunPair, ReciprocalLoweringMatchesRem) {
    const std::string text = std::string(kHeader) +
                             ".visible .entry w(.param .u64 w_p, .param .u32 w_v)\n{\n.reg .b32 %r<2>;\n.reg .b64 %rd<2>;\n"
                             "ld.param.u64 %rd1, [w_p];\nld.param.u32 %r1, [w_v];\nst.global.u8 [%rd1], %r1;\nret;\n}\n";
    const auto m = parse_module(text);
    const auto with_rem = load_sandboxed(m, "w", {SandboxMode::fence_modulo, false});
    const auto with_inv = load_sandboxed(m, "w", {SandboxMode::fence_modulo, true});
    std::mt19937_64 rng(4);
    for (int i = 0; i < 3000; ++i) {
        const std::uint64_t size = 2 + rng() % ((i % 3 == 0) ? 1000 : (1 << 20) - 2);
        const std::uint64_t base = kBase + rng() % ((2 << 20) - size);
        const std::uint64_t raw = i % 4 == 0 ? rng() : base + rng() % (3 * size) - size;
        std::uint64_t addr[2];
        int j = 0;
        for (const auto *h : {&with_rem, &with_inv}) {
            SimMemory mem(kBase, 2 << 20);
            const bool recip = h == &with_inv;
            LaunchConfig cfg{1, 1, {ArgValue::address(raw), ArgValue::u32(1)}};
            for (auto v : fence_arguments({SandboxMode::fence_modulo, recip}, base, size)) cfg.args.push_back(ArgValue::u64(v));
            const auto trace = launch(*h, cfg, mem);
            addr[j++] = trace.entries.back().address;
        }
        ASSERT_EQ(addr[0], addr[1]) << size << " " << raw;
        const unsigned __int128 expect = base + static_cast<std::uint64_t>(raw - base) % size;
        ASSERT_EQ(addr[0], static_cast<std::uint64_t>(expect));
    }
}
