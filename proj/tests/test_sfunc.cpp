#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "iosim/sfunc.hpp"

#include "verifier_reference.hpp"

using namespace iosim;
using namespace iosim::sfunc;

namespace {

std::vector<std::byte> zero_block() { return std::vector<std::byte>(512, std::byte{0}); }

using testref::random_program;
using testref::random_valid_program;
using testref::ref_check;

} // namespace

TEST_CASE("backward jumps are rejected") {
    Program p;
    p.code = {
        {Op::MovI, 0, kNoReg, 1},
        {Op::Jeq, 0, 0, 0}, // jump back to 0
        {Op::Return, 0, kNoReg, 0},
    };
    auto err = verify(p);
    REQUIRE(err.has_value());
    CHECK(err->reason == VerifyError::Reason::BackwardJump);
    CHECK(err->index == 1);
}

TEST_CASE("an 8-byte load at offset 508 needs bytes past the block end") {
    Program p;
    p.code = {
        {Op::LoadQ, 0, kNoReg, 508},
        {Op::Return, 0, kNoReg, 0},
    };
    auto err = verify(p);
    REQUIRE(err.has_value());
    CHECK(err->reason == VerifyError::Reason::OobAccess);
    CHECK(err->index == 0);
    p.code[0].imm = 504; // exactly the last 8 bytes: fine
    CHECK(!verify(p).has_value());
}

TEST_CASE("fall-through ends and too-long programs are rejected") {
    Program p;
    p.code = {{Op::MovI, 0, kNoReg, 7}};
    auto err = verify(p);
    REQUIRE(err.has_value());
    CHECK(err->reason == VerifyError::Reason::MissingTerminator);

    Program q;
    for (u32 i = 0; i < kMaxInstructions + 1; ++i) q.code.push_back({Op::MovI, 0, kNoReg, 0});
    q.code.push_back({Op::Return, 0, kNoReg, 0});
    auto err2 = verify(q);
    REQUIRE(err2.has_value());
    CHECK(err2->reason == VerifyError::Reason::TooManyInstructions);
}

TEST_CASE("emitted bytes are bounded by the declared cap on every path") {
    Program p;
    p.ret_buf_cap = 8;
    p.code = {
        {Op::Emit, 0, kNoReg, 8},
        {Op::Emit, 0, kNoReg, 1},
        {Op::Return, 0, kNoReg, 0},
    };
    auto err = verify(p);
    REQUIRE(err.has_value());
    CHECK(err->reason == VerifyError::Reason::EmitOverflow);
    p.ret_buf_cap = 9;
    CHECK(!verify(p).has_value());
}

TEST_CASE("constant return: movi, emit, return") {
    Program p;
    p.ret_buf_cap = 8;
    p.code = {
        {Op::MovI, 0, kNoReg, 42},
        {Op::Emit, 0, kNoReg, 8},
        {Op::Return, 0, kNoReg, 0},
    };
    REQUIRE(!verify(p).has_value());
    ChainBudget budget;
    const auto block = zero_block();
    auto res = execute(p, block, budget);
    CHECK(res.status == ExecResult::Status::Return);
    REQUIRE(res.buffer.size() == 8);
    CHECK(std::to_integer<u8>(res.buffer[0]) == 42);
    for (int i = 1; i < 8; ++i) CHECK(std::to_integer<u8>(res.buffer[i]) == 0);
    CHECK(res.steps == 3);
}

TEST_CASE("loads are little-endian") {
    std::vector<std::byte> block(512, std::byte{0});
    block[16] = std::byte{0xEF};
    block[17] = std::byte{0xBE};
    block[18] = std::byte{0xAD};
    block[19] = std::byte{0xDE};
    Program p;
    p.code = {
        {Op::LoadW, 1, kNoReg, 16},
        {Op::Emit, 1, kNoReg, 4},
        {Op::Return, 0, kNoReg, 0},
    };
    p.ret_buf_cap = 4;
    ChainBudget budget;
    auto res = execute(p, block, budget);
    REQUIRE(res.status == ExecResult::Status::Return);
    u64 v = 0;
    for (u32 i = 0; i < 4; ++i) v |= static_cast<u64>(std::to_integer<u8>(res.buffer[i])) << (8 * i);
    CHECK(v == 0xDEADBEEF);
}

TEST_CASE("resubmission honours the chain budget: EBOUND on attempt hop_limit+1") {
    Program p;
    p.code = {
        {Op::MovI, 0, kNoReg, 512},
        {Op::Resubmit, 0, kNoReg, 0},
    };
    REQUIRE(!verify(p).has_value());
    ChainBudget budget{16, 0};
    const auto block = zero_block();
    for (u32 i = 0; i < 16; ++i) {
        auto res = execute(p, block, budget);
        REQUIRE(res.status == ExecResult::Status::Resubmit);
        CHECK(res.resubmit_off == 512);
    }
    CHECK(budget.hops_used == 16);
    auto res = execute(p, block, budget);
    CHECK(res.status == ExecResult::Status::FaultHopLimit);
    CHECK(budget.hops_used == 16);
}

TEST_CASE("misaligned resubmission offsets trap") {
    Program p;
    p.code = {
        {Op::MovI, 0, kNoReg, 513},
        {Op::Resubmit, 0, kNoReg, 0},
    };
    ChainBudget budget;
    const auto block = zero_block();
    CHECK(execute(p, block, budget).status == ExecResult::Status::FaultMisaligned);
}

TEST_CASE("register-indexed loads carry a runtime bounds trap") {
    Program p;
    p.code = {
        {Op::MovI, 1, kNoReg, 600},
        {Op::LoadQ, 0, 1, 0},
        {Op::Return, 0, kNoReg, 0},
    };
    REQUIRE(!verify(p).has_value()); // admitted statically
    ChainBudget budget;
    const auto block = zero_block();
    CHECK(execute(p, block, budget).status == ExecResult::Status::FaultOob);
}

TEST_CASE("initial registers carry the chain argument") {
    Program p;
    p.ret_buf_cap = 8;
    p.code = {
        {Op::Emit, 7, kNoReg, 8},
        {Op::Return, 0, kNoReg, 0},
    };
    ChainBudget budget;
    Registers regs{};
    regs[7] = 0x1122334455667788ULL;
    const auto block = zero_block();
    auto res = execute(p, block, budget, regs);
    REQUIRE(res.status == ExecResult::Status::Return);
    u64 v = 0;
    for (u32 i = 0; i < 8; ++i) v |= static_cast<u64>(std::to_integer<u8>(res.buffer[i])) << (8 * i);
    CHECK(v == regs[7]);
}

TEST_CASE("soundness: verifier agrees with the brute-force reference on small programs") {
    SplitMix64 rng(0x5eed5);
    u32 rejected = 0, accepted = 0;
    for (int trial = 0; trial < 4000; ++trial) {
        const Program p = random_program(rng);
        const auto impl = verify(p);
        const auto ref = ref_check(p);
        INFO("trial " << trial);
        CHECK(impl.has_value() == !ref.empty());
        if (impl.has_value() && !ref.empty()) {
            CHECK(ref.count(impl->reason) == 1);
            ++rejected;
        } else if (!impl.has_value()) {
            ++accepted;
        }
    }
    // The generator must exercise both sides.
    CHECK(rejected > 500);
    CHECK(accepted > 200);
}

TEST_CASE("termination and memory safety over verifier-clean programs") {
    SplitMix64 rng(0xabc);
    for (int trial = 0; trial < 2000; ++trial) {
        const Program p = random_valid_program(rng);
        REQUIRE(!verify(p).has_value());
        std::vector<std::byte> block(512);
        for (auto& b : block) b = static_cast<std::byte>(rng.next() & 0xFF);
        ChainBudget budget{4, 0};
        Registers regs{};
        for (auto& r : regs) r = rng.next();
        auto res = execute(p, block, budget, regs);
        CHECK(res.steps <= p.code.size());
        // Programs whose loads are all constant-offset can never trap.
        bool reg_indexed = false;
        for (const auto& in : p.code)
            if (detail::is_load(in.op) && in.src != kNoReg) reg_indexed = true;
        if (!reg_indexed) CHECK(res.status != ExecResult::Status::FaultOob);
        CHECK(res.buffer.size() <= p.ret_buf_cap);
    }
}

TEST_CASE("assembler and disassembler round-trip bit-exactly") {
    SplitMix64 rng(0x700);
    for (int trial = 0; trial < 500; ++trial) {
        Program p = random_valid_program(rng, 16);
        p.name = "t";
        const std::string text = disassemble(p);
        const Program back = assemble(text);
        INFO(text);
        CHECK(back == p);
        CHECK(disassemble(back) == text);
    }
}

TEST_CASE("assembler accepts comments and reports parse errors with lines") {
    const char* good = ".name demo\n"
                       ".retbuf 8\n"
                       "movi r0, 42 ; the answer\n"
                       "; full-line comment\n"
                       "emit r0, 8\n"
                       "return\n";
    const Program p = assemble(good);
    CHECK(p.name == "demo");
    CHECK(p.ret_buf_cap == 8);
    CHECK(p.code.size() == 3);

    try {
        assemble("movi r0, 1\nbogus r1, r2\n");
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line == 2);
    }
    CHECK_THROWS_AS(assemble("movi r9, 1\n"), ParseError);
    CHECK_THROWS_AS(assemble("loadq r0, 16\n"), ParseError); // missing brackets
}
