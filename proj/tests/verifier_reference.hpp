// Test-only oracle for the verifier: recursive path enumeration over the
// forward DAG, collecting every violated rule. Independent of the linear
// single-pass checker under test.
#pragma once

#include <set>
#include <vector>

#include "iosim/sfunc.hpp"

namespace iosim::testref {

using sfunc::Instruction;
using sfunc::Op;
using sfunc::Program;
using sfunc::VerifyError;

inline void ref_walk(const Program& p, u32 ip, u64 emitted, std::vector<i64>& best_seen,
                     std::set<VerifyError::Reason>& out) {
    const u32 n = static_cast<u32>(p.code.size());
    if (ip == n) {
        out.insert(VerifyError::Reason::MissingTerminator);
        return;
    }
    if (best_seen[ip] >= 0 && static_cast<u64>(best_seen[ip]) >= emitted) return;
    best_seen[ip] = static_cast<i64>(emitted);

    const Instruction& in = p.code[ip];
    u64 e = emitted;
    if (in.op == Op::Emit) {
        e += in.imm;
        if (e > p.ret_buf_cap) out.insert(VerifyError::Reason::EmitOverflow);
    }
    if (sfunc::detail::is_terminator(in.op)) return;
    if (sfunc::detail::is_branch(in.op)) {
        if (in.imm <= ip)
            out.insert(VerifyError::Reason::BackwardJump);
        else if (in.imm >= n)
            out.insert(VerifyError::Reason::JumpOutOfRange);
        else
            ref_walk(p, static_cast<u32>(in.imm), e, best_seen, out);
    }
    ref_walk(p, ip + 1, e, best_seen, out);
}

inline std::set<VerifyError::Reason> ref_check(const Program& p) {
    std::set<VerifyError::Reason> out;
    const u32 n = static_cast<u32>(p.code.size());
    if (n == 0) {
        out.insert(VerifyError::Reason::EmptyProgram);
        return out;
    }
    if (n > sfunc::kMaxInstructions) out.insert(VerifyError::Reason::TooManyInstructions);
    if (p.ret_buf_cap > sfunc::kMaxReturnBytes) out.insert(VerifyError::Reason::BufferCapTooLarge);
    for (u32 i = 0; i < n; ++i)
        if (sfunc::detail::check_operands(p.code[i], i)) out.insert(VerifyError::Reason::BadOperand);
    for (u32 i = 0; i < n; ++i) {
        const Instruction& in = p.code[i];
        if (sfunc::detail::is_load(in.op) && in.src == sfunc::kNoReg &&
            in.imm + sfunc::detail::load_size(in.op) > 512)
            out.insert(VerifyError::Reason::OobAccess);
    }
    // Jump rules hold globally, even for unreachable instructions.
    for (u32 i = 0; i < n; ++i) {
        const Instruction& in = p.code[i];
        if (sfunc::detail::is_branch(in.op)) {
            if (in.imm <= i) out.insert(VerifyError::Reason::BackwardJump);
            else if (in.imm >= n) out.insert(VerifyError::Reason::JumpOutOfRange);
        }
    }
    if (out.count(VerifyError::Reason::BadOperand) == 0) {
        std::vector<i64> best(n, -1);
        ref_walk(p, 0, 0, best, out);
    }
    return out;
}

// Random but mostly-plausible programs for the soundness cross-check.
inline Program random_program(SplitMix64& rng, u32 max_len = 32) {
    Program p;
    const u32 n = 1 + static_cast<u32>(rng.next() % max_len);
    const u64 caps[] = {0, 8, 64, 4096};
    p.ret_buf_cap = static_cast<u32>(caps[rng.next() % 4]);
    for (u32 i = 0; i < n; ++i) {
        Instruction in;
        in.op = static_cast<Op>(rng.next() % (static_cast<u64>(Op::Drop) + 1));
        in.dst = static_cast<u8>(rng.next() % 8);
        in.src = sfunc::kNoReg;
        switch (in.op) {
        case Op::LoadB:
        case Op::LoadW:
        case Op::LoadQ:
            if (rng.next() % 3 == 0) in.src = static_cast<u8>(rng.next() % 8);
            in.imm = rng.next() % 560; // sometimes out of bounds
            break;
        case Op::MovI: in.imm = rng.next(); break;
        case Op::Mov: in.src = static_cast<u8>(rng.next() % 8); break;
        case Op::Add:
        case Op::Sub:
        case Op::Mul:
        case Op::And:
        case Op::Or:
        case Op::Shl:
        case Op::Shr:
            if (rng.next() % 2) in.src = static_cast<u8>(rng.next() % 8);
            else in.imm = rng.next() % 1024;
            break;
        case Op::Jeq:
        case Op::Jne:
        case Op::Jlt:
        case Op::Jge:
            in.src = static_cast<u8>(rng.next() % 8);
            switch (rng.next() % 8) {
            case 0: in.imm = rng.next() % (i + 1); break; // backward or self
            case 1: in.imm = n + rng.next() % 4; break;   // out of range
            default: in.imm = i + 1 + rng.next() % (n - i); break;
            }
            break;
        case Op::Emit: in.imm = 1 + rng.next() % 8; break;
        case Op::Resubmit:
        case Op::Return:
        case Op::Drop:
            in.dst = (in.op == Op::Resubmit) ? in.dst : 0;
            in.imm = 0;
            break;
        }
        p.code.push_back(in);
    }
    return p;
}

// Generator constrained to verifier-clean programs.
inline Program random_valid_program(SplitMix64& rng, u32 body_len = 24) {
    Program p;
    p.ret_buf_cap = 4096;
    const u32 n = body_len + 1;
    for (u32 i = 0; i < body_len; ++i) {
        Instruction in;
        switch (rng.next() % 8) {
        case 0: in = {Op::MovI, static_cast<u8>(rng.next() % 8), sfunc::kNoReg, rng.next()}; break;
        case 1: in = {Op::Mov, static_cast<u8>(rng.next() % 8), static_cast<u8>(rng.next() % 8), 0}; break;
        case 2: in = {Op::LoadQ, static_cast<u8>(rng.next() % 8), sfunc::kNoReg, rng.next() % 505}; break;
        case 3: in = {Op::Add, static_cast<u8>(rng.next() % 8), sfunc::kNoReg, rng.next() % 4096}; break;
        case 4: in = {Op::Shr, static_cast<u8>(rng.next() % 8), sfunc::kNoReg, rng.next() % 64}; break;
        case 5: in = {Op::Emit, static_cast<u8>(rng.next() % 8), sfunc::kNoReg, 1 + rng.next() % 8}; break;
        case 6:
            in = {static_cast<Op>(static_cast<u64>(Op::Jeq) + rng.next() % 4), static_cast<u8>(rng.next() % 8),
                  static_cast<u8>(rng.next() % 8), i + 1 + rng.next() % (n - i - 1 ? n - i - 1 : 1)};
            break;
        default: in = {Op::And, static_cast<u8>(rng.next() % 8), static_cast<u8>(rng.next() % 8), 0}; break;
        }
        p.code.push_back(in);
    }
    const u64 term = rng.next() % 3;
    if (term == 0) p.code.push_back({Op::Return, 0, sfunc::kNoReg, 0});
    else if (term == 1) p.code.push_back({Op::Drop, 0, sfunc::kNoReg, 0});
    else p.code.push_back({Op::Resubmit, static_cast<u8>(rng.next() % 8), sfunc::kNoReg, 0});
    return p;
}

} // namespace iosim::testref
