#pragma once

#include <array>
#include <cassert>
#include <cctype>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "iosim/common.hpp"

namespace iosim::sfunc {

// Register machine executed once per I/O completion. Control flow is
// forward-only, so any verified program terminates within its own length.
// 8 general 64-bit registers; loads read the 512 B completed block.
enum class Op : u8 {
    LoadB, // dst <- 1 byte  at [src? regs[src]+imm : imm]
    LoadW, // dst <- 4 bytes little-endian
    LoadQ, // dst <- 8 bytes little-endian
    MovI,  // dst <- imm
    Mov,   // dst <- regs[src]
    Add,   // dst <- dst + operand (src register, or imm when src absent)
    Sub,
    Mul,
    And,
    Or,
    Shl, // shift amount masked to 63
    Shr,
    Jeq, // if regs[dst] == regs[src] goto imm (forward absolute index)
    Jne,
    Jlt, // unsigned
    Jge, // unsigned
    Emit,     // append low imm (1..8) bytes of regs[dst] to the return buffer
    Resubmit, // next file offset = regs[dst]; ends the invocation
    Return,   // surface the return buffer; ends the invocation
    Drop,     // no data; ends the invocation
};

inline constexpr u8 kNoReg = 0xFF;
inline constexpr u32 kMaxInstructions = 4096;
inline constexpr u32 kMaxReturnBytes = 4096;
inline constexpr u32 kBlockWindow = 512; // loadable prefix of the completed block

struct Instruction {
    Op op = Op::Drop;
    u8 dst = 0;
    u8 src = kNoReg;
    u64 imm = 0;

    bool operator==(const Instruction&) const = default;
};

struct Program {
    std::vector<Instruction> code;
    u32 ret_buf_cap = kMaxReturnBytes;
    std::string name;
    u32 version = 1;

    bool operator==(const Program&) const = default;
};

struct VerifyError {
    enum class Reason {
        EmptyProgram,
        TooManyInstructions,
        BufferCapTooLarge,
        BadOperand,
        BackwardJump,
        JumpOutOfRange,
        OobAccess,
        MissingTerminator,
        EmitOverflow,
    };
    Reason reason;
    u32 index = 0;
};

inline const char* to_string(VerifyError::Reason r) {
    using R = VerifyError::Reason;
    switch (r) {
    case R::EmptyProgram: return "empty-program";
    case R::TooManyInstructions: return "too-many-instructions";
    case R::BufferCapTooLarge: return "buffer-cap-too-large";
    case R::BadOperand: return "bad-operand";
    case R::BackwardJump: return "backward-jump";
    case R::JumpOutOfRange: return "jump-out-of-range";
    case R::OobAccess: return "out-of-bounds-access";
    case R::MissingTerminator: return "missing-terminator";
    case R::EmitOverflow: return "emit-overflow";
    }
    return "?";
}

namespace detail {

inline bool is_terminator(Op op) { return op == Op::Resubmit || op == Op::Return || op == Op::Drop; }
inline bool is_branch(Op op) { return op == Op::Jeq || op == Op::Jne || op == Op::Jlt || op == Op::Jge; }
inline bool is_load(Op op) { return op == Op::LoadB || op == Op::LoadW || op == Op::LoadQ; }
inline bool is_alu(Op op) {
    switch (op) {
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::And:
    case Op::Or:
    case Op::Shl:
    case Op::Shr:
        return true;
    default:
        return false;
    }
}

inline u32 load_size(Op op) {
    switch (op) {
    case Op::LoadB: return 1;
    case Op::LoadW: return 4;
    default: return 8;
    }
}

inline std::optional<VerifyError> check_operands(const Instruction& in, u32 i) {
    const auto bad = [&] { return VerifyError{VerifyError::Reason::BadOperand, i}; };
    const bool dst_reg = in.dst < 8;
    const bool src_reg = in.src < 8;
    const bool src_none = in.src == kNoReg;
    switch (in.op) {
    case Op::LoadB:
    case Op::LoadW:
    case Op::LoadQ:
        if (!dst_reg || !(src_reg || src_none)) return bad();
        break;
    case Op::MovI:
        if (!dst_reg || !src_none) return bad();
        break;
    case Op::Mov:
        if (!dst_reg || !src_reg) return bad();
        break;
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::And:
    case Op::Or:
    case Op::Shl:
    case Op::Shr:
        if (!dst_reg || !(src_reg || src_none)) return bad();
        break;
    case Op::Jeq:
    case Op::Jne:
    case Op::Jlt:
    case Op::Jge:
        if (!dst_reg || !src_reg) return bad();
        break;
    case Op::Emit:
        if (!dst_reg || !src_none || in.imm < 1 || in.imm > 8) return bad();
        break;
    case Op::Resubmit:
        if (!dst_reg || !src_none) return bad();
        break;
    case Op::Return:
    case Op::Drop:
        if (in.dst != 0 || !src_none || in.imm != 0) return bad();
        break;
    }
    return std::nullopt;
}

} // namespace detail

// Static checks, in order: structural limits, operand ranges, forward-only
// in-range jumps, provable block-buffer bounds for constant-offset loads,
// terminator coverage on every reachable path, and a worst-case emitted-bytes
// bound against the declared return-buffer cap. Register-indexed loads are
// admitted here and bounds-trapped at run time instead.
inline std::optional<VerifyError> verify(const Program& p) {
    const u32 n = static_cast<u32>(p.code.size());
    if (n == 0) return VerifyError{VerifyError::Reason::EmptyProgram, 0};
    if (n > kMaxInstructions) return VerifyError{VerifyError::Reason::TooManyInstructions, 0};
    if (p.ret_buf_cap > kMaxReturnBytes) return VerifyError{VerifyError::Reason::BufferCapTooLarge, 0};

    for (u32 i = 0; i < n; ++i) {
        const Instruction& in = p.code[i];
        if (auto err = detail::check_operands(in, i)) return err;
        if (detail::is_branch(in.op)) {
            if (in.imm >= n) return VerifyError{VerifyError::Reason::JumpOutOfRange, i};
            if (in.imm <= i) return VerifyError{VerifyError::Reason::BackwardJump, i};
        }
        if (detail::is_load(in.op) && in.src == kNoReg) {
            const u64 end = in.imm + detail::load_size(in.op);
            if (in.imm >= kBlockWindow || end > kBlockWindow)
                return VerifyError{VerifyError::Reason::OobAccess, i};
        }
    }

    // Reachability plus max-emitted-bytes, in one forward pass (indices are
    // already a topological order because all jumps are forward).
    constexpr u64 kUnreached = std::numeric_limits<u64>::max();
    std::vector<u64> max_emit(n, kUnreached);
    max_emit[0] = 0;
    for (u32 i = 0; i < n; ++i) {
        if (max_emit[i] == kUnreached) continue;
        const Instruction& in = p.code[i];
        u64 out = max_emit[i];
        if (in.op == Op::Emit) {
            out += in.imm;
            if (out > p.ret_buf_cap) return VerifyError{VerifyError::Reason::EmitOverflow, i};
        }
        if (detail::is_terminator(in.op)) continue;
        if (detail::is_branch(in.op)) {
            const u32 t = static_cast<u32>(in.imm);
            max_emit[t] = (max_emit[t] == kUnreached) ? out : std::max(max_emit[t], out);
        }
        if (i + 1 == n) return VerifyError{VerifyError::Reason::MissingTerminator, i};
        max_emit[i + 1] = (max_emit[i + 1] == kUnreached) ? out : std::max(max_emit[i + 1], out);
    }
    return std::nullopt;
}

// Per-chain resubmission budget enforced at the driver hook.
struct ChainBudget {
    u32 hop_limit = 16;
    u32 hops_used = 0;
};

using Registers = std::array<u64, 8>;

struct ExecResult {
    enum class Status {
        Return,
        Resubmit,
        Drop,
        FaultOob,        // register-indexed load outside the block window
        FaultMisaligned, // resubmit offset not 512-aligned
        FaultHopLimit,   // resubmit past the chain budget (EBOUND)
    };
    Status status = Status::Drop;
    u64 resubmit_off = 0;
    std::vector<std::byte> buffer;
    u32 steps = 0;

    bool is_fault() const {
        return status == Status::FaultOob || status == Status::FaultMisaligned ||
               status == Status::FaultHopLimit;
    }
};

// One invocation over one completed block. Deterministic single pass; the
// instruction pointer only moves forward, so steps <= program length. The
// register file starts from `init_regs` (the chain's argument registers).
inline ExecResult execute(const Program& p, std::span<const std::byte> block, ChainBudget& budget,
                          const Registers& init_regs = {}) {
    if (block.size() < kBlockWindow) throw std::invalid_argument("execute: block must provide 512 bytes");
    ExecResult res;
    Registers regs = init_regs;
    res.buffer.reserve(8);

    u32 ip = 0;
    const u32 n = static_cast<u32>(p.code.size());
    while (ip < n) {
        const Instruction& in = p.code[ip];
        ++res.steps;
        assert(res.steps <= n && "forward-only control flow cannot revisit instructions");
        u32 next = ip + 1;
        const u64 operand = (in.src == kNoReg) ? in.imm : regs[in.src];
        switch (in.op) {
        case Op::LoadB:
        case Op::LoadW:
        case Op::LoadQ: {
            const u64 base = (in.src == kNoReg) ? 0 : regs[in.src];
            const u64 addr = base + in.imm;
            const u32 sz = detail::load_size(in.op);
            if (addr >= kBlockWindow || addr + sz > kBlockWindow || addr + sz < addr) {
                res.status = ExecResult::Status::FaultOob;
                return res;
            }
            u64 v = 0;
            for (u32 b = 0; b < sz; ++b) v |= static_cast<u64>(std::to_integer<u8>(block[addr + b])) << (8 * b);
            regs[in.dst] = v;
            break;
        }
        case Op::MovI: regs[in.dst] = in.imm; break;
        case Op::Mov: regs[in.dst] = regs[in.src]; break;
        case Op::Add: regs[in.dst] += operand; break;
        case Op::Sub: regs[in.dst] -= operand; break;
        case Op::Mul: regs[in.dst] *= operand; break;
        case Op::And: regs[in.dst] &= operand; break;
        case Op::Or: regs[in.dst] |= operand; break;
        case Op::Shl: regs[in.dst] <<= (operand & 63); break;
        case Op::Shr: regs[in.dst] >>= (operand & 63); break;
        case Op::Jeq:
            if (regs[in.dst] == regs[in.src]) next = static_cast<u32>(in.imm);
            break;
        case Op::Jne:
            if (regs[in.dst] != regs[in.src]) next = static_cast<u32>(in.imm);
            break;
        case Op::Jlt:
            if (regs[in.dst] < regs[in.src]) next = static_cast<u32>(in.imm);
            break;
        case Op::Jge:
            if (regs[in.dst] >= regs[in.src]) next = static_cast<u32>(in.imm);
            break;
        case Op::Emit: {
            const u64 v = regs[in.dst];
            for (u64 b = 0; b < in.imm; ++b) res.buffer.push_back(static_cast<std::byte>((v >> (8 * b)) & 0xFF));
            assert(res.buffer.size() <= p.ret_buf_cap && "verifier bounds emitted bytes");
            break;
        }
        case Op::Resubmit: {
            const u64 off = regs[in.dst];
            if (budget.hops_used >= budget.hop_limit) {
                res.status = ExecResult::Status::FaultHopLimit;
                return res;
            }
            if (off % kBlockBytes != 0) {
                res.status = ExecResult::Status::FaultMisaligned;
                return res;
            }
            ++budget.hops_used;
            res.status = ExecResult::Status::Resubmit;
            res.resubmit_off = off;
            return res;
        }
        case Op::Return:
            res.status = ExecResult::Status::Return;
            return res;
        case Op::Drop:
            res.status = ExecResult::Status::Drop;
            res.buffer.clear();
            return res;
        }
        ip = next;
    }
    // Unreachable for verified programs; treat a fall-through as Drop.
    res.status = ExecResult::Status::Drop;
    return res;
}

// ---------------------------------------------------------------------------
// Text form. One instruction per line, `;` comments, optional leading
// metadata directives (.name/.version/.retbuf). The disassembler emits the
// canonical spelling and assemble(disassemble(p)) == p.

struct ParseError : std::runtime_error {
    int line;
    ParseError(int line_, const std::string& what_) : std::runtime_error(what_), line(line_) {}
};

namespace detail {

inline const char* mnemonic(Op op) {
    switch (op) {
    case Op::LoadB: return "loadb";
    case Op::LoadW: return "loadw";
    case Op::LoadQ: return "loadq";
    case Op::MovI: return "movi";
    case Op::Mov: return "mov";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::And: return "and";
    case Op::Or: return "or";
    case Op::Shl: return "shl";
    case Op::Shr: return "shr";
    case Op::Jeq: return "jeq";
    case Op::Jne: return "jne";
    case Op::Jlt: return "jlt";
    case Op::Jge: return "jge";
    case Op::Emit: return "emit";
    case Op::Resubmit: return "resubmit";
    case Op::Return: return "return";
    case Op::Drop: return "drop";
    }
    return "?";
}

inline std::optional<Op> op_from_mnemonic(const std::string& m) {
    for (int o = 0; o <= static_cast<int>(Op::Drop); ++o)
        if (m == mnemonic(static_cast<Op>(o))) return static_cast<Op>(o);
    return std::nullopt;
}

inline std::vector<std::string> tokenize(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ';') break;
        if (std::isspace(static_cast<unsigned char>(c)) || c == ',') {
            if (!cur.empty()) out.push_back(cur), cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

inline u8 parse_reg(const std::string& tok, int line) {
    if (tok.size() == 2 && tok[0] == 'r' && tok[1] >= '0' && tok[1] <= '7') return static_cast<u8>(tok[1] - '0');
    throw ParseError(line, "expected register r0..r7, got '" + tok + "'");
}

inline u64 parse_imm(const std::string& tok, int line) {
    try {
        std::size_t pos = 0;
        bool neg = !tok.empty() && tok[0] == '-';
        const std::string body = neg ? tok.substr(1) : tok;
        const u64 v = std::stoull(body, &pos, 0);
        if (pos != body.size()) throw ParseError(line, "trailing characters in immediate '" + tok + "'");
        return neg ? ~v + 1 : v;
    } catch (const ParseError&) {
        throw;
    } catch (const std::exception&) {
        throw ParseError(line, "bad immediate '" + tok + "'");
    }
}

// [rN+imm] | [imm] | [rN]
inline std::pair<u8, u64> parse_addr(const std::string& tok, int line) {
    if (tok.size() < 3 || tok.front() != '[' || tok.back() != ']')
        throw ParseError(line, "expected [addr], got '" + tok + "'");
    const std::string body = tok.substr(1, tok.size() - 2);
    const auto plus = body.find('+');
    if (body.size() >= 2 && body[0] == 'r' && plus == std::string::npos) return {parse_reg(body, line), 0};
    if (plus != std::string::npos)
        return {parse_reg(body.substr(0, plus), line), parse_imm(body.substr(plus + 1), line)};
    return {kNoReg, parse_imm(body, line)};
}

} // namespace detail

inline Program assemble(const std::string& text) {
    Program prog;
    prog.ret_buf_cap = kMaxReturnBytes;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto toks = detail::tokenize(line);
        if (toks.empty()) continue;
        if (toks[0] == ".name") {
            if (toks.size() != 2) throw ParseError(lineno, ".name takes one token");
            prog.name = toks[1];
            continue;
        }
        if (toks[0] == ".version") {
            if (toks.size() != 2) throw ParseError(lineno, ".version takes one integer");
            prog.version = static_cast<u32>(detail::parse_imm(toks[1], lineno));
            continue;
        }
        if (toks[0] == ".retbuf") {
            if (toks.size() != 2) throw ParseError(lineno, ".retbuf takes one integer");
            prog.ret_buf_cap = static_cast<u32>(detail::parse_imm(toks[1], lineno));
            continue;
        }
        const auto op = detail::op_from_mnemonic(toks[0]);
        if (!op) throw ParseError(lineno, "unknown opcode '" + toks[0] + "'");
        Instruction ins;
        ins.op = *op;
        const auto need = [&](std::size_t n) {
            if (toks.size() != n + 1) throw ParseError(lineno, std::string(detail::mnemonic(*op)) + ": wrong operand count");
        };
        const auto is_reg_tok = [](const std::string& t) { return t.size() == 2 && t[0] == 'r'; };
        switch (*op) {
        case Op::LoadB:
        case Op::LoadW:
        case Op::LoadQ: {
            need(2);
            ins.dst = detail::parse_reg(toks[1], lineno);
            auto [src, imm] = detail::parse_addr(toks[2], lineno);
            ins.src = src;
            ins.imm = imm;
            break;
        }
        case Op::MovI:
            need(2);
            ins.dst = detail::parse_reg(toks[1], lineno);
            ins.imm = detail::parse_imm(toks[2], lineno);
            break;
        case Op::Mov:
            need(2);
            ins.dst = detail::parse_reg(toks[1], lineno);
            ins.src = detail::parse_reg(toks[2], lineno);
            break;
        case Op::Add:
        case Op::Sub:
        case Op::Mul:
        case Op::And:
        case Op::Or:
        case Op::Shl:
        case Op::Shr:
            need(2);
            ins.dst = detail::parse_reg(toks[1], lineno);
            if (is_reg_tok(toks[2]))
                ins.src = detail::parse_reg(toks[2], lineno);
            else
                ins.imm = detail::parse_imm(toks[2], lineno);
            break;
        case Op::Jeq:
        case Op::Jne:
        case Op::Jlt:
        case Op::Jge:
            need(3);
            ins.dst = detail::parse_reg(toks[1], lineno);
            ins.src = detail::parse_reg(toks[2], lineno);
            ins.imm = detail::parse_imm(toks[3], lineno);
            break;
        case Op::Emit:
            need(2);
            ins.dst = detail::parse_reg(toks[1], lineno);
            ins.imm = detail::parse_imm(toks[2], lineno);
            break;
        case Op::Resubmit:
            need(1);
            ins.dst = detail::parse_reg(toks[1], lineno);
            break;
        case Op::Return:
        case Op::Drop:
            need(0);
            break;
        }
        prog.code.push_back(ins);
    }
    return prog;
}

inline std::string disassemble(const Program& p) {
    std::ostringstream out;
    if (!p.name.empty()) out << ".name " << p.name << "\n";
    out << ".version " << p.version << "\n";
    out << ".retbuf " << p.ret_buf_cap << "\n";
    for (const auto& in : p.code) {
        out << detail::mnemonic(in.op);
        const auto reg = [](u8 r) { return std::string("r") + static_cast<char>('0' + r); };
        switch (in.op) {
        case Op::LoadB:
        case Op::LoadW:
        case Op::LoadQ:
            out << ' ' << reg(in.dst) << ", [";
            if (in.src != kNoReg) {
                out << reg(in.src);
                if (in.imm != 0) out << '+' << in.imm;
            } else {
                out << in.imm;
            }
            out << ']';
            break;
        case Op::MovI: out << ' ' << reg(in.dst) << ", " << in.imm; break;
        case Op::Mov: out << ' ' << reg(in.dst) << ", " << reg(in.src); break;
        case Op::Add:
        case Op::Sub:
        case Op::Mul:
        case Op::And:
        case Op::Or:
        case Op::Shl:
        case Op::Shr:
            out << ' ' << reg(in.dst) << ", ";
            if (in.src != kNoReg)
                out << reg(in.src);
            else
                out << in.imm;
            break;
        case Op::Jeq:
        case Op::Jne:
        case Op::Jlt:
        case Op::Jge:
            out << ' ' << reg(in.dst) << ", " << reg(in.src) << ", " << in.imm;
            break;
        case Op::Emit: out << ' ' << reg(in.dst) << ", " << in.imm; break;
        case Op::Resubmit: out << ' ' << reg(in.dst); break;
        case Op::Return:
        case Op::Drop: break;
        }
        out << '\n';
    }
    return out.str();
}

// Small convenience builder used by the lookup compiler and tests.
class Asm {
public:
    u32 here() const { return static_cast<u32>(code_.size()); }

    Asm& raw(Instruction in) {
        code_.push_back(in);
        return *this;
    }
    Asm& loadb(u8 dst, u8 src, u64 off) { return raw({Op::LoadB, dst, src, off}); }
    Asm& loadw(u8 dst, u8 src, u64 off) { return raw({Op::LoadW, dst, src, off}); }
    Asm& loadq(u8 dst, u8 src, u64 off) { return raw({Op::LoadQ, dst, src, off}); }
    Asm& loadw_at(u8 dst, u64 off) { return loadw(dst, kNoReg, off); }
    Asm& loadq_at(u8 dst, u64 off) { return loadq(dst, kNoReg, off); }
    Asm& movi(u8 dst, u64 imm) { return raw({Op::MovI, dst, kNoReg, imm}); }
    Asm& mov(u8 dst, u8 src) { return raw({Op::Mov, dst, src, 0}); }
    Asm& add_imm(u8 dst, u64 imm) { return raw({Op::Add, dst, kNoReg, imm}); }
    Asm& add_reg(u8 dst, u8 src) { return raw({Op::Add, dst, src, 0}); }
    Asm& and_imm(u8 dst, u64 imm) { return raw({Op::And, dst, kNoReg, imm}); }
    Asm& shl_imm(u8 dst, u64 imm) { return raw({Op::Shl, dst, kNoReg, imm}); }
    Asm& shr_imm(u8 dst, u64 imm) { return raw({Op::Shr, dst, kNoReg, imm}); }
    // Branches may be emitted before their targets exist; patch later.
    u32 jeq(u8 a, u8 b) { return branch(Op::Jeq, a, b); }
    u32 jne(u8 a, u8 b) { return branch(Op::Jne, a, b); }
    u32 jlt(u8 a, u8 b) { return branch(Op::Jlt, a, b); }
    u32 jge(u8 a, u8 b) { return branch(Op::Jge, a, b); }
    Asm& emit(u8 src_reg, u64 nbytes) { return raw({Op::Emit, src_reg, kNoReg, nbytes}); }
    Asm& resubmit(u8 reg) { return raw({Op::Resubmit, reg, kNoReg, 0}); }
    Asm& ret() { return raw({Op::Return, 0, kNoReg, 0}); }
    Asm& drop() { return raw({Op::Drop, 0, kNoReg, 0}); }

    void patch(u32 branch_index, u32 target) { code_[branch_index].imm = target; }
    void patch_all(const std::vector<u32>& branches, u32 target) {
        for (u32 b : branches) patch(b, target);
    }

    Program finish(std::string name, u32 ret_buf_cap) {
        Program p;
        p.code = std::move(code_);
        p.name = std::move(name);
        p.ret_buf_cap = ret_buf_cap;
        return p;
    }

private:
    u32 branch(Op op, u8 a, u8 b) {
        code_.push_back({op, a, b, 0});
        return static_cast<u32>(code_.size() - 1);
    }

    std::vector<Instruction> code_;
};

} // namespace iosim::sfunc
