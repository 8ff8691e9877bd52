#include "funcstart/decoder.hpp"

#include <algorithm>
#include <array>
#include <tuple>

namespace funcstart {

namespace {

// Per-opcode attributes for the one- and two-byte maps.
enum OpFlag : std::uint16_t {
    kModrm = 1u << 0,
    kImm8 = 1u << 1,
    kImm16 = 1u << 2,
    kImmZ = 1u << 3,  // 16 or 32 bits by operand size
    kImmV = 1u << 4,  // 16, 32 or 64 bits by operand size (mov r, imm)
    kRel8 = 1u << 5,
    kRelZ = 1u << 6,  // rel16/rel32; always rel32 in 64-bit mode
    kMoffs = 1u << 7, // address-size wide absolute offset
    kFar = 1u << 8,   // ptr16:16 / ptr16:32
    kInv64 = 1u << 9, // undefined in 64-bit mode
    kInvalid = 1u << 10,
    kMemOnly = 1u << 11, // ModRM must encode a memory operand
    kOnly64 = 1u << 12,  // undefined outside 64-bit mode
};

constexpr std::array<std::uint16_t, 256> make_one_byte_map()
{
    std::array<std::uint16_t, 256> t{};
    // ALU block 00-3F: op r/m,r ; op r,r/m ; op al,ib ; op eAX,iz.
    for (int op = 0; op < 0x40; ++op) {
        switch (op & 7) {
        case 0: case 1: case 2: case 3: t[op] = kModrm; break;
        case 4: t[op] = kImm8; break;
        case 5: t[op] = kImmZ; break;
        default: t[op] = kInv64; break; // push/pop seg, daa/das/aaa/aas
        }
    }
    t[0x0f] = 0; // escape, handled separately
    t[0x26] = t[0x2e] = t[0x36] = t[0x3e] = 0; // prefixes
    t[0x60] = t[0x61] = kInv64;
    t[0x62] = kModrm | kInv64 | kMemOnly; // BOUND; EVEX otherwise
    t[0x63] = kModrm;
    t[0x68] = kImmZ;
    t[0x69] = kModrm | kImmZ;
    t[0x6a] = kImm8;
    t[0x6b] = kModrm | kImm8;
    for (int op = 0x70; op <= 0x7f; ++op)
        t[op] = kRel8;
    t[0x80] = kModrm | kImm8;
    t[0x81] = kModrm | kImmZ;
    t[0x82] = kModrm | kImm8 | kInv64;
    t[0x83] = kModrm | kImm8;
    for (int op = 0x84; op <= 0x8f; ++op)
        t[op] = kModrm;
    t[0x8d] = kModrm | kMemOnly;
    t[0x9a] = kFar | kInv64;
    for (int op = 0xa0; op <= 0xa3; ++op)
        t[op] = kMoffs;
    t[0xa8] = kImm8;
    t[0xa9] = kImmZ;
    for (int op = 0xb0; op <= 0xb7; ++op)
        t[op] = kImm8;
    for (int op = 0xb8; op <= 0xbf; ++op)
        t[op] = kImmV;
    t[0xc0] = t[0xc1] = kModrm | kImm8;
    t[0xc2] = kImm16;
    t[0xc4] = t[0xc5] = kModrm | kInv64 | kMemOnly; // LES/LDS; VEX otherwise
    t[0xc6] = kModrm | kImm8;
    t[0xc7] = kModrm | kImmZ;
    t[0xc8] = kImm16 | kImm8;
    t[0xca] = kImm16;
    t[0xcd] = kImm8;
    t[0xce] = kInv64;
    for (int op = 0xd0; op <= 0xd3; ++op)
        t[op] = kModrm;
    t[0xd4] = t[0xd5] = kImm8 | kInv64;
    t[0xd6] = kInv64; // salc
    for (int op = 0xd8; op <= 0xdf; ++op)
        t[op] = kModrm;
    for (int op = 0xe0; op <= 0xe3; ++op)
        t[op] = kRel8;
    for (int op = 0xe4; op <= 0xe7; ++op)
        t[op] = kImm8;
    t[0xe8] = t[0xe9] = kRelZ;
    t[0xea] = kFar | kInv64;
    t[0xeb] = kRel8;
    t[0xf6] = t[0xf7] = t[0xfe] = t[0xff] = kModrm;
    return t;
}

constexpr std::array<std::uint16_t, 256> make_two_byte_map()
{
    std::array<std::uint16_t, 256> t{};
    for (auto& f : t)
        f = kModrm;
    t[0x04] = t[0x0a] = t[0x0c] = kInvalid;
    for (int op : {0x05, 0x06, 0x07, 0x08, 0x09, 0x0b, 0x0e})
        t[op] = 0;
    t[0x0f] = kModrm | kImm8; // 3DNow!: suffix byte after the operands
    for (int op = 0x24; op <= 0x27; ++op)
        t[op] = kInvalid;
    for (int op = 0x30; op <= 0x37; ++op)
        t[op] = 0;
    t[0x36] = kInvalid;
    t[0x38] = t[0x3a] = 0; // three-byte escapes
    t[0x39] = t[0x3b] = t[0x3c] = t[0x3d] = t[0x3e] = t[0x3f] = kInvalid;
    t[0x70] = t[0x71] = t[0x72] = t[0x73] = kModrm | kImm8;
    t[0x77] = 0;
    t[0x7a] = t[0x7b] = kInvalid;
    for (int op = 0x80; op <= 0x8f; ++op)
        t[op] = kRelZ;
    t[0xa0] = t[0xa1] = t[0xa2] = t[0xa8] = t[0xa9] = t[0xaa] = 0;
    t[0xa4] = t[0xac] = kModrm | kImm8;
    t[0xa6] = t[0xa7] = kModrm; // VIA PadLock, register forms only
    t[0xb2] = t[0xb4] = t[0xb5] = kModrm | kMemOnly;
    t[0xba] = kModrm | kImm8;
    t[0xc2] = t[0xc4] = t[0xc5] = t[0xc6] = kModrm | kImm8;
    t[0xc3] = kModrm | kMemOnly;
    t[0xb9] = t[0xff] = 0; // ud1/ud0 are decoded without a ModRM byte
    for (int op = 0xc8; op <= 0xcf; ++op)
        t[op] = 0;
    return t;
}

constexpr auto kOneByte = make_one_byte_map();
constexpr auto kTwoByte = make_two_byte_map();

struct VexValidity {
    std::uint8_t map;
    std::uint8_t pp;
    std::uint8_t opcode;
    std::uint64_t lo; // L=0
    std::uint64_t hi; // L=1
};

#include "decoder_tables.inc"

// Bit index into the legacy validity masks: mandatory prefix class, then
// register/memory form, then ModRM.reg.
constexpr int legacy_bit(int prefix_class, bool reg_form, int reg)
{
    return prefix_class * 16 + (reg_form ? 8 : 0) + reg;
}

template <std::size_t N>
const VexValidity* find_validity(const std::array<VexValidity, N>& table, int map, int pp, int opcode)
{
    const auto key = std::tuple(map, pp, opcode);
    auto it = std::lower_bound(table.begin(), table.end(), key, [](const VexValidity& v, const auto& k) {
        return std::tuple(int{v.map}, int{v.pp}, int{v.opcode}) < k;
    });
    if (it == table.end() || std::tuple(int{it->map}, int{it->pp}, int{it->opcode}) != key)
        return nullptr;
    return &*it;
}

struct Prefixes {
    bool opsize = false;
    bool adsize = false;
    bool rep = false;   // F3
    bool repne = false; // F2
    bool lock = false;
    bool adsize_after_rep = false; // a 67 somewhere after an F2/F3
    std::uint8_t rex = 0;
};

class Decoder {
public:
    Decoder(ByteView bytes, std::size_t offset, DecodeMode mode, std::uint64_t base)
        : bytes_(bytes)
        , start_(offset)
        , pos_(offset)
        , limit_(std::min(bytes.size(), offset + kMaxInsnLength))
        , is64_(mode.bitness == Bitness::bits64)
    {
        insn_.address = base + offset;
    }

    Instruction run()
    {
        if (!decode())
            return invalid();
        insn_.length = static_cast<std::uint8_t>(pos_ - start_);
        return insn_;
    }

private:
    Instruction invalid() const
    {
        Instruction bad;
        bad.address = insn_.address;
        bad.length = 1;
        bad.cls = InsnClass::invalid;
        return bad;
    }

    bool has(std::size_t n) const { return pos_ + n <= limit_; }

    bool next(std::uint8_t& b)
    {
        if (!has(1))
            return false;
        b = bytes_[pos_++];
        return true;
    }

    bool peek(std::uint8_t& b) const
    {
        if (!has(1))
            return false;
        b = bytes_[pos_];
        return true;
    }

    std::uint8_t rel_offset() const { return static_cast<std::uint8_t>(pos_ - start_); }

    bool imm(std::uint8_t width)
    {
        if (!has(width))
            return false;
        insn_.imm_storage[insn_.imm_count++] = {rel_offset(), width};
        pos_ += width;
        return true;
    }

    bool rel(std::uint8_t width)
    {
        if (!has(width))
            return false;
        const std::uint8_t at = rel_offset();
        std::int64_t disp = 0;
        if (width == 1)
            disp = static_cast<std::int8_t>(bytes_[pos_]);
        else if (width == 2)
            disp = static_cast<std::int16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
        else
            disp = static_cast<std::int32_t>(*read_le32(bytes_, pos_));
        pos_ += width;
        insn_.disp_span = FieldSpan{at, width};
        std::uint64_t target = insn_.address + (pos_ - start_) + static_cast<std::uint64_t>(disp);
        if (!is64_)
            target &= (width == 2 ? 0xffffu : 0xffffffffu);
        insn_.rel_target = target;
        return true;
    }

    int operand_bits() const
    {
        if (is64_ && (pfx_.rex & 0x08))
            return 64;
        return pfx_.opsize ? 16 : 32;
    }

    int address_bits() const
    {
        if (is64_)
            return pfx_.adsize ? 32 : 64;
        return pfx_.adsize ? 16 : 32;
    }

    bool modrm()
    {
        if (!next(modrm_))
            return false;
        have_modrm_ = true;
        const int mod = modrm_ >> 6;
        const int rm = modrm_ & 7;
        if (mod == 3)
            return true;
        std::uint8_t disp = 0;
        if (address_bits() == 16) {
            if (mod == 0 && rm == 6)
                disp = 2;
            else if (mod == 1)
                disp = 1;
            else if (mod == 2)
                disp = 2;
        } else {
            if (rm == 4) {
                std::uint8_t sib = 0;
                if (!next(sib))
                    return false;
                if (mod == 0 && (sib & 7) == 5)
                    disp = 4;
            }
            if (mod == 0 && rm == 5)
                disp = 4;
            else if (mod == 1)
                disp = 1;
            else if (mod == 2)
                disp = 4;
        }
        if (disp != 0) {
            if (!has(disp))
                return false;
            insn_.disp_span = FieldSpan{rel_offset(), disp};
            pos_ += disp;
        }
        return true;
    }

    int mod() const { return modrm_ >> 6; }
    int reg() const { return (modrm_ >> 3) & 7; }
    int rm() const { return modrm_ & 7; }

    bool read_prefixes()
    {
        bool seen_rep = false;
        for (;;) {
            std::uint8_t b = 0;
            if (!peek(b))
                return false;
            switch (b) {
            case 0x66: pfx_.opsize = true; break;
            case 0x67:
                pfx_.adsize = true;
                pfx_.adsize_after_rep = pfx_.adsize_after_rep || seen_rep;
                break;
            // LOCK, REP and REPNE share a prefix group; the last one wins.
            case 0xf2: pfx_.repne = seen_rep = true; pfx_.rep = pfx_.lock = false; break;
            case 0xf3: pfx_.rep = seen_rep = true; pfx_.repne = pfx_.lock = false; break;
            case 0xf0: pfx_.lock = true; pfx_.rep = pfx_.repne = false; break;
            case 0x26: case 0x2e: case 0x36: case 0x3e: case 0x64: case 0x65: break;
            default:
                if (is64_ && (b & 0xf0) == 0x40) {
                    pfx_.rex = b;
                    ++pos_;
                    continue;
                }
                return true;
            }
            // A REX prefix only counts when it directly precedes the opcode.
            pfx_.rex = 0;
            ++pos_;
        }
    }

    bool apply_flags(std::uint16_t f)
    {
        if (f & kInvalid)
            return false;
        if ((f & kInv64) && is64_)
            return false;
        if ((f & kOnly64) && !is64_)
            return false;
        if ((f & kModrm) && !modrm())
            return false;
        if ((f & kMemOnly) && mod() == 3)
            return false;
        if ((f & kImm16) && !imm(2))
            return false;
        if ((f & kImm8) && !imm(1))
            return false;
        if ((f & kImmZ) && !imm(operand_bits() == 16 ? 2 : 4))
            return false;
        if ((f & kImmV) && !imm(static_cast<std::uint8_t>(operand_bits() / 8)))
            return false;
        if ((f & kRel8) && !rel(1))
            return false;
        if ((f & kRelZ) && !rel((is64_ || operand_bits() != 16) ? 4 : 2))
            return false;
        if ((f & kMoffs) && !imm(static_cast<std::uint8_t>(address_bits() / 8)))
            return false;
        if (f & kFar) {
            if (!imm(operand_bits() == 16 ? 2 : 4) || !imm(2))
                return false;
        }
        return true;
    }

    bool decode()
    {
        if (!read_prefixes())
            return false;
        std::uint8_t op = 0;
        if (!next(op))
            return false;
        if (op == 0x0f)
            return decode_0f();

        // VEX, EVEX and XOP reuse opcodes that are invalid (64-bit mode) or
        // register-form-invalid (32-bit mode) in the legacy map.
        if (op == 0xc4 || op == 0xc5 || op == 0x62 || op == 0x8f) {
            std::uint8_t b1 = 0;
            if (!peek(b1))
                return false;
            if (op == 0x8f) {
                if ((b1 & 0x1f) >= 8 && (is64_ || b1 >= 0xc0))
                    return decode_xop();
            } else if (is64_ || b1 >= 0xc0) {
                if (op == 0x62)
                    return decode_evex();
                return decode_vex(op);
            }
        }

        if (!decode_one_byte(op))
            return false;
        return !pfx_.lock || lock_allowed(kLockOneByte[op]);
    }

    bool lock_allowed(std::uint16_t mask) const
    {
        const int bit = have_modrm_ ? (mod() == 3 ? 8 : 0) + reg() : 0;
        return (mask >> bit) & 1;
    }

    int prefix_class() const
    {
        if (pfx_.rep)
            return 2;
        if (pfx_.repne)
            return 3;
        return pfx_.opsize ? 1 : 0;
    }

    bool decode_one_byte(std::uint8_t op)
    {
        const std::uint16_t f = kOneByte[op];
        insn_.cls = InsnClass::other;
        switch (op) {
        // The next three follow Capstone where it departs from the SDM.
        case 0x63:
            if (is64_ && pfx_.adsize && !(pfx_.rex & 0x08))
                return false;
            break;
        case 0x90:
            if (pfx_.rep && pfx_.opsize)
                return false;
            break;
        case 0xc2:
            if (is64_ && pfx_.opsize && (pfx_.rex & 0x08)) {
                insn_.cls = InsnClass::ret;
                return imm(4);
            }
            break;
        case 0xf6: case 0xf7:
            if (!modrm())
                return false;
            if (reg() < 2)
                return op == 0xf6 ? imm(1) : imm(operand_bits() == 16 ? 2 : 4);
            return true;
        case 0xfe:
            if (!modrm())
                return false;
            return reg() < 2;
        case 0xff:
            if (!modrm())
                return false;
            switch (reg()) {
            case 2: insn_.cls = InsnClass::call_indirect; return true;
            case 3: insn_.cls = InsnClass::call_indirect; return mod() != 3;
            case 4: insn_.cls = InsnClass::jmp_indirect; return true;
            case 5: insn_.cls = InsnClass::jmp_indirect; return mod() != 3;
            case 7: return false;
            default: return true;
            }
        case 0x8f:
            if (!modrm())
                return false;
            return reg() == 0;
        case 0x8c: case 0x8e:
            if (!modrm())
                return false;
            return reg() < 6;
        case 0xc6:
            if (!modrm())
                return false;
            if (reg() == 0)
                return imm(1);
            return modrm_ == 0xf8 && imm(1); // xabort
        case 0xc7:
            if (!modrm())
                return false;
            if (reg() == 0)
                return imm(operand_bits() == 16 ? 2 : 4);
            if (modrm_ != 0xf8)
                return false;
            // xbegin: relative fallback address, not a branch class.
            if (!rel(operand_bits() == 16 ? 2 : 4))
                return false;
            insn_.rel_target.reset();
            return true;
        default:
            break;
        }

        if (!apply_flags(f))
            return false;
        if (op >= 0xd8 && op <= 0xdf)
            return x87_valid(op);

        if (op == 0xe8)
            insn_.cls = InsnClass::call_rel;
        else if (op == 0xe9 || op == 0xeb)
            insn_.cls = InsnClass::jmp_rel;
        else if ((op >= 0x70 && op <= 0x7f) || (op >= 0xe0 && op <= 0xe3))
            insn_.cls = InsnClass::jcc;
        else if (op == 0xc2 || op == 0xc3 || op == 0xca || op == 0xcb)
            insn_.cls = InsnClass::ret;
        else if (op == 0xcc)
            insn_.cls = InsnClass::int3;
        else if (op == 0x90 && !(pfx_.rex & 0x01) && !pfx_.rep)
            insn_.cls = InsnClass::nop;
        return true;
    }

    bool x87_valid(std::uint8_t op) const
    {
        // Defined ModRM.reg values for memory forms, and defined ModRM.rm
        // values per reg for register forms, for D8..DF.
        constexpr std::array<std::uint8_t, 8> mem_masks{0xff, 0xfd, 0xff, 0xaf, 0xff, 0xdf, 0xff, 0xff};
        constexpr std::array<std::array<std::uint8_t, 8>, 8> reg_masks{{
            {0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff},
            {0xff, 0xff, 0x01, 0xff, 0x33, 0x7f, 0xff, 0xff},
            {0xff, 0xff, 0xff, 0xff, 0x00, 0x02, 0x00, 0x00},
            {0xff, 0xff, 0xff, 0xff, 0x1f, 0xff, 0xff, 0x00},
            {0xff, 0xff, 0x00, 0x00, 0xff, 0xff, 0xff, 0xff},
            {0xff, 0x00, 0xff, 0xff, 0xff, 0xff, 0x00, 0x00},
            {0xff, 0xff, 0x00, 0x02, 0xff, 0xff, 0xff, 0xff},
            {0xff, 0x00, 0x00, 0x00, 0x01, 0xff, 0xff, 0x00},
        }};
        const int i = op - 0xd8;
        if (mod() != 3)
            return (mem_masks[i] >> reg()) & 1;
        return (reg_masks[i][reg()] >> rm()) & 1;
    }

    bool decode_0f()
    {
        std::uint8_t op = 0;
        if (!next(op))
            return false;
        insn_.cls = InsnClass::other;
        // Capstone rejects 32-bit 0F-map encodings where a 67 follows F2/F3.
        if (!is64_ && pfx_.adsize_after_rep)
            return false;
        int pc = prefix_class();
        // With REX.W, a mandatory prefix that selects no instruction is
        // dropped and the unprefixed form is decoded instead.
        const bool rex_w_fallback = pfx_.rex & 0x08;
        if (op == 0x38 || op == 0x3a) {
            std::uint8_t op3 = 0;
            if (!next(op3) || !modrm() || pfx_.lock)
                return false;
            const std::uint64_t valid = op == 0x38 ? k0F38Valid[op3] : k0F3AValid[op3];
            if (!((valid >> legacy_bit(pc, mod() == 3, reg())) & 1)) {
                if (!rex_w_fallback || !((valid >> legacy_bit(0, mod() == 3, reg())) & 1))
                    return false;
            }
            return op == 0x3a ? imm(1) : true;
        }

        if (op == 0x0f)
            return decode_3dnow();
        if (op >= 0x80 && op <= 0x81 && is64_ && pfx_.opsize && !(pfx_.rex & 0x08)) {
            // jo/jno keep a 16-bit displacement under 66 in 64-bit mode in
            // Capstone, which the reference tools decode with; match it.
            insn_.cls = InsnClass::jcc;
            return rel(2);
        }
        if (op >= 0x20 && op <= 0x23) {
            // mov to/from control and debug registers ignore ModRM.mod.
            if (!next(modrm_))
                return false;
            modrm_ |= 0xc0;
            have_modrm_ = true;
        } else if (!apply_flags(kTwoByte[op])) {
            return false;
        }

        const bool reg_form = have_modrm_ && mod() == 3;
        const int r = have_modrm_ ? reg() : 0;
        // 0F 01 and 0F 1E register forms are decided per ModRM byte below.
        const bool per_modrm = reg_form && (op == 0x01 || op == 0x1e);
        if (!per_modrm && !((kTwoByteValid[op] >> legacy_bit(pc, reg_form, r)) & 1)) {
            if (!rex_w_fallback || !((kTwoByteValid[op] >> legacy_bit(0, reg_form, r)) & 1))
                return false;
            pc = 0;
        }
        if (reg_form && !reg_form_valid(op, pc))
            return false;
        if ((op == 0x1a || op == 0x1b) && (pfx_.rex & 0x04))
            return false; // only bnd0-bnd3 exist
        if (pfx_.lock && !lock_allowed(kLockTwoByte[op]))
            return false;

        if (op >= 0x80 && op <= 0x8f) {
            // Capstone also rejects 66 combined with F2/F3 on the other jcc forms.
            if (is64_ && pfx_.opsize && !(pfx_.rex & 0x08) && (pfx_.rep || pfx_.repne))
                return false;
            insn_.cls = InsnClass::jcc;
        }
        else if (((kTwoByteNop[op] >> ((reg_form ? 8 : 0) + r)) & 1) || (op == 0x1c && pc == 1))
            insn_.cls = InsnClass::nop;
        return true;
    }

    bool decode_3dnow()
    {
        constexpr std::array<std::uint8_t, 24> suffixes{0x0c, 0x0d, 0x1c, 0x1d, 0x8a, 0x8e, 0x90, 0x94,
                                                        0x96, 0x97, 0x9a, 0x9e, 0xa0, 0xa4, 0xa6, 0xa7,
                                                        0xaa, 0xae, 0xb0, 0xb4, 0xb6, 0xb7, 0xbb, 0xbf};
        if (pfx_.lock || !modrm() || !has(1))
            return false;
        const std::uint8_t suffix = bytes_[pos_++];
        return std::find(suffixes.begin(), suffixes.end(), suffix) != suffixes.end();
    }

    // Register forms of two-byte opcodes whose validity depends on ModRM.rm.
    bool reg_form_valid(std::uint8_t op, int pc) const
    {
        const int r = reg();
        const int m = rm();
        switch (op) {
        case 0x01: {
            constexpr std::array<std::uint8_t, 8> rm_masks{0x3f, 0x8f, 0xf3, 0xff, 0xff, 0xc0, 0xff, 0x1f};
            const std::uint8_t mask = rm_masks[r] | (r == 5 && pc == 2 ? 0x05 : 0);
            return (mask >> m) & 1;
        }
        case 0x1a: case 0x1b:
            return pc != 1 || m < 4;
        case 0x1e:
            return pc == 2 && (r == 1 || modrm_ == 0xfa || modrm_ == 0xfb);
        case 0xa6: case 0xa7:
            return m == 0;
        case 0xae:
            if (pc == 0)
                return m == 0;
            return pc != 2 || r >= 4 || is64_;
        default:
            return true;
        }
    }

    // Decodes the remainder of a VEX-encoded instruction; `lead` is C4 or C5.
    bool decode_vex(std::uint8_t lead)
    {
        insn_.cls = InsnClass::other;
        std::uint8_t b1 = 0;
        if (!next(b1))
            return false;
        int map = 1;
        std::uint8_t fields = b1; // W.vvvv.L.pp
        if (lead == 0xc4) {
            if (!next(fields))
                return false;
            map = b1 & 0x1f;
        } else {
            fields &= 0x7f;
        }
        // 66/F2/F3 ahead of VEX fault on hardware but Capstone decodes
        // through them; only LOCK and REX are rejected.
        if (pfx_.lock || pfx_.rex)
            return false;
        std::uint8_t op = 0;
        if (!next(op))
            return false;
        const VexValidity* entry = find_validity(kVexValid, map, fields & 3, op);
        if (entry == nullptr)
            return false;
        const bool no_modrm = map == 1 && op == 0x77;
        if (!no_modrm && !modrm())
            return false;
        const bool vvvv_unused = ((fields >> 3) & 0xf) == 0xf;
        const int bit = (fields >> 7) * 32 + (vvvv_unused ? 16 : 0) + (no_modrm ? 0 : (mod() == 3 ? 8 : 0) + reg());
        const std::uint64_t mask = (fields & 0x04) ? entry->hi : entry->lo;
        if (!((mask >> bit) & 1))
            return false;
        if (map == 3 || (map == 1 && ((op >= 0x70 && op <= 0x73) || op == 0xc2 || op == 0xc4 || op == 0xc5 || op == 0xc6)))
            return imm(1);
        return true;
    }

    // EVEX is decoded structurally only: opcode map, ModRM and the imm8 of
    // map 3 and the few map-1 shuffles.
    bool decode_evex()
    {
        insn_.cls = InsnClass::other;
        std::uint8_t p0 = 0, p1 = 0, p2 = 0, op = 0;
        if (!next(p0) || !next(p1) || !next(p2))
            return false;
        if ((p0 & 0x08) != 0 || (p1 & 0x04) == 0)
            return false;
        if (pfx_.opsize || pfx_.rep || pfx_.repne || pfx_.lock || pfx_.rex)
            return false;
        if (!next(op) || !modrm())
            return false;
        const int map = p0 & 0x07;
        const int pp = p1 & 0x03;
        const bool vvvv_unused = ((p1 >> 3) & 0x0f) == 0x0f && (p2 & 0x08);
        // vmovss/vmovsd memory forms have no second source register.
        if (map == 1 && (op == 0x10 || op == 0x11) && pp >= 2 && mod() != 3 && !vvvv_unused)
            return false;
        switch (map) {
        case 1:
            if ((op >= 0x70 && op <= 0x73) || op == 0xc2 || op == 0xc4 || op == 0xc5 || op == 0xc6)
                return imm(1);
            return true;
        case 2:
            return true;
        case 3:
            return imm(1);
        default:
            return false;
        }
    }

    bool decode_xop()
    {
        insn_.cls = InsnClass::other;
        std::uint8_t b1 = 0, fields = 0, op = 0;
        if (pfx_.opsize || pfx_.rep || pfx_.repne || pfx_.lock || pfx_.rex)
            return false;
        if (!next(b1) || !next(fields) || !next(op) || !modrm())
            return false;
        const int map = b1 & 0x1f;
        const VexValidity* entry = find_validity(kXopValid, map, fields & 3, op);
        if (entry == nullptr)
            return false;
        const bool vvvv_unused = ((fields >> 3) & 0xf) == 0xf;
        const int bit = (fields >> 7) * 32 + (vvvv_unused ? 16 : 0) + (mod() == 3 ? 8 : 0) + reg();
        const std::uint64_t mask = (fields & 0x04) ? entry->hi : entry->lo;
        if (!((mask >> bit) & 1))
            return false;
        if (map == 8)
            return imm(1);
        return map == 10 ? imm(4) : true;
    }

    ByteView bytes_;
    std::size_t start_;
    std::size_t pos_;
    std::size_t limit_;
    bool is64_;
    Prefixes pfx_;
    std::uint8_t modrm_ = 0;
    bool have_modrm_ = false;
    Instruction insn_;
};

} // namespace

std::string_view insn_class_name(InsnClass c) noexcept
{
    switch (c) {
    case InsnClass::call_rel: return "call_rel";
    case InsnClass::call_indirect: return "call_indirect";
    case InsnClass::jmp_rel: return "jmp_rel";
    case InsnClass::jmp_indirect: return "jmp_indirect";
    case InsnClass::jcc: return "jcc";
    case InsnClass::ret: return "ret";
    case InsnClass::int3: return "int3";
    case InsnClass::nop: return "nop";
    case InsnClass::other: return "other";
    case InsnClass::invalid: return "invalid";
    }
    return "invalid";
}

std::optional<InsnClass> parse_insn_class(std::string_view name) noexcept
{
    for (int i = 0; i <= static_cast<int>(InsnClass::invalid); ++i) {
        const auto c = static_cast<InsnClass>(i);
        if (insn_class_name(c) == name)
            return c;
    }
    return std::nullopt;
}

Instruction decode_one(ByteView bytes, std::size_t offset, DecodeMode mode, std::uint64_t base) noexcept
{
    if (offset >= bytes.size()) {
        Instruction bad;
        bad.address = base + offset;
        return bad;
    }
    return Decoder(bytes, offset, mode, base).run();
}

} // namespace funcstart
