#!/usr/bin/env python3
"""Regenerates src/decoder_tables.inc, the encoding-validity masks used by the decoder.

Instruction lengths, operand layout and classes are hand-written in
src/decoder.cpp. Which opcode/prefix/ModRM combinations are *defined* is a
large, irregular matrix (mandatory SSE prefixes, hint NOPs, LOCK legality,
VEX/XOP vvvv, L and W constraints), so it is captured here from Capstone's encoding
tables instead of being transcribed by hand. Requires `pip install capstone`.

    python3 tools/gen_decoder_tables.py > src/decoder_tables.inc
"""

import capstone

MD = capstone.Cs(capstone.CS_ARCH_X86, capstone.CS_MODE_64)
MD32 = capstone.Cs(capstone.CS_ARCH_X86, capstone.CS_MODE_32)

# Mandatory-prefix classes in the order the decoder indexes them.
PREFIX_CLASSES = [[], [0x66], [0xF3], [0xF2]]


def decode(bs, md=MD):
    buf = (bytes(bs) + bytes(16))[:16]
    for insn in md.disasm(buf, 0, count=1):
        return insn
    return None


def modrm(kind, reg):
    return (reg << 3) | (0xC0 if kind else 0)


def legacy_masks(escape):
    """Per opcode: 64-bit validity mask indexed [class*16 + is_reg*8 + reg] and a nop mask."""
    rows = []
    for op in range(256):
        valid = 0
        nop = 0
        for pc, prefix in enumerate(PREFIX_CLASSES):
            for kind in (0, 1):
                for reg in range(8):
                    insn = decode(prefix + escape + [op, modrm(kind, reg)])
                    if insn is None:
                        continue
                    valid |= 1 << (pc * 16 + kind * 8 + reg)
                    if insn.mnemonic == "nop" and pc == 0:
                        nop |= 1 << (kind * 8 + reg)
        rows.append((valid, nop))
    return rows


def lock_masks(escape):
    # 32-bit mode so that 40-4F read as inc/dec rather than REX.
    rows = []
    for op in range(256):
        mask = 0
        for kind in (0, 1):
            for reg in range(8):
                if decode([0xF0] + escape + [op, modrm(kind, reg)], MD32) is not None:
                    mask |= 1 << (kind * 8 + reg)
        rows.append(mask)
    return rows


def vex_entries(lead, maps):
    """Sparse (map, pp, op, lo, hi) rows; bit index is L*64 + W*32 + vvvv_unused*16 + is_reg*8 + reg."""
    out = []
    for vmap in maps:
        for pp in range(4):
            for op in range(256):
                bits = 0
                for length in (0, 1):
                    for w in (0, 1):
                        for unused in (0, 1):
                            vvvv = 0xF if unused else 0x0
                            b1 = 0xE0 | vmap
                            b2 = (w << 7) | (vvvv << 3) | (length << 2) | pp
                            for kind in (0, 1):
                                for reg in range(8):
                                    if decode([lead, b1, b2, op, modrm(kind, reg)]) is not None:
                                        bits |= 1 << (length * 64 + w * 32 + unused * 16 + kind * 8 + reg)
                if bits:
                    out.append((vmap, pp, op, bits & (2**64 - 1), bits >> 64))
    return out


def emit_array(name, ctype, values, per_line, fmt):
    print(f"inline constexpr std::array<{ctype}, {len(values)}> {name}{{{{")
    for i in range(0, len(values), per_line):
        print("    " + " ".join(fmt(v) + "," for v in values[i:i + per_line]))
    print("}};")
    print()


def main():
    print("// Generated by tools/gen_decoder_tables.py. Do not edit.")
    print()
    two = legacy_masks([0x0F])
    emit_array("kTwoByteValid", "std::uint64_t", [v for v, _ in two], 4, lambda v: f"0x{v:016x}ull")
    emit_array("kTwoByteNop", "std::uint16_t", [n for _, n in two], 8, lambda v: f"0x{v:04x}")
    emit_array("k0F38Valid", "std::uint64_t", [v for v, _ in legacy_masks([0x0F, 0x38])], 4,
               lambda v: f"0x{v:016x}ull")
    emit_array("k0F3AValid", "std::uint64_t", [v for v, _ in legacy_masks([0x0F, 0x3A])], 4,
               lambda v: f"0x{v:016x}ull")
    emit_array("kLockOneByte", "std::uint16_t", lock_masks([]), 8, lambda v: f"0x{v:04x}")
    emit_array("kLockTwoByte", "std::uint16_t", lock_masks([0x0F]), 8, lambda v: f"0x{v:04x}")
    for name, lead, maps in (("kVexValid", 0xC4, (1, 2, 3)), ("kXopValid", 0x8F, (8, 9, 10))):
        rows = vex_entries(lead, maps)
        print(f"inline constexpr std::array<VexValidity, {len(rows)}> {name}{{{{")
        for vmap, pp, op, lo, hi in rows:
            print(f"    {{{vmap}, {pp}, 0x{op:02x}, 0x{lo:016x}ull, 0x{hi:016x}ull}},")
        print("}};")
        print()


if __name__ == "__main__":
    main()
