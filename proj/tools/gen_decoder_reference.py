#!/usr/bin/env python3
"""Builds the frozen decoder reference corpus used by the differential test.

Each line of the output holds one generated encoding (padded to 16 bytes)
together with the length and instruction class reported by Capstone for the
first instruction in the buffer:

    mode <TAB> hex <TAB> length <TAB> class <TAB> capstone text

Capstone is only needed to regenerate the file; the C++ test suite reads the
committed output.

    pip install capstone
    python3 tools/gen_decoder_reference.py --out tests/data/decoder_reference.tsv
"""

import argparse
import random

import capstone
from capstone import x86 as cx86

LEGACY_PREFIXES = [0x66, 0x67, 0xF2, 0xF3, 0xF0, 0x2E, 0x36, 0x3E, 0x26, 0x64, 0x65]
COMMON_PREFIXES = [0x66, 0x66, 0x66, 0xF2, 0xF3, 0xF3, 0x67, 0xF0, 0x64, 0x65, 0x2E]

# Mandatory-prefix / opcode pairs for the 0F 38 and 0F 3A maps that
# compilers emit (SSSE3, SSE4.1/4.2, AES-NI, SHA, CLMUL, MOVBE, CRC32, ADX).
THREE_BYTE = (
    [(p, 0x38, op) for op in range(0x00, 0x0C) for p in (None, 0x66)]
    + [(0x66, 0x38, op) for op in (0x10, 0x14, 0x15, 0x17)]
    + [(p, 0x38, op) for op in (0x1C, 0x1D, 0x1E) for p in (None, 0x66)]
    + [(0x66, 0x38, op) for op in list(range(0x20, 0x26)) + list(range(0x28, 0x2C))
       + list(range(0x30, 0x36)) + list(range(0x37, 0x42))]
    + [(None, 0x38, op) for op in range(0xC8, 0xCE)]
    + [(0x66, 0x38, op) for op in range(0xDB, 0xE0)]
    + [(None, 0x38, 0xF0), (None, 0x38, 0xF1), (0xF2, 0x38, 0xF0), (0xF2, 0x38, 0xF1),
       (0x66, 0x38, 0xF6), (0xF3, 0x38, 0xF6)]
    + [(0x66, 0x3A, op) for op in list(range(0x08, 0x10)) + [0x14, 0x15, 0x16, 0x17, 0x20, 0x21, 0x22,
                                                            0x40, 0x41, 0x42, 0x44, 0x60, 0x61, 0x62, 0x63, 0xDF]]
    + [(None, 0x3A, 0x0F), (None, 0x3A, 0xCC)]
)

# VEX opcodes (map, opcode, pp) commonly produced by compilers targeting AVX/AVX2.
VEX_OPS = (
    [(1, op, pp) for op in (0x10, 0x11, 0x28, 0x29, 0x54, 0x57, 0x58, 0x59, 0x5C, 0x5E, 0x5F, 0x5D)
     for pp in (0, 1)]
    + [(1, op, 1) for op in (0x6F, 0x7F, 0xD4, 0xDB, 0xEB, 0xEF, 0xFE, 0xFA, 0x74, 0x75, 0x76, 0xD7, 0x70,
                             0x71, 0x72, 0x73, 0xC2, 0xC6)]
    + [(1, 0x6F, 2), (1, 0x7F, 2), (1, 0x77, 0), (1, 0x2E, 0), (1, 0x2F, 1)]
    + [(2, op, 1) for op in (0x00, 0x18, 0x58, 0x59, 0x78, 0x79, 0x36, 0x16, 0x98, 0xA8, 0xB8)]
    + [(3, op, 1) for op in (0x0C, 0x0D, 0x0F, 0x18, 0x19, 0x38, 0x39, 0x46, 0x4A, 0x4B)]
)


def classify(insn):
    mnemonic = insn.mnemonic.split()[-1]
    ops = insn.operands if insn.id else []
    first_is_imm = bool(ops) and ops[0].type == cx86.X86_OP_IMM
    if mnemonic == "call":
        return "call_rel" if first_is_imm else "call_indirect"
    if mnemonic == "lcall":
        return "other" if first_is_imm else "call_indirect"
    if mnemonic == "jmp":
        return "jmp_rel" if first_is_imm else "jmp_indirect"
    if mnemonic == "ljmp":
        return "other" if first_is_imm else "jmp_indirect"
    if mnemonic.startswith("j") or mnemonic in ("loop", "loope", "loopne"):
        return "jcc"
    if mnemonic in ("ret", "retf", "retfq", "retq"):
        return "ret"
    if mnemonic == "int3":
        return "int3"
    if mnemonic == "nop":
        return "nop"
    return "other"


def random_prefixes(rng, is64):
    out = []
    for _ in range(rng.choice([0, 0, 0, 1, 1, 2])):
        out.append(rng.choice(COMMON_PREFIXES if rng.random() < 0.8 else LEGACY_PREFIXES))
    if is64 and rng.random() < 0.45:
        out.append(0x40 | rng.randrange(16))
    return out


def gen_one_byte(rng, is64):
    while True:
        op = rng.randrange(256)
        if op in LEGACY_PREFIXES or op == 0x0F or (is64 and 0x40 <= op <= 0x4F):
            continue
        return random_prefixes(rng, is64) + [op]


def gen_two_byte(rng, is64):
    op = rng.choice([b for b in range(256) if b not in (0x38, 0x3A)])
    return random_prefixes(rng, is64) + [0x0F, op]


def gen_three_byte(rng, is64):
    prefix, escape, op = rng.choice(THREE_BYTE)
    out = [prefix] if prefix is not None else []
    if is64 and rng.random() < 0.4:
        out.append(0x40 | rng.randrange(16))
    return out + [0x0F, escape, op]


def gen_vex(rng, is64):
    vmap, op, pp = rng.choice(VEX_OPS)
    rbits = rng.randrange(8) if is64 else 7  # R, X, B must read as 1s outside 64-bit mode
    vvvv = rng.randrange(16) if is64 else 8 | rng.randrange(8)
    length = rng.randrange(2)
    if vmap == 1 and rng.random() < 0.5 and (rbits & 3) == 3:
        b1 = ((rbits >> 2) << 7) | (vvvv << 3) | (length << 2) | pp
        return [0xC5, b1, op]
    w = rng.randrange(2)
    b1 = (rbits << 5) | vmap
    b2 = (w << 7) | (vvvv << 3) | (length << 2) | pp
    return [0xC4, b1, b2, op]


def gen_random(rng, is64):
    return [rng.randrange(256) for _ in range(4)]


GENERATORS = [
    (gen_one_byte, 0.40),
    (gen_two_byte, 0.25),
    (gen_three_byte, 0.08),
    (gen_vex, 0.07),
    (gen_random, 0.20),
]


def pick_generator(rng):
    x = rng.random()
    for gen, weight in GENERATORS:
        if x < weight:
            return gen
        x -= weight
    return GENERATORS[-1][0]


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", required=True)
    parser.add_argument("--count", type=int, default=12000)
    parser.add_argument("--seed", type=int, default=20240917)
    args = parser.parse_args()

    rng = random.Random(args.seed)
    decoders = {}
    for mode, csmode in (("bits64", capstone.CS_MODE_64), ("bits32", capstone.CS_MODE_32)):
        md = capstone.Cs(capstone.CS_ARCH_X86, csmode)
        md.detail = True
        decoders[mode] = md

    with open(args.out, "w") as out:
        out.write("# mode\thex\tlength\tclass\treference\n")
        for i in range(args.count):
            mode = "bits64" if i % 3 != 2 else "bits32"
            head = pick_generator(rng)(rng, mode == "bits64")
            buf = bytes(head + [rng.randrange(256) for _ in range(16 - len(head))])[:16]
            insns = list(decoders[mode].disasm(buf, 0, count=1))
            if insns:
                length, cls = insns[0].size, classify(insns[0])
                text = f"{insns[0].mnemonic} {insns[0].op_str}".strip()
            else:
                length, cls, text = 1, "invalid", "(undecodable)"
            out.write(f"{mode}\t{buf.hex()}\t{length}\t{cls}\t{text}\n")


if __name__ == "__main__":
    main()
