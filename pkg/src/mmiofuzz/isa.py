"""Instruction set of the miniature load/store machine.

Every instruction is one 32-bit little-endian word laid out as
``opcode | a << 8 | b << 16 | c << 24``. Instructions carrying a 16-bit
immediate store it in bytes ``b`` and ``c``; branch offsets are signed and
counted in words relative to the branch's own address, so ``JMP .``
encodes an offset of zero.
"""

from __future__ import annotations

import struct

NOP = 0x01
MOVI = 0x02
MOVHI = 0x03
MOV = 0x04
ADD = 0x10
SUB = 0x11
AND = 0x12
OR = 0x13
XOR = 0x14
SHL = 0x15
SHR = 0x16
ADDI = 0x17
LOAD8 = 0x20
LOAD16 = 0x21
LOAD32 = 0x22
STORE8 = 0x28
STORE16 = 0x29
STORE32 = 0x2A
CMP = 0x30
BEQ = 0x40
BNE = 0x41
BLT = 0x42
BGE = 0x43
JMP = 0x44
JMPABS = 0x45
CALL = 0x46
RET = 0x47
IRET = 0x48
WFI = 0x50

ILLEGAL = -1

NUM_REGS = 8
LINK_REG = 7
WORD = 4

# operand shapes
F_NONE = "none"
F_R = "r"
F_RR = "rr"
F_RRR = "rrr"
F_RI16 = "ri16"
F_RRI8 = "rri8"
F_MEM = "mem"
F_REL = "rel"

MNEMONICS = {
    "NOP": (NOP, F_NONE),
    "MOVI": (MOVI, F_RI16),
    "MOVHI": (MOVHI, F_RI16),
    "MOV": (MOV, F_RR),
    "ADD": (ADD, F_RRR),
    "SUB": (SUB, F_RRR),
    "AND": (AND, F_RRR),
    "OR": (OR, F_RRR),
    "XOR": (XOR, F_RRR),
    "SHL": (SHL, F_RRR),
    "SHR": (SHR, F_RRR),
    "ADDI": (ADDI, F_RRI8),
    "LOAD8": (LOAD8, F_MEM),
    "LOAD16": (LOAD16, F_MEM),
    "LOAD32": (LOAD32, F_MEM),
    "STORE8": (STORE8, F_MEM),
    "STORE16": (STORE16, F_MEM),
    "STORE32": (STORE32, F_MEM),
    "CMP": (CMP, F_RR),
    "BEQ": (BEQ, F_REL),
    "BNE": (BNE, F_REL),
    "BLT": (BLT, F_REL),
    "BGE": (BGE, F_REL),
    "JMP": (JMP, F_REL),
    "JMPABS": (JMPABS, F_R),
    "CALL": (CALL, F_REL),
    "RET": (RET, F_NONE),
    "IRET": (IRET, F_NONE),
    "WFI": (WFI, F_NONE),
}

OPCODES = {op: (name, fmt) for name, (op, fmt) in MNEMONICS.items()}

BRANCHES = frozenset({BEQ, BNE, BLT, BGE, JMP, CALL})
CONTROL_TRANSFER = BRANCHES | {JMPABS, RET, IRET}
LOAD_WIDTH = {LOAD8: 1, LOAD16: 2, LOAD32: 4}
STORE_WIDTH = {STORE8: 1, STORE16: 2, STORE32: 4}


class EncodingError(ValueError):
    pass


def sign8(v: int) -> int:
    return v - 0x100 if v & 0x80 else v


def sign16(v: int) -> int:
    return v - 0x10000 if v & 0x8000 else v


def encode(op: int, a: int = 0, b: int = 0, c: int = 0) -> bytes:
    for v in (op, a, b, c):
        if not 0 <= v <= 0xFF:
            raise EncodingError(f"operand byte out of range: {v}")
    return bytes((op, a, b, c))


def encode_i16(op: int, a: int, imm: int) -> bytes:
    if not -0x8000 <= imm <= 0xFFFF:
        raise EncodingError(f"16-bit immediate out of range: {imm}")
    imm &= 0xFFFF
    return encode(op, a, imm & 0xFF, imm >> 8)


def encode_branch(op: int, addr: int, target: int) -> bytes:
    delta = target - addr
    if delta % WORD:
        raise EncodingError(f"branch target 0x{target:x} not word aligned to 0x{addr:x}")
    rel = delta // WORD
    if not -0x8000 <= rel <= 0x7FFF:
        raise EncodingError(f"branch target 0x{target:x} out of range")
    return encode_i16(op, 0, rel)


def predecode(word: int, addr: int) -> tuple:
    """Decode one word into the ``(op, x, y, k)`` tuple the interpreter runs.

    ``k`` is pre-resolved per format: the absolute target for relative
    branches, the unsigned 16-bit immediate for MOVI/MOVHI, the sign-extended
    8-bit offset for ADDI and memory ops, and the third register otherwise.
    Undefined opcodes and out-of-range register numbers decode to ILLEGAL.
    """
    op = word & 0xFF
    a = (word >> 8) & 0xFF
    b = (word >> 16) & 0xFF
    c = word >> 24
    entry = OPCODES.get(op)
    if entry is None:
        return (ILLEGAL, 0, 0, 0)
    fmt = entry[1]
    if fmt == F_REL:
        return (op, 0, 0, (addr + sign16(b | c << 8) * WORD) & 0xFFFFFFFF)
    if fmt == F_RI16:
        if a >= NUM_REGS:
            return (ILLEGAL, 0, 0, 0)
        return (op, a, 0, b | c << 8)
    if fmt in (F_RRI8, F_MEM):
        if a >= NUM_REGS or b >= NUM_REGS:
            return (ILLEGAL, 0, 0, 0)
        return (op, a, b, sign8(c))
    if fmt == F_RRR:
        if a >= NUM_REGS or b >= NUM_REGS or c >= NUM_REGS:
            return (ILLEGAL, 0, 0, 0)
        return (op, a, b, c)
    if fmt == F_RR:
        if a >= NUM_REGS or b >= NUM_REGS:
            return (ILLEGAL, 0, 0, 0)
        return (op, a, b, 0)
    if fmt == F_R:
        if a >= NUM_REGS:
            return (ILLEGAL, 0, 0, 0)
        return (op, a, 0, 0)
    return (op, 0, 0, 0)


def canonical(word: int, addr: int) -> bytes | None:
    """Re-encode a decoded word; None if the word is not a canonical instruction."""
    op, x, y, k = predecode(word, addr)
    if op == ILLEGAL:
        return None
    fmt = OPCODES[op][1]
    if fmt == F_REL:
        # the target may have wrapped around the address space
        rel = sign16((((k - addr) & 0xFFFFFFFF) // WORD) & 0xFFFF)
        raw = encode_i16(op, 0, rel)
    elif fmt == F_RI16:
        raw = encode_i16(op, x, k)
    elif fmt in (F_RRI8, F_MEM):
        raw = encode(op, x, y, k & 0xFF)
    elif fmt == F_RRR:
        raw = encode(op, x, y, k)
    elif fmt == F_RR:
        raw = encode(op, x, y)
    elif fmt == F_R:
        raw = encode(op, x)
    else:
        raw = encode(op)
    return raw if raw == struct.pack("<I", word) else None


def format_instr(word: int, addr: int) -> str:
    """Render one word as assembler source; non-canonical words become ``.word``."""
    if canonical(word, addr) is None:
        return f".word 0x{word:08x}"
    op, x, y, k = predecode(word, addr)
    name, fmt = OPCODES[op]
    if fmt == F_REL:
        return f"{name} 0x{k:x}"
    if fmt == F_RI16:
        return f"{name} r{x}, 0x{k:x}"
    if fmt == F_RRI8:
        return f"{name} r{x}, r{y}, {k}"
    if fmt == F_MEM:
        return f"{name} r{x}, [r{y}{k:+d}]"
    if fmt == F_RRR:
        return f"{name} r{x}, r{y}, r{k}"
    if fmt == F_RR:
        return f"{name} r{x}, r{y}"
    if fmt == F_R:
        return f"{name} r{x}"
    return name
