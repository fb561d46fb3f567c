"""Two-pass assembler and disassembler for the miniature ISA.

Source syntax, one statement per line::

    ; comment
    .equ  UART, 0x40011000
    .vector 1, rx_handler
    _start:
        LI     r5, UART          ; pseudo: MOVI + MOVHI
        LOAD32 r0, [r5+0]
        BEQ    _start
        JMP    .
    table:
        .word  1, 2, 3

Images start with the 32-entry vector table; code is placed right after
it. Expressions accept integers, character literals, symbols, ``.`` (the
current address), the usual arithmetic/bitwise operators and ``lo()`` /
``hi()`` for 16-bit halves.
"""

from __future__ import annotations

import ast
import operator
import re
import struct
from dataclasses import dataclass, field

from .. import isa
from ..vm import NUM_VECTORS, VECTOR_TABLE_SIZE


class AsmError(ValueError):
    def __init__(self, msg: str, lineno: int | None = None):
        super().__init__(f"line {lineno}: {msg}" if lineno else msg)
        self.lineno = lineno


@dataclass
class AsmProgram:
    source: str
    image: bytes
    symbols: dict[str, int]
    vectors: dict[int, int]
    listing: list[tuple[int, int, str]] = field(default_factory=list)
    # code and data labels only, without .equ constants
    labels: dict[str, int] = field(default_factory=dict)

    def addr(self, name: str) -> int:
        return self.symbols[name]

    def symbol_at(self, addr: int) -> str | None:
        """The nearest label at or below ``addr``."""
        best = None
        for name, a in self.labels.items():
            if a <= addr and (best is None or a > best[1]):
                best = (name, a)
        return best[0] if best else None


_BINOPS = {
    ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
    ast.FloorDiv: operator.floordiv, ast.BitOr: operator.or_, ast.BitAnd: operator.and_,
    ast.BitXor: operator.xor, ast.LShift: operator.lshift, ast.RShift: operator.rshift,
}
_UNOPS = {ast.USub: operator.neg, ast.Invert: operator.invert, ast.UAdd: operator.pos}
_FUNCS = {"lo": lambda v: v & 0xFFFF, "hi": lambda v: (v >> 16) & 0xFFFF}

_HERE = "__here__"
_LABEL = re.compile(r"^([A-Za-z_][\w]*)\s*:\s*(.*)$")
_MEM = re.compile(r"^\[\s*(r\d|lr)\s*(?:([+-])\s*(.+?))?\s*\]$", re.IGNORECASE)


def _eval(expr: str, symbols: dict[str, int], here: int, lineno: int) -> int:
    text = re.sub(r"(?<![\w.])\.(?![\w.])", _HERE, expr.strip())
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError:
        raise AsmError(f"bad expression {expr!r}", lineno) from None

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant):
            if isinstance(node.value, int) and not isinstance(node.value, bool):
                return node.value
            if isinstance(node.value, str) and len(node.value) == 1:
                return ord(node.value)
        elif isinstance(node, ast.Name):
            if node.id == _HERE:
                return here
            if node.id in symbols:
                return symbols[node.id]
            raise AsmError(f"undefined symbol {node.id!r}", lineno)
        elif isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        elif isinstance(node, ast.UnaryOp) and type(node.op) in _UNOPS:
            return _UNOPS[type(node.op)](ev(node.operand))
        elif (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
              and node.func.id in _FUNCS and len(node.args) == 1 and not node.keywords):
            return _FUNCS[node.func.id](ev(node.args[0]))
        raise AsmError(f"unsupported expression {expr!r}", lineno)

    return ev(tree)


def _split_operands(text: str) -> list[str]:
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch in "([":
            depth += 1
        elif ch in ")]":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    tail = "".join(cur).strip()
    if tail:
        parts.append(tail)
    return parts


def _reg(text: str, lineno: int) -> int:
    t = text.strip().lower()
    if t == "lr":
        return isa.LINK_REG
    if re.fullmatch(r"r[0-7]", t):
        return int(t[1])
    raise AsmError(f"bad register {text!r}", lineno)


def _strip_comment(line: str) -> str:
    out, quote = [], False
    for ch in line:
        if ch == "'":
            quote = not quote
        if ch == ";" and not quote:
            break
        out.append(ch)
    return "".join(out).strip()


def _size(mnemonic: str, operands: list[str], lineno: int) -> int:
    if mnemonic == "LI":
        return 8
    if mnemonic == ".WORD":
        return 4 * len(operands)
    if mnemonic in isa.MNEMONICS:
        return 4
    raise AsmError(f"unknown mnemonic {mnemonic!r}", lineno)


def assemble(source: str, base: int = 0) -> AsmProgram:
    """Assemble ``source`` into a flash image placed at ``base``."""
    stmts = []
    symbols: dict[str, int] = {}
    labels: dict[str, int] = {}
    vector_exprs: dict[int, tuple[str, int]] = {}
    addr = base + VECTOR_TABLE_SIZE

    # pass 1: addresses, labels, constants
    for lineno, raw in enumerate(source.splitlines(), start=1):
        line = _strip_comment(raw)
        while line:
            m = _LABEL.match(line)
            if not m:
                break
            name = m.group(1)
            if name in symbols:
                raise AsmError(f"duplicate symbol {name!r}", lineno)
            symbols[name] = labels[name] = addr
            line = m.group(2).strip()
        if not line:
            continue
        head, *rest = line.split(None, 1)
        rest = rest[0] if rest else ""
        mnemonic = head.upper()
        operands = _split_operands(rest)
        if mnemonic == ".EQU":
            if len(operands) != 2:
                raise AsmError(".equ takes a name and a value", lineno)
            name = operands[0]
            if name in symbols:
                raise AsmError(f"duplicate symbol {name!r}", lineno)
            symbols[name] = _eval(operands[1], symbols, addr, lineno)
            continue
        if mnemonic == ".VECTOR":
            if len(operands) != 2:
                raise AsmError(".vector takes an index and a target", lineno)
            n = _eval(operands[0], symbols, addr, lineno)
            if not 0 <= n < NUM_VECTORS:
                raise AsmError(f"vector index {n} out of range", lineno)
            if n in vector_exprs:
                raise AsmError(f"duplicate vector {n}", lineno)
            vector_exprs[n] = (operands[1], lineno)
            continue
        stmts.append((lineno, addr, mnemonic, operands, raw.strip()))
        addr += _size(mnemonic, operands, lineno)

    # pass 2: encode
    body = bytearray()
    listing = []
    for lineno, here, mnemonic, operands, text in stmts:
        chunk = _encode_stmt(mnemonic, operands, symbols, here, lineno)
        listing.append((here, lineno, text))
        body += chunk

    vectors = {n: _eval(e, symbols, base, ln) for n, (e, ln) in vector_exprs.items()}
    if 0 not in vectors:
        if "_start" not in symbols:
            raise AsmError("no reset vector: define .vector 0 or a _start label")
        vectors[0] = symbols["_start"]
    table = bytearray(VECTOR_TABLE_SIZE)
    for n, target in vectors.items():
        if not 0 <= target <= 0xFFFF_FFFF:
            raise AsmError(f"vector {n} target out of range")
        struct.pack_into("<I", table, 4 * n, target)
    return AsmProgram(source, bytes(table + body), symbols, vectors, listing, labels)


def _encode_stmt(mnemonic, operands, symbols, here, lineno) -> bytes:
    def val(text):
        return _eval(text, symbols, here, lineno)

    def want(n):
        if len(operands) != n:
            raise AsmError(f"{mnemonic} takes {n} operand(s), got {len(operands)}", lineno)

    try:
        if mnemonic == ".WORD":
            if not operands:
                raise AsmError(".word needs a value", lineno)
            out = b""
            for o in operands:
                v = val(o)
                if not -0x8000_0000 <= v <= 0xFFFF_FFFF:
                    raise AsmError(f"word out of range: {v}", lineno)
                out += struct.pack("<I", v & 0xFFFF_FFFF)
            return out
        if mnemonic == "LI":
            want(2)
            rd = _reg(operands[0], lineno)
            v = val(operands[1])
            if not -0x8000_0000 <= v <= 0xFFFF_FFFF:
                raise AsmError(f"LI value out of range: {v}", lineno)
            v &= 0xFFFF_FFFF
            return isa.encode_i16(isa.MOVI, rd, v & 0xFFFF) + isa.encode_i16(isa.MOVHI, rd, v >> 16)
        op, fmt = isa.MNEMONICS[mnemonic]
        if fmt == isa.F_NONE:
            want(0)
            return isa.encode(op)
        if fmt == isa.F_R:
            want(1)
            return isa.encode(op, _reg(operands[0], lineno))
        if fmt == isa.F_RR:
            want(2)
            return isa.encode(op, _reg(operands[0], lineno), _reg(operands[1], lineno))
        if fmt == isa.F_RRR:
            want(3)
            return isa.encode(op, *(_reg(o, lineno) for o in operands))
        if fmt == isa.F_RI16:
            want(2)
            return isa.encode_i16(op, _reg(operands[0], lineno), val(operands[1]))
        if fmt == isa.F_RRI8:
            want(3)
            imm = val(operands[2])
            if not -128 <= imm <= 127:
                raise AsmError(f"8-bit immediate out of range: {imm}", lineno)
            return isa.encode(op, _reg(operands[0], lineno), _reg(operands[1], lineno), imm & 0xFF)
        if fmt == isa.F_MEM:
            want(2)
            m = _MEM.match(operands[1])
            if not m:
                raise AsmError(f"bad memory operand {operands[1]!r}", lineno)
            off = val(m.group(3)) if m.group(3) else 0
            if m.group(2) == "-":
                off = -off
            if not -128 <= off <= 127:
                raise AsmError(f"8-bit offset out of range: {off}", lineno)
            return isa.encode(op, _reg(operands[0], lineno), _reg(m.group(1), lineno), off & 0xFF)
        if fmt == isa.F_REL:
            want(1)
            return isa.encode_branch(op, here, val(operands[0]))
    except isa.EncodingError as e:
        raise AsmError(str(e), lineno) from None
    raise AsmError(f"cannot encode {mnemonic}", lineno)


def disassemble(image: bytes, base: int = 0) -> str:
    """Render an image back to source that reassembles to the same bytes."""
    lines = []
    for n in range(NUM_VECTORS):
        target = struct.unpack_from("<I", image, 4 * n)[0]
        if target or n == 0:
            lines.append(f".vector {n}, 0x{target:x}")
    body = image[VECTOR_TABLE_SIZE:]
    if len(body) % 4:
        body += bytes(4 - len(body) % 4)
    for off in range(0, len(body), 4):
        addr = base + VECTOR_TABLE_SIZE + off
        word = struct.unpack_from("<I", body, off)[0]
        lines.append(isa.format_instr(word, addr))
    return "\n".join(lines) + "\n"
