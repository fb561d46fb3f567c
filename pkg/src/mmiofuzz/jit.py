"""Basic-block translation for the interpreter.

A run of instructions in read-only flash, up to and including the first
control transfer, is turned into one straight-line Python function with
operands and branch targets baked in. ``Machine.run`` calls these instead
of dispatching instruction by instruction; the results are identical.

A translated block is called as ``fn(r, ram, st, m, eq, lt)`` and returns
``(event, next_pc, eq, lt)``. Before any access that may leave the RAM fast
path it records, on the machine, the pc of that instruction, how many
instructions of the block have started and the current flags, so a fault
or an exhausted input can be reported from the right place.
"""

from __future__ import annotations

from . import isa
from .isa import (
    ADD, ADDI, AND, BEQ, BGE, BLT, BNE, CALL, CMP, IRET, JMP, JMPABS, LOAD8, LOAD16,
    LOAD32, MOV, MOVHI, MOVI, NOP, OR, RET, SHL, SHR, STORE8, STORE16, STORE32, SUB,
    WFI, XOR,
)

# event codes shared with vm.py (kept numeric to avoid an import cycle)
EV_BOUNDARY = 1
EV_SLEEP = 2
EV_SELFJUMP = 3
EV_CONT = -1  # block ran off its length cap; continue at next_pc

MAX_BLOCK = 64
M32 = 0xFFFF_FFFF

_ALU = {ADD: "(r[{y}] + r[{k}]) & 0xFFFFFFFF", SUB: "(r[{y}] - r[{k}]) & 0xFFFFFFFF",
        AND: "r[{y}] & r[{k}]", OR: "r[{y}] | r[{k}]", XOR: "r[{y}] ^ r[{k}]",
        SHL: "(r[{y}] << (r[{k}] & 31)) & 0xFFFFFFFF", SHR: "r[{y}] >> (r[{k}] & 31)"}
_LOADS = {LOAD8: 1, LOAD16: 2, LOAD32: 4}
_STORES = {STORE8: 1, STORE16: 2, STORE32: 4}
_SUPPORTED = (set(_ALU) | set(_LOADS) | set(_STORES)
              | {MOVI, MOVHI, MOV, ADDI, CMP, NOP, BEQ, BNE, BLT, BGE, JMP, JMPABS,
                 CALL, RET, IRET, WFI})


def _ram_read(width: int) -> str:
    parts = ["ram[o]", "ram[o + 1] << 8", "ram[o + 2] << 16", "ram[o + 3] << 24"]
    return " | ".join(parts[:width])


def _ram_write(width: int) -> list[str]:
    out = ["ram[o] = v & 0xFF"]
    if width > 1:
        out.append("ram[o + 1] = (v >> 8) & 0xFF")
    if width > 2:
        out += ["ram[o + 2] = (v >> 16) & 0xFF", "ram[o + 3] = v >> 24"]
    return out


def translate(fetch, pc0: int, ram_base: int, ram_size: int):
    """Translate the block at ``pc0``; ``fetch(pc)`` gives a decoded tuple or None.

    Returns ``(fn, n_instructions)`` or None when the first instruction
    cannot be translated (illegal, or outside flash).
    """
    body: list[str] = []
    pc = pc0
    n = 0
    end = None

    def emit(line, depth=1):
        body.append("    " * depth + line)

    def slow_mark():
        emit(f"m._xpc = {pc}; m._xn = {n}; m._xflags = (eq, lt)", 2)

    while n < MAX_BLOCK:
        ins = fetch(pc)
        if ins is None or ins[0] not in _SUPPORTED:
            break
        op, x, y, k = ins
        n += 1
        if op == MOVI:
            emit(f"r[{x}] = {k}")
        elif op == MOVHI:
            emit(f"r[{x}] = (r[{x}] & 0xFFFF) | {k << 16}")
        elif op == MOV:
            emit(f"r[{x}] = r[{y}]")
        elif op == ADDI:
            emit(f"r[{x}] = (r[{y}] + {k}) & 0xFFFFFFFF")
        elif op in _ALU:
            emit(f"r[{x}] = " + _ALU[op].format(y=y, k=k))
        elif op == CMP:
            emit(f"va = r[{x}]; vb = r[{y}]")
            emit("eq = va == vb; lt = va < vb")
        elif op == NOP:
            pass
        elif op in _LOADS:
            w = _LOADS[op]
            emit(f"a = (r[{y}] + {k}) & 0xFFFFFFFF")
            emit(f"o = a - {ram_base}")
            emit(f"if 0 <= o <= {ram_size - w}:")
            emit(f"r[{x}] = {_ram_read(w)}", 2)
            emit("else:")
            slow_mark()
            emit(f"r[{x}] = m._load(a, {w})", 2)
        elif op in _STORES:
            w = _STORES[op]
            emit(f"a = (r[{y}] + {k}) & 0xFFFFFFFF")
            emit(f"o = a - {ram_base}")
            emit(f"v = r[{x}]")
            emit(f"if 0 <= o <= {ram_size - w}:")
            for line in _ram_write(w):
                emit(line, 2)
            emit("else:")
            slow_mark()
            emit(f"m._store(a, {w}, v)", 2)
        elif op in (BEQ, BNE, BLT, BGE):
            cond = {BEQ: "eq", BNE: "not eq", BLT: "lt", BGE: "not lt"}[op]
            emit(f"return (1, {k} if {cond} else {pc + 4}, eq, lt)")
            end = op
        elif op == JMP:
            if k == pc:
                emit(f"return (3, {pc}, eq, lt)")
            else:
                emit(f"return (1, {k}, eq, lt)")
            end = op
        elif op == JMPABS:
            emit(f"t = r[{x}]")
            emit(f"return (3 if t == {pc} else 1, t, eq, lt)")
            end = op
        elif op == CALL:
            emit(f"r[{isa.LINK_REG}] = {(pc + 4) & M32}")
            emit(f"return (1, {k}, eq, lt)")
            end = op
        elif op == RET:
            emit(f"return (1, r[{isa.LINK_REG}], eq, lt)")
            end = op
        elif op == IRET:
            emit("if not st.in_interrupt:")
            slow_mark()
            emit("m._illegal()", 2)
            emit("r[:] = st.saved_gpr")
            emit("st.in_interrupt = False")
            emit("eq, lt = st.saved_flags")
            emit("return (1, st.saved_pc, eq, lt)")
            end = op
        elif op == WFI:
            emit("st.sleeping = True")
            emit(f"return (2, {pc + 4}, eq, lt)")
            end = op
        if end is not None:
            break
        pc += 4
    if n == 0:
        return None
    if end is None:
        # stopped before something untranslatable or at the length cap
        n_run = n
        emit(f"return (-1, {pc0 + 4 * n_run}, eq, lt)")
    src = "def block(r, ram, st, m, eq, lt):\n" + "\n".join(body) + "\n"
    scope: dict = {}
    exec(compile(src, f"<block 0x{pc0:08x}>", "exec"), scope)
    return scope["block"], n
