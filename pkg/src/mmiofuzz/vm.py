"""Deterministic interpreter for the miniature microcontroller.

The address space has three regions: flash (read/execute, optionally
writable), RAM (read/write) and the peripheral window at
0x4000_0000-0x5FFF_FFFF whose loads and stores are delegated to a bus
object. Anything else is unmapped.

``Machine.run`` is the hot loop: it executes instructions until a basic
block ends (any control transfer), the CPU sleeps, a self-jump is hit or a
fault occurs, and reports which of those happened. Interrupt delivery and
coverage are the caller's job and happen only between blocks.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field, replace
from typing import Protocol

from . import isa, jit
from .isa import (
    ADD, ADDI, AND, BEQ, BGE, BLT, BNE, CALL, CMP, ILLEGAL, IRET, JMP, JMPABS,
    LOAD8, LOAD16, LOAD32, MOV, MOVHI, MOVI, NOP, OR, RET, SHL, SHR, STORE8,
    STORE16, STORE32, SUB, WFI, XOR,
)

MMIO_BASE = 0x4000_0000
MMIO_LIMIT = 0x5FFF_FFFF
NUM_VECTORS = 32
VECTOR_TABLE_SIZE = NUM_VECTORS * 4
M32 = 0xFFFF_FFFF

EV_LIMIT = 0
EV_BOUNDARY = 1
EV_SLEEP = 2
EV_SELFJUMP = 3
EV_FAULT = 4

_MISS = object()


class FaultKind(str, enum.Enum):
    UNMAPPED = "Unmapped"
    PERMISSION = "Permission"
    ILLEGAL = "IllegalInstr"


class LoadError(ValueError):
    """The flash image cannot be loaded into the given memory map."""


class MemFault(Exception):
    def __init__(self, kind: FaultKind, addr: int):
        super().__init__(f"{kind.value} fault at 0x{addr:08x}")
        self.kind = kind
        self.addr = addr


class Bus(Protocol):
    def read(self, addr: int, width: int) -> int: ...

    def write(self, addr: int, width: int, value: int) -> None: ...


class NullBus:
    """Peripheral window that reads as zero and discards writes."""

    def read(self, addr, width):
        return 0

    def write(self, addr, width, value):
        pass


@dataclass(frozen=True)
class MemoryMap:
    flash_base: int = 0x0000_0000
    flash_size: int = 0x1_0000
    ram_base: int = 0x2000_0000
    ram_size: int = 0x4000
    flash_writable: bool = False
    irq_enable_addr: int = 0x5000_0000

    mmio_base = MMIO_BASE
    mmio_limit = MMIO_LIMIT

    def __post_init__(self):
        spans = [
            (self.flash_base, self.flash_base + self.flash_size),
            (self.ram_base, self.ram_base + self.ram_size),
            (MMIO_BASE, MMIO_LIMIT + 1),
        ]
        spans.sort()
        for (_, end), (start, _) in zip(spans, spans[1:]):
            if end > start:
                raise ValueError("memory regions overlap")
        if self.flash_size < VECTOR_TABLE_SIZE:
            raise ValueError("flash too small for the vector table")
        if not MMIO_BASE <= self.irq_enable_addr <= MMIO_LIMIT:
            raise ValueError("irq_enable_addr must lie in the peripheral window")

    def in_flash(self, addr: int) -> bool:
        return self.flash_base <= addr < self.flash_base + self.flash_size

    def in_ram(self, addr: int) -> bool:
        return self.ram_base <= addr < self.ram_base + self.ram_size

    @staticmethod
    def in_mmio(addr: int) -> bool:
        return MMIO_BASE <= addr <= MMIO_LIMIT


@dataclass(slots=True)
class VmState:
    memmap: MemoryMap
    flash: bytes | bytearray
    ram: bytearray
    gpr: list[int] = field(default_factory=lambda: [0] * isa.NUM_REGS)
    pc: int = 0
    flag_eq: bool = False
    flag_lt: bool = False
    in_interrupt: bool = False
    saved_pc: int = 0
    # register file and flags banked on interrupt entry
    saved_gpr: tuple = ()
    saved_flags: tuple = (False, False)
    sleeping: bool = False
    instr_count: int = 0

    def copy(self) -> VmState:
        flash = bytearray(self.flash) if isinstance(self.flash, bytearray) else self.flash
        return replace(self, flash=flash, ram=bytearray(self.ram), gpr=list(self.gpr))

    def vector(self, n: int) -> int:
        off = n * 4
        return struct.unpack_from("<I", self.flash, off)[0]


def load_image(flash_bytes: bytes, memmap: MemoryMap | None = None) -> VmState:
    """Place ``flash_bytes`` at the start of flash and reset the CPU."""
    memmap = memmap or MemoryMap()
    if len(flash_bytes) > memmap.flash_size:
        raise LoadError(
            f"image of {len(flash_bytes)} bytes exceeds flash size {memmap.flash_size}"
        )
    if len(flash_bytes) < VECTOR_TABLE_SIZE:
        raise LoadError("image shorter than the vector table")
    padded = bytes(flash_bytes) + bytes(memmap.flash_size - len(flash_bytes))
    flash = bytearray(padded) if memmap.flash_writable else padded
    reset = struct.unpack_from("<I", flash, 0)[0]
    if not memmap.in_flash(reset):
        raise LoadError(f"reset vector 0x{reset:08x} outside flash")
    return VmState(memmap=memmap, flash=flash, ram=bytearray(memmap.ram_size), pc=reset)


def enter_interrupt(vm: VmState, vector: int) -> bool:
    """Divert ``vm`` to the handler for ``vector``; False if the slot is empty."""
    if not 0 <= vector < NUM_VECTORS:
        raise ValueError(f"vector {vector} out of range")
    if vm.in_interrupt:
        raise RuntimeError("nested interrupts are not delivered")
    handler = vm.vector(vector)
    if handler == 0:
        return False
    vm.saved_pc = vm.pc
    vm.saved_gpr = tuple(vm.gpr)
    vm.saved_flags = (vm.flag_eq, vm.flag_lt)
    vm.pc = handler
    vm.in_interrupt = True
    vm.sleeping = False
    return True


def return_from_interrupt(vm: VmState) -> None:
    if not vm.in_interrupt:
        raise MemFault(FaultKind.ILLEGAL, vm.pc)
    vm.gpr[:] = vm.saved_gpr
    vm.flag_eq, vm.flag_lt = vm.saved_flags
    vm.pc = vm.saved_pc
    vm.in_interrupt = False


class StepKind(str, enum.Enum):
    CONTINUE = "Continue"
    BLOCK_BOUNDARY = "BlockBoundary"
    SLEEP = "Sleep"
    SELF_JUMP = "SelfJump"
    MEM_FAULT = "MemFault"
    MMIO_READ = "MmioRead"
    MMIO_WRITE = "MmioWrite"


@dataclass(frozen=True)
class StepOutcome:
    kind: StepKind
    new_pc: int | None = None
    addr: int | None = None
    width: int | None = None
    value: int | None = None
    fault_kind: FaultKind | None = None


class Machine:
    """Executes a ``VmState`` against a bus.

    ``permission_faults=False`` turns the permission checks off: writes to
    read-only flash are dropped and fetches from RAM execute.
    """

    def __init__(self, state: VmState, bus: Bus | None = None, permission_faults: bool = True,
                 translate: bool = True):
        self.bus = bus if bus is not None else NullBus()
        # block translation is skipped for writable flash (self-modifying code)
        self.translate = translate
        self.permission_faults = permission_faults
        self.fault: tuple[FaultKind, int, int] | None = None
        self.last_mmio: tuple | None = None
        self.trace_mmio = False
        self.state = state
        self._bind(state)

    def _bind(self, state):
        mm = state.memmap
        self.memmap = mm
        self._flash_base = mm.flash_base
        self._ram_base = mm.ram_base
        self._ram_size = mm.ram_size
        self._code = [None] * (mm.flash_size // 4)
        self._code_flash = state.flash
        self._blocks = {}
        self._xpc = 0
        self._xn = 0
        self._xflags = (False, False)

    def load_state(self, state: VmState) -> None:
        """Swap in ``state``; the decode cache survives when flash is unchanged."""
        if state.memmap is not self.memmap:
            self.state = state
            self._bind(state)
            return
        if state.flash is not self._code_flash and state.flash != self._code_flash:
            self._code = [None] * len(self._code)
            self._blocks = {}
        self._code_flash = state.flash
        self.state = state

    # -- slow paths -------------------------------------------------------

    def _decode_at(self, off: int) -> tuple:
        word = struct.unpack_from("<I", self.state.flash, off)[0]
        ins = isa.predecode(word, self._flash_base + off)
        self._code[off >> 2] = ins
        return ins

    def _fetch_flash(self, pc: int) -> tuple | None:
        off = pc - self._flash_base
        if off & 3 or off < 0 or off + 4 > self.memmap.flash_size:
            return None
        return self._code[off >> 2] or self._decode_at(off)

    def _translate(self, pc: int):
        blk = jit.translate(self._fetch_flash, pc, self._ram_base, self._ram_size)
        self._blocks[pc] = blk
        return blk

    def _illegal(self):
        raise MemFault(FaultKind.ILLEGAL, self._xpc)

    def _fetch_slow(self, pc: int) -> tuple:
        mm = self.memmap
        if mm.in_flash(pc):
            off = pc - self._flash_base
            if off & 3 == 0:
                return self._decode_at(off)
            if off + 4 > mm.flash_size:
                raise MemFault(FaultKind.UNMAPPED, pc)
            return isa.predecode(struct.unpack_from("<I", self.state.flash, off)[0], pc)
        if mm.in_ram(pc):
            if self.permission_faults:
                raise MemFault(FaultKind.PERMISSION, pc)
            off = pc - self._ram_base
            if off + 4 > self._ram_size:
                raise MemFault(FaultKind.UNMAPPED, pc)
            return isa.predecode(struct.unpack_from("<I", self.state.ram, off)[0], pc)
        if MMIO_BASE <= pc <= MMIO_LIMIT:
            raise MemFault(FaultKind.PERMISSION, pc)
        raise MemFault(FaultKind.UNMAPPED, pc)

    def _load(self, addr: int, width: int) -> int:
        if MMIO_BASE <= addr <= MMIO_LIMIT:
            value = self.bus.read(addr, width) & ((1 << (8 * width)) - 1)
            if self.trace_mmio:
                self.last_mmio = ("read", addr, width, value)
            return value
        mm = self.memmap
        off = addr - self._flash_base
        if 0 <= off and off + width <= mm.flash_size:
            return int.from_bytes(self.state.flash[off:off + width], "little")
        raise MemFault(FaultKind.UNMAPPED, addr)

    def _store(self, addr: int, width: int, value: int) -> None:
        value &= (1 << (8 * width)) - 1
        if MMIO_BASE <= addr <= MMIO_LIMIT:
            if self.trace_mmio:
                self.last_mmio = ("write", addr, width, value)
            self.bus.write(addr, width, value)
            return
        mm = self.memmap
        off = addr - self._flash_base
        if 0 <= off and off + width <= mm.flash_size:
            if mm.flash_writable:
                flash = self.state.flash
                flash[off:off + width] = value.to_bytes(width, "little")
                for w in range(off >> 2, ((off + width - 1) >> 2) + 1):
                    self._code[w] = None
                self._blocks.clear()
                return
            if self.permission_faults:
                raise MemFault(FaultKind.PERMISSION, addr)
            return
        raise MemFault(FaultKind.UNMAPPED, addr)

    # -- interpreter ------------------------------------------------------

    def run(self, limit: int) -> int:
        """Execute at most ``limit`` instructions; returns an ``EV_*`` code.

        On ``EV_FAULT`` the pc is left on the faulting instruction and
        ``self.fault`` holds ``(kind, address, pc)``. On ``EV_SELFJUMP`` the
        pc is the jump's own address. Exceptions raised by the bus propagate
        with the pc left on the accessing instruction.
        """
        if not self.translate or self.memmap.flash_writable:
            return self._interpret(limit)
        st = self.state
        blk = self._blocks.get(st.pc, _MISS)
        if blk is _MISS:
            blk = self._translate(st.pc)
        if blk is None or blk[1] > limit:
            return self._interpret(limit)
        # common case: one whole translated block
        try:
            ev, pc, eq, lt = blk[0](st.gpr, st.ram, st, self, st.flag_eq, st.flag_lt)
        except MemFault as f:
            self._unwind(st)
            self.fault = (f.kind, f.addr, st.pc)
            return EV_FAULT
        except BaseException:
            self._unwind(st)
            raise
        st.pc = pc
        st.flag_eq = eq
        st.flag_lt = lt
        n = blk[1]
        st.instr_count += n
        if ev != jit.EV_CONT:
            return ev
        return self._interpret(limit - n) if limit > n else EV_LIMIT

    def _unwind(self, st: VmState) -> None:
        st.pc = self._xpc
        st.instr_count += self._xn
        st.flag_eq, st.flag_lt = self._xflags

    def _interpret(self, limit: int) -> int:
        st = self.state
        r = st.gpr
        pc = st.pc
        eq = st.flag_eq
        lt = st.flag_lt
        code = self._code
        ncode = len(code)
        fbase = self._flash_base
        ram = st.ram
        rbase = self._ram_base
        rlast4 = self._ram_size - 4
        rlast2 = self._ram_size - 2
        rlast1 = self._ram_size - 1
        n = 0
        ev = EV_LIMIT
        blocks = self._blocks if self.translate and not self.memmap.flash_writable else None
        inblk = False
        try:
            while n < limit:
                if blocks is not None:
                    blk = blocks.get(pc, _MISS)
                    if blk is _MISS:
                        blk = self._translate(pc)
                    if blk is not None and blk[1] <= limit - n:
                        inblk = True
                        ev, pc, eq, lt = blk[0](r, ram, st, self, eq, lt)
                        inblk = False
                        n += blk[1]
                        if ev == jit.EV_CONT:
                            ev = EV_LIMIT
                            continue
                        break
                off = pc - fbase
                ins = code[off >> 2] if (off & 3 == 0 and 0 <= off and (off >> 2) < ncode) else None
                if ins is None:
                    ins = self._fetch_slow(pc)
                op, x, y, k = ins
                n += 1
                if op == LOAD32:
                    a = (r[y] + k) & M32
                    o = a - rbase
                    if 0 <= o <= rlast4:
                        r[x] = ram[o] | ram[o + 1] << 8 | ram[o + 2] << 16 | ram[o + 3] << 24
                    else:
                        r[x] = self._load(a, 4)
                    pc += 4
                elif op == MOVI:
                    r[x] = k
                    pc += 4
                elif op == AND:
                    r[x] = r[y] & r[k]
                    pc += 4
                elif op == CMP:
                    va = r[x]
                    vb = r[y]
                    eq = va == vb
                    lt = va < vb
                    pc += 4
                elif op == BEQ:
                    pc = k if eq else pc + 4
                    ev = EV_BOUNDARY
                    break
                elif op == BNE:
                    pc = pc + 4 if eq else k
                    ev = EV_BOUNDARY
                    break
                elif op == ADDI:
                    r[x] = (r[y] + k) & M32
                    pc += 4
                elif op == STORE32:
                    a = (r[y] + k) & M32
                    o = a - rbase
                    v = r[x]
                    if 0 <= o <= rlast4:
                        ram[o] = v & 0xFF
                        ram[o + 1] = (v >> 8) & 0xFF
                        ram[o + 2] = (v >> 16) & 0xFF
                        ram[o + 3] = v >> 24
                    else:
                        self._store(a, 4, v)
                    pc += 4
                elif op == LOAD8:
                    a = (r[y] + k) & M32
                    o = a - rbase
                    if 0 <= o <= rlast1:
                        r[x] = ram[o]
                    else:
                        r[x] = self._load(a, 1)
                    pc += 4
                elif op == BLT:
                    pc = k if lt else pc + 4
                    ev = EV_BOUNDARY
                    break
                elif op == BGE:
                    pc = pc + 4 if lt else k
                    ev = EV_BOUNDARY
                    break
                elif op == JMP:
                    if k == pc:
                        ev = EV_SELFJUMP
                        break
                    pc = k
                    ev = EV_BOUNDARY
                    break
                elif op == ADD:
                    r[x] = (r[y] + r[k]) & M32
                    pc += 4
                elif op == STORE8:
                    a = (r[y] + k) & M32
                    o = a - rbase
                    if 0 <= o <= rlast1:
                        ram[o] = r[x] & 0xFF
                    else:
                        self._store(a, 1, r[x])
                    pc += 4
                elif op == MOVHI:
                    r[x] = (r[x] & 0xFFFF) | k << 16
                    pc += 4
                elif op == MOV:
                    r[x] = r[y]
                    pc += 4
                elif op == CALL:
                    r[7] = (pc + 4) & M32
                    pc = k
                    ev = EV_BOUNDARY
                    break
                elif op == RET:
                    pc = r[7]
                    ev = EV_BOUNDARY
                    break
                elif op == SUB:
                    r[x] = (r[y] - r[k]) & M32
                    pc += 4
                elif op == OR:
                    r[x] = r[y] | r[k]
                    pc += 4
                elif op == XOR:
                    r[x] = r[y] ^ r[k]
                    pc += 4
                elif op == SHL:
                    r[x] = (r[y] << (r[k] & 31)) & M32
                    pc += 4
                elif op == SHR:
                    r[x] = r[y] >> (r[k] & 31)
                    pc += 4
                elif op == LOAD16:
                    a = (r[y] + k) & M32
                    o = a - rbase
                    if 0 <= o <= rlast2:
                        r[x] = ram[o] | ram[o + 1] << 8
                    else:
                        r[x] = self._load(a, 2)
                    pc += 4
                elif op == STORE16:
                    a = (r[y] + k) & M32
                    o = a - rbase
                    v = r[x]
                    if 0 <= o <= rlast2:
                        ram[o] = v & 0xFF
                        ram[o + 1] = (v >> 8) & 0xFF
                    else:
                        self._store(a, 2, v)
                    pc += 4
                elif op == JMPABS:
                    t = r[x]
                    if t == pc:
                        ev = EV_SELFJUMP
                        break
                    pc = t
                    ev = EV_BOUNDARY
                    break
                elif op == IRET:
                    if not st.in_interrupt:
                        raise MemFault(FaultKind.ILLEGAL, pc)
                    r[:] = st.saved_gpr
                    eq, lt = st.saved_flags
                    pc = st.saved_pc
                    st.in_interrupt = False
                    ev = EV_BOUNDARY
                    break
                elif op == WFI:
                    st.sleeping = True
                    pc += 4
                    ev = EV_SLEEP
                    break
                elif op == NOP:
                    pc += 4
                else:
                    raise MemFault(FaultKind.ILLEGAL, pc)
        except MemFault as f:
            if inblk:
                inblk = False
                pc = self._xpc
                n += self._xn
                eq, lt = self._xflags
            self.fault = (f.kind, f.addr, pc)
            ev = EV_FAULT
        finally:
            if inblk:
                # a bus exception (e.g. input exhausted) escaped a translated block
                pc = self._xpc
                n += self._xn
                eq, lt = self._xflags
            st.pc = pc
            st.flag_eq = eq
            st.flag_lt = lt
            st.instr_count += n
        return ev

    def step(self) -> StepOutcome:
        """Execute exactly one instruction and describe what it did."""
        self.last_mmio = None
        prev_trace = self.trace_mmio
        self.trace_mmio = True
        try:
            ev = self.run(1)
        finally:
            self.trace_mmio = prev_trace
        st = self.state
        if ev == EV_BOUNDARY:
            return StepOutcome(StepKind.BLOCK_BOUNDARY, new_pc=st.pc)
        if ev == EV_SLEEP:
            return StepOutcome(StepKind.SLEEP, new_pc=st.pc)
        if ev == EV_SELFJUMP:
            return StepOutcome(StepKind.SELF_JUMP, new_pc=st.pc)
        if ev == EV_FAULT:
            kind, addr, _ = self.fault
            return StepOutcome(StepKind.MEM_FAULT, addr=addr, fault_kind=kind)
        if self.last_mmio is not None:
            direction, addr, width, value = self.last_mmio
            kind = StepKind.MMIO_READ if direction == "read" else StepKind.MMIO_WRITE
            return StepOutcome(kind, addr=addr, width=width, value=value)
        return StepOutcome(StepKind.CONTINUE)


def step(vm: VmState, mem_hooks: Bus | None = None, permission_faults: bool = True) -> StepOutcome:
    """Execute one instruction of ``vm`` in place."""
    return Machine(vm, mem_hooks, permission_faults).step()
