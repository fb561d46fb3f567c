"""Peripheral Input Playback: answering MMIO reads from the fuzz input.

Before a register is read, one two-bit field decides whether the read
repeats the register's last value (field == 3) or consumes a fresh value
from the input. Fields are fetched 32 bits at a time per register, so one
control word covers the next 16 reads of that register and the input stays
byte aligned.
"""

from __future__ import annotations

from dataclasses import dataclass, field

REPEAT_CONST = 3
FIELDS_PER_WORD = 16
CONTROL_BYTES = 4

# a value of None in an access sequence asks the encoder for a repeat
REPEAT = None


class InputExhausted(Exception):
    """A peripheral read found the input buffer empty (termination condition 1)."""


class InputCursor:
    __slots__ = ("data", "offset")

    def __init__(self, data: bytes = b"", offset: int = 0):
        self.data = bytes(data)
        self.offset = offset

    def take(self, n: int) -> int:
        off = self.offset
        end = off + n
        if end > len(self.data):
            raise InputExhausted(f"need {n} bytes at offset {off}, have {len(self.data) - off}")
        self.offset = end
        return int.from_bytes(self.data[off:end], "little")

    @property
    def remaining(self) -> int:
        return len(self.data) - self.offset


class RegisterState:
    __slots__ = ("last_value", "batch_bits", "batch_remaining")

    def __init__(self, last_value: int = 0, batch_bits: int = 0, batch_remaining: int = 0):
        self.last_value = last_value
        self.batch_bits = batch_bits
        self.batch_remaining = batch_remaining

    def __eq__(self, other):
        if not isinstance(other, RegisterState):
            return NotImplemented
        return (self.last_value, self.batch_bits, self.batch_remaining) == (
            other.last_value, other.batch_bits, other.batch_remaining)

    def __repr__(self):
        return (f"RegisterState(last_value=0x{self.last_value:x}, "
                f"batch_bits=0x{self.batch_bits:x}, batch_remaining={self.batch_remaining})")


@dataclass
class PeripheralStore:
    """Per-test-case register memory, keyed by word-aligned address."""

    registers: dict[int, RegisterState] = field(default_factory=dict)
    passthrough: frozenset[int] = frozenset()
    passthrough_cells: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        self.passthrough = frozenset(a & ~3 for a in self.passthrough)

    def reset(self) -> None:
        self.registers.clear()
        self.passthrough_cells.clear()

    def copy(self) -> PeripheralStore:
        regs = {a: RegisterState(r.last_value, r.batch_bits, r.batch_remaining)
                for a, r in self.registers.items()}
        return PeripheralStore(regs, self.passthrough, dict(self.passthrough_cells))


def reset_store(store: PeripheralStore) -> None:
    store.reset()


def _patch(old: int, addr: int, width: int, value: int) -> int:
    shift = (addr & 3) * 8
    mask = ((1 << (8 * width)) - 1) << shift
    return ((old & ~mask) | ((value << shift) & mask)) & 0xFFFF_FFFF


def mmio_read(store: PeripheralStore, cursor: InputCursor, address: int, width: int,
              pip: bool = True) -> int:
    """Answer one peripheral read. Raises InputExhausted when the input runs dry.

    With ``pip=False`` every read consumes ``width`` raw bytes and no control
    words are used.
    """
    key = address & ~3
    if key in store.passthrough:
        cell = store.passthrough_cells.get(key, 0)
        return (cell >> ((address & 3) * 8)) & ((1 << (8 * width)) - 1)
    reg = store.registers.get(key)
    if reg is None:
        reg = store.registers[key] = RegisterState()
    if not pip:
        value = cursor.take(width)
        reg.last_value = value
        return value
    if reg.batch_remaining == 0:
        reg.batch_bits = cursor.take(CONTROL_BYTES)
        reg.batch_remaining = FIELDS_PER_WORD
    bits = reg.batch_bits
    reg.batch_bits = bits >> 2
    reg.batch_remaining -= 1
    if bits & 3 == REPEAT_CONST:
        value = reg.last_value & ((1 << (8 * width)) - 1)
    else:
        value = cursor.take(width)
    reg.last_value = value
    return value


def mmio_write(store: PeripheralStore, address: int, width: int, value: int) -> None:
    key = address & ~3
    if key in store.passthrough:
        store.passthrough_cells[key] = _patch(store.passthrough_cells.get(key, 0), address, width, value)
        return
    reg = store.registers.get(key)
    if reg is None:
        reg = store.registers[key] = RegisterState()
    reg.last_value = _patch(reg.last_value, address, width, value)


class MmioManager:
    """Bus adapter feeding peripheral reads from a fuzz input.

    Also routes the interrupt-enable register to an interrupt controller so
    that firmware configuration never consumes input.
    """

    def __init__(self, store: PeripheralStore | None = None, pip: bool = True,
                 irq=None, irq_enable_addr: int | None = None):
        self.store = store if store is not None else PeripheralStore()
        self.cursor = InputCursor()
        self.pip = pip
        self.irq = irq
        self.irq_key = None if irq_enable_addr is None else irq_enable_addr & ~3
        self.events: list | None = None

    def start(self, data: bytes) -> None:
        self.cursor = InputCursor(data)

    def read(self, addr: int, width: int) -> int:
        if (addr & ~3) == self.irq_key and self.irq is not None:
            value = (self.irq.enable_mask >> ((addr & 3) * 8)) & ((1 << (8 * width)) - 1)
        else:
            value = mmio_read(self.store, self.cursor, addr, width, self.pip)
        if self.events is not None:
            self.events.append(("R", addr, width, value))
        return value

    def write(self, addr: int, width: int, value: int) -> None:
        if self.events is not None:
            self.events.append(("W", addr, width, value))
        if (addr & ~3) == self.irq_key and self.irq is not None:
            self.irq.route_enable_write(_patch(self.irq.enable_mask, addr, width, value))
            return
        mmio_write(self.store, addr, width, value)


def encode_playback(accesses, pip: bool = True) -> bytes:
    """Build an input that makes a sequence of reads return chosen values.

    ``accesses`` is an iterable of ``(address, width, value)``; a ``value``
    of ``REPEAT`` (None) asks for the register's previous value to be played
    back. Writes are not modelled, so a repeat always yields the last value
    read from that register (0 before the first read). Without repeats the
    encoding uses all-zero control words.
    """
    out: list = []
    pending: dict[int, list] = {}  # key -> [chunk index, fields filled]
    for address, width, value in accesses:
        if not pip:
            if value is REPEAT:
                raise ValueError("repeats need playback enabled")
            out.append(bytearray((value & ((1 << (8 * width)) - 1)).to_bytes(width, "little")))
            continue
        key = address & ~3
        slot = pending.get(key)
        if slot is None or slot[1] == FIELDS_PER_WORD:
            out.append(bytearray(CONTROL_BYTES))
            slot = pending[key] = [len(out) - 1, 0]
        if value is REPEAT:
            word = int.from_bytes(out[slot[0]], "little") | (REPEAT_CONST << (2 * slot[1]))
            out[slot[0]][:] = word.to_bytes(CONTROL_BYTES, "little")
        else:
            out.append(bytearray((value & ((1 << (8 * width)) - 1)).to_bytes(width, "little")))
        slot[1] += 1
    return b"".join(bytes(c) for c in out)
