"""Edge coverage with optional interrupt-context separation.

In baseline mode a single "previous block" links every consecutive pair of
blocks, so each place an interrupt happens to fire mints two new edges. In
FEC mode program code and interrupt code keep separate previous-block
trackers: every handler entry is seen as coming from one fixed origin, the
return into program code records nothing, and program edges continue as if
the interrupt never happened.
"""

from __future__ import annotations

import enum

MAP_SIZE = 1 << 16

# reserved ids outside the 32-bit block-id space
NULL_ORIGIN = 1 << 32
START_ORIGIN = (1 << 32) + 1


class Mode(str, enum.Enum):
    BASELINE = "baseline"
    FEC = "fec"


class Novelty(enum.IntEnum):
    NONE = 0
    NEW_BUCKET = 1
    NEW_EDGE = 2


def edge_index(prev: int, cur: int, size: int = MAP_SIZE) -> int:
    return ((prev * 2654435761) ^ (cur * 40503)) % size


def _bucket_bit(count: int) -> int:
    if count == 0:
        return 0
    if count <= 3:
        return 1 << (count - 1)
    for bit, hi in enumerate((7, 15, 31, 127, 255), start=3):
        if count <= hi:
            return 1 << bit
    raise ValueError(count)


BUCKET_BIT = bytes(_bucket_bit(c) for c in range(256))


class EdgeMap:
    """Saturating 8-bit hit counters, plus the list of indices touched."""

    __slots__ = ("size", "hits", "touched")

    def __init__(self, size: int = MAP_SIZE):
        if size <= 0 or size & (size - 1):
            raise ValueError("map size must be a power of two")
        self.size = size
        self.hits = bytearray(size)
        self.touched: list[int] = []

    def add(self, index: int) -> None:
        c = self.hits[index]
        if c == 0:
            self.touched.append(index)
            self.hits[index] = 1
        elif c != 255:
            self.hits[index] = c + 1

    def add_edge(self, prev: int, cur: int) -> None:
        self.add(edge_index(prev, cur, self.size))

    def clear(self) -> None:
        hits = self.hits
        for i in self.touched:
            hits[i] = 0
        self.touched = []

    def total(self) -> int:
        return sum(self.hits[i] for i in self.touched)

    def edges(self) -> dict[int, int]:
        return {i: self.hits[i] for i in sorted(self.touched)}

    def copy(self) -> EdgeMap:
        m = EdgeMap.__new__(EdgeMap)
        m.size = self.size
        m.hits = bytearray(self.hits)
        m.touched = list(self.touched)
        return m

    def __eq__(self, other):
        if not isinstance(other, EdgeMap):
            return NotImplemented
        return self.hits == other.hits

    def __hash__(self):
        return hash(bytes(self.hits))

    def dump(self) -> bytes:
        return bytes(self.hits)


class CoverageContext:
    __slots__ = ("mode", "last_program_block", "last_int_block", "last_block")

    def __init__(self, mode: Mode | str = Mode.FEC):
        self.mode = Mode(mode)
        self.reset()

    def reset(self) -> None:
        self.last_program_block = START_ORIGIN
        self.last_int_block = None
        # baseline mode's single tracker
        self.last_block = START_ORIGIN

    def save(self) -> tuple:
        return (self.last_program_block, self.last_int_block, self.last_block)

    def restore(self, saved: tuple) -> None:
        self.last_program_block, self.last_int_block, self.last_block = saved

    def record_block(self, edge_map: EdgeMap, current_block: int, in_interrupt: bool) -> None:
        if self.mode is Mode.BASELINE:
            prev = self.last_block
            self.last_block = current_block
        elif in_interrupt:
            prev = NULL_ORIGIN if self.last_int_block is None else self.last_int_block
            self.last_int_block = current_block
        else:
            prev = self.last_program_block
            self.last_program_block = current_block
            self.last_int_block = None
        # inlined edge_index() and EdgeMap.add(); this runs once per block
        idx = ((prev * 2654435761) ^ (current_block * 40503)) % edge_map.size
        hits = edge_map.hits
        c = hits[idx]
        if c == 0:
            edge_map.touched.append(idx)
            hits[idx] = 1
        elif c != 255:
            hits[idx] = c + 1


def record_block(ctx: CoverageContext, edge_map: EdgeMap, current_block: int, in_interrupt: bool) -> None:
    ctx.record_block(edge_map, current_block, in_interrupt)


class VirginMap:
    """Campaign-wide record of which (edge, hit-count bucket) pairs were seen."""

    __slots__ = ("size", "bits")

    def __init__(self, size: int = MAP_SIZE):
        self.size = size
        self.bits = bytearray(b"\xff" * size)

    def classify(self, edge_map: EdgeMap, update: bool = True) -> Novelty:
        bits = self.bits
        hits = edge_map.hits
        result = Novelty.NONE
        for i in edge_map.touched:
            b = BUCKET_BIT[hits[i]]
            v = bits[i]
            if b & v:
                if v == 0xFF:
                    result = Novelty.NEW_EDGE
                elif result is Novelty.NONE:
                    result = Novelty.NEW_BUCKET
                if update:
                    bits[i] = v & ~b
        return result

    def edges_seen(self) -> int:
        return self.size - self.bits.count(0xFF)

    def seen_buckets(self) -> bytes:
        """Per-index OR of bucket bits observed so far."""
        return bytes(~v & 0xFF for v in self.bits)

    def copy(self) -> VirginMap:
        m = VirginMap.__new__(VirginMap)
        m.size = self.size
        m.bits = bytearray(self.bits)
        return m


def classify(edge_map: EdgeMap, virgin: VirginMap) -> Novelty:
    return virgin.classify(edge_map)
