"""AFL-style input mutations: deterministic stages, havoc and splice."""

from __future__ import annotations

import random
import struct
from collections.abc import Iterator
from functools import lru_cache

INTERESTING = (0, -1, 1, 16, 32, 64, 100, 127, 128, 255, 256, 512, 1024, 4096, 32767, 65535)
ARITH_MAX = 16
HAVOC_STACK_POW2 = 7
MAX_LEN = 4096

_FMT = {1: "B", 2: "H", 4: "I"}


@lru_cache(maxsize=None)
def interesting_values(width: int) -> tuple[int, ...]:
    """Interesting values representable in ``width`` bytes, as unsigned ints."""
    bits = 8 * width
    out = []
    for v in INTERESTING:
        if -(1 << (bits - 1)) <= v < (1 << bits):
            u = v & ((1 << bits) - 1)
            if u not in out:
                out.append(u)
    return tuple(out)


def _put(buf: bytearray, pos: int, width: int, value: int, big: bool = False) -> None:
    struct.pack_into((">" if big else "<") + _FMT[width], buf, pos, value & ((1 << (8 * width)) - 1))


def _get(buf, pos: int, width: int, big: bool = False) -> int:
    return struct.unpack_from((">" if big else "<") + _FMT[width], buf, pos)[0]


# -- deterministic stages -------------------------------------------------

def bit_flips(data: bytes, width: int = 1) -> Iterator[bytes]:
    """Walk ``width`` adjacent bits (1, 2 or 4) across every bit position."""
    nbits = len(data) * 8
    for pos in range(nbits - width + 1):
        buf = bytearray(data)
        for b in range(pos, pos + width):
            buf[b >> 3] ^= 0x80 >> (b & 7)
        yield bytes(buf)


def byte_flips(data: bytes, width: int = 1) -> Iterator[bytes]:
    for pos in range(len(data) - width + 1):
        buf = bytearray(data)
        for i in range(pos, pos + width):
            buf[i] ^= 0xFF
        yield bytes(buf)


def arithmetic(data: bytes, width: int = 1, arith_max: int = ARITH_MAX) -> Iterator[bytes]:
    mask = (1 << (8 * width)) - 1
    for pos in range(len(data) - width + 1):
        for big in ((False,) if width == 1 else (False, True)):
            orig = _get(data, pos, width, big)
            for j in range(1, arith_max + 1):
                for v in ((orig + j) & mask, (orig - j) & mask):
                    buf = bytearray(data)
                    _put(buf, pos, width, v, big)
                    yield bytes(buf)


def interesting(data: bytes, width: int = 1) -> Iterator[bytes]:
    values = interesting_values(width)
    for pos in range(len(data) - width + 1):
        for big in ((False,) if width == 1 else (False, True)):
            for v in values:
                buf = bytearray(data)
                _put(buf, pos, width, v, big)
                out = bytes(buf)
                if out != data:
                    yield out


def deterministic(data: bytes) -> Iterator[bytes]:
    """All deterministic stages in order."""
    for w in (1, 2, 4):
        yield from bit_flips(data, w)
    for w in (1, 2, 4):
        yield from byte_flips(data, w)
    for w in (1, 2, 4):
        yield from arithmetic(data, w)
    for w in (1, 2, 4):
        yield from interesting(data, w)


# -- havoc ----------------------------------------------------------------

def _block_len(below, limit: int) -> int:
    hi = (32, 128, 1500)[below(3)]
    return 1 + below(max(1, min(hi, limit)))


def havoc(data: bytes, rng: random.Random, stack: int | None = None,
          max_len: int = MAX_LEN) -> bytes:
    """Apply a random stack of edits. Never returns an empty input."""
    rand = rng.random

    def below(n):
        # randrange() is several times slower and this is the hot path
        return int(rand() * n)

    buf = bytearray(data) or bytearray(rng.randbytes(4))
    if stack is None:
        stack = 1 << (1 + below(HAVOC_STACK_POW2))
    for _ in range(stack):
        n = len(buf)
        op = below(14)
        if op == 0:
            bit = below(n * 8)
            buf[bit >> 3] ^= 0x80 >> (bit & 7)
        elif op in (1, 2, 3):
            width = (1, 2, 4)[op - 1]
            if n >= width:
                values = interesting_values(width)
                _put(buf, below(n - width + 1), width, values[below(len(values))],
                     big=width > 1 and rand() < 0.5)
        elif op in (4, 5, 6):
            width = (1, 2, 4)[op - 4]
            if n >= width:
                pos = below(n - width + 1)
                big = width > 1 and rand() < 0.5
                delta = 1 + below(ARITH_MAX)
                if rand() < 0.5:
                    delta = -delta
                _put(buf, pos, width, _get(buf, pos, width, big) + delta, big)
        elif op == 7:
            buf[below(n)] ^= 1 + below(255)
        elif op in (8, 9):
            # delete (truncation when the block reaches the end)
            if n > 1:
                length = _block_len(below, n - 1)
                pos = below(n - length + 1)
                del buf[pos:pos + length]
        elif op == 10:
            # duplicate an existing block, or insert a constant run
            if n + 1 < max_len:
                length = _block_len(below, min(n, max_len - n))
                to = below(n + 1)
                if below(4):
                    src = below(n - length + 1) if length <= n else 0
                    chunk = bytes(buf[src:src + length])
                else:
                    fill = below(256) if rand() < 0.5 else buf[below(n)]
                    chunk = bytes([fill]) * length
                buf[to:to] = chunk
        elif op == 11:
            if n >= 2:
                length = _block_len(below, n - 1)
                src = below(n - length + 1)
                dst = below(n - length + 1)
                if below(4):
                    buf[dst:dst + length] = bytes(buf[src:src + length])
                else:
                    buf[dst:dst + length] = bytes([below(256)]) * length
        elif op == 12:
            if n < max_len:
                length = _block_len(below, max_len - n)
                buf += rng.randbytes(length)
        else:
            buf[below(n)] = below(256)
        if not buf:
            buf.append(below(256))
    del buf[max_len:]
    return bytes(buf)


def splice(a: bytes, b: bytes, rng: random.Random) -> bytes:
    """Prefix of ``a`` joined to the suffix of ``b`` at a crossover where they differ."""
    limit = min(len(a), len(b))
    first = last = None
    for i in range(limit):
        if a[i] != b[i]:
            if first is None:
                first = i
            last = i
    if first is None or last - first < 2:
        if limit < 2:
            return a + b[limit:]
        split = 1 + rng.randrange(limit - 1)
    else:
        split = first + rng.randrange(last - first)
    return a[:split] + b[split:]


def mutate(data: bytes, rng: random.Random, stage: str = "havoc", other: bytes | None = None,
           max_len: int = MAX_LEN) -> bytes:
    """One mutation of ``data`` for the given stage ("havoc" or "splice")."""
    if stage == "splice":
        if other is None:
            raise ValueError("splice needs a second input")
        return havoc(splice(data, other, rng), rng, max_len=max_len)
    if stage == "havoc":
        return havoc(data, rng, max_len=max_len)
    raise ValueError(f"unknown stage {stage!r}")
