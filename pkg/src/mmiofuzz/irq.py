"""Round-robin interrupt manager.

Fires the next enabled vector every ``interval`` block boundaries, and
immediately whenever the CPU goes to sleep. Vector 0 is the reset vector
and is never fired, and neither is any vector whose table entry is zero
(``installed`` holds the vectors that have a handler). The block counter
includes blocks run inside handlers.
"""

from __future__ import annotations

from dataclasses import dataclass

from .vm import NUM_VECTORS

DEFAULT_INTERVAL = 1000
ELIGIBLE_MASK = ((1 << NUM_VECTORS) - 1) & ~1


@dataclass
class IrqController:
    interval: int = DEFAULT_INTERVAL
    enable_mask: int = 0
    blocks_since_irq: int = 0
    rr_cursor: int = 0
    disabled: bool = False
    installed: int = ELIGIBLE_MASK

    def __post_init__(self):
        if self.interval < 1:
            raise ValueError("interval must be at least 1")

    def _next_vector(self) -> int | None:
        mask = self.enable_mask & self.installed & ELIGIBLE_MASK
        if not mask or self.disabled:
            return None
        v = self.rr_cursor
        for _ in range(NUM_VECTORS):
            v = (v + 1) % NUM_VECTORS
            if mask >> v & 1:
                return v
        return None

    def on_block(self, in_interrupt: bool) -> int | None:
        self.blocks_since_irq += 1
        if self.blocks_since_irq < self.interval or in_interrupt:
            return None
        v = self._next_vector()
        if v is None:
            return None
        self.rr_cursor = v
        self.blocks_since_irq = 0
        return v

    def on_sleep(self, in_interrupt: bool = False) -> int | None:
        """Vector to wake a sleeping CPU with, or None if nothing can wake it."""
        if in_interrupt:
            return None
        v = self._next_vector()
        if v is None:
            return None
        self.rr_cursor = v
        self.blocks_since_irq = 0
        return v

    def route_enable_write(self, value: int) -> None:
        self.enable_mask = value & 0xFFFF_FFFF

    def copy(self) -> IrqController:
        return IrqController(self.interval, self.enable_mask, self.blocks_since_irq,
                             self.rr_cursor, self.disabled, self.installed)
