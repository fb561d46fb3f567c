"""Sample firmware shipped with the package, as source plus golden images."""

from __future__ import annotations

from functools import lru_cache
from importlib import resources

from .asm import AsmProgram, assemble

# firmware used by the fuzzing experiments
SUITE = ("uart_poll", "i2c_init", "serial_reset", "irq_counter", "overflow_bug", "sleepy")
# small programs for termination and triage checks
UNIT = ("irq_counter_neutral", "term_exhaust", "term_unmapped", "term_permission",
        "term_selfjump", "shared_fault")
NAMES = SUITE + UNIT


def _dir():
    return resources.files(__package__).joinpath("corpus")


def source(name: str) -> str:
    if name not in NAMES:
        raise KeyError(f"no corpus firmware named {name!r}")
    return _dir().joinpath(f"{name}.s").read_text()


def golden(name: str) -> bytes:
    """The checked-in image for ``name``."""
    if name not in NAMES:
        raise KeyError(f"no corpus firmware named {name!r}")
    return _dir().joinpath(f"{name}.bin").read_bytes()


@lru_cache(maxsize=None)
def load(name: str) -> AsmProgram:
    return assemble(source(name))


def corpus() -> dict[str, AsmProgram]:
    return {name: load(name) for name in NAMES}
