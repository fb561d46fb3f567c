"""Campaign configuration files.

One ``key = value`` per line, ``#`` starts a comment. Integers accept a
``0x`` prefix, booleans are on/off (also true/false, yes/no, 1/0) and
lists are comma separated. Example::

    firmware = corpus:i2c_init
    pip = on
    fec = off
    exec_budget = 50000
    snapshot_pcs = post_init, 0x1a0
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .coverage import MAP_SIZE
from .engine.executor import DEFAULT_INSTR_BUDGET
from .engine.fuzzer import DEFAULT_SEED_LEN
from .engine.mutate import MAX_LEN
from .irq import DEFAULT_INTERVAL
from .vm import MemoryMap

OUTPUT_ENV = "MMIOFUZZ_OUT"
CORPUS_PREFIX = "corpus:"


class ConfigError(ValueError):
    pass


_TRUE = {"on", "true", "yes", "1"}
_FALSE = {"off", "false", "no", "0"}


def parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in _TRUE:
        return True
    if t in _FALSE:
        return False
    raise ConfigError(f"expected on/off, got {text!r}")


def parse_int(text: str) -> int:
    try:
        return int(text.strip().replace("_", ""), 0)
    except ValueError:
        raise ConfigError(f"expected an integer, got {text!r}") from None


def _list(text: str) -> list[str]:
    return [p.strip() for p in text.split(",") if p.strip()]


@dataclass
class CampaignConfig:
    firmware: str = ""
    pip: bool = True
    fec: bool = True
    irq_interval: int = DEFAULT_INTERVAL
    irq_enable_addr: int = MemoryMap().irq_enable_addr
    interrupts: bool = True
    instr_budget: int = DEFAULT_INSTR_BUDGET
    exec_budget: int = 2_000_000
    time_budget: float = 0.0
    snapshot_pcs: list[str] = field(default_factory=list)
    passthrough: list[int] = field(default_factory=list)
    seed: int = 0
    seed_len: int = DEFAULT_SEED_LEN
    disable_cond3: bool = False
    disable_cond4: bool = False
    flash_writable: bool = False
    output_dir: str = "campaign"
    stats_interval: int = 1000
    clock: str = "emulated"
    epoch: float = 0.0
    cpu_hz: int = 16_000_000
    post_init: str = ""
    map_size: int = MAP_SIZE
    max_len: int = MAX_LEN
    deterministic: bool = False
    # end the campaign at the first unique crash
    stop_on_crash: bool = False
    # directory of the config file; relative firmware paths resolve against it
    base_dir: str = field(default=".", repr=False, compare=False)

    def validate(self) -> None:
        if not self.firmware:
            raise ConfigError("firmware is required")
        if self.exec_budget <= 0 and self.time_budget <= 0:
            raise ConfigError("need a positive exec_budget or time_budget")
        if self.instr_budget <= 0:
            raise ConfigError("instr_budget must be positive")
        if self.irq_interval < 1:
            raise ConfigError("irq_interval must be at least 1")
        if self.clock not in ("wall", "emulated"):
            raise ConfigError(f"clock must be wall or emulated, got {self.clock!r}")
        if self.map_size <= 0 or self.map_size & (self.map_size - 1):
            raise ConfigError("map_size must be a power of two")
        if self.seed_len <= 0 or self.max_len <= 0:
            raise ConfigError("seed_len and max_len must be positive")
        if self.stats_interval <= 0:
            raise ConfigError("stats_interval must be positive")

    def resolved_output_dir(self) -> Path:
        env = os.environ.get(OUTPUT_ENV)
        if env:
            return Path(env)
        out = Path(self.output_dir)
        return out if out.is_absolute() else Path(self.base_dir) / out

    def replace(self, **changes) -> CampaignConfig:
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data.update(changes)
        data["snapshot_pcs"] = list(data["snapshot_pcs"])
        data["passthrough"] = list(data["passthrough"])
        return CampaignConfig(**data)


_KINDS = {f.name: f.type for f in fields(CampaignConfig) if f.name != "base_dir"}


def _convert(key: str, raw: str):
    kind = _KINDS[key]
    if kind == "bool":
        return parse_bool(raw)
    if kind == "int":
        return parse_int(raw)
    if kind == "float":
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {raw!r}") from None
    if key == "passthrough":
        return [parse_int(v) for v in _list(raw)]
    if key == "snapshot_pcs":
        return _list(raw)
    return raw.strip()


def parse_config(text: str, base_dir: str | os.PathLike = ".") -> CampaignConfig:
    cfg = CampaignConfig(base_dir=str(base_dir))
    seen = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"line {lineno}: expected key = value")
        if key not in _KINDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: {key} given twice")
        seen.add(key)
        try:
            setattr(cfg, key, _convert(key, raw))
        except ConfigError as e:
            raise ConfigError(f"line {lineno}: {e}") from None
    cfg.validate()
    return cfg


def load_config(path: str | os.PathLike) -> CampaignConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    return parse_config(text, path.parent)


def _format(value) -> str:
    if isinstance(value, bool):
        return "on" if value else "off"
    if isinstance(value, list):
        return ", ".join(f"0x{v:x}" if isinstance(v, int) else str(v) for v in value)
    return str(value)


def dump_config(cfg: CampaignConfig) -> str:
    """Render ``cfg`` so that ``parse_config`` gives it back unchanged."""
    return "".join(f"{name} = {_format(getattr(cfg, name))}\n" for name in _KINDS)
