"""Wiring a config file to the executor and fuzzer, and writing artifacts.

A campaign directory holds::

    stats.csv      one row per stats interval plus a final row
    queue/         admitted inputs, one file per entry
    crashes/       one reproducing input per dedup key, replayable from boot
    summary.json   final counts and the effective config
    coverage.txt   covered block addresses, one per line
"""

from __future__ import annotations

import csv
import json
import shutil
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .config import CORPUS_PREFIX, CampaignConfig, ConfigError
from .engine.executor import Executor
from .engine.fuzzer import CampaignStats, Fuzzer, StatsRow
from .firmware import AsmError, assemble
from .firmware import catalog
from .vm import LoadError, MemoryMap


class CampaignError(RuntimeError):
    pass


@dataclass
class Firmware:
    name: str
    image: bytes
    symbols: dict[str, int]
    labels: dict[str, int] = field(default_factory=dict)

    def resolve(self, ref: str | int) -> int:
        """A symbol name or a numeric address."""
        if isinstance(ref, int):
            return ref
        if ref in self.symbols:
            return self.symbols[ref]
        try:
            return int(ref, 0)
        except ValueError:
            raise ConfigError(f"unknown symbol {ref!r} in {self.name}") from None

    def symbol_at(self, addr: int) -> str | None:
        best = None
        for name, a in self.labels.items():
            if a <= addr and (best is None or a > best[1]):
                best = (name, a)
        return best[0] if best else None


def load_firmware(ref: str, base_dir: str | Path = ".") -> Firmware:
    """Load ``corpus:<name>``, an assembly source (.s) or a raw image.

    A raw image picks up symbols from a sibling ``.s`` file when one exists.
    """
    if ref.startswith(CORPUS_PREFIX):
        name = ref[len(CORPUS_PREFIX):]
        if name not in catalog.NAMES:
            raise ConfigError(f"no corpus firmware named {name!r}")
        prog = catalog.load(name)
        return Firmware(name, prog.image, dict(prog.symbols), dict(prog.labels))
    path = Path(ref)
    if not path.is_absolute():
        path = Path(base_dir) / path
    try:
        data = path.read_bytes()
    except OSError as e:
        raise ConfigError(f"cannot read firmware {path}: {e.strerror}") from None
    symbols: dict[str, int] = {}
    labels: dict[str, int] = {}
    if path.suffix == ".s":
        try:
            prog = assemble(data.decode())
        except (AsmError, UnicodeDecodeError) as e:
            raise ConfigError(f"{path}: {e}") from None
        return Firmware(path.stem, prog.image, dict(prog.symbols), dict(prog.labels))
    src = path.with_suffix(".s")
    if src.exists():
        try:
            prog = assemble(src.read_text())
            if prog.image == data:
                symbols, labels = dict(prog.symbols), dict(prog.labels)
        except AsmError:
            pass
    return Firmware(path.stem, data, symbols, labels)


def build_executor(cfg: CampaignConfig, fw: Firmware) -> Executor:
    try:
        memmap = MemoryMap(flash_writable=cfg.flash_writable, irq_enable_addr=cfg.irq_enable_addr)
        return Executor(fw.image, pip=cfg.pip, fec=cfg.fec, irq_interval=cfg.irq_interval,
                        instr_budget=cfg.instr_budget, passthrough=cfg.passthrough,
                        disable_cond3=cfg.disable_cond3, disable_cond4=cfg.disable_cond4,
                        flash_writable=cfg.flash_writable, interrupts=cfg.interrupts,
                        memmap=memmap, map_size=cfg.map_size)
    except (LoadError, ValueError) as e:
        raise ConfigError(f"cannot load {fw.name}: {e}") from None


def post_init_pc(cfg: CampaignConfig, fw: Firmware) -> int | None:
    if cfg.post_init:
        return fw.resolve(cfg.post_init)
    return fw.symbols.get("post_init")


def make_fuzzer(cfg: CampaignConfig, fw: Firmware, executor: Executor, **hooks) -> Fuzzer:
    pcs = {fw.resolve(ref): str(ref) for ref in cfg.snapshot_pcs}
    return Fuzzer(executor, seed=cfg.seed, seed_len=cfg.seed_len, exec_budget=cfg.exec_budget or 1 << 62,
                  time_budget=cfg.time_budget or None, stats_interval=cfg.stats_interval,
                  clock=cfg.clock, epoch=cfg.epoch, cpu_hz=cfg.cpu_hz, max_len=cfg.max_len,
                  deterministic_stages=cfg.deterministic, snapshot_pcs=pcs,
                  stop_on_crash=cfg.stop_on_crash, **hooks)


def summarize(stats: CampaignStats, cfg: CampaignConfig, fw: Firmware) -> dict:
    post = post_init_pc(cfg, fw)
    return {
        "firmware": fw.name,
        "execs": stats.execs,
        "blocks_covered": stats.blocks_covered,
        "edges_covered": stats.edges_covered,
        "queue_len": stats.queue_len,
        "crashes_unique": stats.crashes_unique,
        "snapshots": stats.snapshots,
        "post_init_pc": post,
        "post_init_reached": post in stats.blocks if post is not None else None,
        "post_init_first_exec": stats.block_first_seen.get(post) if post is not None else None,
        "crashes": [{"kind": c.kind, "pc": c.pc, "in_interrupt": c.in_interrupt,
                     "symbol": fw.symbol_at(c.pc), "file": c.name, "found_at": c.found_at}
                    for c in stats.crashes],
    }


class Campaign:
    """One fuzzing campaign writing its artifacts to ``out``."""

    def __init__(self, cfg: CampaignConfig, out: Path | None = None):
        self.cfg = cfg
        self.out = Path(out) if out is not None else cfg.resolved_output_dir()
        self.fw = load_firmware(cfg.firmware, cfg.base_dir)
        self.executor = build_executor(cfg, self.fw)

    def _prepare_dir(self) -> None:
        try:
            for sub in ("queue", "crashes"):
                d = self.out / sub
                if d.exists():
                    shutil.rmtree(d)
                d.mkdir(parents=True)
        except OSError as e:
            raise CampaignError(f"cannot create {self.out}: {e.strerror}") from None

    def run(self) -> dict:
        self._prepare_dir()
        out = self.out
        ex = self.executor
        fuzzer = None

        def on_entry(entry):
            (out / "queue" / entry.name).write_bytes(entry.data)

        def on_crash(report):
            # prepend the bytes the snapshot already consumed so the file replays from boot
            data = report.input
            if report.snapshot_id:
                data = fuzzer.snapshot_prefix(report.snapshot_id) + data
            (out / "crashes" / report.name).write_bytes(data)

        stats_file = open(out / "stats.csv", "w", newline="")
        writer = csv.writer(stats_file, lineterminator="\n")
        writer.writerow(StatsRow.FIELDS)

        def on_row(row):
            writer.writerow(row.as_list())
            stats_file.flush()

        fuzzer = make_fuzzer(self.cfg, self.fw, ex, on_row=on_row, on_entry=on_entry,
                             on_crash=on_crash)
        started = time.time()
        try:
            stats = fuzzer.run()
        finally:
            stats_file.close()
        summary = summarize(stats, self.cfg, self.fw)
        summary["wall_seconds"] = round(time.time() - started, 3)
        summary["config"] = {k: v for k, v in asdict(self.cfg).items() if k != "base_dir"}
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        lines = []
        for pc in sorted(stats.blocks):
            sym = self.fw.symbol_at(pc)
            lines.append(f"0x{pc:08x} {sym}\n" if sym else f"0x{pc:08x}\n")
        (out / "coverage.txt").write_text("".join(lines))
        self.stats = stats
        return summary


def read_stats(path: str | Path) -> list[dict]:
    """Parse a stats.csv back into typed rows."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{"unix_time": float(r["unix_time"]), **{k: int(r[k]) for k in StatsRow.FIELDS[1:]}}
            for r in rows]
