"""Coverage-guided fuzz loop with snapshot starts and crash triage."""

from __future__ import annotations

import enum
import random
import time
from dataclasses import dataclass, field
from typing import Callable

from ..coverage import Novelty, VirginMap
from .executor import ExecResult, Executor, Outcome
from .mutate import MAX_LEN, deterministic, mutate

DEFAULT_SEED_LEN = 512
SPLICE_PROB = 0.125
SKIP_NONFAVORED_PROB = 0.75


class Reason(str, enum.Enum):
    SEED = "Seed"
    NEW_EDGE = "NewEdge"
    NEW_BUCKET = "NewBucket"


class NondeterminismError(RuntimeError):
    pass


@dataclass(eq=False)
class QueueEntry:
    id: int
    data: bytes
    snapshot_id: int
    reason: Reason
    exec_count: int = 0
    favored: bool = False
    found_at: int = 0
    outcome: Outcome | None = None
    det_stage: object = field(default=None, repr=False)

    @property
    def name(self) -> str:
        return f"id{self.id:06d}_snap{self.snapshot_id}_{self.reason.value}"


@dataclass
class CrashReport:
    kind: str
    pc: int
    in_interrupt: bool
    input: bytes
    snapshot_id: int
    found_at: int = 0

    @property
    def key(self) -> tuple:
        return (self.kind, self.pc, self.in_interrupt)

    @property
    def name(self) -> str:
        ctx = "irq" if self.in_interrupt else "prog"
        return f"{self.kind}_pc{self.pc:08x}_{ctx}"


@dataclass(frozen=True)
class StatsRow:
    unix_time: float
    execs: int
    blocks_covered: int
    edges_covered: int
    queue_len: int
    crashes_unique: int

    FIELDS = ("unix_time", "execs", "blocks_covered", "edges_covered", "queue_len", "crashes_unique")

    def as_list(self) -> list[str]:
        return [f"{self.unix_time:.3f}", str(self.execs), str(self.blocks_covered),
                str(self.edges_covered), str(self.queue_len), str(self.crashes_unique)]


@dataclass
class CampaignStats:
    execs: int
    blocks_covered: int
    edges_covered: int
    queue_len: int
    crashes_unique: int
    rows: list[StatsRow]
    blocks: set[int]
    block_first_seen: dict[int, int]
    queue: list[QueueEntry]
    crashes: list[CrashReport]
    snapshots: int
    elapsed: float


def triage(result: ExecResult, data: bytes, seen: dict, snapshot_id: int = 0,
           found_at: int = 0) -> CrashReport | None:
    """Report a crash unless its (kind, pc, interrupt flag) key is already in ``seen``."""
    if not result.is_crash:
        raise ValueError("triage needs a crashing execution")
    report = CrashReport(result.crash_kind.value, result.crash_pc, bool(result.crash_in_interrupt),
                         bytes(data), snapshot_id, found_at)
    if report.key in seen:
        return None
    seen[report.key] = report
    return report


class Fuzzer:
    def __init__(self, executor: Executor, *, seed: int = 0, seed_len: int = DEFAULT_SEED_LEN,
                 seeds: list[bytes] | None = None, exec_budget: int = 10_000,
                 time_budget: float | None = None, stats_interval: int = 1000,
                 clock: str = "wall", epoch: float = 0.0, cpu_hz: int = 16_000_000,
                 max_len: int = MAX_LEN, deterministic_stages: bool = False,
                 snapshot_pcs: dict[int, str] | None = None, stop_on_crash: bool = False,
                 on_row: Callable | None = None, on_entry: Callable | None = None,
                 on_crash: Callable | None = None):
        if clock not in ("wall", "emulated"):
            raise ValueError(f"unknown clock {clock!r}")
        self.executor = executor
        self.rng = random.Random(seed)
        self.seed_len = seed_len
        self.seeds = seeds
        self.exec_budget = exec_budget
        self.time_budget = time_budget
        self.stats_interval = max(1, stats_interval)
        self.clock = clock
        self.epoch = epoch
        self.cpu_hz = cpu_hz
        self.max_len = max_len
        self.deterministic_stages = deterministic_stages
        self.snapshot_pcs = dict(snapshot_pcs or {})
        self.stop_on_crash = stop_on_crash
        self.on_row = on_row
        self.on_entry = on_entry
        self.on_crash = on_crash

        self.virgin = VirginMap(executor.coverage.size)
        self.queue: list[QueueEntry] = []
        self.queues: list[list[QueueEntry]] = []
        self.cursors: list[int] = []
        self.top_rated: dict[int, QueueEntry] = {}
        self.crash_seen: dict[tuple, CrashReport] = {}
        self.blocks: set[int] = set()
        self.block_first_seen: dict[int, int] = {}
        self.rows: list[StatsRow] = []
        self.execs = 0
        self.instructions = 0
        self.calibration_seed = b""

    # -- bookkeeping ------------------------------------------------------

    def _now(self) -> float:
        if self.clock == "emulated":
            return self.epoch + self.instructions / self.cpu_hz
        return time.time()

    def _row(self) -> None:
        row = StatsRow(self._now(), self.execs, len(self.blocks), self.virgin.edges_seen(),
                       len(self.queue), len(self.crash_seen))
        if self.rows and self.rows[-1].execs == row.execs:
            return
        self.rows.append(row)
        if self.on_row:
            self.on_row(row)

    def _note_blocks(self, res: ExecResult) -> None:
        new = res.blocks - self.blocks
        if new:
            for b in new:
                self.block_first_seen[b] = self.execs
            self.blocks |= new

    def _admit(self, data: bytes, snapshot_id: int, reason: Reason, res: ExecResult) -> QueueEntry:
        entry = QueueEntry(len(self.queue), bytes(data), snapshot_id, reason,
                           found_at=self.execs, outcome=res.outcome)
        if self.deterministic_stages:
            entry.det_stage = deterministic(entry.data)
        self.queue.append(entry)
        self.queues[snapshot_id].append(entry)
        changed = False
        for idx in res.coverage.touched:
            cur = self.top_rated.get(idx)
            if cur is None or len(entry.data) < len(cur.data):
                self.top_rated[idx] = entry
                changed = True
        if changed:
            fav = {id(e) for e in self.top_rated.values()}
            for e in self.queue:
                e.favored = id(e) in fav
        if self.on_entry:
            self.on_entry(entry)
        return entry

    def _check_determinism(self, data: bytes, snapshot_id: int, res: ExecResult) -> None:
        again = self.executor.execute(data, snapshot_id)
        if again.outcome != res.outcome or again.coverage != res.coverage:
            raise NondeterminismError(
                f"input of {len(data)} bytes diverged on re-execution "
                f"({res.outcome.value} vs {again.outcome.value})")

    def triage(self, res: ExecResult, data: bytes, snapshot_id: int = 0) -> CrashReport | None:
        report = triage(res, data, self.crash_seen, snapshot_id, self.execs)
        if report is not None and self.on_crash:
            self.on_crash(report)
        return report

    def _process(self, data: bytes, snapshot_id: int, res: ExecResult, seed: bool = False) -> None:
        self.instructions += res.instructions
        self._note_blocks(res)
        if res.is_crash:
            self.triage(res, data, snapshot_id)
            if not seed:
                return
        if res.outcome is Outcome.BUDGET_EXCEEDED and not seed:
            return
        novelty = self.virgin.classify(res.coverage)
        if seed:
            self._admit(data, snapshot_id, Reason.SEED, res)
        elif novelty is not Novelty.NONE:
            self._check_determinism(data, snapshot_id, res)
            reason = Reason.NEW_EDGE if novelty is Novelty.NEW_EDGE else Reason.NEW_BUCKET
            self._admit(data, snapshot_id, reason, res)

    def _next_entry(self, snapshot_id: int) -> QueueEntry:
        q = self.queues[snapshot_id]
        any_fav = any(e.favored for e in q)
        while True:
            cur = self.cursors[snapshot_id] = (self.cursors[snapshot_id] + 1) % len(q)
            entry = q[cur]
            if entry.favored or not any_fav or self.rng.random() >= SKIP_NONFAVORED_PROB:
                return entry

    def _mutant(self, entry: QueueEntry) -> bytes:
        if entry.det_stage is not None:
            nxt = next(entry.det_stage, None)
            if nxt is not None:
                return nxt
            entry.det_stage = None
        q = self.queues[entry.snapshot_id]
        if len(q) > 1 and self.rng.random() < SPLICE_PROB:
            other = q[self.rng.randrange(len(q))]
            if other is not entry:
                return mutate(entry.data, self.rng, "splice", other.data, max_len=self.max_len)
        return mutate(entry.data, self.rng, "havoc", max_len=self.max_len)

    def snapshot_prefix(self, snapshot_id: int) -> bytes:
        """Input bytes consumed from boot to reach snapshot ``snapshot_id``."""
        return self.calibration_seed[:self.executor.snapshots[snapshot_id].input_offset]

    # -- main loop --------------------------------------------------------

    def run(self) -> CampaignStats:
        start = time.monotonic()
        ex = self.executor
        seeds = self.seeds or [self.rng.randbytes(self.seed_len)]
        self.calibration_seed = seeds[0]
        if self.snapshot_pcs:
            ex.calibrate_snapshots(seeds[0], self.snapshot_pcs)
        n_snap = len(ex.snapshots)
        self.queues = [[] for _ in range(n_snap)]
        self.cursors = [-1] * n_snap
        for sid in range(n_snap):
            for s in seeds:
                data = ex.snapshot_seed(s, sid) or s
                self._process(data, sid, ex.execute(data, sid), seed=True)
        self._row()

        rng = self.rng
        deadline = None if not self.time_budget else start + self.time_budget
        while self.execs < self.exec_budget:
            if deadline is not None and time.monotonic() >= deadline:
                break
            if self.stop_on_crash and self.crash_seen:
                break
            sid = rng.randrange(n_snap)
            entry = self._next_entry(sid)
            data = self._mutant(entry)
            entry.exec_count += 1
            res = ex.execute(data, sid)
            self.execs += 1
            self._process(data, sid, res)
            if self.execs % self.stats_interval == 0:
                self._row()
        self._row()
        return CampaignStats(
            execs=self.execs, blocks_covered=len(self.blocks),
            edges_covered=self.virgin.edges_seen(), queue_len=len(self.queue),
            crashes_unique=len(self.crash_seen), rows=list(self.rows), blocks=set(self.blocks),
            block_first_seen=dict(self.block_first_seen), queue=list(self.queue),
            crashes=list(self.crash_seen.values()), snapshots=n_snap,
            elapsed=time.monotonic() - start)
