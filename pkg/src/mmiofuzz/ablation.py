"""Sequential technique ablation: Baseline, +PIP, +PIP+FEC.

Each trial runs the three arms with the same rng seed (``seed + trial``),
so arms are paired. The report gives per-arm medians of blocks covered and
queue length, the queue reduction of +PIP+FEC against +PIP, and how many
trials reached the post-initialization block.
"""

from __future__ import annotations

import json
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

from .campaign import Firmware, build_executor, load_firmware, make_fuzzer, post_init_pc
from .config import CampaignConfig, ConfigError

ARMS = (("Baseline", False, False), ("+PIP", True, False), ("+PIP+FEC", True, True))
SIGNIFICANCE_NOTE = ("No significance test (e.g. Mann-Whitney U) is reported: "
                     "with this few trials per arm it would not be meaningful.")


@dataclass
class TrialResult:
    arm: str
    trial: int
    seed: int
    blocks_covered: int
    queue_len: int
    edges_covered: int
    crashes_unique: int
    execs: int
    post_init_reached: bool | None
    post_init_first_exec: int | None
    seconds: float


@dataclass
class ArmSummary:
    arm: str
    median_blocks: float
    median_queue: float
    post_init_hits: int | None
    trials: list[TrialResult] = field(default_factory=list)


@dataclass
class AblationReport:
    firmware: str
    trials: int
    exec_budget: int
    arms: list[ArmSummary]
    queue_reduction_pct: float | None

    def arm(self, name: str) -> ArmSummary:
        for a in self.arms:
            if a.arm == name:
                return a
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "firmware": self.firmware, "trials": self.trials, "exec_budget": self.exec_budget,
            "queue_reduction_pct": self.queue_reduction_pct, "note": SIGNIFICANCE_NOTE,
            "arms": [{"arm": a.arm, "median_blocks": a.median_blocks,
                      "median_queue": a.median_queue, "post_init_hits": a.post_init_hits,
                      "trials": [t.__dict__ for t in a.trials]} for a in self.arms],
        }

    def format(self) -> str:
        lines = [f"ablation on {self.firmware}: {self.trials} trials, "
                 f"{self.exec_budget} execs per campaign", ""]
        lines.append(f"{'arm':<10} {'median blocks':>14} {'median queue':>13} {'post-init':>10}")
        for a in self.arms:
            hits = "-" if a.post_init_hits is None else f"{a.post_init_hits}/{self.trials}"
            lines.append(f"{a.arm:<10} {a.median_blocks:>14g} {a.median_queue:>13g} {hits:>10}")
        lines.append("")
        if self.queue_reduction_pct is None:
            lines.append("queue reduction +PIP -> +PIP+FEC: n/a")
        else:
            lines.append(f"queue reduction +PIP -> +PIP+FEC: {self.queue_reduction_pct:.1f}%")
        lines.append(SIGNIFICANCE_NOTE)
        return "\n".join(lines) + "\n"


def run_trial(cfg: CampaignConfig, fw: Firmware, arm: str, trial: int) -> TrialResult:
    ex = build_executor(cfg, fw)
    fuzzer = make_fuzzer(cfg, fw, ex)
    t0 = time.monotonic()
    stats = fuzzer.run()
    post = post_init_pc(cfg, fw)
    return TrialResult(arm, trial, cfg.seed, stats.blocks_covered, stats.queue_len,
                       stats.edges_covered, stats.crashes_unique, stats.execs,
                       None if post is None else post in stats.blocks,
                       None if post is None else stats.block_first_seen.get(post),
                       round(time.monotonic() - t0, 3))


def run_ablation(cfg: CampaignConfig, trials: int, progress=None) -> AblationReport:
    if trials < 3 or trials % 2 == 0:
        raise ConfigError("ablation needs an odd number of trials, at least 3")
    fw = load_firmware(cfg.firmware, cfg.base_dir)
    summaries = []
    for arm, pip, fec in ARMS:
        results = []
        for t in range(trials):
            arm_cfg = cfg.replace(pip=pip, fec=fec, seed=cfg.seed + t)
            res = run_trial(arm_cfg, fw, arm, t)
            if progress:
                progress(res)
            results.append(res)
        hits = None
        if results and results[0].post_init_reached is not None:
            hits = sum(bool(r.post_init_reached) for r in results)
        summaries.append(ArmSummary(
            arm, statistics.median(r.blocks_covered for r in results),
            statistics.median(r.queue_len for r in results), hits, results))
    pip_q = summaries[1].median_queue
    reduction = None if not pip_q else 100.0 * (pip_q - summaries[2].median_queue) / pip_q
    return AblationReport(fw.name, trials, cfg.exec_budget, summaries, reduction)


def write_report(report: AblationReport, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    (out / "ablation.txt").write_text(report.format())
