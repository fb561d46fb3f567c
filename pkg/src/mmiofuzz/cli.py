"""Fuzz MMIO-driven firmware on the emulated microcontroller.

Exit codes: 0 on success, 2 for bad arguments, configs or unreadable
files, 3 when a campaign fails while running.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .ablation import run_ablation, write_report
from .campaign import Campaign, CampaignError, build_executor, load_firmware, read_stats
from .config import CampaignConfig, ConfigError, load_config
from .engine.fuzzer import NondeterminismError
from .firmware import AsmError, assemble

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CAMPAIGN = 3


def _err(msg: str) -> None:
    print(f"mmiofuzz: {msg}", file=sys.stderr)


def cmd_assemble(args) -> int:
    src = Path(args.source)
    try:
        prog = assemble(src.read_text())
    except OSError as e:
        raise ConfigError(f"cannot read {src}: {e.strerror}") from None
    except AsmError as e:
        raise ConfigError(f"{src}: {e}") from None
    out = Path(args.output) if args.output else src.with_suffix(".bin")
    out.write_bytes(prog.image)
    print(f"wrote {out} ({len(prog.image)} bytes, {len(prog.symbols)} symbols)")
    if args.symbols:
        for name, addr in sorted(prog.symbols.items(), key=lambda kv: kv[1]):
            print(f"0x{addr:08x} {name}")
    return EXIT_OK


def _run_config(args) -> CampaignConfig:
    if args.config:
        cfg = load_config(args.config)
        cfg.firmware = args.image
        cfg.base_dir = "."
    else:
        cfg = CampaignConfig(firmware=args.image)
    if args.no_pip:
        cfg.pip = False
    if args.baseline_coverage:
        cfg.fec = False
    if args.irq_interval is not None:
        cfg.irq_interval = args.irq_interval
    if args.instr_budget is not None:
        cfg.instr_budget = args.instr_budget
    cfg.disable_cond3 = cfg.disable_cond3 or args.disable_cond3
    cfg.disable_cond4 = cfg.disable_cond4 or args.disable_cond4
    cfg.flash_writable = cfg.flash_writable or args.flash_writable
    cfg.validate()
    return cfg


def _fmt_mmio(events) -> str:
    return " ".join(f"{d}[0x{a:08x}/{w}]=0x{v:x}" for d, a, w, v in events)


def cmd_run(args) -> int:
    cfg = _run_config(args)
    fw = load_firmware(cfg.firmware)
    try:
        data = Path(args.input).read_bytes()
    except OSError as e:
        raise ConfigError(f"cannot read input {args.input}: {e.strerror}") from None
    ex = build_executor(cfg, fw)
    trace = [] if args.trace else None
    res = ex.execute(data, trace=trace)
    if trace is not None:
        for t in trace:
            sym = fw.symbol_at(t.pc) or ""
            ctx = "irq " if t.in_interrupt else "prog"
            extra = f" vector={t.vector}" if t.vector is not None else ""
            line = f"{t.kind:<5} 0x{t.pc:08x} {ctx} {sym}{extra}"
            if t.mmio:
                line += "  " + _fmt_mmio(t.mmio)
            print(line.rstrip())
    print(f"result: {res.describe()}")
    if res.is_crash:
        sym = fw.symbol_at(res.crash_pc)
        print(f"crash key: {res.crash_kind.value} pc=0x{res.crash_pc:08x}"
              f" {'irq' if res.crash_in_interrupt else 'prog'}" + (f" ({sym})" if sym else ""))
    print(f"blocks executed: {res.blocks_executed}")
    print(f"bytes consumed: {res.bytes_consumed}/{len(data)}")
    print(f"instructions: {res.instructions}")
    print(f"edges: {len(res.coverage.touched)}")
    return EXIT_OK


def cmd_fuzz(args) -> int:
    cfg = load_config(args.config)
    campaign = Campaign(cfg, Path(args.out) if args.out else None)
    summary = campaign.run()
    print(f"campaign written to {campaign.out}")
    _print_summary(summary)
    return EXIT_OK


def _print_summary(summary: dict) -> None:
    for key in ("firmware", "execs", "blocks_covered", "edges_covered", "queue_len",
                "crashes_unique", "post_init_reached", "post_init_first_exec"):
        if key in summary and summary[key] is not None:
            print(f"{key}: {summary[key]}")
    for c in summary.get("crashes", []):
        where = f" ({c['symbol']})" if c.get("symbol") else ""
        print(f"crash: {c['kind']} pc=0x{c['pc']:08x}{where}"
              f" {'irq' if c['in_interrupt'] else 'prog'} -> crashes/{c['file']}")


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    if args.exec_budget is not None:
        cfg.exec_budget = args.exec_budget

    def progress(res):
        if not args.quiet:
            print(f"  {res.arm:<9} trial {res.trial}: blocks={res.blocks_covered} "
                  f"queue={res.queue_len} post_init={res.post_init_reached} "
                  f"({res.seconds:.1f}s)", file=sys.stderr, flush=True)

    report = run_ablation(cfg, args.trials, progress)
    out = Path(args.out) if args.out else cfg.resolved_output_dir()
    write_report(report, out)
    print(report.format(), end="")
    return EXIT_OK


def cmd_stats(args) -> int:
    d = Path(args.campaign_dir)
    try:
        rows = read_stats(d / "stats.csv")
        summary = json.loads((d / "summary.json").read_text())
    except (OSError, ValueError, KeyError) as e:
        raise ConfigError(f"cannot read campaign in {d}: {e}") from None
    _print_summary(summary)
    print(f"stats rows: {len(rows)}")
    if rows:
        last = rows[-1]
        print("last row: " + ", ".join(f"{k}={v}" for k, v in last.items()))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mmiofuzz", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("assemble", help="assemble a source file into a flash image")
    a.add_argument("source")
    a.add_argument("-o", "--output")
    a.add_argument("--symbols", action="store_true", help="print the symbol table")
    a.set_defaults(func=cmd_assemble)

    r = sub.add_parser("run", help="execute one input, optionally with a block trace")
    r.add_argument("image", help="image (.bin), source (.s) or corpus:<name>")
    r.add_argument("input")
    r.add_argument("--trace", action="store_true")
    r.add_argument("--config", help="take execution settings from a campaign config")
    r.add_argument("--no-pip", action="store_true", help="raw reads, no playback control words")
    r.add_argument("--baseline-coverage", action="store_true", help="single-context edges")
    r.add_argument("--irq-interval", type=int)
    r.add_argument("--instr-budget", type=int)
    r.add_argument("--disable-cond3", action="store_true")
    r.add_argument("--disable-cond4", action="store_true")
    r.add_argument("--flash-writable", action="store_true")
    r.set_defaults(func=cmd_run)

    f = sub.add_parser("fuzz", help="run a fuzzing campaign")
    f.add_argument("config")
    f.add_argument("--out", help="output directory (overrides config and environment)")
    f.set_defaults(func=cmd_fuzz)

    b = sub.add_parser("ablate", help="Baseline / +PIP / +PIP+FEC comparison")
    b.add_argument("config")
    b.add_argument("--trials", type=int, default=5)
    b.add_argument("--exec-budget", type=int)
    b.add_argument("--out")
    b.add_argument("--quiet", action="store_true")
    b.set_defaults(func=cmd_ablate)

    s = sub.add_parser("stats", help="summarize a campaign directory")
    s.add_argument("campaign_dir")
    s.set_defaults(func=cmd_stats)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        _err(str(e))
        return EXIT_CONFIG
    except (CampaignError, NondeterminismError, OSError) as e:
        _err(str(e))
        return EXIT_CAMPAIGN


if __name__ == "__main__":
    sys.exit(main())
