from .executor import ExecResult, Executor, Outcome, Snapshot, TraceEntry
from .fuzzer import CampaignStats, CrashReport, Fuzzer, QueueEntry, Reason, StatsRow, triage
from .mutate import INTERESTING, deterministic, havoc, mutate, splice

__all__ = ["ExecResult", "Executor", "Outcome", "Snapshot", "TraceEntry",
           "CampaignStats", "CrashReport", "Fuzzer", "QueueEntry", "Reason", "StatsRow", "triage",
           "INTERESTING", "deterministic", "havoc", "mutate", "splice"]
