"""Running one test case through the emulated firmware.

An execution starts from a snapshot (snapshot 0 is the freshly booted
image), feeds peripheral reads from the test case and stops on the first of:

* a peripheral read with the input exhausted (graceful),
* an unmapped access or permission violation (crash),
* a jump to itself (graceful; can be disabled),
* the instruction budget running out, or a sleep nothing can wake (hang).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from ..coverage import CoverageContext, EdgeMap, Mode, MAP_SIZE
from ..irq import DEFAULT_INTERVAL, IrqController
from ..mmio import InputExhausted, MmioManager, PeripheralStore
from ..vm import (
    EV_BOUNDARY, EV_FAULT, EV_LIMIT, EV_SELFJUMP, EV_SLEEP, NUM_VECTORS,
    FaultKind, Machine, MemoryMap, VmState, enter_interrupt, load_image,
)

DEFAULT_INSTR_BUDGET = 5_000_000


class Outcome(str, enum.Enum):
    INPUT_EXHAUSTED = "InputExhausted"
    CRASH = "Crash"
    SELF_JUMP_EXIT = "SelfJumpExit"
    BUDGET_EXCEEDED = "BudgetExceeded"


@dataclass
class ExecResult:
    outcome: Outcome
    coverage: EdgeMap
    blocks_executed: int
    bytes_consumed: int
    instructions: int
    blocks: set[int] = field(default_factory=set)
    crash_kind: FaultKind | None = None
    crash_pc: int | None = None
    crash_addr: int | None = None
    crash_in_interrupt: bool | None = None
    hang_reason: str | None = None

    @property
    def is_crash(self) -> bool:
        return self.outcome is Outcome.CRASH

    @property
    def dedup_key(self) -> tuple | None:
        if not self.is_crash:
            return None
        return (self.crash_kind.value, self.crash_pc, self.crash_in_interrupt)

    def describe(self) -> str:
        if self.is_crash:
            ctx = "interrupt" if self.crash_in_interrupt else "program"
            return (f"Crash({self.crash_kind.value}) at pc=0x{self.crash_pc:08x} "
                    f"addr=0x{self.crash_addr:08x} [{ctx}]")
        if self.hang_reason:
            return f"{self.outcome.value} ({self.hang_reason})"
        return self.outcome.value


@dataclass
class Snapshot:
    vm: VmState
    peripheral_store: PeripheralStore
    input_offset: int
    irq_state: IrqController
    coverage_state: tuple
    label: str = "boot"

    @property
    def pc(self) -> int:
        return self.vm.pc

    def copy(self) -> Snapshot:
        return Snapshot(self.vm.copy(), self.peripheral_store.copy(), self.input_offset,
                        self.irq_state.copy(), self.coverage_state, self.label)


@dataclass
class TraceEntry:
    kind: str  # "block", "irq", "sleep"
    pc: int
    in_interrupt: bool
    vector: int | None = None
    mmio: list = field(default_factory=list)


class Executor:
    """Executes inputs against one firmware image with fixed settings."""

    def __init__(self, image: bytes, *, pip: bool = True, fec: bool = True,
                 irq_interval: int = DEFAULT_INTERVAL, instr_budget: int = DEFAULT_INSTR_BUDGET,
                 passthrough=(), disable_cond3: bool = False, disable_cond4: bool = False,
                 flash_writable: bool = False, interrupts: bool = True,
                 memmap: MemoryMap | None = None, map_size: int = MAP_SIZE):
        if instr_budget <= 0:
            raise ValueError("instruction budget must be positive")
        memmap = memmap or MemoryMap()
        if flash_writable != memmap.flash_writable:
            memmap = MemoryMap(memmap.flash_base, memmap.flash_size, memmap.ram_base,
                               memmap.ram_size, flash_writable, memmap.irq_enable_addr)
        self.memmap = memmap
        self.pip = pip
        self.mode = Mode.FEC if fec else Mode.BASELINE
        self.instr_budget = instr_budget
        self.disable_cond4 = disable_cond4
        boot_vm = load_image(image, memmap)
        installed = sum(1 << n for n in range(NUM_VECTORS) if boot_vm.vector(n))
        boot_irq = IrqController(interval=irq_interval, disabled=not interrupts,
                                 installed=installed)
        self.ctx = CoverageContext(self.mode)
        self.coverage = EdgeMap(map_size)
        self.bus = MmioManager(PeripheralStore(passthrough=frozenset(passthrough)), pip=pip,
                               irq=boot_irq, irq_enable_addr=memmap.irq_enable_addr)
        self.machine = Machine(boot_vm.copy(), self.bus, permission_faults=not disable_cond3)
        self.snapshots: list[Snapshot] = [
            Snapshot(boot_vm, self.bus.store.copy(), 0, boot_irq, self.ctx.save(), "boot")
        ]

    def execute(self, data: bytes, snapshot_id: int = 0, *, trace: list | None = None,
                force_irq: dict[int, int] | None = None,
                capture: dict[int, str] | None = None) -> ExecResult:
        """Run ``data`` from snapshot ``snapshot_id``.

        ``force_irq`` maps an ordinal of program-context block boundaries
        (1-based) to a vector fired at that boundary regardless of the
        periodic schedule. ``capture`` maps pcs to labels; the first time a
        listed pc starts a block a snapshot is appended and the pc dropped
        from the mapping.
        """
        snap = self.snapshots[snapshot_id]
        st = snap.vm.copy()
        m = self.machine
        m.load_state(st)
        bus = self.bus
        bus.store = snap.peripheral_store.copy()
        bus.start(data)
        irq = snap.irq_state.copy()
        bus.irq = irq
        bus.events = [] if trace is not None else None
        ctx = self.ctx
        ctx.restore(snap.coverage_state)
        emap = EdgeMap(self.coverage.size)
        self.coverage = emap
        record = ctx.record_block
        on_block = irq.on_block
        seen: set[int] = set()
        start_count = st.instr_count
        budget = self.instr_budget
        blocks = 0
        prog_blocks = 0
        result = None

        try:
            while True:
                # block boundary: capture, interrupt delivery, coverage
                pc = st.pc
                if capture and pc in capture:
                    self.snapshots.append(Snapshot(
                        st.copy(), bus.store.copy(), bus.cursor.offset, irq.copy(),
                        ctx.save(), capture.pop(pc)))
                vec = on_block(st.in_interrupt)
                if not st.in_interrupt:
                    prog_blocks += 1
                    if force_irq and prog_blocks in force_irq:
                        vec = force_irq[prog_blocks]
                if trace is not None:
                    self._flush(trace)
                    trace.append(TraceEntry("block", pc, st.in_interrupt))
                if vec is not None and enter_interrupt(st, vec):
                    if trace is not None:
                        trace[-1].kind = "irq"
                        trace[-1].vector = vec
                        trace[-1].pc = st.pc
                        trace[-1].in_interrupt = True
                    pc = st.pc
                record(emap, pc, st.in_interrupt)
                blocks += 1
                seen.add(pc)

                while True:
                    remaining = budget - (st.instr_count - start_count)
                    ev = m.run(remaining) if remaining > 0 else EV_LIMIT
                    if ev == EV_BOUNDARY:
                        break
                    if ev == EV_SELFJUMP:
                        if self.disable_cond4:
                            break
                        result = Outcome.SELF_JUMP_EXIT
                    elif ev == EV_SLEEP:
                        if trace is not None:
                            self._flush(trace)
                            trace.append(TraceEntry("sleep", st.pc - 4, st.in_interrupt))
                        wake = irq.on_sleep(st.in_interrupt)
                        if wake is not None and enter_interrupt(st, wake):
                            if trace is not None:
                                trace.append(TraceEntry("irq", st.pc, True, vector=wake))
                            record(emap, st.pc, True)
                            blocks += 1
                            seen.add(st.pc)
                            continue
                        return self._finish(Outcome.BUDGET_EXCEEDED, emap, blocks, seen, st,
                                            start_count, hang_reason="sleep with no wake source")
                    elif ev == EV_FAULT:
                        kind, addr, fpc = m.fault
                        return self._finish(Outcome.CRASH, emap, blocks, seen, st, start_count,
                                            crash=(kind, fpc, addr, st.in_interrupt))
                    else:
                        return self._finish(Outcome.BUDGET_EXCEEDED, emap, blocks, seen, st,
                                            start_count, hang_reason="instruction budget")
                    if result is not None:
                        return self._finish(result, emap, blocks, seen, st, start_count)
        except InputExhausted:
            return self._finish(Outcome.INPUT_EXHAUSTED, emap, blocks, seen, st, start_count)
        finally:
            if trace is not None:
                self._flush(trace)
            bus.events = None

    def _flush(self, trace):
        if trace and self.bus.events:
            trace[-1].mmio.extend(self.bus.events)
        self.bus.events = []

    def _finish(self, outcome, emap, blocks, seen, st, start_count, crash=None, hang_reason=None):
        res = ExecResult(outcome, emap, blocks, self.bus.cursor.offset,
                         st.instr_count - start_count, seen, hang_reason=hang_reason)
        if crash is not None:
            res.crash_kind, res.crash_pc, res.crash_addr, res.crash_in_interrupt = crash
        return res

    def calibrate_snapshots(self, seed_input: bytes, pcs: dict[int, str] | list[int]) -> list[Snapshot]:
        """Run the seed once from boot, snapshotting the first arrival at each pc.

        Returns the full snapshot list; snapshot 0 is always the boot state.
        """
        if not isinstance(pcs, dict):
            pcs = {pc: f"0x{pc:08x}" for pc in pcs}
        del self.snapshots[1:]
        if pcs:
            self.execute(seed_input, 0, capture=dict(pcs))
        return self.snapshots

    def snapshot_seed(self, seed_input: bytes, snapshot_id: int) -> bytes:
        return seed_input[self.snapshots[snapshot_id].input_offset:]
