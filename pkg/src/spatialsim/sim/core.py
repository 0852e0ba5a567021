"""Synchronous cycle-level simulation of the PE array.

Every component updates once per clock: due NoC deliveries land, pipelined
MAC results retire, feeders push new values (bus-width lanes per cycle,
bank-port limited), each PE issues at most one micro-op, and the output
network commits results. All state transitions are deterministic: two runs
with identical inputs produce identical results and counters.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from ..noc import NocConfig
from ..program import (
    OP_IDLE,
    OP_LOAD_IN,
    OP_LOAD_W,
    OP_MAC,
    OP_NAMES,
    OP_PASS_UP,
    OP_WRITE_OUT,
    PEProgram,
)


class SimFault(RuntimeError):
    """Structural hazard or deadlock; carries cycle and blame detail."""


@dataclass
class ArrayConfig:
    """Physical array parameters (defaults: the evaluated base accelerator)."""

    rows: int = 13
    cols: int = 15
    clock_mhz: float = 200.0
    rf_ifmap: int = 75
    rf_filter: int = 224
    rf_psum: int = 24
    queue_depth: int = 8
    mult_stages: int = 2
    add_stages: int = 1
    clock_gating: bool = True
    quantize_16bit: bool = False
    gb_banks: int = 27
    gb_capacity_bytes: int = 108 * 1024
    noc: NocConfig = field(default_factory=NocConfig)

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("array dims must be >= 1")
        if isinstance(self.noc, dict):
            self.noc = NocConfig(**self.noc)

    @property
    def pipeline_latency(self) -> int:
        return self.mult_stages + self.add_stages


@dataclass(frozen=True)
class BoundSend:
    """A feeder emission with its value bound: destination group members
    are absolute PE flat indices; ``bank`` >= 0 marks a buffer read on
    that bank, ``dram`` marks a DRAM-streamed value."""

    value: float
    members: tuple
    bank: int = -1
    dram: bool = False
    zero: bool = False


@dataclass
class PassResult:
    cycles: int
    committed: np.ndarray
    counters: dict
    pe_busy: dict
    pe_gated: dict
    pe_stalled: dict
    active_pes: tuple


class _PE:
    __slots__ = (
        "row", "col", "flat", "ops", "pc", "in_rf", "w_rf", "acc",
        "acc_pending", "in_q", "w_q", "out_q", "merge_buf",
        "retire", "east", "south", "north", "busy", "gated", "stalled",
        "done",
    )

    def __init__(self, row, col, flat):
        self.row = row
        self.col = col
        self.flat = flat
        self.ops = []
        self.pc = 0
        self.in_rf = []
        self.w_rf = []
        self.acc = []
        self.acc_pending = []
        self.in_q = deque()
        self.w_q = deque()
        self.out_q = deque()
        self.merge_buf = {}   # virtual merge tag -> [count, sum]
        self.retire = deque()
        self.east = None
        self.south = None
        self.north = None
        self.busy = 0
        self.gated = 0
        self.stalled = 0
        self.done = True


_MERGE_Q_LIMIT = 64


class ArraySim:
    """Executes one processing pass on the array."""

    def __init__(self, config: ArrayConfig, trace=None, debug_timestamps=False):
        self.cfg = config
        self.noc = config.noc
        self.trace = trace
        self.debug_timestamps = debug_timestamps
        self.pes = []
        for r in range(config.rows):
            for c in range(config.cols):
                self.pes.append(_PE(r, c, r * config.cols + c))
        for pe in self.pes:
            if pe.col + 1 < config.cols:
                pe.east = self.pes[pe.flat + 1]
            if pe.row + 1 < config.rows:
                pe.south = self.pes[pe.flat + config.cols]
            if pe.row > 0:
                pe.north = self.pes[pe.flat - config.cols]
        self.counters = {
            "macs": 0, "gated_macs": 0,
            "rf_in_read": 0, "rf_in_write": 0,
            "rf_w_read": 0, "rf_w_write": 0,
            "rf_psum_read": 0, "rf_psum_write": 0,
            "gb_read": 0, "gb_write": 0,
            "dram_read_values": 0, "dram_write_values": 0,
            "noc_gin_main": 0, "noc_gin_sub": 0,
            "noc_gon": 0, "noc_local": 0,
        }

    # ------------------------------------------------------------------
    # pass setup
    # ------------------------------------------------------------------

    def load_pass(
        self,
        programs: dict,
        a_sends: list,
        b_sends: list,
        out_len: int,
        west_sends: dict | None = None,
        north_sends: dict | None = None,
    ):
        """Install programs (absolute (row, col) keys) and bound feeder
        streams for one pass. Register pressure is validated here; a
        violation is a compiler bug and faults immediately."""
        cfg = self.cfg
        self.active = []
        for pe in self.pes:
            pe.ops = []
            pe.pc = 0
            pe.done = True
            pe.in_q.clear(); pe.w_q.clear(); pe.out_q.clear()
            pe.merge_buf.clear(); pe.retire.clear()
        for (r, c), prog in sorted(programs.items()):
            if not (0 <= r < cfg.rows and 0 <= c < cfg.cols):
                raise SimFault(f"program placed outside array at PE({r},{c})")
            if prog.n_in_slots > cfg.rf_ifmap:
                raise SimFault(
                    f"PE({r},{c}) needs {prog.n_in_slots} ifmap RF words, "
                    f"capacity {cfg.rf_ifmap}"
                )
            if prog.n_w_slots > cfg.rf_filter:
                raise SimFault(
                    f"PE({r},{c}) needs {prog.n_w_slots} filter RF words, "
                    f"capacity {cfg.rf_filter}"
                )
            if prog.n_acc_slots > cfg.rf_psum:
                raise SimFault(
                    f"PE({r},{c}) needs {prog.n_acc_slots} psum RF words, "
                    f"capacity {cfg.rf_psum}"
                )
            pe = self.pes[r * cfg.cols + c]
            pe.ops = prog.ops
            pe.pc = 0
            pe.done = False
            pe.in_rf = [0.0] * max(1, prog.n_in_slots)
            pe.w_rf = [0.0] * max(1, prog.n_w_slots)
            pe.acc = [0.0] * max(1, prog.n_acc_slots)
            pe.acc_pending = [0] * max(1, prog.n_acc_slots)
            self.active.append(pe)
        self.a_sends = a_sends
        self.b_sends = b_sends
        self.west_sends = west_sends or {}
        self.north_sends = north_sends or {}
        self._west_rows = sorted(self.west_sends)
        self._north_cols = sorted(self.north_sends)
        self.out = np.zeros(out_len, dtype=np.float64)
        self.expected_commits = sum(
            1 for p in programs.values() for op in p.ops if op[0] == OP_WRITE_OUT
        )

    # ------------------------------------------------------------------
    # main loop
    # ------------------------------------------------------------------

    def run(self, max_cycles: int = 50_000_000) -> PassResult:
        cfg = self.cfg
        lanes_a = self.noc.lanes(self.noc.gin_main_bits)
        lanes_b = self.noc.lanes(self.noc.gin_sub_bits)
        lanes_gon = self.noc.lanes(self.noc.gon_bits)
        qcap = cfg.queue_depth
        banks = cfg.gb_banks
        hop = self.noc.hop_latency
        ctr = self.counters

        # in-flight queues: entries (deliver_cycle, pe, value)
        pend_in: deque = deque()
        pend_w: deque = deque()
        pend_merge: deque = deque()
        pend_fwd: deque = deque()   # systolic forwards (deliver, pe, which, value)
        pend_gon: deque = deque()   # (deliver, out_index, value)
        reserved_in = [0] * len(self.pes)
        reserved_w = [0] * len(self.pes)

        ai = bi = 0
        edge_w = {r: 0 for r in self.west_sends}
        edge_n = {c: 0 for c in self.north_sends}
        committed = 0
        gon_rr = 0
        cycle = 0
        last_progress = 0
        deadlock_horizon = max(1000, qcap * cfg.rows * cfg.cols)
        active = self.active
        trace = self.trace

        while True:
            progress = False

            # --- phase 1: retire pipelined MACs, land due deliveries ---
            for pe in active:
                rq = pe.retire
                while rq and rq[0][0] <= cycle:
                    _, slot, val = rq.popleft()
                    pe.acc[slot] += val
                    pe.acc_pending[slot] -= 1
                    ctr["rf_psum_read"] += 1
                    ctr["rf_psum_write"] += 1
                    progress = True
            while pend_in and pend_in[0][0] <= cycle:
                _, pe, val = pend_in.popleft()
                pe.in_q.append(val)
                reserved_in[pe.flat] -= 1
                progress = True
            while pend_w and pend_w[0][0] <= cycle:
                _, pe, val = pend_w.popleft()
                pe.w_q.append(val)
                reserved_w[pe.flat] -= 1
                progress = True
            while pend_fwd and pend_fwd[0][0] <= cycle:
                _, pe, which, val = pend_fwd.popleft()
                if which == 0:
                    pe.in_q.append(val)
                    reserved_in[pe.flat] -= 1
                else:
                    pe.w_q.append(val)
                    reserved_w[pe.flat] -= 1
                progress = True
            while pend_merge and pend_merge[0][0] <= cycle:
                _, pe, vid, val = pend_merge.popleft()
                entry = pe.merge_buf.get(vid)
                if entry is None:
                    if len(pe.merge_buf) >= _MERGE_Q_LIMIT:
                        raise SimFault(
                            f"cycle {cycle}: merge buffer overflow at PE"
                            f"({pe.row},{pe.col})"
                        )
                    pe.merge_buf[vid] = [1, val]
                else:
                    entry[0] += 1
                    entry[1] += val
                ctr["rf_psum_read"] += 1
                ctr["rf_psum_write"] += 1
                progress = True
            while pend_gon and pend_gon[0][0] <= cycle:
                _, idx, val = pend_gon.popleft()
                self.out[idx] += val
                ctr["gb_read"] += 1
                ctr["gb_write"] += 1
                committed += 1
                progress = True

            # --- phase 2: feeders (multicast input bus, broadcast bus) ---
            banks_used = set()
            sent = 0
            while sent < lanes_a and ai < len(self.a_sends):
                s = self.a_sends[ai]
                if s.bank >= 0 and s.bank in banks_used:
                    break
                ok = True
                for flat in s.members:
                    pe = self.pes[flat]
                    if len(pe.in_q) + reserved_in[flat] >= qcap:
                        ok = False
                        break
                if not ok:
                    break
                for flat in s.members:
                    pend_in.append((cycle + hop, self.pes[flat], s.value))
                    reserved_in[flat] += 1
                if s.bank >= 0:
                    banks_used.add(s.bank)
                    ctr["gb_read"] += 1
                if s.dram:
                    ctr["dram_read_values"] += 1
                ctr["noc_gin_main"] += 1
                ai += 1
                sent += 1
                progress = True
            sent = 0
            while sent < lanes_b and bi < len(self.b_sends):
                s = self.b_sends[bi]
                if s.bank >= 0 and s.bank in banks_used:
                    break
                ok = True
                for flat in s.members:
                    pe = self.pes[flat]
                    if len(pe.w_q) + reserved_w[flat] >= qcap:
                        ok = False
                        break
                if not ok:
                    break
                for flat in s.members:
                    pend_w.append((cycle + hop, self.pes[flat], s.value))
                    reserved_w[flat] += 1
                if s.bank >= 0:
                    banks_used.add(s.bank)
                    ctr["gb_read"] += 1
                if s.dram:
                    ctr["dram_read_values"] += 1
                ctr["noc_gin_sub"] += 1
                bi += 1
                sent += 1
                progress = True

            # --- phase 2b: systolic edge feeders (one value/cycle/port) ---
            for r in self._west_rows:
                sends = self.west_sends[r]
                i = edge_w[r]
                if i >= len(sends):
                    continue
                pe = self.pes[r * cfg.cols]
                if len(pe.in_q) + reserved_in[pe.flat] < qcap:
                    s = sends[i]
                    pend_in.append((cycle + hop, pe, s.value))
                    reserved_in[pe.flat] += 1
                    if s.bank >= 0:
                        ctr["gb_read"] += 1
                    if s.dram:
                        ctr["dram_read_values"] += 1
                    ctr["noc_gin_main"] += 1
                    edge_w[r] = i + 1
                    progress = True
            for c in self._north_cols:
                sends = self.north_sends[c]
                i = edge_n[c]
                if i >= len(sends):
                    continue
                pe = self.pes[c]
                if len(pe.w_q) + reserved_w[pe.flat] < qcap:
                    s = sends[i]
                    pend_w.append((cycle + hop, pe, s.value))
                    reserved_w[pe.flat] += 1
                    if s.bank >= 0:
                        ctr["gb_read"] += 1
                    if s.dram:
                        ctr["dram_read_values"] += 1
                    ctr["noc_gin_sub"] += 1
                    edge_n[c] = i + 1
                    progress = True

            # --- phase 3: PE issue (at most one micro-op each) ---
            for pe in active:
                if pe.done:
                    continue
                if pe.pc >= len(pe.ops):
                    pe.done = len(pe.out_q) == 0
                    continue
                op = pe.ops[pe.pc]
                code = op[0]
                if code == OP_MAC:
                    _, acc_slot, w_src, in_src, fwd = op
                    if w_src < 0 and not pe.w_q:
                        pe.stalled += 1
                        continue
                    if in_src < 0 and not pe.in_q:
                        pe.stalled += 1
                        continue
                    fwd_east = fwd & 1 and pe.east is not None
                    fwd_south = fwd & 2 and pe.south is not None
                    if fwd_east and (
                        len(pe.east.in_q) + reserved_in[pe.east.flat] >= qcap
                    ):
                        pe.stalled += 1
                        continue
                    if fwd_south and (
                        len(pe.south.w_q) + reserved_w[pe.south.flat] >= qcap
                    ):
                        pe.stalled += 1
                        continue
                    if w_src < 0:
                        wval = pe.w_q.popleft()
                    else:
                        wval = pe.w_rf[w_src]
                        ctr["rf_w_read"] += 1
                    if in_src < 0:
                        ival = pe.in_q.popleft()
                    else:
                        ival = pe.in_rf[in_src]
                        ctr["rf_in_read"] += 1
                    if fwd_east:
                        pend_fwd.append((cycle + hop, pe.east, 0, ival))
                        reserved_in[pe.east.flat] += 1
                        ctr["noc_local"] += 1
                    if fwd_south:
                        pend_fwd.append((cycle + hop, pe.south, 1, wval))
                        reserved_w[pe.south.flat] += 1
                        ctr["noc_local"] += 1
                    if cfg.clock_gating and (wval == 0.0 or ival == 0.0):
                        pe.gated += 1
                        ctr["gated_macs"] += 1
                    else:
                        pe.retire.append(
                            (cycle + cfg.pipeline_latency, acc_slot, wval * ival)
                        )
                        pe.acc_pending[acc_slot] += 1
                        pe.busy += 1
                        ctr["macs"] += 1
                    pe.pc += 1
                    progress = True
                    if trace:
                        trace(cycle, pe.row, pe.col, "MAC",
                              f"acc={acc_slot} w={wval:g} in={ival:g}", "-")
                elif code == OP_LOAD_IN:
                    if not pe.in_q:
                        pe.stalled += 1
                        continue
                    pe.in_rf[op[1]] = pe.in_q.popleft()
                    ctr["rf_in_write"] += 1
                    pe.busy += 1
                    pe.pc += 1
                    progress = True
                    if trace:
                        trace(cycle, pe.row, pe.col, "LOAD_IN",
                              f"slot={op[1]} val={pe.in_rf[op[1]]:g}", "gin")
                elif code == OP_LOAD_W:
                    if not pe.w_q:
                        pe.stalled += 1
                        continue
                    pe.w_rf[op[1]] = pe.w_q.popleft()
                    ctr["rf_w_write"] += 1
                    pe.busy += 1
                    pe.pc += 1
                    progress = True
                    if trace:
                        trace(cycle, pe.row, pe.col, "LOAD_W",
                              f"slot={op[1]} val={pe.w_rf[op[1]]:g}", "gin")
                elif code == OP_PASS_UP or code == OP_WRITE_OUT:
                    _, acc_slot, wait_n, self_vid, arg = op
                    entry = pe.merge_buf.get(self_vid) if wait_n else None
                    have = entry[0] if entry else 0
                    if (
                        pe.acc_pending[acc_slot] > 0
                        or have < wait_n
                        or (code == OP_WRITE_OUT and len(pe.out_q) >= qcap)
                    ):
                        pe.stalled += 1
                        continue
                    val = pe.acc[acc_slot]
                    if wait_n:
                        val += pe.merge_buf.pop(self_vid)[1]
                    ctr["rf_psum_read"] += 1
                    if code == OP_PASS_UP:
                        north = pe.north
                        if north is None:
                            raise SimFault(
                                f"cycle {cycle}: PASS_UP from top row PE"
                                f"({pe.row},{pe.col})"
                            )
                        pend_merge.append((cycle + hop, north, arg, val))
                        ctr["noc_local"] += 1
                        if trace:
                            trace(cycle, pe.row, pe.col, "PASS_UP",
                                  f"acc={acc_slot} val={val:g} up_vid={arg}",
                                  "local")
                    else:
                        pe.out_q.append((arg, val))
                        if trace:
                            trace(cycle, pe.row, pe.col, "WRITE_OUT",
                                  f"acc={acc_slot} out={arg} val={val:g}", "gon")
                    pe.acc[acc_slot] = 0.0
                    pe.busy += 1
                    pe.pc += 1
                    progress = True
                else:  # OP_IDLE
                    pe.pc += 1
                    progress = True

            # --- phase 4: output network drains PE output queues ---
            drained = 0
            banks_used_out = set()
            n_active = len(active)
            scanned = 0
            while drained < lanes_gon and scanned < n_active:
                pe = active[(gon_rr + scanned) % n_active]
                scanned += 1
                if not pe.out_q:
                    continue
                idx, val = pe.out_q[0]
                bank = idx % banks
                if bank in banks_used_out:
                    continue
                pe.out_q.popleft()
                banks_used_out.add(bank)
                pend_gon.append((cycle + hop, idx, val))
                ctr["noc_gon"] += 1
                drained += 1
                progress = True
            gon_rr = (gon_rr + 1) % max(1, n_active)

            if progress:
                last_progress = cycle

            # --- termination ---
            if (
                committed >= self.expected_commits
                and all(pe.done for pe in active)
                and not pend_gon
            ):
                cycle += 1
                break
            cycle += 1
            if cycle - last_progress > deadlock_horizon:
                blame = []
                for pe in active:
                    if not pe.done and pe.pc < len(pe.ops):
                        op = pe.ops[pe.pc]
                        blame.append(
                            f"PE({pe.row},{pe.col}) stuck at op {pe.pc} "
                            f"{OP_NAMES[op[0]]}{op[1:]} in_q={len(pe.in_q)} "
                            f"w_q={len(pe.w_q)} out_q={len(pe.out_q)}"
                        )
                raise SimFault(
                    f"deadlock at cycle {cycle}: no state change for "
                    f"{deadlock_horizon} cycles; committed {committed}/"
                    f"{self.expected_commits}\n" + "\n".join(blame[:12])
                )
            if cycle > max_cycles:
                raise SimFault(f"exceeded max_cycles={max_cycles}")

        return PassResult(
            cycles=cycle,
            committed=self.out,
            counters=dict(self.counters),
            pe_busy={(pe.row, pe.col): pe.busy for pe in active},
            pe_gated={(pe.row, pe.col): pe.gated for pe in active},
            pe_stalled={(pe.row, pe.col): pe.stalled for pe in active},
            active_pes=tuple((pe.row, pe.col) for pe in active),
        )
