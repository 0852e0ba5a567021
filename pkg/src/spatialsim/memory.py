"""Memory hierarchy: banked global buffer, parametric DRAM, per-event
energy accounting, and the reuse-parameter search for processing passes.

The DRAM model is deliberately coarse (fixed latency, bandwidth cap,
per-access energy): the evaluated metrics depend on access *counts*, not
DDR microtiming. Energy unit costs ship as editable configuration labeled
as 45nm-class defaults; the relative magnitudes (register file ~ MAC,
buffer ~6x, DRAM ~200x) follow the well-known hierarchy ratios.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, asdict


@dataclass
class EnergyModel:
    """Per-event energies in pJ (45nm-class defaults, user-editable)."""

    mac_pj: float = 1.0
    rf_access_pj: float = 1.0
    gb_access_pj: float = 6.0
    dram_access_pj: float = 200.0   # per 16-bit value
    noc_hop_pj: float = 2.0
    scale: float = 1.0              # technology scale (1.4 maps 45nm to 65nm)

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v < 0:
                raise ValueError(f"energy cost {k} must be >= 0")


ENERGY_CATEGORIES = ("DRAM", "GBUFF", "SPAD", "ALU", "NOC")


def account_energy(counters: dict, model: EnergyModel) -> dict:
    """Exact linear mapping of event counters to the energy breakdown."""
    s = model.scale
    spad_events = (
        counters.get("rf_in_read", 0)
        + counters.get("rf_in_write", 0)
        + counters.get("rf_w_read", 0)
        + counters.get("rf_w_write", 0)
        + counters.get("rf_psum_read", 0)
        + counters.get("rf_psum_write", 0)
    )
    noc_events = (
        counters.get("noc_gin_main", 0)
        + counters.get("noc_gin_sub", 0)
        + counters.get("noc_gon", 0)
        + counters.get("noc_local", 0)
    )
    breakdown = {
        "DRAM": s * model.dram_access_pj
        * (counters.get("dram_read_values", 0) + counters.get("dram_write_values", 0)),
        "GBUFF": s * model.gb_access_pj
        * (counters.get("gb_read", 0) + counters.get("gb_write", 0)),
        "SPAD": s * model.rf_access_pj * spad_events,
        "ALU": s * model.mac_pj * counters.get("macs", 0),
        "NOC": s * model.noc_hop_pj * noc_events,
    }
    breakdown["TOTAL"] = sum(breakdown[c] for c in ENERGY_CATEGORIES)
    return breakdown


@dataclass
class DramModel:
    """Fixed-latency, bandwidth-capped DRAM with per-access energy.

    Latency default: ~100 ns of DDR4 access at the 200 MHz core clock.
    """

    latency_cycles: int = 20
    bandwidth_bytes_per_cycle: float = 74.6  # 1866 MT/s x 8B at a 200 MHz core
    value_bytes: int = 2

    def __post_init__(self):
        if self.latency_cycles <= 0 or self.bandwidth_bytes_per_cycle <= 0:
            raise ValueError("DRAM latency and bandwidth must be > 0")

    def transfer_cycles(self, n_values: int) -> int:
        if n_values == 0:
            return 0
        bytes_total = n_values * self.value_bytes
        return self.latency_cycles + int(
            -(-bytes_total // self.bandwidth_bytes_per_cycle)
        )


@dataclass
class GlobalBuffer:
    """Capacity/banking bookkeeping plus the 1R+1W per-bank-port rule."""

    capacity_bytes: int = 108 * 1024
    banks: int = 27
    value_bytes: int = 2
    resident: dict = field(default_factory=dict)   # tensor key -> n_values

    def allocate(self, key, n_values: int):
        used = sum(self.resident.values()) * self.value_bytes
        need = n_values * self.value_bytes
        if used + need > self.capacity_bytes:
            raise MemoryError(
                f"global buffer over capacity: resident {used} B + {need} B "
                f"> {self.capacity_bytes} B (allocating {key})"
            )
        self.resident[key] = n_values

    def free(self, key):
        self.resident.pop(key, None)

    def holds(self, key) -> bool:
        return key in self.resident

    def schedule_reads(self, flat_indices) -> list[int]:
        """Cycle offsets honoring one read port per bank per cycle: a
        conflicting access waits for the next cycle."""
        next_free: dict = {}
        grants = []
        for idx in flat_indices:
            bank = idx % self.banks
            t = next_free.get(bank, 0)
            grants.append(t)
            next_free[bank] = t + 1
        return grants


@dataclass
class PassPlan:
    """Reuse parameters of one processing pass: n batch items, r
    accumulating PE sets x t input-sharing PE sets, q channels and p
    filters processed together (p counts both spatial sets and the kernel
    planes a set serves back to back)."""

    n: int = 1
    r: int = 1
    t: int = 1
    q: int = 1
    p: int = 1
    reps: int = 1
    sets: int = 1
    passes: int = 1
    modeled_energy: float = 0.0
    placements: tuple = ((0, 0),)


class PlanError(RuntimeError):
    pass


def _plane_counts(layer):
    """(reduce_planes, share_planes) per conv type: reduce planes
    accumulate into the same outputs, share planes reuse the same input."""
    if layer.conv_type == "direct":
        return layer.channels, layer.num_filters
    if layer.conv_type == "transposed":
        return layer.channels, layer.num_filters
    return layer.channels, layer.num_filters  # dilated: (c used per pass, f kernel planes)


def plan_passes(
    layer,
    set_rows: int,
    set_cols: int,
    array_rows: int,
    array_cols: int,
    energy: EnergyModel,
    gb: GlobalBuffer,
    in_plane_values: int,
    out_plane_values: int,
    kern_plane_values: int,
    reps_max: int = 1,
) -> PassPlan:
    """Exhaustive search over feasible (n, r, t, reps) minimizing modeled
    energy; ties break toward fewer passes, then lexicographically.

    The model charges DRAM for unique tensor traffic, buffer reads for
    every input delivery (each input element is read once per pass that
    streams it), and buffer read+write for partial-sum accumulation per
    reduce pass; it exists to rank plans, not to replace simulation.
    """
    reduce_planes, share_planes = _plane_counts(layer)
    sets_fit = max(1, (array_rows // max(1, set_rows))) * max(
        1, (array_cols // max(1, set_cols))
    )
    if set_rows > array_rows or set_cols > array_cols:
        sets_fit = 1   # a grouped set occupies the whole array

    best = None
    best_key = None
    for n in range(1, layer.batch + 1):
        for r in range(1, reduce_planes + 1):
            for t in range(1, share_planes + 1):
                if r * t > sets_fit:
                    continue
                for reps in range(1, min(reps_max, share_planes) + 1):
                    if t * reps > share_planes:
                        continue
                    q = r if layer.conv_type != "dilated" else r
                    p = t * reps
                    # buffer residency: inputs for n*q planes + psums
                    in_vals = n * q * in_plane_values
                    out_vals = n * p * out_plane_values
                    if (in_vals + out_vals) * gb.value_bytes > gb.capacity_bytes:
                        continue
                    passes = (
                        -(-layer.batch // n)
                        * -(-reduce_planes // r)
                        * -(-share_planes // (t * reps))
                    )
                    dram = (
                        layer.batch * reduce_planes * in_plane_values
                        + reduce_planes * share_planes * kern_plane_values
                        * -(-layer.batch // n)
                        + layer.batch * share_planes * out_plane_values
                    )
                    gb_reads = (
                        layer.batch * reduce_planes * in_plane_values
                        * -(-share_planes // (t * reps))
                    )
                    psum_rw = (
                        2 * layer.batch * share_planes * out_plane_values
                        * -(-reduce_planes // r)
                    )
                    e = (
                        energy.dram_access_pj * dram
                        + energy.gb_access_pj * (gb_reads + psum_rw)
                    )
                    key = (e, passes, (n, r, t, q, p))
                    if best_key is None or key < best_key:
                        best_key = key
                        cols_per = max(1, array_cols // max(1, set_cols))
                        placements = tuple(
                            (
                                (s // cols_per) * set_rows,
                                (s % cols_per) * set_cols,
                            )
                            for s in range(r * t)
                        )
                        best = PassPlan(
                            n=n, r=r, t=t, q=q, p=p, reps=reps,
                            sets=r * t, passes=passes, modeled_energy=e,
                            placements=placements,
                        )
    if best is None:
        raise PlanError(
            f"no feasible processing pass for {layer.name}: one plane "
            f"(in {in_plane_values} + out {out_plane_values} values) "
            f"exceeds the global buffer"
        )
    return best


def enumerate_feasible(layer, set_rows, set_cols, array_rows, array_cols,
                       energy, gb, in_plane_values, out_plane_values,
                       kern_plane_values, reps_max=1):
    """All feasible plans with modeled energies (test oracle for
    plan_passes optimality)."""
    out = []
    reduce_planes, share_planes = _plane_counts(layer)
    sets_fit = max(1, (array_rows // max(1, set_rows))) * max(
        1, (array_cols // max(1, set_cols))
    )
    if set_rows > array_rows or set_cols > array_cols:
        sets_fit = 1
    for n, r, t, reps in itertools.product(
        range(1, layer.batch + 1),
        range(1, reduce_planes + 1),
        range(1, share_planes + 1),
        range(1, max(2, reps_max + 1)),
    ):
        if r * t > sets_fit or reps > max(1, reps_max) or t * reps > share_planes:
            continue
        in_vals = n * r * in_plane_values
        out_vals = n * t * reps * out_plane_values
        if (in_vals + out_vals) * gb.value_bytes > gb.capacity_bytes:
            continue
        dram = (
            layer.batch * reduce_planes * in_plane_values
            + reduce_planes * share_planes * kern_plane_values
            * -(-layer.batch // n)
            + layer.batch * share_planes * out_plane_values
        )
        gb_reads = (
            layer.batch * reduce_planes * in_plane_values
            * -(-share_planes // (t * reps))
        )
        psum_rw = (
            2 * layer.batch * share_planes * out_plane_values
            * -(-reduce_planes // r)
        )
        out.append(
            (
                (n, r, t, reps),
                energy.dram_access_pj * dram
                + energy.gb_access_pj * (gb_reads + psum_rw),
            )
        )
    return out
