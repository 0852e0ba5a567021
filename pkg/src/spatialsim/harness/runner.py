"""End-to-end execution of one layer under one dataflow.

compile -> plan -> sequence processing passes on the array simulator ->
assemble the output tensor -> verify against the functional reference.
Every pass streams one input plane (shared across the kernel planes it
serves); partial outputs accumulate in the buffer between passes, and
tensor-level DRAM traffic is charged by explicit load/drain phases.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import oracle
from ..compiler import (
    CompileError,
    compile_dilated,
    compile_matmul_lowered,
    compile_row_stationary,
    compile_transpose,
)
from ..memory import DramModel, EnergyModel, GlobalBuffer, account_energy, plan_passes
from ..noc import NocConfig, configure
from ..program import SRC_IN, SRC_KERN, SRC_ZERO, CompiledPlane
from ..sim.core import ArrayConfig, ArraySim, BoundSend

PADFREE = "padfree"
ROWSTATIONARY = "rowstationary"
MATMUL = "matmul"
DATAFLOWS = (PADFREE, ROWSTATIONARY, MATMUL)

# stock narrow input network for the baselines; the padfree dataflow uses
# the widened one it was provisioned with
BASELINE_NOC = dict(gin_main_bits=64, gin_sub_bits=16)


class FunctionalMismatch(AssertionError):
    pass


@dataclass
class LayerResult:
    layer_name: str
    dataflow: str
    cycles: int
    sim_cycles: int
    dma_cycles: int
    counters: dict
    output: np.ndarray
    reference: np.ndarray
    max_abs_err: float
    utilization: float
    pe_utilization: dict
    gated_macs: int
    zero_products_compiled: int
    total_products_compiled: int
    energy: dict
    plan: dict
    passes: int
    functional_ok: bool
    runtime_ms: float

    def summary(self) -> dict:
        return {
            "layer": self.layer_name,
            "dataflow": self.dataflow,
            "cycles": self.cycles,
            "runtime_ms": self.runtime_ms,
            "utilization": self.utilization,
            "macs": self.counters.get("macs", 0),
            "gated_macs": self.gated_macs,
            "energy": self.energy,
            "passes": self.passes,
            "max_abs_err": self.max_abs_err,
        }


def _noc_for(dataflow: str, cfg: ArrayConfig) -> NocConfig:
    if dataflow == PADFREE:
        return cfg.noc
    base = dict(
        gin_main_bits=BASELINE_NOC["gin_main_bits"],
        gin_sub_bits=BASELINE_NOC["gin_sub_bits"],
        gon_bits=cfg.noc.gon_bits,
        local_bits=cfg.noc.local_bits,
        hop_latency=cfg.noc.hop_latency,
        row_id_slots=cfg.noc.row_id_slots,
        col_id_slots=cfg.noc.col_id_slots,
        id_bits=cfg.noc.id_bits,
        value_bits=cfg.noc.value_bits,
    )
    return NocConfig(**base)


def _plane_lists(layer, inp, kern):
    """(input planes, kernel plane getter, out-plane layout) per type.

    Returns (in_planes[b][reduce] -> 2D array,
             kern_plane(b, reduce, share) -> 2D array,
             n_reduce, n_share, out_planes_per_batch)
    """
    t = layer.conv_type
    if t == oracle.DIRECT:
        def in_plane(b, c):
            return inp[b].plane(c)

        def kern_plane(b, c, f):
            return kern.plane(f, c)

        return in_plane, kern_plane, layer.channels, layer.num_filters
    if t == oracle.TRANSPOSED:
        def in_plane(b, f):
            return inp[b].plane(f)

        def kern_plane(b, f, o):
            return kern.plane(o, f)

        return in_plane, kern_plane, layer.channels, layer.num_filters
    # dilated: input planes are channels, kernel planes are error maps
    def in_plane(b, c):
        return inp[b].plane(c)

    def kern_plane(b, c, f):
        return kern[b].plane(f)

    return in_plane, kern_plane, layer.channels, layer.num_filters


def _reps_cap(dataflow, layer, cfg: ArrayConfig) -> int:
    share = layer.num_filters
    if dataflow == MATMUL:
        return share
    if dataflow == ROWSTATIONARY:
        from ..compiler.rowstat import padded_problem

        _, _, _, kh, kw, _, _, _, ow = padded_problem(layer)
        cap = min(cfg.rf_psum, cfg.rf_filter // max(1, kw))
        return max(1, min(share, cap))
    if layer.conv_type == oracle.DILATED:
        return max(1, min(share, cfg.rf_psum))
    return share


def compile_layer(layer, dataflow, cfg: ArrayConfig, reps: int, expansion: int = 1):
    """List of compiled plane passes (RS may split into segments)."""
    if dataflow == PADFREE:
        if layer.conv_type == oracle.TRANSPOSED:
            return [
                compile_transpose(
                    layer, cfg.rows, cfg.cols, psum_slots=cfg.rf_psum,
                    expansion=expansion, reps=reps,
                )
            ]
        if layer.conv_type == oracle.DILATED:
            return [
                compile_dilated(
                    layer, cfg.rows, cfg.cols, in_slots=cfg.rf_ifmap,
                    psum_slots=cfg.rf_psum, expansion=expansion, reps=reps,
                )
            ]
        raise CompileError(
            "padfree dataflow covers transposed/dilated convolutions; use a "
            "baseline dataflow for direct ones"
        )
    if dataflow == ROWSTATIONARY:
        return compile_row_stationary(
            layer, cfg.rows, cfg.cols, psum_slots=cfg.rf_psum,
            in_slots=cfg.rf_ifmap, w_slots=cfg.rf_filter, reps=reps,
        )
    if dataflow == MATMUL:
        return [compile_matmul_lowered(layer, cfg.rows, cfg.cols, reps=reps)]
    raise ValueError(f"unknown dataflow {dataflow!r}")


def _bind_sends(sends, in_plane, kern_planes, banks):
    """Materialize symbolic sends against concrete plane data."""
    out = []
    flat_in = in_plane.ravel()
    flat_kerns = [k.ravel() for k in kern_planes]
    for s in sends:
        if s.kind == SRC_IN:
            val = float(flat_in[s.src_idx])
            out.append((val, s.group_id, s.src_idx % banks, False, False))
        elif s.kind == SRC_KERN:
            val = float(flat_kerns[s.plane][s.src_idx])
            out.append((val, s.group_id, -1, True, False))
        else:
            out.append((0.0, s.group_id, s.src_idx % banks, False, True))
    return out


def _bound(plane: CompiledPlane, in_plane, kern_planes, cfg: ArrayConfig):
    """(programs, a, b, west, north) with groups resolved to flat PE ids."""
    cols = cfg.cols
    members = {
        gid: tuple(r * cols + c for (r, c) in pes)
        for gid, pes in plane.group_table.groups.items()
    }

    def finish(raw):
        return [
            BoundSend(v, members[g], bank, dram, zero)
            for (v, g, bank, dram, zero) in raw
        ]

    a = finish(_bind_sends(plane.a_sends, in_plane, kern_planes, cfg.gb_banks))
    b = finish(_bind_sends(plane.b_sends, in_plane, kern_planes, cfg.gb_banks))
    west = {
        r: [
            BoundSend(v, (), bank, dram, zero)
            for (v, _, bank, dram, zero) in _bind_sends(
                sends, in_plane, kern_planes, cfg.gb_banks
            )
        ]
        for r, sends in plane.west_sends.items()
    }
    north = {
        c: [
            BoundSend(v, (), bank, dram, zero)
            for (v, _, bank, dram, zero) in _bind_sends(
                sends, in_plane, kern_planes, cfg.gb_banks
            )
        ]
        for c, sends in plane.north_sends.items()
    }
    return a, b, west, north


def run_layer(
    layer,
    dataflow: str,
    cfg: ArrayConfig | None = None,
    energy_model: EnergyModel | None = None,
    dram: DramModel | None = None,
    seed: int = 0,
    expansion: int = 1,
    verify: bool = True,
    trace=None,
    check_noc_ids: bool = False,
) -> LayerResult:
    """Simulate a full layer; raises FunctionalMismatch when the simulated
    tensor diverges from the reference beyond 1e-4 (with verify=True)."""
    cfg = cfg or ArrayConfig()
    energy_model = energy_model or EnergyModel()
    dram = dram or DramModel()
    noc = _noc_for(dataflow, cfg)
    run_cfg = ArrayConfig(**{**cfg.__dict__, "noc": noc})

    inp, kern = _data_per_batch(layer, seed, cfg.quantize_16bit)
    reference = _reference_tensor(layer, inp, kern)
    in_plane, kern_plane, n_reduce, n_share = _plane_lists(layer, inp, kern)

    reps = min(_reps_cap(dataflow, layer, run_cfg), n_share)
    variants = {reps: compile_layer(layer, dataflow, run_cfg, reps, expansion)}
    reps = variants[reps][0].reps
    rem = n_share % reps
    if rem and rem != reps:
        variants[rem] = compile_layer(layer, dataflow, run_cfg, rem, expansion)
    if check_noc_ids:
        for planes in variants.values():
            for plane in planes:
                configure(plane.group_table, noc)
    stats = {
        size: (
            sum(p.zero_product_count() for p in planes),
            sum(p.total_products() for p in planes),
        )
        for size, planes in variants.items()
    }

    out_len = layer.out_h * layer.out_w
    gb = GlobalBuffer(cfg.gb_capacity_bytes, cfg.gb_banks)
    first = variants[reps][0]
    plan = plan_passes(
        layer,
        first.set_rows,
        first.set_cols,
        run_cfg.rows,
        run_cfg.cols,
        energy_model,
        gb,
        in_plane_values=layer.n_h * layer.n_w,
        out_plane_values=out_len,
        kern_plane_values=(
            layer.k * layer.k
            if layer.conv_type != oracle.DILATED
            else layer.error_dims[0] * layer.error_dims[1]
        ),
        reps_max=reps,
    )

    sim = ArraySim(run_cfg, trace=trace)
    total_sim_cycles = 0
    dma_cycles = 0
    n_passes = 0
    zero_compiled = 0
    total_compiled = 0
    dram_extra = {"dram_read_values": 0, "dram_write_values": 0, "gb_write": 0,
                  "gb_read": 0}
    resident: set = set()
    resident_values = 0
    gb_value_cap = cfg.gb_capacity_bytes // 2
    padded_store = dataflow in (ROWSTATIONARY, MATMUL)

    dilated = layer.conv_type == oracle.DILATED
    n_out_planes = layer.num_filters * layer.channels if dilated else layer.num_filters
    n_batch_out = 1 if dilated else layer.batch
    accum = np.zeros((n_batch_out, n_out_planes, out_len), dtype=np.float64)

    share_blocks = [
        list(range(f0, min(f0 + reps, n_share)))
        for f0 in range(0, n_share, reps)
    ]

    for b in range(layer.batch):
        for red in range(n_reduce):
            ip = in_plane(b, red)
            key = ("in", b, red)
            if key not in resident:
                real = ip.size
                stored = real
                if padded_store:
                    stored = first.in_shape[0] * first.in_shape[1]
                if resident_values + stored > gb_value_cap:
                    resident.clear()
                    resident_values = 0
                dram_extra["dram_read_values"] += real
                dram_extra["gb_write"] += stored
                dma_cycles += dram.transfer_cycles(real)
                resident.add(key)
                resident_values += stored
            for block in share_blocks:
                planes = variants[len(block)]
                kps = [kern_plane(b, red, f) for f in block]
                block_out = np.zeros(planes[0].out_len, dtype=np.float64)
                for plane in planes:
                    a, bb, west, north = _bound(plane, ip, kps, run_cfg)
                    sim.load_pass(
                        plane.programs, a, bb, plane.out_len, west, north
                    )
                    res = sim.run()
                    total_sim_cycles += res.cycles
                    n_passes += 1
                    block_out += res.committed
                zc, tc = stats[len(block)]
                zero_compiled += zc
                total_compiled += tc
                for n, f in enumerate(block):
                    out_plane_idx = f * layer.channels + red if dilated else f
                    b_out = 0 if dilated else b
                    accum[b_out, out_plane_idx] += block_out[
                        n * out_len : (n + 1) * out_len
                    ]

    # outputs drain to DRAM once
    total_out = accum.size
    dram_extra["dram_write_values"] += total_out
    dram_extra["gb_read"] += total_out
    dma_cycles += dram.transfer_cycles(total_out)

    counters = dict(sim.counters)
    for k, v in dram_extra.items():
        counters[k] = counters.get(k, 0) + v

    output = accum.reshape(n_batch_out, n_out_planes, layer.out_h, layer.out_w)
    max_err = float(np.max(np.abs(output - reference))) if output.size else 0.0
    ok = max_err <= 1e-4
    if verify and not ok:
        raise FunctionalMismatch(
            f"{layer.name} under {dataflow}: max |err| = {max_err:g} > 1e-4"
        )

    total_cycles = total_sim_cycles + dma_cycles
    busy = {}
    for pe in sim.pes:
        if pe.busy or pe.gated or pe.stalled:
            busy[(pe.row, pe.col)] = pe.busy
    pe_util = {
        pos: busy[pos] / total_cycles for pos in sorted(busy)
    } if total_cycles else {}
    util = (sum(pe_util.values()) / len(pe_util)) if pe_util else 0.0

    clock_hz = run_cfg.clock_mhz * 1e6
    return LayerResult(
        layer_name=layer.name,
        dataflow=dataflow,
        cycles=total_cycles,
        sim_cycles=total_sim_cycles,
        dma_cycles=dma_cycles,
        counters=counters,
        output=output.astype(np.float32),
        reference=reference.astype(np.float32),
        max_abs_err=max_err,
        utilization=util,
        pe_utilization=pe_util,
        gated_macs=counters.get("gated_macs", 0),
        zero_products_compiled=zero_compiled,
        total_products_compiled=total_compiled,
        energy=account_energy(counters, energy_model),
        plan={
            "n": plan.n, "r": plan.r, "t": plan.t, "q": plan.q, "p": plan.p,
            "reps": plan.reps, "passes": plan.passes,
        },
        passes=n_passes,
        functional_ok=ok,
        runtime_ms=total_cycles / clock_hz * 1e3,
    )


def _data_per_batch(layer, seed, quantize):
    """Per-batch-item inputs; kernels shared across the batch except for
    dilated layers, whose kernel planes are the per-item error maps."""
    inp = []
    kern = None
    kerns = []
    for b in range(layer.batch):
        i, k = oracle.make_layer_data(layer, seed=seed + 31 * b, quantize_16bit=quantize)
        inp.append(i)
        kerns.append(k)
    if layer.conv_type == oracle.DILATED:
        return inp, kerns
    return inp, kerns[0]


def _reference_tensor(layer, inp, kern) -> np.ndarray:
    outs = []
    for b in range(layer.batch):
        k = kern[b] if layer.conv_type == oracle.DILATED else kern
        ref = oracle.reference_output(layer, inp[b], k)
        outs.append(ref.data.reshape(-1, layer.out_h, layer.out_w))
    out = np.stack(outs).astype(np.float64)
    if layer.conv_type == oracle.DILATED:
        # filter gradients sum over the batch
        return out.sum(axis=0, keepdims=True)
    return out
