"""Built-in validation: every acceptance criterion as a checkable item.

Each criterion function returns (passed, detail). ``run_validation``
executes them in order and is what both the CLI validate command and the
acceptance test suite call; ``inject_fault`` deliberately corrupts one
comparison to prove the oracle check trips.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .. import oracle
from ..compiler import compile_row_stationary, compile_transpose
from ..memory import DramModel, EnergyModel
from ..noc import id_bits_required, row_ids_required
from ..oracle import LayerSpec, inner_padding_count, outer_padding_count
from ..sim.core import ArrayConfig
from . import corpus
from .report import Report, amdahl_end_to_end
from .runner import DATAFLOWS, MATMUL, PADFREE, ROWSTATIONARY, run_layer


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def _applicable(layer):
    if layer.conv_type == oracle.DIRECT:
        return (ROWSTATIONARY, MATMUL)
    return (PADFREE, ROWSTATIONARY, MATMUL)


def criterion_1_padding():
    ok = (
        inner_padding_count(2, 2) == 5
        and outer_padding_count(2, 3, 2) == 40
    )
    return ok, f"inner(2,S=2)={inner_padding_count(2, 2)}, outer(2,K=3,S=2)={outer_padding_count(2, 3, 2)} (want 5/40)"


def criterion_2_zero_mult():
    fig5 = LayerSpec("fig5", "transposed", 2, 2, 3, 2)
    frac = oracle.zero_mult_fraction(fig5)
    if frac != 1.0 - 36.0 / 225.0:
        return False, f"fig5 fraction {frac} != 1 - 36/225"
    worst = 1.0
    for layer in corpus.stride2_transposed_layers():
        f = oracle.zero_mult_fraction(layer)
        worst = min(worst, f)
        if f <= 0.70:
            return False, f"{layer.name}: fraction {f:.4f} <= 0.70"
    return True, f"fig5 = {frac:.4f} exactly; stride-2 minimum {worst:.4f} > 0.70"


def criterion_3_noc_ids():
    checks = [
        (row_ids_required(7, 2), 4),
        (id_bits_required(7, 2), 4),
        (row_ids_required(5, 1), 5),
        (id_bits_required(11, 4), 5),
    ]
    ok = all(got == want for got, want in checks)
    return ok, f"row_ids(7,2)={checks[0][0]}, bits(7,2)={checks[1][0]}, row_ids(5,1)={checks[2][0]}, bits(11,4)={checks[3][0]}"


def _corpus_runs(cfg, energy, dram, count=51, inject_fault=False):
    """Simulate the randomized corpus under every applicable dataflow;
    reused by criteria 4, 5, and 6."""
    entries = corpus.random_corpus(count=count)
    runs = []
    for n, entry in enumerate(entries):
        layer = entry.layer
        for df in _applicable(layer):
            r = run_layer(layer, df, cfg, energy, dram, seed=100 + n,
                          verify=False)
            if inject_fault and n == 0:
                r.output = r.output + 1.0
                r.max_abs_err = float(
                    np.max(np.abs(r.output - r.reference))
                )
                r.functional_ok = r.max_abs_err <= 1e-4
            runs.append((layer, df, r))
    return runs


def criterion_4_zero_freedom(runs):
    zero_frac_checked = 0
    for layer, df, r in runs:
        if df == PADFREE:
            if r.zero_products_compiled != 0:
                return False, (
                    f"{layer.name}: padfree schedule has "
                    f"{r.zero_products_compiled} zero products"
                )
            if r.gated_macs != 0:
                return False, f"{layer.name}: padfree gated {r.gated_macs} MACs"
        if df == ROWSTATIONARY and layer.conv_type == oracle.TRANSPOSED:
            per_plane = oracle.naive_schedule_products(layer)
            predicted = (
                per_plane[1] * layer.batch * layer.channels * layer.num_filters
            )
            if r.zero_products_compiled != predicted:
                return False, (
                    f"{layer.name}: RS zero products {r.zero_products_compiled}"
                    f" != predicted {predicted}"
                )
            if r.gated_macs != predicted:
                return False, (
                    f"{layer.name}: RS gated {r.gated_macs} != {predicted}"
                )
            zero_frac_checked += 1
    return True, (
        f"padfree schedules zero-free; RS transposed zero counts exact on "
        f"{zero_frac_checked} layers"
    )


def criterion_5_functional(runs):
    n = 0
    layers = set()
    for layer, df, r in runs:
        layers.add(layer.name)
        if not r.functional_ok:
            return False, (
                f"{layer.name} under {df}: max |err| {r.max_abs_err:g} > 1e-4"
            )
        n += 1
    if len(layers) < 50:
        return False, f"only {len(layers)} corpus layers (need >= 50)"
    return True, f"{n} simulations over {len(layers)} layers all within 1e-4"


def criterion_6_compiler_invariants(count=51):
    from ..compiler.schedule import (
        check_verticality, label_multiplicity,
    )
    from ..compiler.padfree import build_transpose_schedule

    entries = [
        e for e in corpus.random_corpus(count=count)
        if e.layer.conv_type == oracle.TRANSPOSED
    ]
    for e in entries:
        layer = e.layer
        sched = build_transpose_schedule(layer, 13, 15)
        # completeness: per-label products equal the accumulation terms
        got = {}
        for col in sched.columns.values():
            for p in col:
                got.setdefault(p.label, set()).add((p.w_index, p.e_index))
        k, s = layer.k, layer.stride
        want = {}
        for i in range(layer.n_h):
            for j in range(layer.n_w):
                for u in range(k):
                    for v in range(k):
                        want.setdefault((s * i + u, s * j + v), set()).add(
                            (v * k + u, i * layer.n_w + j)
                        )
        if got != want:
            return False, f"{layer.name}: label term sets diverge"
        # conservation under grouping
        if sched.total_products() != k * k * layer.n_h * layer.n_w:
            return False, f"{layer.name}: product count not conserved"
        # verticality of the pre-grouping shifted schedule
        from ..compiler.schedule import (
            circular_shift, label_products, symbolic_outer_product,
        )
        flat = circular_shift(
            label_products(symbolic_outer_product(k, (layer.n_h, layer.n_w)), s),
            k, s,
        )
        if not check_verticality(flat):
            return False, f"{layer.name}: verticality violated"
    return True, f"verticality/completeness/conservation on {len(entries)} layers"


def criterion_7_speedups(cfg, energy, dram, keep=None):
    cases = [
        ("resnet50-conv3-igrad", "transposed S=2", 3.0, {}),
        ("resnet50-conv3-fgrad", "dilated S=2", 2.5, {}),
        ("alexnet-conv1-igrad", "transposed S=4", 8.0, {}),
    ]
    details = []
    for name, what, bound, _ in cases:
        entry = corpus.get_entry(name)
        pf = run_layer(entry.layer, PADFREE, cfg, energy, dram,
                       expansion=entry.expansion)
        rs = run_layer(entry.layer, ROWSTATIONARY, cfg, energy, dram)
        sp = rs.cycles / pf.cycles
        if keep is not None:
            keep[name] = (pf, rs)
        details.append(f"{what}: {sp:.2f}x (need >= {bound})")
        if sp < bound:
            return False, "; ".join(details)
    return True, "; ".join(details)


def criterion_8_energy(cfg, energy, dram, kept=None):
    entry = corpus.get_entry("resnet50-conv3-igrad")
    if kept and "resnet50-conv3-igrad" in kept:
        pf, rs = kept["resnet50-conv3-igrad"]
    else:
        pf = run_layer(entry.layer, PADFREE, cfg, energy, dram)
        rs = run_layer(entry.layer, ROWSTATIONARY, cfg, energy, dram)
    total_ok = pf.energy["TOTAL"] < rs.energy["TOTAL"]
    dram_pf, dram_rs = pf.energy["DRAM"], rs.energy["DRAM"]
    rel = abs(dram_pf - dram_rs) / max(dram_pf, dram_rs)
    dram_ok = rel <= 0.05
    detail = (
        f"total padfree {pf.energy['TOTAL']:.3g} < rowstationary "
        f"{rs.energy['TOTAL']:.3g}: {total_ok}; DRAM delta {100 * rel:.2f}%"
    )
    return total_ok and dram_ok, detail


def criterion_9_determinism(cfg, energy, dram):
    from .commands import cmd_compare

    layer = corpus.get_entry("upsample2x-3x3").layer
    r1 = cmd_compare([layer], list(DATAFLOWS), cfg, energy, dram).to_json()
    r2 = cmd_compare([layer], list(DATAFLOWS), cfg, energy, dram).to_json()
    return r1 == r2, f"two compare reports byte-identical: {r1 == r2}"


def criterion_10_amdahl():
    got = amdahl_end_to_end([0.5, 0.3], [4.0, 2.0])
    ok = abs(got - 2.105) <= 1e-3
    return ok, f"amdahl([.5->4, .3->2]) = {got:.6f} (want 2.105 +- 0.001)"


def run_validation(cfg=None, energy=None, dram=None, corpus_count=51,
                   inject_fault=False, progress=None):
    """Run every acceptance criterion; returns a list of CriterionResult."""
    cfg = cfg or ArrayConfig()
    energy = energy or EnergyModel()
    dram = dram or DramModel()
    results = []

    def record(num, name, fn, *args, **kw):
        t0 = time.time()
        try:
            passed, detail = fn(*args, **kw)
        except Exception as e:  # a crash is a failure with the message
            passed, detail = False, f"{type(e).__name__}: {e}"
        res = CriterionResult(num, name, passed, detail, time.time() - t0)
        results.append(res)
        if progress:
            progress(res)
        return res

    record(1, "padding formulas exact", criterion_1_padding)
    record(2, "zero-mult fractions", criterion_2_zero_mult)
    record(3, "NoC ID sizing exact", criterion_3_noc_ids)

    t0 = time.time()
    runs = _corpus_runs(cfg, energy, dram, count=corpus_count,
                        inject_fault=inject_fault)
    prep = time.time() - t0
    r4 = record(4, "zero-freedom / padded-zero counts", criterion_4_zero_freedom, runs)
    r5 = record(5, "functional equivalence (randomized corpus)",
                criterion_5_functional, runs)
    r5.seconds += prep
    record(6, "compiler verticality/completeness", criterion_6_compiler_invariants,
           corpus_count)
    kept = {}
    record(7, "relative speedups", criterion_7_speedups, cfg, energy, dram, kept)
    record(8, "energy trends", criterion_8_energy, cfg, energy, dram, kept)
    record(9, "report determinism", criterion_9_determinism, cfg, energy, dram)
    record(10, "Amdahl estimator", criterion_10_amdahl)
    del r4
    return results
