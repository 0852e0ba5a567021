"""Command implementations shared by the CLI and the validation suite."""

from __future__ import annotations

import numpy as np

from .. import oracle
from ..memory import DramModel, EnergyModel
from . import corpus
from .report import NetworkSpec, Report, amdahl_end_to_end
from .runner import DATAFLOWS, MATMUL, PADFREE, FunctionalMismatch, run_layer


def applicable_dataflows(layer, requested):
    out = []
    for df in requested:
        if df == PADFREE and layer.conv_type == oracle.DIRECT:
            continue
        out.append(df)
    return out


def cmd_compare(layers, dataflows, cfg, energy, dram, baseline=MATMUL,
                seed=0, expansions=None) -> Report:
    """Run each layer under each dataflow, assert identical functional
    outputs, and emit a normalized report. A functional mismatch is a hard
    failure: correctness outranks metrics."""
    report = Report(baseline=baseline)
    for layer in layers:
        outputs = {}
        for df in applicable_dataflows(layer, dataflows):
            expansion = (expansions or {}).get(layer.name, 1)
            res = run_layer(layer, df, cfg, energy, dram, seed=seed,
                            expansion=expansion if df == PADFREE else 1)
            outputs[df] = res.output
            report.add_result(res)
        vals = list(outputs.values())
        for other in vals[1:]:
            if not np.allclose(vals[0], other, atol=1e-4):
                raise FunctionalMismatch(
                    f"{layer.name}: dataflows disagree beyond 1e-4"
                )
    return report.finalize()


def cmd_sweep(layer_names, dataflows, cfg, energy, dram, baseline=MATMUL) -> Report:
    layers = []
    expansions = {}
    for name in layer_names:
        entry = corpus.get_entry(name)
        layers.append(entry.layer)
        expansions[name] = entry.expansion
    return cmd_compare(layers, dataflows, cfg, energy, dram,
                       baseline=baseline, expansions=expansions)


# Illustrative profile fractions (share of end-to-end training time spent
# in each evaluated layer's backward-pass convolutions); these are
# user-editable stand-ins, not measurements.
EXAMPLE_NETWORKS = {
    "alexnet-example": NetworkSpec(
        "alexnet-example",
        ["alexnet-conv1-igrad", "alexnet-conv1-fgrad"],
        [0.35, 0.25],
    ),
    "resnet50-example": NetworkSpec(
        "resnet50-example",
        ["resnet50-conv3-igrad", "resnet50-conv3-fgrad"],
        [0.10, 0.08],
    ),
}


def add_end_to_end(report: Report, networks=None, target=PADFREE):
    """Attach Amdahl end-to-end estimates for networks whose layers are in
    the report (speedup of ``target`` relative to the baseline)."""
    networks = networks or EXAMPLE_NETWORKS
    by = {(r["layer"], r["dataflow"]): r for r in report.rows}
    for net in networks.values():
        fractions, speedups = [], []
        complete = True
        for name, frac in zip(net.layer_names, net.profile_fractions):
            row = by.get((name, target))
            if row is None:
                complete = False
                break
            fractions.append(frac)
            speedups.append(max(row["speedup_vs_baseline"], 1e-9))
        if complete and fractions:
            report.end_to_end[net.name] = amdahl_end_to_end(fractions, speedups)
    return report
