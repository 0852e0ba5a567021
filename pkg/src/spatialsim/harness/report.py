"""Report assembly and emission: per-layer, per-dataflow metrics with
speedups and energy ratios normalized to a baseline dataflow, end-to-end
estimates via Amdahl's law, and CSV/JSON/table/figure output.

The CSV column schema is versioned and stable; JSON reports round-trip
losslessly and are byte-identical across repeated runs of the same
configuration.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field

from ..memory import ENERGY_CATEGORIES

REPORT_SCHEMA_VERSION = 1

CSV_COLUMNS = (
    "layer", "dataflow", "cycles", "runtime_ms", "utilization",
    "macs", "gated_macs", "passes",
    "energy_dram", "energy_gbuff", "energy_spad", "energy_alu", "energy_noc",
    "energy_total", "speedup_vs_baseline", "energy_ratio_vs_baseline",
    "max_abs_err",
)


@dataclass
class NetworkSpec:
    """A named network: layers with user-supplied per-layer shares of
    end-to-end execution time (the remainder is non-convolutional work)."""

    name: str
    layer_names: list
    profile_fractions: list
    batch: int = 1

    def __post_init__(self):
        if len(self.layer_names) != len(self.profile_fractions):
            raise ValueError("one profile fraction per layer required")
        if any(not (0.0 <= f <= 1.0) for f in self.profile_fractions):
            raise ValueError("profile fractions must lie in [0, 1]")
        if sum(self.profile_fractions) > 1.0 + 1e-9:
            raise ValueError("profile fractions must sum to <= 1")


def amdahl_end_to_end(fractions, speedups) -> float:
    """1 / ((1 - sum f_i) + sum f_i / s_i)."""
    fractions = list(fractions)
    speedups = list(speedups)
    if len(fractions) != len(speedups):
        raise ValueError("need one speedup per fraction")
    serial = 1.0 - sum(fractions)
    return 1.0 / (serial + sum(f / s for f, s in zip(fractions, speedups)))


@dataclass
class Report:
    """Comparison results, normalized to ``baseline`` (per layer)."""

    baseline: str
    rows: list = field(default_factory=list)   # dicts keyed by CSV_COLUMNS
    end_to_end: dict = field(default_factory=dict)
    schema_version: int = REPORT_SCHEMA_VERSION

    def add_result(self, result):
        e = result.energy
        self.rows.append({
            "layer": result.layer_name,
            "dataflow": result.dataflow,
            "cycles": result.cycles,
            "runtime_ms": result.runtime_ms,
            "utilization": result.utilization,
            "macs": result.counters.get("macs", 0),
            "gated_macs": result.gated_macs,
            "passes": result.passes,
            "energy_dram": e["DRAM"],
            "energy_gbuff": e["GBUFF"],
            "energy_spad": e["SPAD"],
            "energy_alu": e["ALU"],
            "energy_noc": e["NOC"],
            "energy_total": e["TOTAL"],
            "speedup_vs_baseline": 0.0,
            "energy_ratio_vs_baseline": 0.0,
            "max_abs_err": result.max_abs_err,
        })

    def finalize(self):
        base = {}
        for row in self.rows:
            if row["dataflow"] == self.baseline:
                base[row["layer"]] = row
        for row in self.rows:
            b = base.get(row["layer"])
            if b is None:
                continue
            row["speedup_vs_baseline"] = (
                b["cycles"] / row["cycles"] if row["cycles"] else 0.0
            )
            row["energy_ratio_vs_baseline"] = (
                b["energy_total"] / row["energy_total"]
                if row["energy_total"] else 0.0
            )
        return self

    # ------------------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "baseline": self.baseline,
            "rows": self.rows,
            "end_to_end": self.end_to_end,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Report":
        if d.get("schema_version") != REPORT_SCHEMA_VERSION:
            raise ValueError(
                f"unsupported report schema {d.get('schema_version')!r}"
            )
        return cls(
            baseline=d["baseline"], rows=d["rows"],
            end_to_end=d.get("end_to_end", {}),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([f"#schema={REPORT_SCHEMA_VERSION}"])
        writer.writerow(CSV_COLUMNS)
        for row in self.rows:
            writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
        return buf.getvalue()

    def to_table(self) -> str:
        cols = ("layer", "dataflow", "cycles", "runtime_ms", "utilization",
                "speedup_vs_baseline", "energy_total",
                "energy_ratio_vs_baseline")
        widths = {c: max(len(c), 12) for c in cols}
        lines = ["  ".join(c.ljust(widths[c]) for c in cols)]
        lines.append("  ".join("-" * widths[c] for c in cols))
        for row in self.rows:
            lines.append("  ".join(_fmt(row[c]).ljust(widths[c]) for c in cols))
        if self.end_to_end:
            lines.append("")
            for net, sp in sorted(self.end_to_end.items()):
                lines.append(f"end-to-end {net}: estimated speedup {sp:.3f}x")
        return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def emit_report(report: Report, fmt: str = "table", path: str | None = None):
    """Write the report as a human table, CSV, or JSON to path/stdout."""
    if fmt == "json":
        text = report.to_json()
    elif fmt == "csv":
        text = report.to_csv()
    elif fmt == "table":
        text = report.to_table()
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    if path is None:
        return text
    with open(path, "w") as fh:
        fh.write(text)
    return text


def render_figures(report: Report, out_dir: str) -> list:
    """Render speedup and energy-breakdown charts next to the delimited
    output; returns the written paths."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    os.makedirs(out_dir, exist_ok=True)
    paths = []
    layers = sorted({r["layer"] for r in report.rows})
    dataflows = sorted({r["dataflow"] for r in report.rows})
    by = {(r["layer"], r["dataflow"]): r for r in report.rows}

    fig, ax = plt.subplots(figsize=(max(6, 1.2 * len(layers)), 3.5))
    width = 0.8 / max(1, len(dataflows))
    for n, df in enumerate(dataflows):
        xs, ys = [], []
        for i, layer in enumerate(layers):
            row = by.get((layer, df))
            if row:
                xs.append(i + n * width)
                ys.append(row["speedup_vs_baseline"])
        ax.bar(xs, ys, width=width, label=df)
    ax.set_xticks([i + 0.4 for i in range(len(layers))])
    ax.set_xticklabels(layers, rotation=30, ha="right", fontsize=7)
    ax.set_ylabel(f"speedup vs {report.baseline}")
    ax.legend(fontsize=7)
    fig.tight_layout()
    p = os.path.join(out_dir, "speedup.png")
    fig.savefig(p, dpi=120)
    plt.close(fig)
    paths.append(p)

    fig, ax = plt.subplots(figsize=(max(6, 1.2 * len(layers)), 3.5))
    cats = [("energy_dram", "DRAM"), ("energy_gbuff", "GBUFF"),
            ("energy_spad", "SPAD"), ("energy_alu", "ALU"),
            ("energy_noc", "NOC")]
    xticks, xlabels = [], []
    x = 0.0
    for layer in layers:
        for df in dataflows:
            row = by.get((layer, df))
            if not row:
                continue
            bottom = 0.0
            for key, label in cats:
                ax.bar([x], [row[key]], width=0.8, bottom=bottom,
                       color=None, label=label if x == 0 else None)
                bottom += row[key]
            xticks.append(x)
            xlabels.append(f"{layer}\n{df}")
            x += 1.0
        x += 0.6
    ax.set_xticks(xticks)
    ax.set_xticklabels(xlabels, rotation=45, ha="right", fontsize=6)
    ax.set_ylabel("modeled energy (pJ)")
    ax.legend(fontsize=7)
    fig.tight_layout()
    p = os.path.join(out_dir, "energy_breakdown.png")
    fig.savefig(p, dpi=120)
    plt.close(fig)
    paths.append(p)
    return paths
