"""Run reports: the structured result of one experiment, its CSV/JSON
serializations, and the rendered figures that accompany them.

Two delimited shapes are pinned: the per-run trace CSV with columns
(iteration, loop, loss, mean_sensitivity, rate, cumulative_queries), and the
summary/comparison tables mirroring the published target tables. Floats are
written with repr (shortest round-trip), so identical runs produce
byte-identical CSVs. Figures are PNG files rendered next to the CSVs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..loops import TraceRow
from ..process import MEETS, ProcessSpec


@dataclass(frozen=True)
class RunReport:
    """Everything one (method, scenario, seed) run produced."""

    method: str
    scenario: str
    seed: int
    config_echo: dict
    trace: tuple[TraceRow, ...]
    final_recipes: np.ndarray        # (n_targets, input_dim) physical
    final_outputs: np.ndarray        # (n_targets, output_dim) physical
    classifications: tuple           # per-target tuples of labels
    targets: np.ndarray              # (n_targets, output_dim) physical
    output_error: float              # sqrt(mean squared normalized residual)
    queries: dict                    # component -> count; plus counter delta
    wall_clock_s: float
    emulator_val_mse: float | None = None
    notes: tuple[str, ...] = ()
    extras: dict = field(default_factory=dict)

    @property
    def headline_recipe(self) -> np.ndarray:
        return self.final_recipes[0]

    @property
    def headline_outputs(self) -> np.ndarray:
        return self.final_outputs[0]

    @property
    def headline_classification(self) -> tuple:
        return self.classifications[0]

    @property
    def meets_count(self) -> int:
        return sum(1 for c in self.headline_classification if c == MEETS)

    @property
    def meets_all(self) -> bool:
        return all(all(c == MEETS for c in row) for row in self.classifications)

    def validate(self, spec: ProcessSpec) -> None:
        """Recompute verdicts from raw outputs and reconcile query counts."""
        for row, stored in zip(self.final_outputs, self.classifications):
            if spec.classify(row) != tuple(stored):
                raise AssertionError("stored verdicts do not match raw outputs")
        parts = {k: v for k, v in self.queries.items() if k != "counter_delta"}
        if "counter_delta" in self.queries and sum(parts.values()) != self.queries["counter_delta"]:
            raise AssertionError("query components do not reconcile with the counter")


def _fmt_cell(value) -> str:
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return repr(value)
    return str(value)


def write_trace_csv(report: RunReport, path) -> None:
    """Pinned trace shape: iteration, loop, loss, mean_sensitivity, rate,
    cumulative_queries."""
    cumulative = 0
    with open(path, "w", newline="") as fh:
        fh.write("iteration,loop,loss,mean_sensitivity,rate,cumulative_queries\n")
        for row in report.trace:
            cumulative += row.queries
            cells = [
                str(row.iteration),
                row.loop,
                _fmt_cell(row.loss),
                _fmt_cell(row.mean_sensitivity),
                _fmt_cell(row.rate),
                str(cumulative),
            ]
            fh.write(",".join(cells) + "\n")


def write_summary_json(report: RunReport, path) -> None:
    doc = {
        "method": report.method,
        "scenario": report.scenario,
        "seed": report.seed,
        "config": report.config_echo,
        "error_definition": "output_error = sqrt(mean ||target - output||^2) in normalized units",
        "output_error": report.output_error,
        "emulator_val_mse": report.emulator_val_mse,
        "headline": {
            "recipe": report.headline_recipe.tolist(),
            "outputs": report.headline_outputs.tolist(),
            "classification": list(report.headline_classification),
        },
        "targets": report.targets.tolist(),
        "final_recipes": report.final_recipes.tolist(),
        "final_outputs": report.final_outputs.tolist(),
        "classifications": [list(c) for c in report.classifications],
        "meets_all": report.meets_all,
        "queries": report.queries,
        "wall_clock_s": report.wall_clock_s,
        "notes": list(report.notes),
        "trace_csv": "trace.csv",
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def write_summary_table_csv(report: RunReport, spec: ProcessSpec, path) -> None:
    """Per-output summary in the published layout: index, output, target, verdict."""
    with open(path, "w", newline="") as fh:
        fh.write("index,output,target,verdict\n")
        for var, value, verdict in zip(
            spec.outputs, report.headline_outputs, report.headline_classification
        ):
            fh.write(
                f"{var.name},{_fmt_cell(float(value))},{var.rule.describe()},{verdict}\n"
            )


def write_comparison_csv(reports: list[RunReport], spec: ProcessSpec, path) -> None:
    """Cross-method table: target-range row, then values+verdicts per method."""
    if not reports:
        raise ValueError("need at least one report to compare")
    names = [var.name for var in spec.outputs]
    with open(path, "w", newline="") as fh:
        fh.write("category," + ",".join(names) + ",meets_count\n")
        fh.write(
            "target range,"
            + ",".join(var.rule.describe() for var in spec.outputs)
            + ",\n"
        )
        for rep in reports:
            label = f"{rep.method} (seed {rep.seed})"
            values = ",".join(_fmt_cell(float(v)) for v in rep.headline_outputs)
            fh.write(f"{label},{values},{rep.meets_count}\n")
            verdicts = ",".join(rep.headline_classification)
            fh.write(f"{label} verdict,{verdicts},\n")


def write_rows_csv(rows: list[dict], fieldnames: list[str], path) -> None:
    """Generic comma/LF table with repr-formatted floats."""
    with open(path, "w", newline="") as fh:
        fh.write(",".join(fieldnames) + "\n")
        for row in rows:
            fh.write(",".join(_fmt_cell(row.get(k, "")) for k in fieldnames) + "\n")


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------


def _pyplot():
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    return plt


_LOOP_COLORS = {"A": "tab:blue", "B": "tab:red", "S": "tab:cyan",
                "LR": "tab:orange", "RS": "tab:green"}


def plot_trace(report: RunReport, path) -> None:
    """Loss curve over iterations, colored by loop tag, log scale."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4.5))
    offset = 0
    for tag in dict.fromkeys(row.loop for row in report.trace):
        rows = [r for r in report.trace if r.loop == tag]
        xs = [offset + i for i in range(len(rows))]
        ax.plot(xs, [r.loss for r in rows], color=_LOOP_COLORS.get(tag, "gray"),
                label=f"loop {tag}", linewidth=1.2)
        offset += len(rows)
    ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss (normalized)")
    ax.set_title(f"{report.method} on {report.scenario} (seed {report.seed})")
    if report.trace:
        ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_error_bars(reports: list[RunReport], path, title="final output error") -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4.5))
    labels = [f"{r.method}\nseed {r.seed}" for r in reports]
    ax.bar(range(len(reports)), [r.output_error for r in reports], color="tab:purple")
    ax.set_xticks(range(len(reports)))
    ax.set_xticklabels(labels, fontsize=8)
    ax.set_ylabel("output error (normalized)")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_sweep(rows: list[dict], path, x_key: str, title: str) -> None:
    """Final error against a swept magnitude, one line per method."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4.5))
    methods = sorted({row["method"] for row in rows})
    for method in methods:
        pts = sorted(
            (row[x_key], row["output_error"]) for row in rows if row["method"] == method
        )
        by_x: dict = {}
        for x, err in pts:
            by_x.setdefault(x, []).append(err)
        xs = sorted(by_x)
        ys = [float(np.mean(by_x[x])) for x in xs]
        ax.plot(xs, ys, marker="o", label=method)
    ax.set_xlabel(x_key.replace("_", " "))
    ax.set_ylabel("final output error (normalized)")
    ax.set_title(title)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_report_files(report: RunReport, spec: ProcessSpec, out_dir) -> Path:
    """All artifacts for one run: trace.csv, summary.json, summary_table.csv,
    loss_curve.png. Returns the run directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_trace_csv(report, out / "trace.csv")
    write_summary_json(report, out / "summary.json")
    write_summary_table_csv(report, spec, out / "summary_table.csv")
    plot_trace(report, out / "loss_curve.png")
    return out
