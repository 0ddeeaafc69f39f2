"""Command-line interface.

Exit codes: 0 on success, 1 on configuration errors (bad config file, bad
flags, unknown names), 2 on runtime failures.
"""

from __future__ import annotations

import json
import sys
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from .. import nn, process
from ..emulator import train_emulator, write_history_csv
from . import runner, scenarios
from .config import ConfigError, ExperimentConfig, config_from_dict, load_config
from .reports import (
    RunReport,
    plot_error_bars,
    plot_sweep,
    plot_trace,
    write_comparison_csv,
    write_report_files,
    write_rows_csv,
)


def _effective_config(config_path, seeds) -> ExperimentConfig:
    config = load_config(config_path) if config_path else config_from_dict({})
    if seeds:
        config = config.with_seeds(seeds)
    return config


def _run_dir(out: Path, config: ExperimentConfig, seed: int) -> Path:
    return out / f"{config.scenario}_{config.method}_seed{seed}"


@click.group()
def cli():
    """Test-time recipe optimization experiments."""


config_option = click.option(
    "--config", "config_path", type=click.Path(exists=True, dir_okay=False),
    default=None, help="JSON experiment configuration.",
)
seed_option = click.option(
    "--seed", "seeds", type=int, multiple=True,
    help="Experiment seed; repeatable, overrides the config's seed list.",
)
out_option = click.option(
    "--out", "out_dir", type=click.Path(file_okay=False), default="mfl-out",
    help="Output directory.",
)


@cli.command("train-emulator")
@config_option
@seed_option
@out_option
def train_emulator_cmd(config_path, seeds, out_dir):
    """Sample a dataset and fit the forward emulator; write model + metrics."""
    config = _effective_config(config_path, seeds)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for seed in config.seeds:
        machine = scenarios.build_machine(
            config.scenario,
            process_noise_std=config.machine.process_noise_std,
            input_noise_std=config.machine.input_noise_std,
            noise_seed=scenarios.derive_seed(seed, "machine_noise"),
        )
        dataset = process.sample_dataset(
            machine, config.dataset_size, seed=scenarios.derive_seed(seed, "dataset")
        )
        cfg = replace(config.emulator, seed=scenarios.derive_seed(seed, "emulator"))
        trained = train_emulator(dataset, machine.spec, cfg)
        stem = out / f"emulator_{config.scenario}_seed{seed}"
        nn.save_net(trained.net, f"{stem}.dnet")
        write_history_csv(trained.history, f"{stem}_metrics.csv")
        click.echo(
            f"seed {seed}: validation MSE {trained.val_mse:.6f} "
            f"-> {stem}.dnet, {stem}_metrics.csv"
        )


@cli.command("run")
@config_option
@seed_option
@out_option
def run_cmd(config_path, seeds, out_dir):
    """Run the configured method once per seed; write reports and figures."""
    config = _effective_config(config_path, seeds)
    out = Path(out_dir)
    for report in runner.run(config):
        spec = scenarios.load_scenario_spec(config.scenario)
        run_dir = write_report_files(report, spec, _run_dir(out, config, report.seed))
        click.echo(
            f"seed {report.seed}: error {report.output_error:.4f} "
            f"meets {report.meets_count}/{spec.output_dim} -> {run_dir}"
        )


@cli.command("robustness")
@config_option
@seed_option
@out_option
def robustness_cmd(config_path, seeds, out_dir):
    """Target-shift / attack-noise ladders with comparison methods."""
    config = _effective_config(config_path, seeds)
    rows = runner.robustness_sweep(config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = scenarios.load_scenario_spec(config.scenario)
    table = []
    for row in rows:
        report: RunReport = row["report"]
        arm_dir = out / (
            f"{row['kind']}_{row['magnitude']!r}_{report.method}_seed{report.seed}"
        )
        write_report_files(report, spec, arm_dir)
        table.append({k: v for k, v in row.items() if k != "report"})
    write_rows_csv(
        table, ["kind", "magnitude", "seed", "method", "output_error", "meets_all"],
        out / "robustness.csv",
    )
    for kind in {r["kind"] for r in table}:
        plot_sweep(
            [r for r in table if r["kind"] == kind],
            out / f"{kind}.png", "magnitude", f"robustness: {kind.replace('_', ' ')}",
        )
    click.echo(f"{len(rows)} robustness runs -> {out}")


@cli.command("ablation")
@config_option
@seed_option
@out_option
def ablation_cmd(config_path, seeds, out_dir):
    """Paired runs per ablation flag (full arm vs ablated arm)."""
    config = _effective_config(config_path, seeds)
    rows = runner.ablation(config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = scenarios.load_scenario_spec(config.scenario)
    table = []
    for row in rows:
        report: RunReport = row["report"]
        arm_dir = out / f"{row['flag']}_{row['arm']}_seed{row['seed']}"
        write_report_files(report, spec, arm_dir)
        table.append({k: v for k, v in row.items() if k != "report"})
    write_rows_csv(
        table,
        ["flag", "arm", "seed", "output_error", "loop_b_passes", "meets_all",
         "stopped_early", "rescore_queries"],
        out / "ablation.csv",
    )
    reports = [row["report"] for row in rows]
    plot_error_bars(reports, out / "ablation.png", title="ablation arms")
    click.echo(f"{len(rows)} ablation runs -> {out}")


def _load_summary(path: Path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot read summary {path}: {err}") from err


def _report_from_summary(doc: dict, summary_path: Path) -> RunReport:
    from ..loops import TraceRow

    trace = ()
    trace_csv = summary_path.parent / doc.get("trace_csv", "trace.csv")
    if trace_csv.exists():
        rows = []
        with open(trace_csv) as fh:
            next(fh)
            prev_cum = 0
            for line in fh:
                it, loop, loss, sens, rate, cum = line.rstrip("\n").split(",")
                cum = int(cum)
                rows.append(
                    TraceRow(
                        loop, int(it), float(loss),
                        float(sens) if sens else float("nan"),
                        float(rate) if rate else float("nan"),
                        cum - prev_cum, bool(rate), 0, float("nan"),
                    )
                )
                prev_cum = cum
        trace = tuple(rows)
    return RunReport(
        method=doc["method"],
        scenario=doc["scenario"],
        seed=doc["seed"],
        config_echo=doc.get("config", {}),
        trace=trace,
        final_recipes=np.asarray(doc["final_recipes"], dtype=float),
        final_outputs=np.asarray(doc["final_outputs"], dtype=float),
        classifications=tuple(tuple(c) for c in doc["classifications"]),
        targets=np.asarray(doc["targets"], dtype=float),
        output_error=float(doc["output_error"]),
        queries=doc.get("queries", {}),
        wall_clock_s=float(doc.get("wall_clock_s", 0.0)),
        emulator_val_mse=doc.get("emulator_val_mse"),
        notes=tuple(doc.get("notes", ())),
    )


@cli.command("report")
@click.argument("summaries", nargs=-1, type=click.Path(exists=True, dir_okay=False))
@out_option
def report_cmd(summaries, out_dir):
    """Re-render summary tables and figures from stored summary.json files."""
    if not summaries:
        raise ConfigError("report needs at least one summary.json path")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for path in summaries:
        path = Path(path)
        doc = _load_summary(path)
        report = _report_from_summary(doc, path)
        spec = scenarios.load_scenario_spec(report.scenario)
        stem = out / f"{report.scenario}_{report.method}_seed{report.seed}"
        from .reports import write_summary_table_csv

        write_summary_table_csv(report, spec, f"{stem}_summary_table.csv")
        if report.trace:
            plot_trace(report, f"{stem}_loss_curve.png")
        click.echo(f"{path} -> {stem}_summary_table.csv")


@cli.command("compare")
@click.argument("summaries", nargs=-1, type=click.Path(exists=True, dir_okay=False))
@out_option
def compare_cmd(summaries, out_dir):
    """Cross-method comparison table (+figure) from stored summaries."""
    if len(summaries) < 2:
        raise ConfigError("compare needs at least two summary.json paths")
    docs = [(_load_summary(Path(p)), Path(p)) for p in summaries]
    scenarios_seen = {d["scenario"] for d, _ in docs}
    if len(scenarios_seen) != 1:
        raise ConfigError(f"compare needs one scenario, got {sorted(scenarios_seen)}")
    reports = [_report_from_summary(d, p) for d, p in docs]
    spec = scenarios.load_scenario_spec(reports[0].scenario)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_comparison_csv(reports, spec, out / "comparison.csv")
    plot_error_bars(reports, out / "comparison.png", title="method comparison")
    click.echo(f"comparison of {len(reports)} runs -> {out / 'comparison.csv'}")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as err:  # --help and friends
        return err.exit_code
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 130
    except (click.ClickException,) as err:
        err.show()
        return 1
    except ConfigError as err:
        click.echo(f"configuration error: {err}", err=True)
        return 1
    except Exception as err:  # noqa: BLE001 - CLI boundary
        click.echo(f"runtime failure: {err}", err=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
