"""Experiment execution: single runs, robustness sweeps, ablation pairs.

Every sub-run owns a fresh machine instance (same hidden map, fresh counter
and noise stream), so nothing is shared across seeds, ladder rungs or
ablation arms. All randomness is derived from (role, seed) sub-seeds, making
each (config, seed) pair fully deterministic.
"""

from __future__ import annotations

import time
from dataclasses import replace

import numpy as np

from .. import process
from ..baselines import lsrs_lr, random_search, supervised_inverse
from ..emulator import train_emulator
from ..loops import (
    MflConfig,
    TraceRow,
    mfl_train,
    quadratic_lipschitz_constant,
    standardization_stats,
)
from . import scenarios
from .config import ConfigError, ExperimentConfig
from .reports import RunReport

_NOISE_MODE_ID = 102


def _build_machine(config: ExperimentConfig, seed: int) -> process.GroundTruthMachine:
    return scenarios.build_machine(
        config.scenario,
        process_noise_std=config.machine.process_noise_std,
        input_noise_std=config.machine.input_noise_std,
        noise_seed=scenarios.derive_seed(seed, "machine_noise"),
    )


def _bundle(config: ExperimentConfig, seed: int):
    """Machine (fresh counter), dataset sampled on it, achievable targets."""
    machine = _build_machine(config, seed)
    dataset = process.sample_dataset(
        machine, config.dataset_size, seed=scenarios.derive_seed(seed, "dataset")
    )
    targets = scenarios.build_targets(
        config.scenario, config.target_count, seed=seed, machine=machine
    )
    return machine, dataset, targets


def _resolved_mfl_cfg(config: ExperimentConfig, machine, targets_normalized) -> MflConfig:
    cfg = config.mfl
    if config.auto_rate:
        # Linear toy: constant rate 0.5 / Lipschitz constant of the quadratic
        # loss (computed on the standardized reverse inputs).
        A = machine.jacobian_normalized(np.zeros(machine.spec.input_dim))
        center, scale = standardization_stats(targets_normalized)
        L = quadratic_lipschitz_constant(A, (targets_normalized - center) / scale)
        rate = 0.5 / L
        cfg = replace(cfg, standard_rate=rate, conservative_rate=0.99 * rate)
    return cfg


def _score_on_machine(machine, model, targets_normalized):
    """One scoring pass: recipes, outputs, classifications, error, queries."""
    spec = machine.spec
    X = model.predict(targets_normalized)
    V = machine.evaluate_normalized_batch(X)
    resid = V - targets_normalized
    error = float(np.sqrt((resid**2).sum(axis=1).mean()))
    outputs = spec.denormalize_outputs(V)
    recipes = spec.denormalize_inputs(X)
    classifications = tuple(spec.classify(z) for z in outputs)
    return recipes, outputs, classifications, error


def run_single(
    config: ExperimentConfig,
    seed: int,
    target_override: np.ndarray | None = None,
    extra_notes: tuple[str, ...] = (),
) -> RunReport:
    """Execute the configured method once for one seed.

    ``target_override`` replaces the scenario's sampled targets with raw
    normalized target vectors (used by the robustness perturbations, which
    deliberately may violate the meets rules).
    """
    started = time.perf_counter()
    machine, dataset, target_set = _bundle(config, seed)
    spec = machine.spec
    scen = scenarios.scenario(config.scenario)
    if target_override is not None:
        Z = np.asarray(target_override, dtype=float)
    else:
        Z = target_set.normalized()
    targets_phys = spec.denormalize_outputs(Z)
    notes = list(extra_notes) + [f"targets: {len(Z)} vectors"] + list(spec.notes)
    emu_cfg = replace(config.emulator, seed=scenarios.derive_seed(seed, "emulator"))

    if config.method == "mfl":
        mfl_cfg = _resolved_mfl_cfg(config, machine, Z)
        mfl_cfg = replace(mfl_cfg, seed=scenarios.derive_seed(seed, "reverse"))
        result = mfl_train(
            dataset, machine, targets_phys, emu_cfg, mfl_cfg,
            bounded_reverse=not scen.linear_reverse,
        )
        queries = {
            "dataset": len(dataset),
            "loop_b": result.queries["loop_b"],
            "scoring": result.queries["scoring"],
            "counter_delta": machine.eval_count,
        }
        report = RunReport(
            method="mfl",
            scenario=config.scenario,
            seed=seed,
            config_echo=config.echo(),
            trace=result.trace,
            final_recipes=result.final_recipes,
            final_outputs=result.final_outputs,
            classifications=result.classifications,
            targets=targets_phys,
            output_error=result.output_error,
            queries=queries,
            wall_clock_s=time.perf_counter() - started,
            emulator_val_mse=result.emulator_val_mse,
            notes=tuple(notes),
            extras={
                "loop_b_passes": result.loop_b_passes,
                "loop_b_updates": result.loop_b_updates,
                "stopped_early": result.stopped_early,
                "meets_all": result.meets_all,
            },
        )
    elif config.method == "supervised-inverse":
        sup = supervised_inverse(
            dataset, spec,
            epochs=config.supervised.epochs,
            learning_rate=config.supervised.learning_rate,
            seed=scenarios.derive_seed(seed, "supervised"),
        )
        recipes, outputs, cls, error = _score_on_machine(machine, sup.model, Z)
        trace = tuple(
            TraceRow("S", epoch, train_mse, float("nan"),
                     config.supervised.learning_rate, 0, True, 0, float("nan"))
            for epoch, train_mse, _ in sup.history
        )
        queries = {
            "dataset": len(dataset),
            "scoring": len(Z),
            "counter_delta": machine.eval_count,
        }
        report = RunReport(
            method="supervised-inverse", scenario=config.scenario, seed=seed,
            config_echo=config.echo(), trace=trace,
            final_recipes=recipes, final_outputs=outputs, classifications=cls,
            targets=targets_phys, output_error=error, queries=queries,
            wall_clock_s=time.perf_counter() - started,
            notes=tuple(notes + ["baseline trained on reversed dataset pairs"]),
            extras={"meets_all": all(all(c == "meets" for c in row) for row in cls)},
        )
    elif config.method in ("lsrs-lr", "random-search"):
        trained = train_emulator(dataset, spec, emu_cfg)
        y_target = Z[0]
        lo = -np.ones(spec.input_dim)
        hi = np.ones(spec.input_dim)
        if config.method == "lsrs-lr":
            cfg = replace(config.lsrs, seed=scenarios.derive_seed(seed, "lsrs"))
            res = lsrs_lr(trained.net, y_target, lo, hi, cfg)
            x_star, emu_loss = res.x_star, res.final_loss
            trace = tuple(
                TraceRow("LR", k, cand.final_loss, float("nan"),
                         cfg.refine_rate, 0, True, 0, float("nan"))
                for k, cand in enumerate(res.candidates)
            )
            extras = {
                "stage1_best_loss": float(res.stage1_losses.min()),
                "best_so_far_loss": min(c.best_loss for c in res.candidates),
                "emulator_loss": emu_loss,
            }
        else:
            x_star, emu_loss = random_search(
                trained.net, y_target, lo, hi,
                n_samples=config.random_search.n_samples,
                seed=scenarios.derive_seed(seed, "random_search"),
            )
            trace = (TraceRow("RS", 0, emu_loss, float("nan"), float("nan"),
                              0, False, 0, float("nan")),)
            extras = {"emulator_loss": emu_loss}
        v = machine.evaluate_normalized(x_star)
        error = float(np.sqrt(((v - y_target) ** 2).sum()))
        outputs = spec.denormalize_outputs(v[None, :])
        recipes = spec.denormalize_inputs(x_star[None, :])
        cls = (spec.classify(outputs[0]),)
        queries = {
            "dataset": len(dataset),
            "scoring": 1,
            "counter_delta": machine.eval_count,
        }
        report = RunReport(
            method=config.method, scenario=config.scenario, seed=seed,
            config_echo=config.echo(), trace=trace,
            final_recipes=recipes, final_outputs=outputs, classifications=cls,
            targets=targets_phys[:1], output_error=error, queries=queries,
            wall_clock_s=time.perf_counter() - started,
            emulator_val_mse=trained.val_mse,
            notes=tuple(notes + ["single-target method: optimizes the first target only"]),
            extras=extras,
        )
    else:  # pragma: no cover - config validation rejects this earlier
        raise ConfigError(f"unknown method {config.method!r}")

    if machine.clip_count:
        report = replace(
            report,
            notes=report.notes + (f"machine clipped {machine.clip_count} out-of-range recipes",),
        )
    report.validate(spec)
    return report


def run(config: ExperimentConfig) -> list[RunReport]:
    """One report per configured seed; deterministic per (config, seed)."""
    return [run_single(config, seed) for seed in config.seeds]


# ---------------------------------------------------------------------------
# Robustness sweeps
# ---------------------------------------------------------------------------


def _perturbed_targets(Z, kind: str, magnitude: float, seed: int, rung: int):
    """Perturb a normalized target set; returns (targets, note)."""
    if kind == "target_shift":
        if magnitude == 0.0:
            return Z, "shift 0 (reference)"
        lo_env = Z.min(axis=0)
        hi_env = Z.max(axis=0)
        shifted = Z + magnitude
        clipped = np.clip(shifted, lo_env, hi_env)
        n_clipped = int(np.sum(shifted != clipped))
        return clipped, (
            f"shift {magnitude!r} applied; {n_clipped} entries clipped to the "
            "achievable envelope of the original targets"
        )
    if kind == "target_noise":
        if magnitude == 0.0:
            return Z, "noise 0 (reference)"
        rng = np.random.default_rng(
            np.random.SeedSequence([_NOISE_MODE_ID, seed, rung])
        )
        return Z + rng.normal(0.0, magnitude, Z.shape), f"attack noise std {magnitude!r}"
    raise ConfigError(f"unknown perturbation kind {kind!r}")


def robustness_sweep(config: ExperimentConfig) -> list[dict]:
    """Re-run the method (plus comparison methods) under target perturbations.

    For every rung of the shift and noise ladders and every seed, the target
    set is perturbed in normalized units and each method re-run against it.
    Returns flat rows with the rung metadata, final errors and reports.
    """
    pert = config.perturbation
    if not pert.target_shifts and not pert.noise_magnitudes:
        raise ConfigError("robustness sweep needs target_shifts or noise_magnitudes")
    modes = []
    if pert.target_shifts:
        shifts = list(pert.target_shifts)
        if 0.0 not in shifts:
            shifts = [0.0] + shifts
        modes.append(("target_shift", shifts))
    if pert.noise_magnitudes:
        noises = list(pert.noise_magnitudes)
        if 0.0 not in noises:
            noises = [0.0] + noises
        modes.append(("target_noise", noises))

    methods = [config.method] + [m for m in pert.compare_with if m != config.method]
    rows = []
    for kind, magnitudes in modes:
        for rung, magnitude in enumerate(magnitudes):
            for seed in config.seeds:
                machine, _, target_set = _bundle(config, seed)
                Z = target_set.normalized()
                perturbed, note = _perturbed_targets(Z, kind, float(magnitude), seed, rung)
                for method in methods:
                    sub = replace(config, method=method)
                    report = run_single(
                        sub, seed, target_override=perturbed,
                        extra_notes=(f"robustness {kind}: {note}",),
                    )
                    rows.append(
                        {
                            "kind": kind,
                            "magnitude": float(magnitude),
                            "seed": seed,
                            "method": method,
                            "output_error": report.output_error,
                            "meets_all": report.meets_all,
                            "report": report,
                        }
                    )
    return rows


# ---------------------------------------------------------------------------
# Ablations
# ---------------------------------------------------------------------------


def _rescore_with_repeats(config, seed, report, repeats: int):
    """Average the final error over fresh scoring passes on a noisy machine."""
    if repeats <= 1:
        return report.output_error, 0
    machine = _build_machine(config, seed)
    machine = machine.fork(noise_seed=scenarios.derive_seed(seed, "scoring"))
    spec = machine.spec
    X = spec.normalize_inputs(report.final_recipes)
    Z = spec.normalize_outputs(report.targets)
    errors = []
    for _ in range(repeats):
        V = machine.evaluate_normalized_batch(X)
        errors.append(float(np.sqrt(((V - Z) ** 2).sum(axis=1).mean())))
    return float(np.mean(errors)), machine.eval_count


def ablation(config: ExperimentConfig) -> list[dict]:
    """Paired runs per ablation flag, differing only in that flag."""
    if not config.ablation.flags:
        raise ConfigError("ablation needs at least one flag")
    rows = []
    for flag in config.ablation.flags:
        for seed in config.seeds:
            if flag == "skip-loop-a":
                full_cfg = config
                ablated_cfg = replace(
                    config,
                    mfl=replace(config.mfl, pretrain_iters=0, pretrain_gate_start=0),
                )
            elif flag == "skip-loop-b":
                full_cfg = config
                ablated_cfg = replace(
                    config,
                    mfl=replace(config.mfl, machine_iters=0, machine_gate_start=0),
                )
            elif flag == "domain-randomization":
                # "full" arm keeps randomization on, the ablated arm disables it.
                full_cfg = config
                ablated_cfg = replace(
                    config, emulator=replace(config.emulator, dr_noise_std=0.0)
                )
            else:  # pragma: no cover - config validation rejects this earlier
                raise ConfigError(f"unknown ablation flag {flag!r}")

            for arm, arm_cfg in (("full", full_cfg), ("ablated", ablated_cfg)):
                sub = replace(arm_cfg, method="mfl")
                report = run_single(sub, seed, extra_notes=(f"ablation {flag}: {arm} arm",))
                error = report.output_error
                extra_queries = 0
                if flag == "domain-randomization" and config.ablation.score_repeats > 1:
                    error, extra_queries = _rescore_with_repeats(
                        sub, seed, report, config.ablation.score_repeats
                    )
                rows.append(
                    {
                        "flag": flag,
                        "arm": arm,
                        "seed": seed,
                        "output_error": error,
                        "loop_b_passes": report.extras.get("loop_b_passes"),
                        "meets_all": report.extras.get("meets_all"),
                        "stopped_early": report.extras.get("stopped_early"),
                        "rescore_queries": extra_queries,
                        "report": report,
                    }
                )
    return rows
