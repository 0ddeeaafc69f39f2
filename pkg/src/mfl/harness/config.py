"""Experiment configuration: JSON schema, defaults, validation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

from ..emulator import EmulatorConfig
from ..loops import MflConfig
from ..baselines import LsrsConfig
from .scenarios import SCENARIOS

METHODS = ("mfl", "lsrs-lr", "supervised-inverse", "random-search")
ABLATION_FLAGS = ("skip-loop-a", "skip-loop-b", "domain-randomization")

AUTO_LIPSCHITZ = "auto-lipschitz"


class ConfigError(ValueError):
    """A configuration problem the caller can fix; maps to CLI exit code 1."""


@dataclass(frozen=True)
class MachineKnobs:
    process_noise_std: float = 0.0
    input_noise_std: float = 0.0


@dataclass(frozen=True)
class SupervisedKnobs:
    epochs: int = 700
    learning_rate: float = 0.01


@dataclass(frozen=True)
class RandomSearchKnobs:
    n_samples: int = 100


@dataclass(frozen=True)
class PerturbationKnobs:
    noise_magnitudes: tuple[float, ...] = ()
    target_shifts: tuple[float, ...] = ()
    compare_with: tuple[str, ...] = ("supervised-inverse",)


@dataclass(frozen=True)
class AblationKnobs:
    flags: tuple[str, ...] = ABLATION_FLAGS
    score_repeats: int = 16


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str = "etch"
    method: str = "mfl"
    seeds: tuple[int, ...] = (0, 1, 2)
    dataset_size: int = 500
    target_count: int = 16
    machine: MachineKnobs = field(default_factory=MachineKnobs)
    emulator: EmulatorConfig = field(default_factory=EmulatorConfig)
    mfl: MflConfig = field(default_factory=MflConfig)
    lsrs: LsrsConfig = field(default_factory=LsrsConfig)
    supervised: SupervisedKnobs = field(default_factory=SupervisedKnobs)
    random_search: RandomSearchKnobs = field(default_factory=RandomSearchKnobs)
    perturbation: PerturbationKnobs = field(default_factory=PerturbationKnobs)
    ablation: AblationKnobs = field(default_factory=AblationKnobs)
    auto_rate: bool = False  # toy-linear only: standard rate from 0.5/Lipschitz

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; known: {sorted(SCENARIOS)}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; known: {list(METHODS)}")
        if self.dataset_size < 1 or self.target_count < 1:
            raise ConfigError("dataset_size and target_count must be >= 1")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if self.auto_rate and self.scenario != "toy-linear":
            raise ConfigError("auto-lipschitz rates are only defined for toy-linear")
        for flag in self.ablation.flags:
            if flag not in ABLATION_FLAGS:
                raise ConfigError(f"unknown ablation flag {flag!r}; known: {list(ABLATION_FLAGS)}")
        for m in self.perturbation.compare_with:
            if m not in METHODS:
                raise ConfigError(f"unknown comparison method {m!r}")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    def with_seeds(self, seeds) -> "ExperimentConfig":
        return replace(self, seeds=tuple(int(s) for s in seeds))

    def echo(self) -> dict:
        """JSON-ready dump of the effective configuration."""
        return {
            "scenario": self.scenario,
            "method": self.method,
            "seeds": list(self.seeds),
            "dataset_size": self.dataset_size,
            "target_count": self.target_count,
            "machine": {
                "process_noise_std": self.machine.process_noise_std,
                "input_noise_std": self.machine.input_noise_std,
            },
            "emulator": {
                "hidden": list(self.emulator.hidden),
                "epochs": self.emulator.epochs,
                "learning_rate": self.emulator.learning_rate,
                "dr_noise_std": self.emulator.dr_noise_std,
                "val_fraction": self.emulator.val_fraction,
            },
            "mfl": {
                "standard_rate": AUTO_LIPSCHITZ if self.auto_rate else self.mfl.standard_rate,
                "conservative_rate": self.mfl.conservative_rate,
                "pretrain_iters": self.mfl.pretrain_iters,
                "pretrain_gate_start": self.mfl.pretrain_gate_start,
                "machine_iters": self.mfl.machine_iters,
                "machine_gate_start": self.mfl.machine_gate_start,
                "sensitivity_threshold": self.mfl.sensitivity_threshold,
                "reverse_hidden": list(self.mfl.reverse_hidden),
                "early_stop": self.mfl.early_stop,
            },
            "lsrs": {
                "n_samples": self.lsrs.n_samples,
                "top_k": self.lsrs.top_k,
                "refine_iters": self.lsrs.refine_iters,
                "refine_rate": self.lsrs.refine_rate,
            },
            "supervised": {
                "epochs": self.supervised.epochs,
                "learning_rate": self.supervised.learning_rate,
            },
            "random_search": {"n_samples": self.random_search.n_samples},
            "perturbation": {
                "noise_magnitudes": list(self.perturbation.noise_magnitudes),
                "target_shifts": list(self.perturbation.target_shifts),
                "compare_with": list(self.perturbation.compare_with),
            },
            "ablation": {
                "flags": list(self.ablation.flags),
                "score_repeats": self.ablation.score_repeats,
            },
        }


def _take(section: dict, allowed: dict, where: str) -> dict:
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    return {k: section[k] for k in section}


def _tupled(values):
    return tuple(values) if isinstance(values, (list, tuple)) else (values,)


def config_from_dict(data: dict) -> ExperimentConfig:
    """Validate and build a full config from parsed JSON."""
    if not isinstance(data, dict):
        raise ConfigError("configuration root must be a JSON object")
    top_allowed = {
        "scenario", "method", "seeds", "dataset_size", "target_count",
        "machine", "emulator", "mfl", "lsrs", "supervised", "random_search",
        "perturbation", "ablation",
    }
    unknown = set(data) - top_allowed
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")

    kwargs: dict = {}
    for key in ("scenario", "method", "dataset_size", "target_count"):
        if key in data:
            kwargs[key] = data[key]
    if "seeds" in data:
        kwargs["seeds"] = _tupled(data["seeds"])

    try:
        if "machine" in data:
            sect = _take(data["machine"], {"process_noise_std": 0, "input_noise_std": 0}, "machine")
            kwargs["machine"] = MachineKnobs(**sect)
        if "emulator" in data:
            sect = _take(
                data["emulator"],
                {"hidden": 0, "epochs": 0, "learning_rate": 0, "dr_noise_std": 0,
                 "val_fraction": 0, "seed": 0},
                "emulator",
            )
            if "hidden" in sect:
                sect["hidden"] = tuple(sect["hidden"])
            kwargs["emulator"] = EmulatorConfig(**sect)
        if "mfl" in data:
            sect = _take(
                data["mfl"],
                {"standard_rate": 0, "conservative_rate": 0, "pretrain_iters": 0,
                 "pretrain_gate_start": 0, "machine_iters": 0, "machine_gate_start": 0,
                 "sensitivity_threshold": 0, "reverse_hidden": 0, "early_stop": 0,
                 "seed": 0},
                "mfl",
            )
            if sect.get("standard_rate") == AUTO_LIPSCHITZ:
                # Placeholder rates; the runner replaces them with 0.5/L.
                sect.pop("standard_rate")
                sect.pop("conservative_rate", None)
                kwargs["auto_rate"] = True
            if "reverse_hidden" in sect:
                sect["reverse_hidden"] = tuple(sect["reverse_hidden"])
            if "sensitivity_threshold" in sect and sect["sensitivity_threshold"] == "inf":
                sect["sensitivity_threshold"] = float("inf")
            kwargs["mfl"] = MflConfig(**sect)
        if "lsrs" in data:
            sect = _take(
                data["lsrs"],
                {"n_samples": 0, "top_k": 0, "refine_iters": 0, "refine_rate": 0, "seed": 0},
                "lsrs",
            )
            kwargs["lsrs"] = LsrsConfig(**sect)
        if "supervised" in data:
            sect = _take(data["supervised"], {"epochs": 0, "learning_rate": 0}, "supervised")
            kwargs["supervised"] = SupervisedKnobs(**sect)
        if "random_search" in data:
            sect = _take(data["random_search"], {"n_samples": 0}, "random_search")
            kwargs["random_search"] = RandomSearchKnobs(**sect)
        if "perturbation" in data:
            sect = _take(
                data["perturbation"],
                {"noise_magnitudes": 0, "target_shifts": 0, "compare_with": 0},
                "perturbation",
            )
            for k in ("noise_magnitudes", "target_shifts", "compare_with"):
                if k in sect:
                    sect[k] = _tupled(sect[k])
            kwargs["perturbation"] = PerturbationKnobs(**sect)
        if "ablation" in data:
            sect = _take(data["ablation"], {"flags": 0, "score_repeats": 0}, "ablation")
            if "flags" in sect:
                sect["flags"] = _tupled(sect["flags"])
            kwargs["ablation"] = AblationKnobs(**sect)
        return ExperimentConfig(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err)) from err


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config {path} is not valid JSON: {err}") from err
    return config_from_dict(data)
