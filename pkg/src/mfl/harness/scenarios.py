"""Registered process scenarios and seeded construction of their pieces.

Each scenario bundles a process spec, a fixed machine construction seed and
calibration point (so "the etch machine" is the same object in every run),
and target-sampling defaults. Experiment seeds vary the dataset, targets and
model initializations, never the machine itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import process

# Sub-seed roles: every random stream in a run is derived from
# (role id, experiment seed) so streams never collide or alias.
_ROLE_IDS = {
    "dataset": 1,
    "targets": 2,
    "emulator": 3,
    "reverse": 4,
    "supervised": 5,
    "lsrs": 6,
    "random_search": 7,
    "machine_noise": 8,
    "perturbation": 9,
    "scoring": 10,
}


def derive_seed(seed: int, role: str) -> int:
    """Stable per-role sub-seed for one experiment seed."""
    return int(np.random.SeedSequence([_ROLE_IDS[role], int(seed)]).generate_state(1)[0])


@dataclass(frozen=True)
class ScenarioDef:
    name: str
    spec_name: str
    machine_seed: int
    calibration: tuple[float, ...]
    gain: float
    hidden: tuple[int, ...]
    target_spread: float
    target_margin: float
    # Linear (identity-output) reverse model; used by the linear toy so the
    # training loss stays exactly quadratic for convergence studies.
    linear_reverse: bool = False


SCENARIOS = {
    "etch": ScenarioDef(
        name="etch",
        spec_name="etch",
        machine_seed=11,
        calibration=(2500.0, 125.0, 400.0, 200.0, 0.0, 200.0),
        gain=0.9,
        hidden=(32, 32),
        target_spread=0.25,
        target_margin=0.25,
    ),
    "cvd": ScenarioDef(
        name="cvd",
        spec_name="cvd",
        machine_seed=12,
        calibration=(1050.0, 1150.0, 0.0, 5.05),
        gain=0.9,
        hidden=(32, 32),
        target_spread=0.25,
        target_margin=0.25,
    ),
    "bonding": ScenarioDef(
        name="bonding",
        spec_name="wire_bonding",
        machine_seed=13,
        calibration=(15.0, 0.0, 0.0),
        gain=0.9,
        hidden=(32, 32),
        target_spread=0.25,
        target_margin=0.25,
    ),
    "toy-linear": ScenarioDef(
        name="toy-linear",
        spec_name="toy_linear",
        machine_seed=5,
        calibration=(0.0, 0.0),
        gain=1.0,
        hidden=(),
        target_spread=0.4,
        target_margin=0.1,
        linear_reverse=True,
    ),
}


def scenario(name: str) -> ScenarioDef:
    if name not in SCENARIOS:
        raise KeyError(f"unknown scenario {name!r}; known: {sorted(SCENARIOS)}")
    return SCENARIOS[name]


def load_scenario_spec(name: str) -> process.ProcessSpec:
    return process.load_spec(scenario(name).spec_name)


def build_machine(
    name: str,
    process_noise_std: float = 0.0,
    input_noise_std: float = 0.0,
    noise_seed: int = 0,
) -> process.GroundTruthMachine:
    """Fresh instance of a scenario's fixed machine (counter starts at 0)."""
    d = scenario(name)
    spec = process.load_spec(d.spec_name)
    return process.build_machine(
        spec,
        seed=d.machine_seed,
        calibration=np.asarray(d.calibration),
        hidden=d.hidden,
        gain=d.gain,
        process_noise_std=process_noise_std,
        input_noise_std=input_noise_std,
        noise_seed=noise_seed,
    )


def build_targets(
    name: str, n_targets: int, seed: int, machine=None
) -> process.TargetSet:
    """Scenario targets for one experiment seed (machine counter untouched)."""
    d = scenario(name)
    machine = machine if machine is not None else build_machine(name)
    return process.sample_targets(
        machine,
        n_targets,
        seed=derive_seed(seed, "targets"),
        spread=d.target_spread,
        margin=d.target_margin,
    )
