"""Synthetic ground-truth process machines and their bound/target metadata.

Each process (plasma etching, chemical vapor deposition, wire bonding, plus a
linear toy) is described by a :class:`ProcessSpec` loaded from a bundled JSON
file: named input dimensions with box bounds, named output dimensions with
target-satisfaction rules, and an output span used for normalization.

The machine standing in for the real equipment is a seeded tanh network
operating in normalized space, wrapped in an affine output calibration so that
the bounds-midpoint recipe produces a chosen in-target output vector exactly.
Machines count every evaluation, clip out-of-range inputs like saturating
hardware, and can add Gaussian input/process noise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import nn

MEETS = "meets"
CLOSE = "close"
FAR = "far"

BUILTIN_SPECS = ("etch", "cvd", "wire_bonding", "toy_linear")


@dataclass(frozen=True)
class TargetRule:
    """Target-satisfaction rule for one output metric.

    ``interval`` rules meet inside [meets_lo, meets_hi]; ``at_least`` rules
    meet at or above meets_lo. The optional close band is a superset of the
    meets band; everything else is far. Boundary values classify into the
    better category (closed intervals).
    """

    kind: str
    meets_lo: float
    meets_hi: float
    close_lo: float | None = None
    close_hi: float | None = None

    def __post_init__(self):
        if self.kind not in ("interval", "at_least"):
            raise ValueError(f"unknown rule kind {self.kind!r}")
        if self.meets_lo > self.meets_hi:
            raise ValueError("empty meets range")
        if self.has_close:
            if self.close_lo > self.meets_lo or self.close_hi < self.meets_hi:
                raise ValueError("close band must contain the meets band")

    @property
    def has_close(self) -> bool:
        return self.close_lo is not None and self.close_hi is not None

    def classify(self, value: float) -> str:
        if not np.isfinite(value):
            return FAR
        if self.meets_lo <= value <= self.meets_hi:
            return MEETS
        if self.has_close and self.close_lo <= value <= self.close_hi:
            return CLOSE
        return FAR

    def meets(self, value: float) -> bool:
        return self.classify(value) == MEETS

    def meets_with_margin(self, value: float, margin: float, span: float) -> bool:
        """Meets the rule with a safety margin away from the band edges.

        ``margin`` is a fraction of the band half-width for interval rules.
        For one-sided rules the close-band gap stands in for the width (or a
        tenth of ``span`` when no close band exists).
        """
        if margin <= 0:
            return self.meets(value)
        if np.isinf(self.meets_hi):
            width = (self.meets_lo - self.close_lo) if self.has_close else 0.1 * span
            return value >= self.meets_lo + margin * width
        half = 0.5 * (self.meets_hi - self.meets_lo)
        mid = 0.5 * (self.meets_hi + self.meets_lo)
        return abs(value - mid) <= (1.0 - margin) * half

    def describe(self) -> str:
        if self.kind == "at_least":
            return f">= {_fmt(self.meets_lo)}"
        return f"{_fmt(self.meets_lo)} to {_fmt(self.meets_hi)}"


def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


@dataclass(frozen=True)
class InputVar:
    name: str
    unit: str
    lo: float
    hi: float

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)) or self.lo >= self.hi:
            raise ValueError(f"input {self.name!r} needs finite lo < hi")


@dataclass(frozen=True)
class OutputVar:
    name: str
    unit: str
    span_lo: float
    span_hi: float
    rule: TargetRule

    def __post_init__(self):
        if self.span_lo >= self.span_hi:
            raise ValueError(f"output {self.name!r} needs span lo < hi")


@dataclass(frozen=True)
class ProcessSpec:
    """Named inputs with box bounds and named outputs with target rules."""

    name: str
    title: str
    inputs: tuple[InputVar, ...]
    outputs: tuple[OutputVar, ...]
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "outputs", tuple(self.outputs))
        object.__setattr__(self, "notes", tuple(self.notes))
        if not self.inputs or not self.outputs:
            raise ValueError("a process needs at least one input and one output")

    # -- dimension helpers ---------------------------------------------------

    @property
    def input_dim(self) -> int:
        return len(self.inputs)

    @property
    def output_dim(self) -> int:
        return len(self.outputs)

    def input_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([v.lo for v in self.inputs], dtype=float)
        hi = np.array([v.hi for v in self.inputs], dtype=float)
        return lo, hi

    def output_spans(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([v.span_lo for v in self.outputs], dtype=float)
        hi = np.array([v.span_hi for v in self.outputs], dtype=float)
        return lo, hi

    def input_midpoint(self) -> np.ndarray:
        lo, hi = self.input_bounds()
        return 0.5 * (lo + hi)

    # -- normalization: affine map of [lo, hi] onto [-1, 1] per dimension ----

    def normalize_inputs(self, x) -> np.ndarray:
        lo, hi = self.input_bounds()
        return _normalize(np.asarray(x, float), lo, hi)

    def denormalize_inputs(self, u) -> np.ndarray:
        lo, hi = self.input_bounds()
        return _denormalize(np.asarray(u, float), lo, hi)

    def normalize_outputs(self, z) -> np.ndarray:
        lo, hi = self.output_spans()
        return _normalize(np.asarray(z, float), lo, hi)

    def denormalize_outputs(self, v) -> np.ndarray:
        lo, hi = self.output_spans()
        return _denormalize(np.asarray(v, float), lo, hi)

    def clip_inputs(self, x) -> np.ndarray:
        lo, hi = self.input_bounds()
        return np.clip(np.asarray(x, float), lo, hi)

    def inputs_within_bounds(self, x, atol: float = 0.0) -> bool:
        lo, hi = self.input_bounds()
        x = np.asarray(x, float)
        return bool(np.all(x >= lo - atol) and np.all(x <= hi + atol))

    # -- target classification ------------------------------------------------

    def classify(self, z) -> tuple[str, ...]:
        z = np.asarray(z, float)
        if z.shape != (self.output_dim,):
            raise ValueError(f"expected {self.output_dim} output values, got {z.shape}")
        return tuple(var.rule.classify(v) for var, v in zip(self.outputs, z))

    def meets_all(self, z) -> bool:
        return all(c == MEETS for c in self.classify(z))

    # -- (de)serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "name": self.name,
            "title": self.title,
            "notes": list(self.notes),
            "inputs": [
                {"name": v.name, "unit": v.unit, "lo": v.lo, "hi": v.hi}
                for v in self.inputs
            ],
            "outputs": [
                {
                    "name": v.name,
                    "unit": v.unit,
                    "span": [v.span_lo, v.span_hi],
                    "rule": _rule_to_dict(v.rule),
                }
                for v in self.outputs
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ProcessSpec":
        if data.get("format_version") != 1:
            raise ValueError("unsupported process spec format version")
        inputs = tuple(
            InputVar(d["name"], d["unit"], float(d["lo"]), float(d["hi"]))
            for d in data["inputs"]
        )
        outputs = tuple(
            OutputVar(
                d["name"],
                d["unit"],
                float(d["span"][0]),
                float(d["span"][1]),
                _rule_from_dict(d["rule"]),
            )
            for d in data["outputs"]
        )
        return cls(
            name=data["name"],
            title=data.get("title", data["name"]),
            inputs=inputs,
            outputs=outputs,
            notes=tuple(data.get("notes", ())),
        )


def _normalize(x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    return (2.0 * x - (hi + lo)) / (hi - lo)


def _denormalize(u: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    return 0.5 * (u * (hi - lo) + (hi + lo))


def _rule_to_dict(rule: TargetRule) -> dict:
    if rule.kind == "at_least":
        d = {"kind": "at_least", "meets": rule.meets_lo}
        if rule.has_close:
            d["close"] = rule.close_lo
        return d
    d = {"kind": "interval", "meets": [rule.meets_lo, rule.meets_hi]}
    if rule.has_close:
        d["close"] = [rule.close_lo, rule.close_hi]
    return d


def _rule_from_dict(d: dict) -> TargetRule:
    kind = d["kind"]
    if kind == "at_least":
        close = d.get("close")
        return TargetRule(
            kind="at_least",
            meets_lo=float(d["meets"]),
            meets_hi=np.inf,
            close_lo=None if close is None else float(close),
            close_hi=None if close is None else np.inf,
        )
    meets = d["meets"]
    close = d.get("close")
    return TargetRule(
        kind="interval",
        meets_lo=float(meets[0]),
        meets_hi=float(meets[1]),
        close_lo=None if close is None else float(close[0]),
        close_hi=None if close is None else float(close[1]),
    )


def load_spec(name: str) -> ProcessSpec:
    """Load one of the bundled process specs by name."""
    if name not in BUILTIN_SPECS:
        raise ValueError(f"unknown process spec {name!r}; available: {BUILTIN_SPECS}")
    text = resources.files("mfl").joinpath(f"specs/{name}.json").read_text()
    return ProcessSpec.from_dict(json.loads(text))


def load_spec_file(path) -> ProcessSpec:
    with open(path) as fh:
        return ProcessSpec.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# Ground-truth machine
# ---------------------------------------------------------------------------


class GroundTruthMachine:
    """Seeded, hidden, smooth stand-in for the real process equipment.

    Physical output for input x:

        z(x) = calibration + gain * halfspan * (net(u) - net(0)) + noise

    where u is the normalized (and clipped) input and net is a fixed tanh
    network. The bounds-midpoint input therefore produces the calibration
    vector exactly when noise is off. Every evaluation increments a counter;
    out-of-range inputs are clipped (and counted) rather than rejected.
    """

    def __init__(
        self,
        spec: ProcessSpec,
        net: nn.DenseNet,
        calibration,
        gain: float = 0.5,
        process_noise_std: float = 0.0,
        input_noise_std: float = 0.0,
        noise_seed: int = 0,
        _construction_seed: int | None = None,
    ):
        calibration = np.asarray(calibration, dtype=float)
        if calibration.shape != (spec.output_dim,):
            raise ValueError(
                f"calibration needs {spec.output_dim} values, got {calibration.shape}"
            )
        if not spec.meets_all(calibration):
            bad = [
                f"{var.name}={val} ({cls})"
                for var, val, cls in zip(spec.outputs, calibration, spec.classify(calibration))
                if cls != MEETS
            ]
            raise ValueError("calibration violates meets rules: " + ", ".join(bad))
        if net.input_dim != spec.input_dim or net.output_dim != spec.output_dim:
            raise ValueError("machine net dimensions do not match the process spec")
        if gain <= 0:
            raise ValueError("gain must be positive")
        self._spec = spec
        self._net = net
        self._calibration = calibration
        self._gain = float(gain)
        self._process_noise_std = float(process_noise_std)
        self._input_noise_std = float(input_noise_std)
        self._noise_seed = int(noise_seed)
        self._rng = np.random.default_rng(noise_seed)
        self._construction_seed = _construction_seed
        span_lo, span_hi = spec.output_spans()
        self._halfspan = 0.5 * (span_hi - span_lo)
        self._base = nn.forward(net, np.zeros(spec.input_dim))
        self.eval_count = 0
        self.clip_count = 0

    # -- metadata --------------------------------------------------------------

    @property
    def spec(self) -> ProcessSpec:
        return self._spec

    @property
    def calibration(self) -> np.ndarray:
        return self._calibration.copy()

    @property
    def process_noise_std(self) -> float:
        return self._process_noise_std

    @property
    def input_noise_std(self) -> float:
        return self._input_noise_std

    def fork(
        self,
        noise_seed: int | None = None,
        process_noise_std: float | None = None,
        input_noise_std: float | None = None,
    ) -> "GroundTruthMachine":
        """Independent machine with the same hidden map and a fresh counter."""
        return GroundTruthMachine(
            self._spec,
            self._net,
            self._calibration,
            self._gain,
            self._process_noise_std if process_noise_std is None else process_noise_std,
            self._input_noise_std if input_noise_std is None else input_noise_std,
            self._noise_seed if noise_seed is None else noise_seed,
            _construction_seed=self._construction_seed,
        )

    # -- evaluation --------------------------------------------------------------

    def evaluate_batch(self, X) -> np.ndarray:
        """Physical outputs for a batch of physical inputs; counts len(X) queries."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self._spec.input_dim:
            raise ValueError(f"expected (B, {self._spec.input_dim}) inputs, got {X.shape}")
        if not np.all(np.isfinite(X)):
            raise ValueError("machine inputs must be finite")
        clipped = self._spec.clip_inputs(X)
        self.clip_count += int(np.sum(np.any(clipped != X, axis=1)))
        U = self._spec.normalize_inputs(clipped)
        if self._input_noise_std > 0:
            U = np.clip(
                U + self._rng.normal(0.0, self._input_noise_std, U.shape), -1.0, 1.0
            )
        raw = nn.forward_batch(self._net, U)
        Z = self._calibration + self._gain * self._halfspan * (raw - self._base)
        if self._process_noise_std > 0:
            Z = Z + self._halfspan * self._rng.normal(0.0, self._process_noise_std, Z.shape)
        self.eval_count += X.shape[0]
        return Z

    def evaluate(self, x) -> np.ndarray:
        """Physical output for one physical input; counts one query."""
        x = np.asarray(x, dtype=float)
        if x.ndim != 1:
            raise ValueError("evaluate expects a single input vector")
        return self.evaluate_batch(x[None, :])[0]

    def evaluate_normalized_batch(self, U) -> np.ndarray:
        """Normalized outputs for normalized inputs; counts len(U) queries."""
        X = self._spec.denormalize_inputs(np.asarray(U, dtype=float))
        return self._spec.normalize_outputs(self.evaluate_batch(X))

    def evaluate_normalized(self, u) -> np.ndarray:
        U = np.asarray(u, dtype=float)[None, :]
        return self.evaluate_normalized_batch(U)[0]

    # -- differentiation ports ------------------------------------------------

    def jacobian_normalized(self, u) -> np.ndarray:
        """Exact Jacobian of the noise-free normalized map at u (no query cost)."""
        u = np.clip(np.asarray(u, dtype=float), -1.0, 1.0)
        return self._gain * nn.jacobian_input(self._net, u)

    def jacobian_normalized_batch(self, U) -> np.ndarray:
        U = np.clip(np.asarray(U, dtype=float), -1.0, 1.0)
        return self._gain * nn.batch_input_jacobians(self._net, U)

    def fd_jacobian_normalized(self, u, step: float = 1e-4) -> np.ndarray:
        """Central-difference Jacobian through real queries (2 * input_dim of them)."""
        u = np.asarray(u, dtype=float)
        d = self._spec.input_dim
        probes = np.repeat(u[None, :], 2 * d, axis=0)
        for i in range(d):
            probes[2 * i, i] += step
            probes[2 * i + 1, i] -= step
        V = self.evaluate_normalized_batch(probes)
        cols = [(V[2 * i] - V[2 * i + 1]) / (2 * step) for i in range(d)]
        return np.stack(cols, axis=1)


def build_machine(
    spec: ProcessSpec,
    seed: int,
    calibration,
    hidden: tuple[int, ...] = (32, 32),
    gain: float = 0.5,
    process_noise_std: float = 0.0,
    input_noise_std: float = 0.0,
    noise_seed: int | None = None,
) -> GroundTruthMachine:
    """Construct a seeded machine calibrated so evaluate(midpoint) == calibration."""
    dims = [spec.input_dim, *hidden, spec.output_dim]
    net = nn.init_net(dims, seed, output_activation="identity")
    return GroundTruthMachine(
        spec,
        net,
        calibration,
        gain=gain,
        process_noise_std=process_noise_std,
        input_noise_std=input_noise_std,
        noise_seed=seed if noise_seed is None else noise_seed,
        _construction_seed=seed,
    )


# ---------------------------------------------------------------------------
# Datasets and target sets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Dataset:
    """Paired machine recordings (inputs, outputs) in physical units."""

    x: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        z = np.asarray(self.z, dtype=float)
        if x.ndim != 2 or z.ndim != 2 or x.shape[0] != z.shape[0]:
            raise ValueError("dataset needs matching 2-D input/output arrays")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)

    def __len__(self) -> int:
        return self.x.shape[0]


@dataclass(frozen=True)
class TargetSet:
    """Desired output vectors; every row satisfies its spec's meets rules."""

    z: np.ndarray
    spec: ProcessSpec = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        if z.ndim != 2:
            raise ValueError("targets must be a 2-D array")
        if self.spec is not None:
            if z.shape[1] != self.spec.output_dim:
                raise ValueError("target width does not match the spec")
            for j, row in enumerate(z):
                if not self.spec.meets_all(row):
                    raise ValueError(f"target {j} violates a meets rule: {row}")
        object.__setattr__(self, "z", z)

    def __len__(self) -> int:
        return self.z.shape[0]

    def normalized(self, spec: ProcessSpec | None = None) -> np.ndarray:
        spec = spec or self.spec
        return spec.normalize_outputs(self.z)


def sample_dataset(
    machine: GroundTruthMachine,
    n: int,
    seed: int,
    input_noise_std: float = 0.0,
) -> Dataset:
    """Draw recipes from a truncated Gaussian around the bounds midpoint.

    Per-dimension std is a quarter of the range; samples are clipped to
    bounds. ``input_noise_std`` (normalized units) optionally perturbs the
    recipe actually fed to the machine while the clean recipe is recorded,
    emulating actuation noise.
    """
    if n < 1:
        raise ValueError("dataset size must be at least 1")
    spec = machine.spec
    lo, hi = spec.input_bounds()
    rng = np.random.default_rng(seed)
    mid = 0.5 * (lo + hi)
    std = 0.25 * (hi - lo)
    X = np.clip(rng.normal(mid, std, size=(n, spec.input_dim)), lo, hi)
    if input_noise_std > 0:
        noise = rng.normal(0.0, input_noise_std, X.shape) * (0.5 * (hi - lo))
        X_fed = np.clip(X + noise, lo, hi)
    else:
        X_fed = X
    Z = machine.evaluate_batch(X_fed)
    return Dataset(X, Z)


def sample_targets(
    machine: GroundTruthMachine,
    n_targets: int,
    seed: int,
    spread: float = 0.25,
    margin: float = 0.25,
    max_tries: int = 500,
) -> TargetSet:
    """Generate achievable targets by probing a noise-free copy of the machine.

    Normalized recipes are drawn around the midpoint with the given spread and
    kept only if the machine's output meets every target rule (with a safety
    ``margin`` away from the band edges), so each target is a real machine
    output by construction. The probing happens on a fork, leaving the
    machine's own query counter untouched.
    """
    if n_targets < 1:
        raise ValueError("need at least one target")
    probe = machine.fork(process_noise_std=0.0, input_noise_std=0.0)
    spec = machine.spec
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(max_tries * n_targets):
        u = np.clip(rng.normal(0.0, spread, spec.input_dim), -1.0, 1.0)
        z = probe.evaluate(spec.denormalize_inputs(u))
        ok = all(
            var.rule.meets_with_margin(v, margin, var.span_hi - var.span_lo)
            for var, v in zip(spec.outputs, z)
        )
        if ok:
            rows.append(z)
            if len(rows) == n_targets:
                return TargetSet(np.array(rows), spec)
    raise RuntimeError(
        f"could not find {n_targets} achievable targets in "
        f"{max_tries * n_targets} draws (spread={spread}, margin={margin})"
    )


def classify_output(z, spec: ProcessSpec) -> tuple[str, ...]:
    """Per-metric {meets, close, far} labels for one output vector."""
    return spec.classify(z)
