"""Two-loop reverse-model training with a sensitivity-gated learning rate.

A reverse model maps desired (normalized) outputs to candidate (normalized)
recipes. It is first pre-trained against the cheap emulator for many
iterations (loop A), then refined against the real machine for a few
iterations (loop B); the machine and emulator themselves are never updated.
Late in each loop, the mean induced-L2 norm of the forward model's input
Jacobian over the current candidates decides between the standard and the
conservative learning rate: high sensitivity means small steps.

The loss at iteration t is the mean over targets of the squared L2 residual
between target and forward-mapped candidate, and its exact parameter gradient
is assembled by chaining the forward model's input Jacobian into the reverse
net's backward pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import nn
from .process import GroundTruthMachine, MEETS, ProcessSpec

# Floor for the reverse model's input standardization scale; keeps degenerate
# (identical-target) sets finite.
_SCALE_FLOOR = 0.05


@dataclass(frozen=True)
class MflConfig:
    """Knobs of the two-loop training run."""

    standard_rate: float = 0.01
    conservative_rate: float = 0.99 * 0.01
    pretrain_iters: int = 1200          # loop A length
    pretrain_gate_start: int = 1150     # first loop-A iteration with the gate active
    machine_iters: int = 200            # loop B length
    machine_gate_start: int = 150       # first loop-B iteration with the gate active
    sensitivity_threshold: float = 0.9
    reverse_hidden: tuple[int, ...] = (64,)
    early_stop: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.conservative_rate < self.standard_rate:
            raise ValueError("need 0 < conservative_rate < standard_rate")
        if not 0 <= self.pretrain_gate_start <= self.pretrain_iters:
            raise ValueError("pretrain gate start must lie in [0, pretrain_iters]")
        if not 0 <= self.machine_gate_start <= self.machine_iters:
            raise ValueError("machine gate start must lie in [0, machine_iters]")
        if not self.sensitivity_threshold >= 0:
            raise ValueError("sensitivity threshold must be non-negative")
        object.__setattr__(self, "reverse_hidden", tuple(self.reverse_hidden))


@dataclass(frozen=True)
class ReverseModel:
    """Trainable map from normalized targets to normalized recipes.

    Inputs pass through a fixed standardization (center, scale) before the
    network; with a bounded output layer every prediction stays inside
    [-1, 1]^n, so denormalized recipes always satisfy the physical box.
    """

    net: nn.DenseNet
    input_center: np.ndarray
    input_scale: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.input_center, dtype=float)
        s = np.asarray(self.input_scale, dtype=float)
        if c.shape != (self.net.input_dim,) or s.shape != (self.net.input_dim,):
            raise ValueError("standardization stats must match the net input size")
        if np.any(s <= 0):
            raise ValueError("standardization scale must be positive")
        object.__setattr__(self, "input_center", c)
        object.__setattr__(self, "input_scale", s)

    @property
    def bounded(self) -> bool:
        return self.net.layers[-1].activation == "bounded"

    def standardize(self, Z) -> np.ndarray:
        return (np.asarray(Z, dtype=float) - self.input_center) / self.input_scale

    def predict(self, Z) -> np.ndarray:
        """Normalized recipes for a batch of normalized targets."""
        return nn.forward_batch(self.net, self.standardize(Z))

    def with_net(self, net: nn.DenseNet) -> "ReverseModel":
        return ReverseModel(net, self.input_center, self.input_scale)


def standardization_stats(Z) -> tuple[np.ndarray, np.ndarray]:
    """Center/scale for reverse-model inputs, scale floored for degenerate sets."""
    Z = np.asarray(Z, dtype=float)
    return Z.mean(axis=0), np.maximum(Z.std(axis=0), _SCALE_FLOOR)


def build_reverse_model(
    output_dim: int,
    input_dim: int,
    targets_normalized,
    hidden: tuple[int, ...] = (64,),
    seed: int = 0,
    bounded: bool = True,
) -> ReverseModel:
    """Fresh reverse model sized for a process, standardized on its targets.

    ``output_dim``/``input_dim`` are the process's output/input counts: the
    net maps the former to the latter. With ``bounded`` (the default) the
    output layer maps into [-1, 1]^input_dim; the unbounded variant exists for
    linear convergence studies.
    """
    center, scale = standardization_stats(targets_normalized)
    if bounded:
        net = nn.init_net(
            [output_dim, *hidden, input_dim],
            seed,
            output_activation="bounded",
            box_lo=-np.ones(input_dim),
            box_hi=np.ones(input_dim),
        )
    else:
        net = nn.init_net([output_dim, *hidden, input_dim], seed)
    return ReverseModel(net, center, scale)


# ---------------------------------------------------------------------------
# Forward-model ports
# ---------------------------------------------------------------------------


class EmulatorPort:
    """Differentiable forward port over a trained emulator net; free queries."""

    def __init__(self, net: nn.DenseNet):
        self.net = net
        self.queries = 0

    def forward_batch(self, X) -> np.ndarray:
        return nn.forward_batch(self.net, X)

    def jacobian_batch(self, X) -> np.ndarray:
        return nn.batch_input_jacobians(self.net, X)

    def vjp_batch(self, X, upstream) -> np.ndarray:
        _, input_grads = nn.batch_param_gradients(self.net, X, upstream)
        return input_grads


class MachinePort:
    """Forward port over the real machine in normalized space.

    Forward evaluations are counted queries. Differentiation uses either the
    machine's exact Jacobian port (free) or central finite differences through
    real queries (2 * input_dim per sample).
    """

    def __init__(self, machine: GroundTruthMachine, finite_difference: bool = False,
                 fd_step: float = 1e-4):
        self.machine = machine
        self.finite_difference = finite_difference
        self.fd_step = fd_step
        self.queries = 0

    def forward_batch(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        self.queries += X.shape[0]
        return self.machine.evaluate_normalized_batch(X)

    def jacobian_batch(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if not self.finite_difference:
            return self.machine.jacobian_normalized_batch(X)
        jacs = []
        for row in X:
            jacs.append(self.machine.fd_jacobian_normalized(row, self.fd_step))
            self.queries += 2 * X.shape[1]
        return np.stack(jacs)

    def vjp_batch(self, X, upstream) -> np.ndarray:
        J = self.jacobian_batch(X)
        return np.einsum("bmn,bm->bn", J, np.asarray(upstream, dtype=float))


# ---------------------------------------------------------------------------
# Loss, gradient, sensitivity, rate choice
# ---------------------------------------------------------------------------


def reverse_loss(model: ReverseModel, port, targets_normalized) -> float:
    """Mean squared vector error of forward(reverse(target)) against target."""
    Z = np.asarray(targets_normalized, dtype=float)
    if Z.ndim != 2 or Z.shape[0] == 0:
        raise ValueError("targets must be a non-empty 2-D array")
    Y = port.forward_batch(model.predict(Z))
    return float(((Y - Z) ** 2).sum(axis=1).mean())


def reverse_gradient(model: ReverseModel, port, targets_normalized) -> nn.GradientSet:
    """Exact gradient of :func:`reverse_loss` w.r.t. the reverse parameters."""
    Z = np.asarray(targets_normalized, dtype=float)
    Zs = model.standardize(Z)
    X = nn.forward_batch(model.net, Zs)
    resid = port.forward_batch(X) - Z
    upstream = port.vjp_batch(X, 2.0 * resid / Z.shape[0])
    grads, _ = nn.batch_param_gradients(model.net, Zs, upstream)
    return grads


def mean_sensitivity(port, X) -> float:
    """Mean induced-L2 norm of the forward model's input Jacobian over X."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("need a non-empty batch of inputs")
    J = port.jacobian_batch(X)
    return float(np.mean([nn.induced_l2_norm(j) for j in J]))


def choose_rate(
    iteration: int,
    gate_start: int,
    mean_sens: float,
    threshold: float,
    standard_rate: float,
    conservative_rate: float,
) -> float:
    """Conservative rate iff the gate is open and sensitivity reaches threshold."""
    if conservative_rate >= standard_rate:
        raise ValueError("conservative rate must be below the standard rate")
    if iteration >= gate_start and mean_sens >= threshold:
        return conservative_rate
    return standard_rate


# ---------------------------------------------------------------------------
# Training loops
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TraceRow:
    """One recorded iteration of either loop."""

    loop: str                 # "A" or "B"
    iteration: int            # per-loop index
    loss: float
    mean_sensitivity: float   # nan when the gate was closed (not evaluated)
    rate: float               # nan on a no-update row (early-stop check)
    queries: int              # machine queries spent in this iteration
    updated: bool
    meets_count: int          # targets whose outputs satisfy every meets rule
    grad_sq_norm: float       # nan on a no-update row


def _gate(iteration, gate_start, port, X, cfg):
    """Evaluate the sensitivity gate; returns (sensitivity_or_nan, rate)."""
    if iteration >= gate_start:
        sens = mean_sensitivity(port, X)
        rate = choose_rate(
            iteration, gate_start, sens, cfg.sensitivity_threshold,
            cfg.standard_rate, cfg.conservative_rate,
        )
        return sens, rate
    return float("nan"), cfg.standard_rate


def _meets_count(spec: ProcessSpec, Y_normalized) -> int:
    phys = spec.denormalize_outputs(Y_normalized)
    return int(sum(spec.meets_all(z) for z in phys))


def loop_a(
    model: ReverseModel,
    emulator_net: nn.DenseNet,
    targets_normalized,
    cfg: MflConfig,
    spec: ProcessSpec,
) -> tuple[ReverseModel, list[TraceRow]]:
    """Pre-train the reverse model against the emulator; zero machine queries."""
    Z = np.asarray(targets_normalized, dtype=float)
    port = EmulatorPort(emulator_net)
    trace: list[TraceRow] = []
    for t in range(cfg.pretrain_iters):
        Zs = model.standardize(Z)
        X, r_inputs, r_pre = nn._forward_cached(model.net, Zs)
        Y = port.forward_batch(X)
        resid = Y - Z
        loss = float((resid**2).sum(axis=1).mean())
        if not math.isfinite(loss):
            raise FloatingPointError(f"loop A loss became non-finite at iteration {t}")
        sens, rate = _gate(t, cfg.pretrain_gate_start, port, X, cfg)
        upstream = port.vjp_batch(X, 2.0 * resid / Z.shape[0])
        grads, _ = nn._backward(model.net, r_inputs, r_pre, upstream)
        trace.append(
            TraceRow("A", t, loss, sens, rate, 0, True,
                     _meets_count(spec, Y), grads.squared_norm())
        )
        model = model.with_net(nn.gd_step(model.net, grads, rate))
    return model, trace


def loop_b(
    model: ReverseModel,
    machine_port: MachinePort,
    targets_normalized,
    cfg: MflConfig,
    spec: ProcessSpec,
) -> tuple[ReverseModel, list[TraceRow], bool, np.ndarray | None]:
    """Refine the reverse model against the machine itself.

    Each pass evaluates all targets (n' queries). With early stopping on, a
    pass whose outputs satisfy every meets rule records a no-update row and
    ends the loop, so a run that needed k updates costs (k + 1) * n' queries.
    Returns (model, trace, stopped_early, stop_outputs) where stop_outputs are
    the normalized machine outputs of the stopping pass (None otherwise); they
    belong to the returned model, which saw no further update.
    """
    Z = np.asarray(targets_normalized, dtype=float)
    trace: list[TraceRow] = []
    for h in range(cfg.machine_iters):
        Zs = model.standardize(Z)
        X, r_inputs, r_pre = nn._forward_cached(model.net, Zs)
        before = machine_port.queries
        Y = machine_port.forward_batch(X)
        resid = Y - Z
        loss = float((resid**2).sum(axis=1).mean())
        if not math.isfinite(loss):
            raise FloatingPointError(f"loop B loss became non-finite at iteration {h}")
        meets = _meets_count(spec, Y)
        if cfg.early_stop and meets == Z.shape[0]:
            trace.append(
                TraceRow("B", h, loss, float("nan"), float("nan"),
                         machine_port.queries - before, False, meets, float("nan"))
            )
            return model, trace, True, Y
        sens, rate = _gate(h, cfg.machine_gate_start, machine_port, X, cfg)
        upstream = machine_port.vjp_batch(X, 2.0 * resid / Z.shape[0])
        grads, _ = nn._backward(model.net, r_inputs, r_pre, upstream)
        trace.append(
            TraceRow("B", h, loss, sens, rate, machine_port.queries - before,
                     True, meets, grads.squared_norm())
        )
        model = model.with_net(nn.gd_step(model.net, grads, rate))
    return model, trace, False, None


# ---------------------------------------------------------------------------
# End-to-end training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MflResult:
    """Everything a run of the full two-loop procedure produced."""

    reverse_model: ReverseModel
    emulator_net: nn.DenseNet
    emulator_val_mse: float
    emulator_history: tuple
    trace: tuple[TraceRow, ...]
    final_recipes: np.ndarray        # physical units, one row per target
    final_outputs: np.ndarray        # physical units, machine-evaluated
    classifications: tuple           # per-target tuples of category labels
    output_error: float              # sqrt of mean squared normalized residual
    loop_b_passes: int
    loop_b_updates: int
    stopped_early: bool
    queries: dict

    @property
    def meets_all(self) -> bool:
        return all(all(c == MEETS for c in row) for row in self.classifications)


def mfl_train(
    dataset,
    machine: GroundTruthMachine,
    targets,
    emu_cfg,
    mfl_cfg: MflConfig,
    finite_difference_port: bool = False,
    bounded_reverse: bool = True,
) -> MflResult:
    """Train emulator, run loop A then loop B, and score the final recipes.

    ``targets`` may be a TargetSet or a raw array of physical target vectors.
    Machine queries are spent only in loop B and (when the loop did not stop
    on an early all-meets pass) in one final scoring pass.
    """
    from .emulator import train_emulator

    spec = machine.spec
    trained = train_emulator(dataset, spec, emu_cfg)
    z_phys = targets.z if hasattr(targets, "z") else np.asarray(targets, dtype=float)
    Z = spec.normalize_outputs(z_phys)

    model = build_reverse_model(
        spec.output_dim, spec.input_dim, Z,
        hidden=mfl_cfg.reverse_hidden, seed=mfl_cfg.seed, bounded=bounded_reverse,
    )
    model, trace_a = loop_a(model, trained.net, Z, mfl_cfg, spec)

    port = MachinePort(machine, finite_difference=finite_difference_port)
    model, trace_b, stopped, stop_outputs = loop_b(model, port, Z, mfl_cfg, spec)
    loop_b_queries = port.queries

    X = model.predict(Z)
    if stopped and stop_outputs is not None:
        # The stopping pass already evaluated the final model on every target.
        V = stop_outputs
        scoring_queries = 0
    else:
        V = machine.evaluate_normalized_batch(X)
        scoring_queries = X.shape[0]
    resid = V - Z
    output_error = float(np.sqrt((resid**2).sum(axis=1).mean()))
    outputs_phys = spec.denormalize_outputs(V)
    recipes_phys = spec.denormalize_inputs(X)
    classifications = tuple(spec.classify(z) for z in outputs_phys)

    return MflResult(
        reverse_model=model,
        emulator_net=trained.net,
        emulator_val_mse=trained.val_mse,
        emulator_history=trained.history,
        trace=tuple(trace_a + trace_b),
        final_recipes=recipes_phys,
        final_outputs=outputs_phys,
        classifications=classifications,
        output_error=output_error,
        loop_b_passes=len(trace_b),
        loop_b_updates=sum(1 for r in trace_b if r.updated),
        stopped_early=stopped,
        queries={"loop_b": loop_b_queries, "scoring": scoring_queries},
    )


# ---------------------------------------------------------------------------
# Quadratic instance helper for descent-property studies
# ---------------------------------------------------------------------------


def quadratic_lipschitz_constant(A: np.ndarray, targets: np.ndarray) -> float:
    """Gradient-Lipschitz constant of the linear-machine / linear-reverse loss.

    For machine v = A u and reverse u = W z + b, the loss
    mean_j ||z_j - A (W z_j + b)||^2 is quadratic in (W, b); its Hessian is
    (2/n) sum_j M_j^T M_j with M_j = [z_j^T kron A | A] (row-major vec(W)),
    and the constant is the largest Hessian eigenvalue.
    """
    A = np.asarray(A, dtype=float)
    Z = np.asarray(targets, dtype=float)
    m, n_in = A.shape
    blocks = []
    for z in Z:
        Mj = np.zeros((m, n_in * Z.shape[1] + n_in))
        Mj[:, : n_in * Z.shape[1]] = np.kron(z[None, :], A)
        Mj[:, n_in * Z.shape[1]:] = A
        blocks.append(Mj)
    H = (2.0 / Z.shape[0]) * sum(Mj.T @ Mj for Mj in blocks)
    return nn.induced_l2_norm(H)
