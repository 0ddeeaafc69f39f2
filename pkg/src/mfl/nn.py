"""Minimal dense-network engine.

Feedforward networks with exact reverse-mode gradients, exact input
Jacobians, an induced-L2 matrix norm, and two optimizers (plain gradient
descent and Adam). Everything runs in float64 and all operations are pure:
updates return new networks, nothing is mutated in place.

Supported activations:
    ``identity``   affine layer output passed through unchanged
    ``tanh``       elementwise tanh
    ``bounded``    box-constrained output, ``lo + (hi - lo) * (tanh(z) + 1) / 2``;
                   maps any finite pre-activation into the configured box
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

ACTIVATIONS = ("identity", "tanh", "bounded")

_MAGIC = b"DNET"
_FORMAT_VERSION = 1
_ACT_CODES = {"identity": 0, "tanh": 1, "bounded": 2}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}


def _as_float_array(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True)
class Layer:
    """One dense layer: ``act(W @ x + b)`` with W of shape (out, in)."""

    weights: np.ndarray
    bias: np.ndarray
    activation: str = "tanh"
    box_lo: np.ndarray | None = None
    box_hi: np.ndarray | None = None

    def __post_init__(self):
        w = _as_float_array(self.weights, "weights")
        b = _as_float_array(self.bias, "bias")
        if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
            raise ValueError(f"layer shape mismatch: W {w.shape}, b {b.shape}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.activation == "bounded":
            if self.box_lo is None or self.box_hi is None:
                raise ValueError("bounded activation requires box_lo and box_hi")
            lo = _as_float_array(self.box_lo, "box_lo")
            hi = _as_float_array(self.box_hi, "box_hi")
            if lo.shape != (w.shape[0],) or hi.shape != (w.shape[0],):
                raise ValueError("box bounds must match the layer output size")
            if np.any(lo >= hi):
                raise ValueError("box_lo must be strictly below box_hi")
            object.__setattr__(self, "box_lo", lo)
            object.__setattr__(self, "box_hi", hi)
        elif self.box_lo is not None or self.box_hi is not None:
            raise ValueError("box bounds only apply to the bounded activation")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class DenseNet:
    """An ordered stack of dense layers with chained dimensions."""

    layers: tuple[Layer, ...]

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ValueError("a network needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.out_dim != b.in_dim:
                raise ValueError(
                    f"layer dimensions do not chain: {a.out_dim} -> {b.in_dim}"
                )
        object.__setattr__(self, "layers", layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    def parameter_count(self) -> int:
        return sum(l.weights.size + l.bias.size for l in self.layers)


@dataclass(frozen=True)
class GradientSet:
    """Per-layer parameter gradients, shape-congruent with a DenseNet."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ValueError("gradient set needs one (dW, db) pair per layer")
        object.__setattr__(self, "weights", tuple(self.weights))
        object.__setattr__(self, "biases", tuple(self.biases))

    def check_congruent(self, net: DenseNet) -> None:
        if len(self.weights) != len(net.layers):
            raise ValueError("gradient layer count does not match the network")
        for dw, db, layer in zip(self.weights, self.biases, net.layers):
            if dw.shape != layer.weights.shape or db.shape != layer.bias.shape:
                raise ValueError("gradient shapes do not match the network")

    def squared_norm(self) -> float:
        total = 0.0
        for dw, db in zip(self.weights, self.biases):
            total += float(np.sum(dw * dw)) + float(np.sum(db * db))
        return total

    def scaled(self, factor: float) -> "GradientSet":
        return GradientSet(
            weights=tuple(factor * dw for dw in self.weights),
            biases=tuple(factor * db for db in self.biases),
        )


def zero_gradients(net: DenseNet) -> GradientSet:
    return GradientSet(
        weights=tuple(np.zeros_like(l.weights) for l in net.layers),
        biases=tuple(np.zeros_like(l.bias) for l in net.layers),
    )


def init_net(
    dims: list[int] | tuple[int, ...],
    seed: int | np.random.Generator,
    output_activation: str = "identity",
    box_lo=None,
    box_hi=None,
) -> DenseNet:
    """Build a tanh network with the given layer sizes.

    Hidden layers use tanh; the final layer uses ``output_activation``.
    Weights are uniform in +/- sqrt(6 / (fan_in + fan_out)), biases zero.
    """
    if len(dims) < 2:
        raise ValueError("dims must list at least input and output sizes")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        b = np.zeros(fan_out)
        last = i == len(dims) - 2
        act = output_activation if last else "tanh"
        if last and act == "bounded":
            layers.append(Layer(w, b, act, np.asarray(box_lo, float), np.asarray(box_hi, float)))
        else:
            layers.append(Layer(w, b, act))
    return DenseNet(tuple(layers))


# ---------------------------------------------------------------------------
# Forward / reverse passes
# ---------------------------------------------------------------------------


def _apply_activation(layer: Layer, z: np.ndarray) -> np.ndarray:
    if layer.activation == "identity":
        return z
    if layer.activation == "tanh":
        return np.tanh(z)
    half = 0.5 * (layer.box_hi - layer.box_lo)
    mid = 0.5 * (layer.box_hi + layer.box_lo)
    return mid + half * np.tanh(z)


def _activation_derivative(layer: Layer, z: np.ndarray) -> np.ndarray:
    if layer.activation == "identity":
        return np.ones_like(z)
    t = np.tanh(z)
    if layer.activation == "tanh":
        return 1.0 - t * t
    half = 0.5 * (layer.box_hi - layer.box_lo)
    return half * (1.0 - t * t)


def _forward_cached(net: DenseNet, X: np.ndarray):
    """Batched forward pass keeping inputs and pre-activations per layer."""
    inputs = []
    pre = []
    h = X
    for layer in net.layers:
        inputs.append(h)
        z = h @ layer.weights.T + layer.bias
        pre.append(z)
        h = _apply_activation(layer, z)
    return h, inputs, pre


def forward_batch(net: DenseNet, X) -> np.ndarray:
    """Evaluate the network on a batch of row vectors, shape (B, input_dim)."""
    X = _as_float_array(X, "input")
    if X.ndim != 2 or X.shape[1] != net.input_dim:
        raise ValueError(f"expected batch of {net.input_dim}-vectors, got {X.shape}")
    out, _, _ = _forward_cached(net, X)
    return out


def forward(net: DenseNet, x) -> np.ndarray:
    """Evaluate the network on a single input vector."""
    x = _as_float_array(x, "input")
    if x.ndim != 1 or x.shape[0] != net.input_dim:
        raise ValueError(f"expected a {net.input_dim}-vector, got shape {x.shape}")
    return forward_batch(net, x[None, :])[0]


def _backward(net: DenseNet, inputs, pre, upstream: np.ndarray):
    """Reverse pass for a batch.

    ``upstream`` has shape (B, output_dim); returns the GradientSet of
    sum_b upstream_b . net(x_b) plus the per-sample input gradients (B, input_dim).
    """
    grad_w = [None] * len(net.layers)
    grad_b = [None] * len(net.layers)
    delta = upstream
    for k in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[k]
        dz = delta * _activation_derivative(layer, pre[k])
        grad_w[k] = dz.T @ inputs[k]
        grad_b[k] = dz.sum(axis=0)
        delta = dz @ layer.weights
    return GradientSet(tuple(grad_w), tuple(grad_b)), delta


def grad_params(net: DenseNet, x, upstream) -> GradientSet:
    """Exact gradient of ``upstream . net(x)`` with respect to all parameters."""
    x = _as_float_array(x, "input")
    upstream = _as_float_array(upstream, "upstream")
    if x.shape != (net.input_dim,):
        raise ValueError(f"expected a {net.input_dim}-vector, got shape {x.shape}")
    if upstream.shape != (net.output_dim,):
        raise ValueError(
            f"expected upstream of length {net.output_dim}, got shape {upstream.shape}"
        )
    _, inputs, pre = _forward_cached(net, x[None, :])
    grads, _ = _backward(net, inputs, pre, upstream[None, :])
    return grads


def batch_param_gradients(net: DenseNet, X, upstream):
    """GradientSet of ``sum_b upstream_b . net(x_b)`` plus per-sample input grads."""
    X = _as_float_array(X, "input")
    upstream = _as_float_array(upstream, "upstream")
    if X.ndim != 2 or X.shape[1] != net.input_dim:
        raise ValueError(f"expected batch of {net.input_dim}-vectors, got {X.shape}")
    if upstream.shape != (X.shape[0], net.output_dim):
        raise ValueError("upstream batch must be (B, output_dim)")
    _, inputs, pre = _forward_cached(net, X)
    return _backward(net, inputs, pre, upstream)


def vjp_input(net: DenseNet, x, upstream) -> np.ndarray:
    """Gradient of ``upstream . net(x)`` with respect to the input vector."""
    grads_unused, input_grads = batch_param_gradients(
        net, np.asarray(x, float)[None, :], np.asarray(upstream, float)[None, :]
    )
    return input_grads[0]


def jacobian_input(net: DenseNet, x) -> np.ndarray:
    """Exact Jacobian d net(x) / dx, shape (output_dim, input_dim).

    Computed as one batched reverse pass with the identity as upstream.
    """
    x = _as_float_array(x, "input")
    if x.shape != (net.input_dim,):
        raise ValueError(f"expected a {net.input_dim}-vector, got shape {x.shape}")
    m = net.output_dim
    X = np.tile(x, (m, 1))
    _, inputs, pre = _forward_cached(net, X)
    _, rows = _backward(net, inputs, pre, np.eye(m))
    return rows


def batch_input_jacobians(net: DenseNet, X) -> np.ndarray:
    """Jacobians for every row of X, shape (B, output_dim, input_dim)."""
    X = _as_float_array(X, "input")
    B = X.shape[0]
    m = net.output_dim
    rep = np.repeat(X, m, axis=0)
    upstream = np.tile(np.eye(m), (B, 1))
    _, inputs, pre = _forward_cached(net, rep)
    _, rows = _backward(net, inputs, pre, upstream)
    return rows.reshape(B, m, net.input_dim)


# ---------------------------------------------------------------------------
# Induced L2 norm
# ---------------------------------------------------------------------------


def induced_l2_norm(A, rel_tol: float = 1e-8, max_iter: int = 200) -> float:
    """Largest singular value of A via power iteration on A^T A.

    Stops when the estimate changes by less than ``rel_tol`` relatively, or
    after ``max_iter`` iterations. The start vector comes from a fixed seeded
    generator so repeated calls are reproducible.
    """
    A = _as_float_array(A, "matrix")
    if A.ndim != 2 or A.size == 0:
        raise ValueError("induced_l2_norm needs a non-empty 2-D matrix")
    # Iterate on the smaller Gram dimension.
    if A.shape[0] < A.shape[1]:
        A = A.T
    rng = np.random.default_rng(0x5EED)
    v = rng.standard_normal(A.shape[1])
    v /= np.linalg.norm(v)
    estimate = 0.0
    for _ in range(max_iter):
        w = A.T @ (A @ v)
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            return 0.0
        v = w / norm_w
        new_estimate = float(np.linalg.norm(A @ v))
        if abs(new_estimate - estimate) <= rel_tol * max(new_estimate, 1e-300):
            return new_estimate
        estimate = new_estimate
    return estimate


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------


def gd_step(net: DenseNet, grads: GradientSet, alpha: float) -> DenseNet:
    """One plain gradient-descent step; returns the updated network."""
    if alpha < 0:
        raise ValueError("learning rate must be non-negative")
    grads.check_congruent(net)
    new_layers = []
    for layer, dw, db in zip(net.layers, grads.weights, grads.biases):
        new_layers.append(
            Layer(
                layer.weights - alpha * dw,
                layer.bias - alpha * db,
                layer.activation,
                layer.box_lo,
                layer.box_hi,
            )
        )
    return DenseNet(tuple(new_layers))


@dataclass(frozen=True)
class AdamState:
    """First/second moment accumulators for Adam, one pair per parameter array."""

    m: tuple[np.ndarray, ...]
    v: tuple[np.ndarray, ...]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.step < 0:
            raise ValueError("step counter must be non-negative")
        for second in self.v:
            if np.any(second < 0):
                raise ValueError("second moments must be non-negative")


def adam_init(arrays: list[np.ndarray], beta1=0.9, beta2=0.999, eps=1e-8) -> AdamState:
    zeros = tuple(np.zeros_like(a) for a in arrays)
    return AdamState(m=zeros, v=tuple(np.zeros_like(a) for a in arrays),
                     step=0, beta1=beta1, beta2=beta2, eps=eps)


def adam_init_for_net(net: DenseNet, beta1=0.9, beta2=0.999, eps=1e-8) -> AdamState:
    arrays = []
    for layer in net.layers:
        arrays.append(layer.weights)
        arrays.append(layer.bias)
    return adam_init(arrays, beta1, beta2, eps)


def adam_update_arrays(
    params: list[np.ndarray], grads: list[np.ndarray], state: AdamState, eta: float
):
    """Bias-corrected Adam update on a flat list of arrays."""
    if eta <= 0:
        raise ValueError("learning rate must be positive")
    if len(params) != len(state.m) or len(params) != len(grads):
        raise ValueError("parameter, gradient and state lengths must agree")
    t = state.step + 1
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError("Adam state is not shape-congruent with parameters")
        m_new = state.beta1 * m + (1 - state.beta1) * g
        v_new = state.beta2 * v + (1 - state.beta2) * g * g
        m_hat = m_new / (1 - state.beta1**t)
        v_hat = v_new / (1 - state.beta2**t)
        new_params.append(p - eta * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m_new)
        new_v.append(v_new)
    new_state = AdamState(tuple(new_m), tuple(new_v), t, state.beta1, state.beta2, state.eps)
    return new_params, new_state


def adam_step(
    net: DenseNet, grads: GradientSet, state: AdamState, eta: float
) -> tuple[DenseNet, AdamState]:
    """One Adam step on all network parameters; returns (net, state)."""
    grads.check_congruent(net)
    params, gs = [], []
    for layer, dw, db in zip(net.layers, grads.weights, grads.biases):
        params.extend([layer.weights, layer.bias])
        gs.extend([dw, db])
    new_params, new_state = adam_update_arrays(params, gs, state, eta)
    new_layers = []
    for i, layer in enumerate(net.layers):
        new_layers.append(
            Layer(new_params[2 * i], new_params[2 * i + 1], layer.activation,
                  layer.box_lo, layer.box_hi)
        )
    return DenseNet(tuple(new_layers)), new_state


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def save_net(net: DenseNet, path) -> None:
    """Write a network to a versioned binary file; round-trips bit-exactly."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _FORMAT_VERSION, len(net.layers)))
        for layer in net.layers:
            rows, cols = layer.weights.shape
            fh.write(struct.pack("<IIB", rows, cols, _ACT_CODES[layer.activation]))
            fh.write(np.ascontiguousarray(layer.weights).tobytes())
            fh.write(np.ascontiguousarray(layer.bias).tobytes())
            if layer.activation == "bounded":
                fh.write(np.ascontiguousarray(layer.box_lo).tobytes())
                fh.write(np.ascontiguousarray(layer.box_hi).tobytes())


def load_net(path) -> DenseNet:
    """Read a network written by :func:`save_net`."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValueError(f"not a network file: bad magic {magic!r}")
        version, n_layers = struct.unpack("<II", fh.read(8))
        if version != _FORMAT_VERSION:
            raise ValueError(f"unsupported format version {version}")
        layers = []
        for _ in range(n_layers):
            rows, cols, act_code = struct.unpack("<IIB", fh.read(9))
            act = _ACT_NAMES.get(act_code)
            if act is None:
                raise ValueError(f"unknown activation code {act_code}")
            w = np.frombuffer(fh.read(8 * rows * cols), dtype="<f8").reshape(rows, cols)
            b = np.frombuffer(fh.read(8 * rows), dtype="<f8")
            lo = hi = None
            if act == "bounded":
                lo = np.frombuffer(fh.read(8 * rows), dtype="<f8")
                hi = np.frombuffer(fh.read(8 * rows), dtype="<f8")
            layers.append(Layer(w.copy(), b.copy(), act,
                                None if lo is None else lo.copy(),
                                None if hi is None else hi.copy()))
    return DenseNet(tuple(layers))
