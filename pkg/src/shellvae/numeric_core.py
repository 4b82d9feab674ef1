"""Dense numerics: a small feedforward MLP with hand-written backprop,
finite-difference gradients, covariance and power iteration."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

RELU = "relu"
IDENTITY = "identity"
_ACTIVATIONS = (RELU, IDENTITY)


class ShapeError(ValueError):
    """Raised when array shapes do not chain as required."""


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, last_estimate: float):
        super().__init__(message)
        self.last_estimate = last_estimate


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = RELU

    @property
    def n_in(self) -> int:
        return self.weight.shape[1]

    @property
    def n_out(self) -> int:
        return self.weight.shape[0]


@dataclass
class MlpParams:
    layers: list[Layer] = field(default_factory=list)

    def __post_init__(self):
        for k, layer in enumerate(self.layers):
            if layer.activation not in _ACTIVATIONS:
                raise ValueError(f"layer {k}: unknown activation {layer.activation!r}")
            if layer.weight.ndim != 2 or layer.bias.shape != (layer.n_out,):
                raise ShapeError(
                    f"layer {k}: weight {layer.weight.shape} / bias {layer.bias.shape} mismatch"
                )
            if k > 0 and self.layers[k - 1].n_out != layer.n_in:
                raise ShapeError(
                    f"layer {k}: expects {layer.n_in} inputs, "
                    f"previous layer produces {self.layers[k - 1].n_out}"
                )

    @property
    def n_in(self) -> int:
        return self.layers[0].n_in

    @property
    def n_out(self) -> int:
        return self.layers[-1].n_out

    def arrays(self) -> list[np.ndarray]:
        """Flat list [W0, b0, W1, b1, ...] of the live parameter arrays."""
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def copy(self) -> "MlpParams":
        return MlpParams(
            [Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers]
        )


@dataclass
class GradientBundle:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for gw, gb in zip(self.weights, self.biases):
            out.extend((gw, gb))
        return out


@dataclass
class Tape:
    """Activations recorded by :func:`mlp_forward` for the backward pass."""

    inputs: list[np.ndarray]  # input to each layer
    pre: list[np.ndarray]  # pre-activation of each layer


def init_mlp(
    sizes: list[int],
    rng: np.random.Generator,
    output_activation: str = IDENTITY,
) -> MlpParams:
    """Glorot-uniform weights, zero biases; ReLU on hidden layers."""
    layers = []
    for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        act = output_activation if k == len(sizes) - 2 else RELU
        layers.append(Layer(w, np.zeros(fan_out), act))
    return MlpParams(layers)


def mlp_forward(params: MlpParams, batch: np.ndarray) -> tuple[np.ndarray, Tape]:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2:
        raise ShapeError(f"batch must be 2-D, got shape {batch.shape}")
    inputs, pre = [], []
    h = batch
    for k, layer in enumerate(params.layers):
        if h.shape[1] != layer.n_in:
            raise ShapeError(
                f"layer {k}: expects {layer.n_in} input columns, got {h.shape[1]}"
            )
        inputs.append(h)
        a = h @ layer.weight.T + layer.bias
        pre.append(a)
        h = np.maximum(a, 0.0) if layer.activation == RELU else a
    return h, Tape(inputs, pre)


def mlp_backward(
    params: MlpParams, tape: Tape, upstream: np.ndarray
) -> tuple[GradientBundle, np.ndarray]:
    """Backpropagate ``upstream`` (dL/d outputs) through the network."""
    if len(tape.pre) != len(params.layers):
        raise ShapeError("tape was recorded for a different network depth")
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != tape.pre[-1].shape:
        raise ShapeError(
            f"upstream shape {g.shape} does not match outputs {tape.pre[-1].shape}"
        )
    n = len(params.layers)
    gws: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    gbs: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    for k in range(n - 1, -1, -1):
        layer = params.layers[k]
        x = tape.inputs[k]
        if x.shape[1] != layer.n_in or tape.pre[k].shape[1] != layer.n_out:
            raise ShapeError(f"layer {k}: stale tape")
        if layer.activation == RELU:
            g = g * (tape.pre[k] > 0.0)
        gws[k] = g.T @ x
        gbs[k] = g.sum(axis=0)
        g = g @ layer.weight
    return GradientBundle(gws, gbs), g


def finite_diff_gradient(loss_fn, point, step: float = 1e-5) -> np.ndarray:
    """Central differences (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate."""
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.array(point, dtype=np.float64).ravel()
    grad = np.empty_like(x)
    for i in range(x.size):
        orig = x[i]
        x[i] = orig + step
        f_plus = float(loss_fn(x.copy()))
        x[i] = orig - step
        f_minus = float(loss_fn(x.copy()))
        x[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise FloatingPointError(f"non-finite loss near coordinate {i}")
        grad[i] = (f_plus - f_minus) / (2.0 * step)
    return grad


def covariance_matrix(data: np.ndarray) -> np.ndarray:
    """Population covariance (1/N normaliser)."""
    data = np.asarray(data, dtype=np.float64)
    n = data.shape[0]
    if n < 2:
        raise ValueError(f"covariance needs at least 2 samples, got {n}")
    xc = data - data.mean(axis=0)
    cov = xc.T @ xc / n
    return 0.5 * (cov + cov.T)


def top_eigenvalue(m: np.ndarray, tol: float = 1e-12, max_iters: int = 10_000) -> float:
    """Largest eigenvalue of a symmetric PSD matrix by power iteration.

    Starts from the normalised all-ones vector. If the iterate stagnates in
    the null space a single fixed-seed random restart is attempted.
    """
    m = np.asarray(m, dtype=np.float64)
    d = m.shape[0]
    v = np.ones(d) / np.sqrt(d)
    restarted = False
    lam = float(v @ m @ v)
    for _ in range(max_iters):
        w = m @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            if restarted:
                return 0.0
            restarted = True
            v = np.random.default_rng(0).standard_normal(d)
            v /= np.linalg.norm(v)
            lam = float(v @ m @ v)
            continue
        v = w / norm
        lam_new = float(v @ m @ v)
        if abs(lam_new - lam) < tol * max(1.0, abs(lam_new)):
            return lam_new
        lam = lam_new
    raise ConvergenceError(
        f"power iteration did not converge in {max_iters} iterations", lam
    )
