"""Minimal dense-layer kernel: linear maps, activations, Adam, gradient checking.

All parameters live in flat dicts mapping name -> float64 ndarray, which keeps
the optimizer and the finite-difference checker generic over every model in
this package.
"""

from dataclasses import dataclass, field

import numpy as np

Params = dict[str, np.ndarray]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in {what}")


def glorot_uniform(rng: np.random.Generator, n_out: int, n_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_out, n_in))


@dataclass
class DenseLayer:
    """Affine map y = x W^T + b with weight shaped (out, in)."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.ndim != 1:
            raise ShapeError("weight must be 2-D and bias 1-D")
        if self.weight.shape[0] != self.bias.shape[0]:
            raise ShapeError(
                f"weight rows {self.weight.shape} != bias length {self.bias.shape}"
            )
        _check_finite(self.weight, "dense weight")
        _check_finite(self.bias, "dense bias")

    @property
    def in_dim(self):
        return self.weight.shape[1]

    @property
    def out_dim(self):
        return self.weight.shape[0]

    @classmethod
    def init(cls, rng: np.random.Generator, n_in: int, n_out: int) -> "DenseLayer":
        return cls(glorot_uniform(rng, n_out, n_in), np.zeros(n_out))


def dense_apply(layer: DenseLayer, x: np.ndarray) -> np.ndarray:
    """Apply the layer to a vector or to a matrix of row vectors."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != layer.in_dim:
        raise ShapeError(
            f"input width {x.shape} does not match layer input dim "
            f"{layer.weight.shape}"
        )
    return x @ layer.weight.T + layer.bias


def leaky_relu(x: np.ndarray, slope: float = 0.01) -> np.ndarray:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"slope must be in (0, 1), got {slope}")
    return np.maximum(x, slope * x)


def leaky_relu_grad(x: np.ndarray, slope: float = 0.01) -> np.ndarray:
    return np.where(x >= 0.0, 1.0, slope)


def softmax(x: np.ndarray) -> np.ndarray:
    """Stable softmax over the last axis (max-shifted)."""
    x = np.asarray(x, dtype=np.float64)
    _check_finite(x, "softmax input")
    z = np.exp(x - np.max(x, axis=-1, keepdims=True))
    return z / np.sum(z, axis=-1, keepdims=True)


@dataclass
class AdamState:
    """Per-parameter first/second moment accumulators and the step counter."""

    m: Params
    v: Params
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, params: Params, **kwargs) -> "AdamState":
        m = {k: np.zeros_like(p) for k, p in params.items()}
        v = {k: np.zeros_like(p) for k, p in params.items()}
        return cls(m=m, v=v, **kwargs)


def adam_update(params: Params, grads: Params, state: AdamState, lr: float):
    """One Adam step with bias correction; mutates params and state in place."""
    if set(params) != set(grads) or set(params) != set(state.m):
        raise ShapeError(
            f"parameter keys {sorted(params)} do not match "
            f"grads {sorted(grads)} / state {sorted(state.m)}"
        )
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ShapeError(f"grad shape {g.shape} != param shape {p.shape} for {k}")
        state.m[k] = b1 * state.m[k] + (1.0 - b1) * g
        state.v[k] = b2 * state.v[k] + (1.0 - b2) * g * g
        m_hat = state.m[k] / bc1
        v_hat = state.v[k] / bc2
        p -= lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
        _check_finite(p, f"parameter {k} after Adam step")
    return params, state


def grad_check(f, params: Params, eps: float = 1e-4) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f(params) -> (scalar loss, grads dict)``; f must be pure. Relative error
    per entry is |analytic - numeric| / max(1, |analytic|).
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ValueError(f"eps must be in [1e-6, 1e-3], got {eps}")
    loss, grads = f(params)
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite loss in grad_check")
    worst = 0.0
    for k, p in params.items():
        analytic = grads[k]
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + eps
            hi, _ = f(params)
            p[idx] = orig - eps
            lo, _ = f(params)
            p[idx] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise FloatingPointError(f"non-finite f evaluation at {k}{idx}")
            numeric = (hi - lo) / (2.0 * eps)
            a = analytic[idx]
            err = abs(a - numeric) / max(1.0, abs(a))
            worst = max(worst, err)
    return worst
