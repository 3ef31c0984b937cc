"""Minimal dense/graph-convolution kernel with analytic backpropagation.

Everything is float64 numpy. Layers accept arbitrary leading batch
dimensions: a dense layer maps (..., d_in) -> (..., d_out) and a graph
convolution maps (..., N, d_in) with a shared (N, N) propagation matrix
to (..., N, d_out). Forward passes return a cache consumed by the
matching backward function; gradients are exact chain-rule derivatives
with relu'(0) = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np


class NumericsError(RuntimeError):
    """A non-finite value appeared in a layer output."""


def _check_finite(x: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericsError(f"non-finite values in {where}")


@dataclass
class DenseLayer:
    W: np.ndarray  # (d_in, d_out)
    b: np.ndarray  # (d_out,)
    activation: str = "linear"  # "relu" | "linear"


@dataclass
class GraphConvLayer:
    W: np.ndarray  # (d_in, d_out)
    b: np.ndarray  # (d_out,)


def init_dense(d_in: int, d_out: int, rng: np.random.Generator, activation: str = "relu") -> DenseLayer:
    limit = math.sqrt(6.0 / (d_in + d_out))
    return DenseLayer(
        W=rng.uniform(-limit, limit, size=(d_in, d_out)),
        b=np.zeros(d_out),
        activation=activation,
    )


def init_graphconv(d_in: int, d_out: int, rng: np.random.Generator) -> GraphConvLayer:
    limit = math.sqrt(6.0 / (d_in + d_out))
    return GraphConvLayer(
        W=rng.uniform(-limit, limit, size=(d_in, d_out)),
        b=np.zeros(d_out),
    )


# --------------------------------------------------------------------- dense

def dense_forward(x: np.ndarray, layer: DenseLayer) -> np.ndarray:
    out, _ = dense_forward_cached(x, layer)
    return out


def dense_forward_cached(x: np.ndarray, layer: DenseLayer):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != layer.W.shape[0]:
        raise ValueError(f"dense input width {x.shape[-1]} != {layer.W.shape[0]}")
    pre = x @ layer.W + layer.b
    out = np.maximum(pre, 0.0) if layer.activation == "relu" else pre
    _check_finite(out, "dense output")
    return out, {"x": x, "pre": pre}


def dense_backward(grad_out: np.ndarray, cache: dict, layer: DenseLayer):
    """Returns (grad_x, grad_W, grad_b), summing over batch dimensions."""
    if cache is None:
        raise ValueError("backward called without a forward cache")
    grad_pre = grad_out * (cache["pre"] > 0) if layer.activation == "relu" else np.asarray(grad_out)
    x = cache["x"]
    grad_W = x.reshape(-1, x.shape[-1]).T @ grad_pre.reshape(-1, grad_pre.shape[-1])
    grad_b = grad_pre.reshape(-1, grad_pre.shape[-1]).sum(axis=0)
    grad_x = grad_pre @ layer.W.T
    return grad_x, grad_W, grad_b


# ----------------------------------------------------------------- graphconv

def graphconv_forward(H: np.ndarray, S: np.ndarray, layer: GraphConvLayer) -> np.ndarray:
    out, _ = graphconv_forward_cached(H, S, layer)
    return out


def graphconv_forward_cached(H: np.ndarray, S: np.ndarray, layer: GraphConvLayer):
    """relu(S @ H @ W + b) with S the pre-normalized propagation matrix."""
    H = np.asarray(H, dtype=float)
    S = np.asarray(S, dtype=float)
    if H.shape[-1] != layer.W.shape[0]:
        raise ValueError(f"graphconv input width {H.shape[-1]} != {layer.W.shape[0]}")
    if S.shape != (H.shape[-2], H.shape[-2]):
        raise ValueError("propagation matrix shape does not match node count")
    SH = np.matmul(S, H)
    pre = SH @ layer.W + layer.b
    out = np.maximum(pre, 0.0)
    _check_finite(out, "graphconv output")
    return out, {"SH": SH, "S": S, "pre": pre}


def graphconv_backward(grad_out: np.ndarray, cache: dict, layer: GraphConvLayer):
    """Returns (grad_H, grad_W, grad_b); S is symmetric so S^T = S."""
    if cache is None:
        raise ValueError("backward called without a forward cache")
    grad_pre = grad_out * (cache["pre"] > 0)
    SH = cache["SH"]
    grad_W = SH.reshape(-1, SH.shape[-1]).T @ grad_pre.reshape(-1, grad_pre.shape[-1])
    grad_b = grad_pre.reshape(-1, grad_pre.shape[-1]).sum(axis=0)
    grad_H = np.matmul(cache["S"].T, grad_pre @ layer.W.T)
    return grad_H, grad_W, grad_b


# ---------------------------------------------------------------------- adam

@dataclass
class AdamState:
    first_moment: dict[str, np.ndarray]
    second_moment: dict[str, np.ndarray]
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def adam_init(params: dict[str, np.ndarray], **kwargs) -> AdamState:
    return AdamState(
        first_moment={k: np.zeros_like(v) for k, v in params.items()},
        second_moment={k: np.zeros_like(v) for k, v in params.items()},
        **kwargs,
    )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> None:
    """Standard bias-corrected Adam; updates `params` arrays in place."""
    state.step_count += 1
    t = state.step_count
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        m = state.first_moment[name]
        v = state.second_moment[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + state.epsilon)


# --------------------------------------------------------------- finite diff

def finite_diff_grads(
    f,
    params: dict[str, np.ndarray],
    h: float = 1e-5,
    coords: dict[str, np.ndarray] | None = None,
) -> dict[str, np.ndarray]:
    """Central-difference gradients of scalar f() with respect to `params`.

    Mutates each parameter entry in place around its value; `coords`
    optionally restricts each tensor to a subset of flat indices (the
    returned gradient is zero elsewhere).
    """
    out = {}
    for name, p in params.items():
        flat = p.reshape(-1)
        grad = np.zeros_like(flat)
        idx = coords[name] if coords is not None else np.arange(flat.size)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            f_plus = f()
            flat[i] = orig - h
            f_minus = f()
            flat[i] = orig
            grad[i] = (f_plus - f_minus) / (2.0 * h)
        out[name] = grad.reshape(p.shape)
    return out


def rel_error(a: float, b: float) -> float:
    return abs(a - b) / max(1e-8, abs(a) + abs(b))


def finite_diff_check(
    f,
    params: dict[str, np.ndarray],
    analytic: dict[str, np.ndarray],
    h: float = 1e-5,
    coords: dict[str, np.ndarray] | None = None,
) -> float:
    """Max relative error between analytic gradients and central differences."""
    numeric = finite_diff_grads(f, params, h=h, coords=coords)
    worst = 0.0
    for name, num in numeric.items():
        ana = analytic[name]
        idx = coords[name] if coords is not None else np.arange(num.size)
        nf, af = num.reshape(-1), ana.reshape(-1)
        for i in idx:
            worst = max(worst, rel_error(af[i], nf[i]))
    return worst


# ------------------------------------------------------------------- helpers

def tensors_of(params) -> dict[str, np.ndarray]:
    """Flat name -> array map over a dataclass of layers."""
    out = {}
    for f in fields(params):
        layer = getattr(params, f.name)
        out[f"{f.name}.W"] = layer.W
        out[f"{f.name}.b"] = layer.b
    return out
