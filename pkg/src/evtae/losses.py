"""Reconstruction losses: L2, cosine, soft-DTW and their weighted sum.

Every loss takes a pair of ``(N, W)`` batches ``(x, xhat)`` and returns
``(value, grad)`` with the gradient taken w.r.t. ``xhat``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .errors import ConfigError, NumericError, ShapeError


@dataclass(frozen=True)
class LossWeights:
    """Weights of the L2, soft-DTW and cosine terms, in that order."""

    rec: float = 1.0
    dtw: float = 0.0
    cos: float = 0.0

    def __post_init__(self):
        w = (self.rec, self.dtw, self.cos)
        if any(x < 0 or not math.isfinite(x) for x in w):
            raise ConfigError(f"loss weights must be finite and non-negative, got {w}")
        if not any(x > 0 for x in w):
            raise ConfigError("at least one loss weight must be positive")

    @classmethod
    def named(cls, name: str) -> "LossWeights":
        presets = {"l2": (1, 0, 0), "dtw": (0, 1, 0), "cos": (0, 0, 1)}
        if name not in presets:
            raise ConfigError(f"unknown loss {name!r}; choose from {sorted(presets)}")
        return cls(*map(float, presets[name]))

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.rec, self.dtw, self.cos)


def _as_batches(x, xhat) -> tuple[np.ndarray, np.ndarray]:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    xhat = np.atleast_2d(np.asarray(xhat, dtype=float))
    if x.shape != xhat.shape:
        raise ShapeError(f"batch shapes differ: {x.shape} vs {xhat.shape}")
    if x.ndim != 2 or x.shape[0] == 0:
        raise ShapeError(f"expected a non-empty (N, W) batch, got {x.shape}")
    return x, xhat


def l2_loss(batch_x, batch_xhat) -> tuple[float, np.ndarray]:
    """Mean over the batch of the per-sequence Euclidean norm of the residual."""
    x, xhat = _as_batches(batch_x, batch_xhat)
    n = x.shape[0]
    diff = xhat - x
    norms = np.sqrt(np.sum(diff * diff, axis=1))
    safe = np.where(norms > 0, norms, 1.0)
    # subgradient 0 where the residual vanishes
    grad = np.where(norms[:, None] > 0, diff / (n * safe[:, None]), 0.0)
    return float(norms.mean()), grad


def cosine_similarity(batch_x, batch_xhat) -> float:
    """Raw mean cosine similarity (1 for perfect reconstructions)."""
    x, xhat = _as_batches(batch_x, batch_xhat)
    nx = np.linalg.norm(x, axis=1)
    nh = np.linalg.norm(xhat, axis=1)
    if np.any(nx == 0) or np.any(nh == 0):
        raise NumericError("cosine similarity undefined for a zero-norm sequence")
    return float(np.mean(np.sum(x * xhat, axis=1) / (nx * nh)))


def cosine_loss(batch_x, batch_xhat) -> tuple[float, np.ndarray]:
    """``1 - mean cosine similarity`` and its gradient."""
    x, xhat = _as_batches(batch_x, batch_xhat)
    n = x.shape[0]
    nx = np.linalg.norm(x, axis=1)
    nh = np.linalg.norm(xhat, axis=1)
    if np.any(nx == 0) or np.any(nh == 0):
        raise NumericError("cosine similarity undefined for a zero-norm sequence")
    sim = np.sum(x * xhat, axis=1) / (nx * nh)
    dsim = x / (nx * nh)[:, None] - sim[:, None] * xhat / (nh * nh)[:, None]
    return float(1.0 - sim.mean()), -dsim / n


@numba.njit(cache=True)
def _sdtw_forward(x, y, gamma):
    n, m = x.shape[0], y.shape[0]
    r = np.full((n + 2, m + 2), np.inf)
    r[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            cost = (x[i - 1] - y[j - 1]) ** 2
            r0, r1, r2 = r[i - 1, j - 1], r[i - 1, j], r[i, j - 1]
            if gamma == 0.0:
                r[i, j] = cost + min(r0, min(r1, r2))
            else:
                a, b, c = -r0 / gamma, -r1 / gamma, -r2 / gamma
                mx = max(a, max(b, c))
                s = math.exp(a - mx) + math.exp(b - mx) + math.exp(c - mx)
                r[i, j] = cost - gamma * (math.log(s) + mx)
    return r


@numba.njit(cache=True)
def _sdtw_backward(x, y, r, gamma):
    # expected alignment matrix E = dR[n, m] / dDelta
    n, m = x.shape[0], y.shape[0]
    d = np.zeros((n + 2, m + 2))
    for i in range(n):
        for j in range(m):
            d[i + 1, j + 1] = (x[i] - y[j]) ** 2
    r = r.copy()
    for i in range(1, n + 1):
        r[i, m + 1] = -np.inf
    for j in range(1, m + 1):
        r[n + 1, j] = -np.inf
    r[n + 1, m + 1] = r[n, m]
    e = np.zeros((n + 2, m + 2))
    e[n + 1, m + 1] = 1.0
    for j in range(m, 0, -1):
        for i in range(n, 0, -1):
            a = math.exp((r[i + 1, j] - r[i, j] - d[i + 1, j]) / gamma)
            b = math.exp((r[i, j + 1] - r[i, j] - d[i, j + 1]) / gamma)
            c = math.exp((r[i + 1, j + 1] - r[i, j] - d[i + 1, j + 1]) / gamma)
            e[i, j] = a * e[i + 1, j] + b * e[i, j + 1] + c * e[i + 1, j + 1]
    return e[1 : n + 1, 1 : m + 1]


@numba.njit(cache=True)
def _sdtw_value_grad(x, y, gamma):
    r = _sdtw_forward(x, y, gamma)
    e = _sdtw_backward(x, y, r, gamma)
    grad = np.zeros(y.shape[0])
    for i in range(x.shape[0]):
        for j in range(y.shape[0]):
            grad[j] += 2.0 * e[i, j] * (y[j] - x[i])
    return r[x.shape[0], y.shape[0]], grad


@numba.njit(cache=True)
def _sdtw_batch(xs, ys, gamma):
    n = xs.shape[0]
    values = np.empty(n)
    grads = np.empty_like(ys)
    for k in range(n):
        values[k], grads[k] = _sdtw_value_grad(xs[k], ys[k], gamma)
    return values, grads


def _check_gamma(gamma: float) -> float:
    gamma = float(gamma)
    if not gamma >= 0.0:
        raise ConfigError(f"soft-DTW smoothing must be >= 0, got {gamma}")
    return gamma


def soft_dtw(x, y, gamma: float = 1.0) -> tuple[float, np.ndarray | None]:
    """Soft-DTW between two 1-D sequences under squared-Euclidean cell cost.

    ``gamma == 0`` gives classic DTW, which has no gradient (``None``).
    The value can be negative for ``gamma > 0``.
    """
    gamma = _check_gamma(gamma)
    x = np.ascontiguousarray(x, dtype=np.float64).ravel()
    y = np.ascontiguousarray(y, dtype=np.float64).ravel()
    if x.size == 0 or y.size == 0:
        raise ShapeError("soft-DTW needs non-empty sequences")
    if gamma == 0.0:
        return float(_sdtw_forward(x, y, 0.0)[x.size, y.size]), None
    value, grad = _sdtw_value_grad(x, y, gamma)
    return float(value), grad


def soft_dtw_loss(batch_x, batch_xhat, gamma: float = 1.0) -> tuple[float, np.ndarray]:
    """Batch mean of soft-DTW(x_i, xhat_i)."""
    gamma = _check_gamma(gamma)
    if gamma == 0.0:
        raise ConfigError("soft-DTW as a training loss needs gamma > 0")
    x, xhat = _as_batches(batch_x, batch_xhat)
    values, grads = _sdtw_batch(
        np.ascontiguousarray(x), np.ascontiguousarray(xhat), gamma
    )
    n = x.shape[0]
    return float(values.mean()), grads / n


def combined_loss(
    batch_x, batch_xhat, weights: LossWeights, gamma: float = 1.0
) -> tuple[float, np.ndarray]:
    """Weighted sum of the three terms. Zero-weight terms are never evaluated."""
    x, xhat = _as_batches(batch_x, batch_xhat)
    value = 0.0
    grad = np.zeros_like(xhat)
    for w, fn in (
        (weights.rec, l2_loss),
        (weights.dtw, lambda a, b: soft_dtw_loss(a, b, gamma)),
        (weights.cos, cosine_loss),
    ):
        if w > 0:
            v, g = fn(x, xhat)
            value += w * v
            grad += w * g
    return value, grad
