"""Minimal neural-network substrate with hand-written backward passes.

Arrays are channels-first. A single sequence is ``(C, L)``; a batch is
``(C, N, L)``, i.e. the batch axis sits between channels and time. With that
layout every convolution reduces to one 2-D GEMM and nothing gets transposed.
Every op here accepts either form and returns the same form.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, NumericError, ShapeError

Params = dict[str, np.ndarray]


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 2:
        return x[:, None, :], True
    if x.ndim == 3:
        return x, False
    raise ShapeError(f"expected (C, L) or (C, N, L) array, got shape {x.shape}")


def _check_finite(x: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values in {what}")


@dataclass
class ConvParams:
    """Causal convolution, weight-normalised unless ``g`` is None.

    ``v`` has shape (out_channels, in_channels, kernel_size); the effective
    kernel is ``g * v / ||v||`` with the norm taken per output channel, or
    ``v`` itself for a plain convolution. Tap ``i`` of the kernel multiplies
    ``x(s - i * dilation)``.
    """

    v: np.ndarray
    g: np.ndarray | None
    bias: np.ndarray
    dilation: int = 1

    def __post_init__(self):
        if self.v.ndim != 3:
            raise ShapeError(f"kernel direction must be 3-D, got {self.v.shape}")
        out_ch = self.v.shape[0]
        if self.bias.shape != (out_ch,) or (self.g is not None and self.g.shape != (out_ch,)):
            raise ShapeError("g and bias must have one entry per output channel")
        if int(self.dilation) < 1:
            raise ConfigError(f"dilation must be >= 1, got {self.dilation}")

    @property
    def out_channels(self) -> int:
        return self.v.shape[0]

    @property
    def in_channels(self) -> int:
        return self.v.shape[1]

    @property
    def kernel_size(self) -> int:
        return self.v.shape[2]

    @property
    def kernel(self) -> np.ndarray:
        return self.v if self.g is None else weight_norm(self.v, self.g)[0]


def weight_norm(v: np.ndarray, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(g * v / ||v||, ||v||)`` with norms per output channel."""
    norm = np.sqrt(np.sum(v * v, axis=(1, 2)))
    if np.any(norm == 0):
        raise NumericError("weight-norm direction has a zero row")
    return (g / norm)[:, None, None] * v, norm


def _im2col(x: np.ndarray, k: int, d: int) -> np.ndarray:
    # x: (C, N, L) -> cols: (C, k, N, L) where cols[:, i, :, s] = x[:, :, s - i*d]
    c, n, length = x.shape
    cols = np.zeros((c, k, n, length), dtype=x.dtype)
    for i in range(k):
        shift = i * d
        if shift < length:
            cols[:, i, :, shift:] = x[:, :, : length - shift]
    return cols


def conv_forward(x: np.ndarray, params: ConvParams) -> tuple[np.ndarray, tuple]:
    """Batched causal convolution on a (C, N, L) array; returns output and cache."""
    c, n, length = x.shape
    if c != params.in_channels:
        raise ShapeError(f"input has {c} channels, layer expects {params.in_channels}")
    if params.g is None:
        kernel, norm = params.v, None
    else:
        kernel, norm = weight_norm(params.v, params.g)
    k = params.kernel_size
    if k == 1:
        cols2d = x.reshape(c, n * length)
    else:
        cols2d = _im2col(x, k, int(params.dilation)).reshape(c * k, n * length)
    out = kernel.reshape(params.out_channels, c * k) @ cols2d
    out += params.bias[:, None]
    return out.reshape(params.out_channels, n, length), (cols2d, kernel, norm, x.shape)


def conv_backward(
    cache: tuple, params: ConvParams, grad_out: np.ndarray
) -> tuple[np.ndarray, ConvParams]:
    cols2d, kernel, norm, in_shape = cache
    c, n, length = in_shape
    out_ch, k = params.out_channels, params.kernel_size
    if grad_out.shape != (out_ch, n, length):
        raise ShapeError(f"upstream gradient shape {grad_out.shape} != {(out_ch, n, length)}")
    g2d = grad_out.reshape(out_ch, n * length)

    d_bias = g2d.sum(axis=1)
    d_kernel = (g2d @ cols2d.T).reshape(out_ch, c, k)
    if params.g is None:
        d_g, d_v = None, d_kernel
    else:
        # reparameterisation w = g v / |v|
        d_g = np.sum(d_kernel * params.v, axis=(1, 2)) / norm
        d_v = (params.g / norm)[:, None, None] * (d_kernel - (d_g / norm)[:, None, None] * params.v)

    d_cols = kernel.reshape(out_ch, c * k).T @ g2d
    if k == 1:
        dx = d_cols.reshape(c, n, length)
    else:
        d_cols = d_cols.reshape(c, k, n, length)
        dx = d_cols[:, 0].copy()
        d = int(params.dilation)
        for i in range(1, k):
            shift = i * d
            if shift < length:
                dx[:, :, : length - shift] += d_cols[:, i, :, shift:]
    return dx, ConvParams(d_v, d_g, d_bias, params.dilation)


def causal_conv(x: np.ndarray, params: ConvParams) -> np.ndarray:
    """Dilated causal convolution with left zero padding of (k-1)*d steps.

    Output length equals input length and ``out[:, s]`` only sees
    ``x[:, t]`` for ``t <= s``.
    """
    xb, single = _as_batch(np.asarray(x))
    if xb.shape[-1] < 1:
        raise ShapeError("input must have at least one time step")
    _check_finite(xb, "convolution input")
    out, _ = conv_forward(xb, params)
    return out[:, 0, :] if single else out


def causal_conv_backward(
    x: np.ndarray, params: ConvParams, upstream_grad: np.ndarray
) -> tuple[np.ndarray, ConvParams]:
    """Gradients of a scalar loss w.r.t. the input and ``(v, g, bias)``.

    The parameter gradients are returned packed in a ``ConvParams`` so they
    line up field-for-field with the layer they belong to.
    """
    xb, single = _as_batch(np.asarray(x))
    gb, _ = _as_batch(np.asarray(upstream_grad))
    _, cache = conv_forward(xb, params)
    dx, grads = conv_backward(cache, params, gb)
    return (dx[:, 0, :] if single else dx), grads


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def dropout(
    x: np.ndarray,
    rate: float,
    rng: np.random.Generator | int | None = None,
    training: bool = True,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Inverted dropout. Returns the output and the scaled keep-mask.

    The mask is ``None`` whenever the op is an identity (inference or
    ``rate == 0``), so backward can skip the multiply.
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x, None
    rng = np.random.default_rng(rng)
    mask = (rng.random(x.shape) >= rate) * (1.0 / (1.0 - rate))
    mask = mask.astype(x.dtype, copy=False)
    return x * mask, mask


def avg_pool2(x: np.ndarray) -> np.ndarray:
    """Mean of adjacent non-overlapping pairs along time."""
    if x.shape[-1] % 2:
        raise ShapeError(f"average pooling needs an even length, got {x.shape[-1]}")
    return 0.5 * (x[..., 0::2] + x[..., 1::2])


def avg_pool2_backward(grad_out: np.ndarray) -> np.ndarray:
    return np.repeat(0.5 * grad_out, 2, axis=-1)


def upsample2(x: np.ndarray) -> np.ndarray:
    """Nearest-neighbour repetition doubling the time axis."""
    return np.repeat(x, 2, axis=-1)


def upsample2_backward(grad_out: np.ndarray) -> np.ndarray:
    return grad_out[..., 0::2] + grad_out[..., 1::2]


@dataclass
class ResidualBlockParams:
    conv1: ConvParams
    conv2: ConvParams
    skip: ConvParams | None = None

    @classmethod
    def from_params(cls, params: Params, prefix: str, dilation: int) -> "ResidualBlockParams":
        def conv(name: str, dil: int) -> ConvParams:
            return ConvParams(
                params[f"{prefix}.{name}.v"],
                params.get(f"{prefix}.{name}.g"),
                params[f"{prefix}.{name}.bias"],
                dil,
            )

        skip = conv("skip", 1) if f"{prefix}.skip.v" in params else None
        return cls(conv("conv1", dilation), conv("conv2", dilation), skip)


def residual_block_forward(
    x: np.ndarray,
    block: ResidualBlockParams,
    rate: float = 0.0,
    rng: np.random.Generator | None = None,
    training: bool = False,
) -> tuple[np.ndarray, tuple]:
    """``o = relu(x + F(x))`` with F = two (conv, relu, dropout) stages.

    When the channel count changes, the residual path goes through
    ``block.skip``, a plain 1x1 convolution.
    """
    if block.skip is None and block.conv2.out_channels != x.shape[0]:
        raise ShapeError("residual block changes channel count but has no skip projection")
    h1, c1 = conv_forward(x, block.conv1)
    a1, m1 = dropout(relu(h1), rate, rng, training)
    h2, c2 = conv_forward(a1, block.conv2)
    a2, m2 = dropout(relu(h2), rate, rng, training)
    if block.skip is None:
        res, cs = x, None
    else:
        res, cs = conv_forward(x, block.skip)
    z = a2 + res
    return relu(z), (c1, h1, m1, c2, h2, m2, cs, z)


def residual_block_backward(
    cache: tuple, block: ResidualBlockParams, grad_out: np.ndarray
) -> tuple[np.ndarray, Params]:
    c1, h1, m1, c2, h2, m2, cs, z = cache
    gz = grad_out * (z > 0)
    grads: Params = {}

    ga2 = gz if m2 is None else gz * m2
    gh2 = ga2 * (h2 > 0)
    ga1, gp = conv_backward(c2, block.conv2, gh2)
    grads.update({"conv2.v": gp.v, "conv2.g": gp.g, "conv2.bias": gp.bias})

    if m1 is not None:
        ga1 = ga1 * m1
    gh1 = ga1 * (h1 > 0)
    dx, gp = conv_backward(c1, block.conv1, gh1)
    grads.update({"conv1.v": gp.v, "conv1.g": gp.g, "conv1.bias": gp.bias})

    if block.skip is None:
        dx += gz
    else:
        dres, gp = conv_backward(cs, block.skip, gz)
        dx += dres
        grads.update({"skip.v": gp.v, "skip.bias": gp.bias})
        if gp.g is not None:
            grads["skip.g"] = gp.g
    return dx, grads


def residual_block(
    x: np.ndarray,
    block: ResidualBlockParams,
    rate: float = 0.0,
    rng: np.random.Generator | int | None = None,
    training: bool = False,
) -> np.ndarray:
    xb, single = _as_batch(np.asarray(x))
    _check_finite(xb, "residual block input")
    rng = np.random.default_rng(rng) if training else None
    out, _ = residual_block_forward(xb, block, rate, rng, training)
    return out[:, 0, :] if single else out


@dataclass
class AdamState:
    first_moment: Params
    second_moment: Params
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Params, learning_rate: float = 1e-3, **kw) -> "AdamState":
        return cls(
            {k: np.zeros_like(p) for k, p in params.items()},
            {k: np.zeros_like(p) for k, p in params.items()},
            0,
            learning_rate,
            **kw,
        )


def adam_step(params: Params, grads: Params, state: AdamState) -> tuple[Params, AdamState]:
    """One bias-corrected Adam update. Inputs are left untouched."""
    if params.keys() != grads.keys() or params.keys() != state.first_moment.keys():
        raise ShapeError("parameter, gradient and moment names differ")
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    new_params, m_new, v_new = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape or state.first_moment[name].shape != p.shape:
            raise ShapeError(f"shape mismatch for parameter {name!r}")
        m = b1 * state.first_moment[name] + (1.0 - b1) * g
        v = b2 * state.second_moment[name] + (1.0 - b2) * (g * g)
        new_params[name] = p - state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
        m_new[name] = m
        v_new[name] = v
    return new_params, AdamState(
        m_new, v_new, t, state.learning_rate, b1, b2, state.epsilon
    )


@dataclass
class GradCheckResult:
    max_relative_error: float
    per_parameter_errors: list[float]
    names: list[str] = field(default_factory=list)
    skipped: int = 0


def grad_check(
    function: Callable[[Params], tuple[float, Params]],
    params: Params,
    probe_seed: int | None = 0,
    n_probes: int | None = None,
    step: float = 1e-5,
    oracle: Callable[[Params], float] | None = None,
    pattern: Callable[[Params], bytes] | None = None,
) -> GradCheckResult:
    """Compare analytic gradients against central finite differences.

    ``function`` maps a parameter dict to ``(value, grads)``. With
    ``n_probes`` set, only that many randomly chosen entries per parameter
    are differenced. Relative error uses ``max(|a|, |n|, 1e-8)`` as the
    denominator.

    ``oracle``, if given, replaces ``function`` for the differenced values
    (e.g. the same computation in extended precision). ``pattern`` returns
    a signature of every ReLU on/off state; a probe whose +-step changes it
    straddles a kink, where differencing is meaningless, and is counted in
    ``skipped`` instead of scored.
    """
    rng = np.random.default_rng(probe_seed)
    base = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}
    _, analytic = function(base)
    value = oracle if oracle is not None else (lambda p: function(p)[0])
    ref = pattern(base) if pattern is not None else None
    names, errors, skipped = [], [], 0
    for name in sorted(base):
        p = base[name]
        flat_idx = np.arange(p.size)
        if n_probes is not None and n_probes < p.size:
            flat_idx = rng.choice(p.size, size=n_probes, replace=False)
        worst = 0.0
        for flat in flat_idx:
            idx = np.unravel_index(flat, p.shape)
            orig = p[idx]
            hi, lo = orig + step, orig - step
            p[idx] = hi
            f_plus = value(base)
            kink = pattern is not None and pattern(base) != ref
            p[idx] = lo
            f_minus = value(base)
            kink = kink or (pattern is not None and pattern(base) != ref)
            p[idx] = orig
            if kink:
                skipped += 1
                continue
            num = float((f_plus - f_minus) / (hi - lo))
            ana = float(np.asarray(analytic[name])[idx])
            err = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            worst = max(worst, err)
        names.append(name)
        errors.append(worst)
    return GradCheckResult(max(errors, default=0.0), errors, names, skipped)
