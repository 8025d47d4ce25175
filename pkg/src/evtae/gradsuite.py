"""Finite-difference checks for every layer, every loss and a tiny full model."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import losses, model as tae, nn

LAYER_TOL = 1e-6
LOSS_TOL = 1e-5
MODEL_TOL = 1e-4

TINY_CONFIG = tae.TaeConfig(
    window_length=16, kernel_size=3, filters=(4, 2, 2), dilations=(1, 2, 4),
    dropout_rate=0.1, epochs=1, batch_size=4,
)


@dataclass
class CheckOutcome:
    name: str
    max_relative_error: float
    tolerance: float
    instances: int
    skipped: int = 0

    @property
    def passed(self) -> bool:
        return self.max_relative_error < self.tolerance


def _conv(rng, cin, cout, k, d) -> nn.ConvParams:
    return nn.ConvParams(
        rng.normal(size=(cout, cin, k)), rng.uniform(0.5, 1.5, cout), rng.normal(size=cout), d
    )


def conv_case(rng) -> tuple[Callable, nn.Params]:
    cin, cout = rng.integers(1, 3, size=2)
    k, d, length = int(rng.integers(1, 4)), int(rng.integers(1, 3)), int(rng.integers(3, 9))
    layer = _conv(rng, cin, cout, k, d)
    x = rng.normal(size=(cin, length))
    w = rng.normal(size=(cout, length))

    def f(p):
        conv = nn.ConvParams(p["v"], p["g"], p["bias"], d)
        out = nn.causal_conv(p["x"], conv)
        dx, gp = nn.causal_conv_backward(p["x"], conv, w)
        return float(np.sum(w * out)), {"x": dx, "v": gp.v, "g": gp.g, "bias": gp.bias}

    return f, {"x": x, "v": layer.v, "g": layer.g, "bias": layer.bias}


def residual_case(rng) -> tuple[Callable, nn.Params]:
    cin = int(rng.integers(1, 3))
    cout = int(rng.integers(1, 3))
    k, d, length = int(rng.integers(2, 4)), int(rng.integers(1, 3)), int(rng.integers(4, 9))
    params = {}
    for name, (a, b, kk) in {"conv1": (cin, cout, k), "conv2": (cout, cout, k)}.items():
        c = _conv(rng, a, b, kk, d)
        params.update({f"{name}.v": c.v, f"{name}.g": c.g, f"{name}.bias": c.bias})
    if cin != cout:
        c = _conv(rng, cin, cout, 1, 1)
        params.update({"skip.v": c.v, "skip.bias": c.bias})
    x = rng.normal(size=(cin, 2, length))
    w = rng.normal(size=(cout, 2, length))
    seed = int(rng.integers(1 << 30))

    def f(p):
        block = nn.ResidualBlockParams.from_params(p, "b", d)
        out, cache = nn.residual_block_forward(p["x"], block, 0.3, np.random.default_rng(seed), True)
        dx, grads = nn.residual_block_backward(cache, block, w)
        grads = {f"b.{k}": v for k, v in grads.items()}
        grads["x"] = dx
        return float(np.sum(w * out)), grads

    p = {f"b.{k}": v for k, v in params.items()}
    p["x"] = x
    return f, p


def pool_case(rng) -> tuple[Callable, nn.Params]:
    length = 2 * int(rng.integers(1, 6))
    x = rng.normal(size=(2, length))
    w_up = rng.normal(size=(2, length))

    def f(p):
        pooled = nn.avg_pool2(p["x"])
        up = nn.upsample2(pooled)
        g = nn.avg_pool2_backward(nn.upsample2_backward(w_up))
        return float(np.sum(w_up * up)), {"x": g}

    return f, {"x": x}


def loss_case(fn: Callable, rng, positive: bool = False) -> tuple[Callable, nn.Params]:
    n, length = int(rng.integers(1, 4)), int(rng.integers(2, 13))
    x = rng.normal(size=(n, length))
    xhat = rng.normal(size=(n, length))
    if positive:
        x, xhat = np.abs(x) + 0.1, np.abs(xhat) + 0.1

    def f(p):
        v, g = fn(x, p["xhat"])
        return v, {"xhat": g}

    return f, {"xhat": xhat}


def tiny_model_case(rng) -> tuple[Callable, nn.Params, dict]:
    """Tiny TAE with dropout active under a fixed mask seed.

    Differences are taken in extended precision: many entries have
    gradients near 1e-8, where double-precision differencing noise alone
    exceeds the tolerance. Probes that flip a ReLU are skipped.
    """
    cfg = TINY_CONFIG
    m = tae.init_model(cfg, rng)
    x = rng.uniform(0, 1, size=(3, cfg.window_length))
    seed = int(rng.integers(1 << 30))

    def f(p):
        return tae.loss_and_grads(tae.TaeModel(cfg, p), x, training=True, seed=seed)

    def oracle(p):
        wide = {k: v.astype(np.longdouble) for k, v in p.items()}
        xhat = tae.forward(tae.TaeModel(cfg, wide), x, training=True, seed=seed)
        r = xhat - x
        return np.mean(np.sqrt(np.sum(r * r, axis=1)))

    def pattern(p):
        return tae.activation_pattern(tae.TaeModel(cfg, p), x, training=True, seed=seed)

    return f, m.params, {"oracle": oracle, "pattern": pattern}


def cases() -> dict[str, tuple[Callable, float, int | None]]:
    sdtw = lambda g: (lambda a, b: losses.soft_dtw_loss(a, b, g))  # noqa: E731
    combo = lambda a, b: losses.combined_loss(a, b, losses.LossWeights(1, 1, 1), 0.5)  # noqa: E731
    return {
        "causal_conv": (conv_case, LAYER_TOL, None),
        "residual_block": (residual_case, LAYER_TOL, None),
        "pool_upsample": (pool_case, LAYER_TOL, None),
        "l2_loss": (lambda r: loss_case(losses.l2_loss, r), LOSS_TOL, None),
        "cosine_loss": (lambda r: loss_case(losses.cosine_loss, r), LOSS_TOL, None),
        "soft_dtw_gamma_0.1": (lambda r: loss_case(sdtw(0.1), r), LOSS_TOL, None),
        "soft_dtw_gamma_1": (lambda r: loss_case(sdtw(1.0), r), LOSS_TOL, None),
        "combined_loss": (lambda r: loss_case(combo, r, positive=True), LOSS_TOL, None),
        "tiny_tae_l2": (tiny_model_case, MODEL_TOL, None),
    }


def run_suite(instances: int = 20, seed: int = 0) -> list[CheckOutcome]:
    rng = np.random.default_rng(seed)
    outcomes = []
    for name, (make, tol, probes) in cases().items():
        worst, skipped = 0.0, 0
        for _ in range(instances):
            f, params, *extra = make(rng)
            kwargs = extra[0] if extra else {}
            res = nn.grad_check(f, params, int(rng.integers(1 << 30)), n_probes=probes, **kwargs)
            worst = max(worst, res.max_relative_error)
            skipped += res.skipped
        outcomes.append(CheckOutcome(name, worst, tol, instances, skipped))
    return outcomes
