"""Temporal convolutional autoencoder (TAE).

Encoder: residual blocks with filters ``config.filters`` followed by 2x
average pooling. Decoder: 2x upsampling, residual blocks with the filters
reversed, then a 1x1 projection back to one channel.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import nn
from .errors import ConfigError, FormatError, ShapeError, TrainingDivergence
from .losses import LossWeights, combined_loss

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
_MAGIC = "evtae-model"


@dataclass(frozen=True)
class TaeConfig:
    window_length: int = 168
    kernel_size: int = 7
    filters: tuple[int, ...] = (32, 16, 8)
    dilations: tuple[int, ...] = (1, 2, 4)
    dropout_rate: float = 0.1
    learning_rate: float = 1e-3
    epochs: int = 10
    batch_size: int = 32
    loss_weights: LossWeights = field(default_factory=LossWeights)
    gamma: float = 1.0
    seed: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        object.__setattr__(self, "filters", tuple(int(f) for f in self.filters))
        object.__setattr__(self, "dilations", tuple(int(d) for d in self.dilations))
        if self.window_length <= 0 or self.window_length % 2:
            raise ConfigError(f"window_length must be positive and even, got {self.window_length}")
        if self.kernel_size < 1:
            raise ConfigError("kernel_size must be >= 1")
        if not self.filters or any(f < 1 for f in self.filters):
            raise ConfigError(f"filters must be positive, got {self.filters}")
        if len(self.dilations) != len(self.filters):
            raise ConfigError("need exactly one dilation per residual block")
        if self.dilations[0] < 1 or any(b <= a for a, b in zip(self.dilations, self.dilations[1:])):
            raise ConfigError(f"dilations must be >= 1 and strictly increasing, got {self.dilations}")
        if (self.kernel_size - 1) * max(self.dilations) >= self.window_length:
            raise ConfigError("receptive field of the widest layer exceeds the window")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must be in [0, 1)")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("learning_rate, batch_size and epochs must be positive")
        if self.gamma < 0:
            raise ConfigError("gamma must be >= 0")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError(f"dtype must be float64 or float32, got {self.dtype!r}")

    @property
    def latent_length(self) -> int:
        return self.window_length // 2

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        """Names and shapes of every trainable array, in canonical order."""
        shapes: dict[str, tuple[int, ...]] = {}
        k = self.kernel_size

        def conv(prefix, cin, cout, width, normed=True):
            shapes[f"{prefix}.v"] = (cout, cin, width)
            if normed:
                shapes[f"{prefix}.g"] = (cout,)
            shapes[f"{prefix}.bias"] = (cout,)

        def stack(tag, chans, cin):
            for i, cout in enumerate(chans):
                conv(f"{tag}{i}.conv1", cin, cout, k)
                conv(f"{tag}{i}.conv2", cout, cout, k)
                if cin != cout:
                    conv(f"{tag}{i}.skip", cin, cout, 1, normed=False)
                cin = cout
            return cin

        cin = stack("enc", self.filters, 1)
        cin = stack("dec", self.filters[::-1], cin)
        conv("out", cin, 1, 1, normed=False)
        return shapes


@dataclass
class TaeModel:
    config: TaeConfig
    params: nn.Params
    calibration: dict[str, float] = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def blocks(self, tag: str) -> list[nn.ResidualBlockParams]:
        return [
            nn.ResidualBlockParams.from_params(self.params, f"{tag}{i}", d)
            for i, d in enumerate(self.config.dilations)
        ]

    @property
    def encoder_blocks(self) -> list[nn.ResidualBlockParams]:
        return self.blocks("enc")

    @property
    def decoder_blocks(self) -> list[nn.ResidualBlockParams]:
        return self.blocks("dec")

    @property
    def output_projection(self) -> nn.ConvParams:
        p = self.params
        return nn.ConvParams(p["out.v"], None, p["out.bias"], 1)


def init_model(config: TaeConfig, rng: np.random.Generator | int | None = None) -> TaeModel:
    """Uniform(+-sqrt(1/fan_in)) kernels and biases; weight-norm g starts at ||v||."""
    rng = np.random.default_rng(config.seed if rng is None else rng)
    dtype = np.dtype(config.dtype)
    params: nn.Params = {}
    for name, shape in config.param_shapes().items():
        prefix, kind = name.rsplit(".", 1)
        vshape = config.param_shapes()[f"{prefix}.v"]
        bound = math.sqrt(1.0 / (vshape[1] * vshape[2]))
        if kind == "v":
            params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
        elif kind == "g":
            v = params[f"{prefix}.v"]
            params[name] = np.sqrt(np.sum(v * v, axis=(1, 2))).astype(dtype)
        else:
            params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return TaeModel(config, params)


def _windows(batch) -> np.ndarray:
    return np.asarray(getattr(batch, "windows", batch))


def _run_blocks(h, blocks, config, rng, training):
    caches = []
    for block in blocks:
        h, cache = nn.residual_block_forward(h, block, config.dropout_rate, rng, training)
        caches.append(cache)
    return h, caches


def _forward(model: TaeModel, x: np.ndarray, training: bool, rng) -> tuple[np.ndarray, tuple]:
    # x: (N, W) -> output (N, W)
    cfg = model.config
    if x.ndim != 2 or x.shape[1] != cfg.window_length:
        raise ShapeError(
            f"expected batch of windows with length {cfg.window_length}, got shape {x.shape}"
        )
    h = x.astype(cfg.dtype, copy=False)[None, :, :]
    enc_blocks, dec_blocks = model.encoder_blocks, model.decoder_blocks
    h, enc_caches = _run_blocks(h, enc_blocks, cfg, rng, training)
    z = nn.avg_pool2(h)
    h, dec_caches = _run_blocks(nn.upsample2(z), dec_blocks, cfg, rng, training)
    out, out_cache = nn.conv_forward(h, model.output_projection)
    return out[0], (enc_blocks, enc_caches, dec_blocks, dec_caches, out_cache)


def _backward(model: TaeModel, caches: tuple, grad_out: np.ndarray) -> nn.Params:
    enc_blocks, enc_caches, dec_blocks, dec_caches, out_cache = caches
    grads: nn.Params = {}
    g, gp = nn.conv_backward(out_cache, model.output_projection, grad_out[None, :, :])
    grads.update({"out.v": gp.v, "out.bias": gp.bias})
    for tag, blocks, block_caches, post in (
        ("dec", dec_blocks, dec_caches, nn.upsample2_backward),
        ("enc", enc_blocks, enc_caches, None),
    ):
        for i in reversed(range(len(blocks))):
            g, bg = nn.residual_block_backward(block_caches[i], blocks[i], g)
            grads.update({f"{tag}{i}.{k}": v for k, v in bg.items()})
        if post is not None:
            # decoder input came from upsample(avg_pool(encoder output))
            g = nn.avg_pool2_backward(post(g))
    return grads


def forward(model: TaeModel, batch, training: bool = False, seed=None) -> np.ndarray:
    """Reconstruct a batch of windows. Inference mode is deterministic."""
    x = _windows(batch)
    rng = np.random.default_rng(seed) if training else None
    return _forward(model, x, training, rng)[0]


def activation_pattern(model: TaeModel, batch, training: bool = False, seed=None) -> bytes:
    """On/off state of every ReLU for this batch, packed into bytes.

    Two parameter settings with equal patterns lie in the same linear
    piece of the network, which is what finite differencing needs.
    """
    x = _windows(batch)
    rng = np.random.default_rng(seed) if training else None
    _, (_, enc_caches, _, dec_caches, _) = _forward(model, x, training, rng)
    bits = []
    for c1, h1, m1, c2, h2, m2, cs, z in enc_caches + dec_caches:
        bits += [(h1 > 0).ravel(), (h2 > 0).ravel(), (z > 0).ravel()]
    return np.packbits(np.concatenate(bits)).tobytes()


def encode(model: TaeModel, batch) -> np.ndarray:
    """Latent representation, shape (filters[-1], N, window_length // 2)."""
    x = _windows(batch)
    cfg = model.config
    if x.ndim != 2 or x.shape[1] != cfg.window_length:
        raise ShapeError(f"expected windows of length {cfg.window_length}")
    h, _ = _run_blocks(x.astype(cfg.dtype)[None], model.encoder_blocks, cfg, None, False)
    return nn.avg_pool2(h)


def loss_and_grads(
    model: TaeModel, batch, training: bool = False, seed=None
) -> tuple[float, nn.Params]:
    """Training objective and its gradient w.r.t. every parameter."""
    x = _windows(batch)
    rng = np.random.default_rng(seed) if training else None
    xhat, caches = _forward(model, x, training, rng)
    cfg = model.config
    value, g = combined_loss(x, xhat, cfg.loss_weights, cfg.gamma)
    return value, _backward(model, caches, g.astype(xhat.dtype, copy=False))


def evaluate_loss(model: TaeModel, batch, batch_size: int | None = None) -> float:
    """Inference-mode training objective over a whole set of windows."""
    x = _windows(batch)
    cfg = model.config
    bs = batch_size or max(cfg.batch_size, 256)
    total = 0.0
    for start in range(0, len(x), bs):
        chunk = x[start : start + bs]
        xhat = _forward(model, chunk, False, None)[0]
        total += combined_loss(chunk, xhat, cfg.loss_weights, cfg.gamma)[0] * len(chunk)
    return total / len(x)


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    wall_time_seconds: float = 0.0


def train(dataset, config: TaeConfig, validation=None) -> tuple[TaeModel, TrainReport]:
    """Fit a TAE with Adam on shuffled mini-batches of (non-EV) windows."""
    x = _windows(dataset)
    if x.ndim != 2 or len(x) == 0:
        raise ShapeError("training set must be a non-empty (N, W) batch")
    if x.shape[1] != config.window_length:
        raise ShapeError(f"training windows have length {x.shape[1]}, config says {config.window_length}")
    x_val = None if validation is None else _windows(validation)
    if x_val is not None and len(x_val) == 0:
        x_val = None

    init_seq, shuffle_seq, drop_seq = np.random.SeedSequence(config.seed).spawn(3)
    model = init_model(config, np.random.default_rng(init_seq))
    shuffle_rng = np.random.default_rng(shuffle_seq)
    drop_rng = np.random.default_rng(drop_seq)
    state = nn.AdamState.zeros_like(model.params, config.learning_rate)
    report = TrainReport()
    x = x.astype(config.dtype, copy=False)

    t0 = time.perf_counter()
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(len(x))
        running = 0.0
        for start in range(0, len(x), config.batch_size):
            batch = x[order[start : start + config.batch_size]]
            xhat, caches = _forward(model, batch, True, drop_rng)
            value, g = combined_loss(batch, xhat, config.loss_weights, config.gamma)
            if not math.isfinite(value):
                raise TrainingDivergence(epoch + 1, value)
            grads = _backward(model, caches, g.astype(xhat.dtype, copy=False))
            model.params, state = nn.adam_step(model.params, grads, state)
            running += value * len(batch)
        report.train_loss.append(running / len(x))
        if x_val is not None:
            val = evaluate_loss(model, x_val)
            if not math.isfinite(val):
                raise TrainingDivergence(epoch + 1, val)
            report.val_loss.append(val)
        log.info(
            "epoch %d/%d train %.6f val %s",
            epoch + 1,
            config.epochs,
            report.train_loss[-1],
            f"{report.val_loss[-1]:.6f}" if report.val_loss else "-",
        )
    report.wall_time_seconds = time.perf_counter() - t0
    return model, report


# ---------------------------------------------------------------------------
# model file: line-oriented text, one header record per line, then one
# "layer <name> <shape...>" line followed by a line of row-major values.


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _config_lines(cfg: TaeConfig) -> list[str]:
    out = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if isinstance(value, LossWeights):
            text = " ".join(_fmt(w) for w in value.as_tuple())
        elif isinstance(value, tuple):
            text = " ".join(str(v) for v in value)
        elif isinstance(value, float):
            text = _fmt(value)
        else:
            text = str(value)
        out.append(f"config {f.name} {text}")
    return out


def _parse_config(entries: dict[str, list[str]]) -> TaeConfig:
    kw = {}
    for f in fields(TaeConfig):
        if f.name not in entries:
            raise FormatError(f"model file lacks config entry {f.name!r}")
        raw = entries[f.name]
        if f.name == "loss_weights":
            kw[f.name] = LossWeights(*map(float, raw))
        elif f.name in ("filters", "dilations"):
            kw[f.name] = tuple(int(v) for v in raw)
        elif f.name == "dtype":
            kw[f.name] = raw[0]
        elif f.name in ("dropout_rate", "learning_rate", "gamma"):
            kw[f.name] = float(raw[0])
        else:
            kw[f.name] = int(raw[0])
    return TaeConfig(**kw)


def save(model: TaeModel, path) -> None:
    lines = [_MAGIC, f"format_version {model.format_version}"]
    lines += _config_lines(model.config)
    for key in sorted(model.calibration):
        lines.append(f"calibration {key} {_fmt(model.calibration[key])}")
    lines.append(f"layers {len(model.params)}")
    for name, arr in model.params.items():
        lines.append(f"layer {name} " + " ".join(str(s) for s in arr.shape))
        lines.append(" ".join(_fmt(v) for v in np.asarray(arr, dtype=np.float64).ravel()))
    lines.append("end")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load(path) -> TaeModel:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: not a text model file") from exc
    lines = text.splitlines()
    try:
        return _parse_model(lines)
    except FormatError:
        raise
    except (ValueError, IndexError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed model file ({exc})") from exc


def _parse_model(lines: list[str]) -> TaeModel:
    if not lines or lines[0].strip() != _MAGIC:
        raise FormatError("not a TAE model file (bad magic line)")
    key, version = lines[1].split()
    if key != "format_version":
        raise FormatError("second line must carry format_version")
    if int(version) != FORMAT_VERSION:
        raise FormatError(f"unsupported model format_version {version}; expected {FORMAT_VERSION}")

    cfg_entries: dict[str, list[str]] = {}
    calibration: dict[str, float] = {}
    i = 2
    while not lines[i].startswith("layers "):
        kind, name, *rest = lines[i].split()
        if kind == "config":
            cfg_entries[name] = rest
        elif kind == "calibration":
            calibration[name] = float(rest[0])
        else:
            raise FormatError(f"unexpected header record {kind!r}")
        i += 1
    try:
        config = _parse_config(cfg_entries)
    except ConfigError as exc:
        raise FormatError(f"invalid config in model file: {exc}") from exc
    n_layers = int(lines[i].split()[1])
    i += 1

    expected = config.param_shapes()
    dtype = np.dtype(config.dtype)
    params: nn.Params = {}
    for _ in range(n_layers):
        head = lines[i].split()
        if head[0] != "layer":
            raise FormatError(f"expected layer record, got {head[0]!r}")
        name, shape = head[1], tuple(int(s) for s in head[2:])
        if expected.get(name) != shape:
            raise FormatError(f"layer {name!r} has shape {shape}, config implies {expected.get(name)}")
        values = np.array([float(v) for v in lines[i + 1].split()], dtype=np.float64)
        if values.size != math.prod(shape):
            raise FormatError(f"layer {name!r}: {values.size} values for shape {shape}")
        params[name] = values.reshape(shape).astype(dtype)
        i += 2
    if lines[i].strip() != "end":
        raise FormatError("model file is truncated (no end marker)")
    if set(params) != set(expected):
        raise FormatError("model file does not contain every layer the config requires")
    if not all(np.all(np.isfinite(p)) for p in params.values()):
        raise FormatError("model file contains non-finite parameters")
    return TaeModel(config, {k: params[k] for k in expected}, calibration, FORMAT_VERSION)


def with_calibration(model: TaeModel, **values: float) -> TaeModel:
    return replace(model, calibration={**model.calibration, **values})
