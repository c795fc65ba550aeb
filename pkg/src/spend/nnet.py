"""Compact convolutional encoder-decoder with built-in reverse-mode
differentiation, trained on permuted slice pairs and applied frame by
frame in original order.

The network is a U-shaped stack over single-channel 2-D frames: ``depth``
encoder levels of two 3x3 convolutions (reflection padding, rectifier)
followed by 2x2 max pooling, a two-convolution bottleneck, and a mirror
decoder of nearest-neighbor upsampling, a channel-halving convolution,
skip concatenation, and two more convolutions, closed by a linear 1x1
head.  Channel counts double per level from ``base_channels``.

Everything runs on plain numpy arrays.  Forward passes record a tape of
backward closures; ``loss_and_grad`` replays it to produce exact
gradients for the mean squared error.  Parameters live in an ordered
name -> array dict, which is also the checkpoint payload order.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .cubeio import HyperCube, axis_index, canonical_axis
from .permute import PairSet

_MODEL_FORMAT = "spend-model"
_MODEL_VERSION = 1

_ADAM_BETA1 = 0.9
_ADAM_BETA2 = 0.999
_ADAM_EPS = 1e-8


@dataclass(frozen=True)
class ModelConfig:
    """Architecture knobs.  kernel, activation, and skip connections are
    fixed by the design and validated rather than varied."""

    depth: int = 2
    base_channels: int = 16
    kernel: int = 3
    activation: str = "relu"
    skip_connections: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.depth <= 6:
            raise ValueError("depth must lie in [1, 6]")
        if self.base_channels < 1:
            raise ValueError("base_channels must be >= 1")
        if self.kernel != 3:
            raise ValueError("only 3x3 kernels are supported")
        if self.activation != "relu":
            raise ValueError("only the rectifier activation is supported")
        if not self.skip_connections:
            raise ValueError("skip connections cannot be disabled")
        object.__setattr__(self, "seed", int(self.seed))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 4
    learning_rate: float = 1e-3
    val_fraction: float = 0.1
    augment: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must lie in (0, 1)")
        object.__setattr__(self, "seed", int(self.seed))


@dataclass
class DenoiserModel:
    """Parameters plus the bookkeeping needed to reuse them: the config
    that shaped them, the training history as (epoch, train loss,
    validation loss) rows, and the permutation axis recorded at training
    time so prediction slices the cube the same way."""

    config: ModelConfig
    params: dict
    history: list = field(default_factory=list)
    axis: str = "w"

    def dtype(self) -> np.dtype:
        return next(iter(self.params.values())).dtype

    def with_dtype(self, dtype) -> "DenoiserModel":
        """Same model with parameters cast (used for 64-bit gradient checks)."""
        return DenoiserModel(
            config=self.config,
            params={k: v.astype(dtype) for k, v in self.params.items()},
            history=list(self.history),
            axis=self.axis,
        )


def _level_channels(cfg: ModelConfig) -> list[int]:
    return [cfg.base_channels * 2**i for i in range(cfg.depth + 1)]


def _layer_plan(cfg: ModelConfig) -> list[tuple[str, int, int, int]]:
    """(name, in_channels, out_channels, kernel) in parameter order."""
    chans = _level_channels(cfg)
    plan = []
    prev = 1
    for i in range(cfg.depth):
        plan.append((f"enc{i}_conv0", prev, chans[i], 3))
        plan.append((f"enc{i}_conv1", chans[i], chans[i], 3))
        prev = chans[i]
    plan.append(("bott_conv0", chans[cfg.depth - 1], chans[cfg.depth], 3))
    plan.append(("bott_conv1", chans[cfg.depth], chans[cfg.depth], 3))
    for i in reversed(range(cfg.depth)):
        above = chans[i + 1]
        plan.append((f"up{i}", above, chans[i], 3))
        plan.append((f"dec{i}_conv0", 2 * chans[i], chans[i], 3))
        plan.append((f"dec{i}_conv1", chans[i], chans[i], 3))
    plan.append(("head", chans[0], 1, 1))
    return plan


def parameter_count(cfg: ModelConfig) -> int:
    return sum(co * ci * k * k + co for _, ci, co, k in _layer_plan(cfg))


def build_model(cfg: ModelConfig) -> DenoiserModel:
    """Initialize weights uniformly with fan-in scaling (bound
    sqrt(6/fan_in)) and zero biases, in a fixed draw order, so equal
    seeds give bit-identical models."""
    rng = np.random.default_rng(cfg.seed)
    params: dict[str, np.ndarray] = {}
    for name, ci, co, k in _layer_plan(cfg):
        fan_in = ci * k * k
        bound = np.sqrt(6.0 / fan_in)
        params[f"{name}_w"] = rng.uniform(-bound, bound, size=(co, ci, k, k)).astype(np.float32)
        params[f"{name}_b"] = np.zeros(co, dtype=np.float32)
    return DenoiserModel(config=cfg, params=params)


# ---------------------------------------------------------------------------
# Layer primitives.  Each forward returns (output, backward closure); the
# closure maps the output gradient to the input gradient and writes any
# parameter gradients into ``grads``.

def _conv(x, w, b, grads, gw_key, gb_key):
    co, ci, k, _ = w.shape
    pad = (k - 1) // 2
    n, _, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode="reflect") if pad else x
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * h * wd, ci * k * k)
    wm = w.reshape(co, ci * k * k)
    out = (cols @ wm.T + b).reshape(n, h, wd, co).transpose(0, 3, 1, 2)

    def backward(gy):
        gyc = np.ascontiguousarray(gy.transpose(0, 2, 3, 1)).reshape(n * h * wd, co)
        grads[gb_key] = grads[gb_key] + gyc.sum(axis=0)
        grads[gw_key] = grads[gw_key] + (gyc.T @ cols).reshape(w.shape)
        gcols = (gyc @ wm).reshape(n, h, wd, ci, k, k)
        gxp = np.zeros_like(xp)
        for di in range(k):
            for dj in range(k):
                gxp[:, :, di:di + h, dj:dj + wd] += gcols[:, :, :, :, di, dj].transpose(0, 3, 1, 2)
        if pad == 0:
            return gxp
        # Adjoint of reflection padding: fold each padded border line back
        # onto the interior line it mirrored, rows first, then columns.
        g1 = gxp[:, :, pad:-pad, :].copy()
        g1[:, :, 1, :] += gxp[:, :, 0, :]
        g1[:, :, h - 2, :] += gxp[:, :, h + pad, :]
        gx = g1[:, :, :, pad:-pad].copy()
        gx[:, :, :, 1] += g1[:, :, :, 0]
        gx[:, :, :, wd - 2] += g1[:, :, :, wd + pad]
        return gx

    return np.ascontiguousarray(out), backward


def _relu(x):
    mask = x > 0
    return x * mask, lambda gy: gy * mask


def _maxpool(x):
    n, c, h, w = x.shape
    xv = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    flat = np.ascontiguousarray(xv).reshape(n, c, h // 2, w // 2, 4)
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def backward(gy):
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, idx[..., None], gy[..., None], axis=-1)
        return gflat.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5) \
            .reshape(n, c, h, w)

    return out, backward


def _upsample(x):
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)

    def backward(gy):
        return gy.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5))

    return out, backward


def _check_finite(h, name):
    if not np.isfinite(h.sum()):
        raise FloatingPointError(f"non-finite activation after layer {name}")


def _forward_tape(model: DenoiserModel, x: np.ndarray, grads: dict | None):
    """Run the network; when ``grads`` is given, also build the backward
    tape and check every activation for finiteness."""
    cfg = model.config
    p = model.params
    training = grads is not None
    tape = []
    skip_grads: dict[int, np.ndarray] = {}

    def conv_relu(h, name, linear=False):
        h, bk_conv = _conv(h, p[f"{name}_w"], p[f"{name}_b"], grads, f"{name}_w", f"{name}_b") \
            if training else (_conv_infer(h, p[f"{name}_w"], p[f"{name}_b"]), None)
        if training:
            tape.append(bk_conv)
            _check_finite(h, name)
        if not linear:
            h, bk_relu = _relu(h)
            if training:
                tape.append(bk_relu)
        return h

    skips = []
    h = x
    for i in range(cfg.depth):
        h = conv_relu(h, f"enc{i}_conv0")
        h = conv_relu(h, f"enc{i}_conv1")
        skips.append(h)
        if training:
            level = i
            tape.append(("skip_add", level))
        h, bk = _maxpool(h)
        if training:
            tape.append(bk)
    h = conv_relu(h, "bott_conv0")
    h = conv_relu(h, "bott_conv1")
    for i in reversed(range(cfg.depth)):
        h, bk = _upsample(h)
        if training:
            tape.append(bk)
        h = conv_relu(h, f"up{i}")
        split = h.shape[1]
        h = np.concatenate([h, skips[i]], axis=1)
        if training:
            level = i
            tape.append(("concat", level, split))
        h = conv_relu(h, f"dec{i}_conv0")
        h = conv_relu(h, f"dec{i}_conv1")
    h = conv_relu(h, "head", linear=True)
    if training:
        _check_finite(h, "head")

    def run_backward(g):
        for entry in reversed(tape):
            if callable(entry):
                g = entry(g)
            elif entry[0] == "concat":
                _, level, split = entry
                skip_grads[level] = g[:, split:]
                g = g[:, :split]
            else:
                _, level = entry
                g = g + skip_grads.pop(level)
        return g

    return h, run_backward


def _conv_infer(x, w, b):
    out, _ = _conv(x, w, b, {}, "_w", "_b")
    return out


def _as_batch(frames: np.ndarray, depth: int) -> np.ndarray:
    arr = np.asarray(frames)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ValueError(f"frames must be 2-D or a batch of 2-D arrays, got shape {arr.shape}")
    step = 2**depth
    if arr.shape[1] % step or arr.shape[2] % step:
        raise ValueError(
            f"frame dims {arr.shape[1]}x{arr.shape[2]} not divisible by 2^depth = {step}"
        )
    return arr


def forward(model: DenoiserModel, frames: np.ndarray) -> np.ndarray:
    """Plain inference on a (batch, H, W) stack of frames."""
    single = np.asarray(frames).ndim == 2
    arr = _as_batch(frames, model.config.depth).astype(model.dtype())
    out, _ = _forward_tape(model, arr[:, None], grads=None)
    result = out[:, 0]
    if not np.isfinite(result).all():
        raise FloatingPointError("non-finite network output")
    return result[0] if single else result


def loss_and_grad(model: DenoiserModel, inputs: np.ndarray,
                  targets: np.ndarray) -> tuple[float, dict]:
    """Mean squared error against ``targets`` and its gradient with
    respect to every parameter, via the recorded backward tape."""
    x = _as_batch(inputs, model.config.depth).astype(model.dtype())
    y = _as_batch(targets, model.config.depth).astype(model.dtype())
    if x.shape != y.shape:
        raise ValueError(f"input batch {x.shape} and target batch {y.shape} differ")
    grads = {k: np.zeros_like(v) for k, v in model.params.items()}
    out, run_backward = _forward_tape(model, x[:, None], grads)
    resid = out - y[:, None]
    loss = float(np.mean(resid.astype(np.float64) ** 2))
    gout = (2.0 / resid.size) * resid
    run_backward(gout.astype(model.dtype()))
    return loss, grads


def augment(pairs: PairSet) -> PairSet:
    """Quadruple the stack with the flip group of the frame plane:
    identity, first-axis flip, second-axis flip, and the 180-degree
    rotation, in transform-major order, applied identically to input and
    target.  Quarter-turn rotations are deliberately absent: they would
    swap the fast and slow scan axes."""
    ax = axis_index(pairs.axis)
    spatial = [d for d in range(3) if d != ax]

    def fourfold(cube: HyperCube) -> np.ndarray:
        d = cube.data
        blocks = [
            d,
            np.flip(d, axis=spatial[0]),
            np.flip(d, axis=spatial[1]),
            np.flip(np.flip(d, axis=spatial[0]), axis=spatial[1]),
        ]
        return np.concatenate(blocks, axis=ax)

    kept = pairs.input.shape[ax]
    return PairSet(
        input=pairs.input.with_data(fourfold(pairs.input), drop_wavenumbers=True),
        target=pairs.target.with_data(fourfold(pairs.target), drop_wavenumbers=True),
        axis=pairs.axis,
        n_original=4 * kept,
        parity_dropped=False,
    )


def _frames_along(cube: HyperCube, axis: str) -> np.ndarray:
    return np.moveaxis(cube.data, axis_index(axis), 0)


def train(model: DenoiserModel, pairs: PairSet, tc: TrainConfig) -> DenoiserModel:
    """Noise-to-noise training loop.

    Splits off floor(val_fraction * N) frames by a seeded permutation,
    runs adaptive-moment updates over shuffled minibatches, and returns
    the checkpoint with the best validation loss.  With too few frames
    for a validation split, the epoch training loss stands in.  A
    non-finite loss aborts the run and returns the last good checkpoint.
    """
    work = augment(pairs) if tc.augment else pairs
    inputs = _frames_along(work.input, work.axis)
    targets = _frames_along(work.target, work.axis)
    n = inputs.shape[0]
    if n < tc.batch_size:
        raise ValueError(f"only {n} frames for batch size {tc.batch_size}")
    rng = np.random.default_rng(tc.seed)
    n_val = int(np.floor(tc.val_fraction * n))
    order = rng.permutation(n)
    val_idx, train_idx = order[:n_val], order[n_val:]

    params = {k: v.copy() for k, v in model.params.items()}
    live = DenoiserModel(config=model.config, params=params, axis=pairs.axis)
    m_state = {k: np.zeros_like(v) for k, v in params.items()}
    v_state = {k: np.zeros_like(v) for k, v in params.items()}
    step = 0
    history: list[tuple[int, float, float]] = []
    best_val = np.inf
    best_params = {k: v.copy() for k, v in params.items()}

    def val_loss() -> float:
        if n_val == 0:
            return np.nan
        out = forward(live, inputs[val_idx])
        return float(np.mean((out.astype(np.float64) - targets[val_idx]) ** 2))

    for epoch in range(1, tc.epochs + 1):
        perm = rng.permutation(train_idx.size)
        epoch_sum = 0.0
        aborted = False
        for start in range(0, train_idx.size, tc.batch_size):
            batch = train_idx[perm[start:start + tc.batch_size]]
            try:
                loss, grads = loss_and_grad(live, inputs[batch], targets[batch])
            except FloatingPointError:
                aborted = True
                break
            if not np.isfinite(loss):
                aborted = True
                break
            epoch_sum += loss * batch.size
            step += 1
            correct1 = 1.0 - _ADAM_BETA1**step
            correct2 = 1.0 - _ADAM_BETA2**step
            for key, g in grads.items():
                m_state[key] = _ADAM_BETA1 * m_state[key] + (1 - _ADAM_BETA1) * g
                v_state[key] = _ADAM_BETA2 * v_state[key] + (1 - _ADAM_BETA2) * g * g
                update = (m_state[key] / correct1) / (np.sqrt(v_state[key] / correct2) + _ADAM_EPS)
                params[key] -= (tc.learning_rate * update).astype(params[key].dtype)
        if aborted:
            break
        train_loss = epoch_sum / train_idx.size
        vloss = val_loss()
        tracked = train_loss if n_val == 0 else vloss
        if not np.isfinite(tracked):
            break
        history.append((epoch, float(train_loss), float(tracked)))
        if tracked < best_val:
            best_val = tracked
            best_params = {k: v.copy() for k, v in params.items()}
    return DenoiserModel(config=model.config, params=best_params,
                         history=history, axis=pairs.axis)


def predict(model: DenoiserModel, cube: HyperCube, chunk: int = 32) -> HyperCube:
    """Denoise a full cube frame by frame in original order along the
    model's permutation axis, reflect-padding each frame up to the
    nearest multiple of 2^depth and cropping the result back."""
    chunk = max(1, int(chunk))
    ax = axis_index(model.axis)
    frames = _frames_along(cube, model.axis)
    n, h, w = frames.shape
    step = 2**model.config.depth
    pad_h = (-h) % step
    pad_w = (-w) % step
    if pad_h >= h or pad_w >= w:
        raise ValueError(
            f"frames of {h}x{w} are too small to pad to a multiple of {step}"
        )
    padded = np.pad(frames, ((0, 0), (0, pad_h), (0, pad_w)), mode="reflect")
    pieces = [forward(model, padded[i:i + chunk]) for i in range(0, n, chunk)]
    out = np.concatenate(pieces, axis=0)[:, :h, :w]
    restored = np.moveaxis(out, 0, ax)
    return cube.with_data(restored.astype(np.float32))


def save_model(model: DenoiserModel, path) -> None:
    """Write a checkpoint: one line of JSON (config, axis, history,
    parameter manifest, payload checksum) followed by the parameters as
    little-endian float32 in manifest order."""
    payload = b"".join(
        np.ascontiguousarray(v, dtype="<f4").tobytes() for v in model.params.values()
    )
    header = {
        "format": _MODEL_FORMAT,
        "version": _MODEL_VERSION,
        "config": {
            "depth": model.config.depth,
            "base_channels": model.config.base_channels,
            "kernel": model.config.kernel,
            "activation": model.config.activation,
            "skip_connections": model.config.skip_connections,
            "seed": model.config.seed,
        },
        "axis": model.axis,
        "history": [[int(e), float(t), float(v)] for e, t, v in model.history],
        "params": [{"name": k, "shape": list(v.shape)} for k, v in model.params.items()],
        "checksum": zlib.crc32(payload) & 0xFFFFFFFF,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode())
        fh.write(b"\n")
        fh.write(payload)


def load_model(path) -> DenoiserModel:
    with open(path, "rb") as fh:
        raw = fh.read()
    newline = raw.find(b"\n")
    if newline < 0:
        raise ValueError(f"not a model checkpoint: {path}")
    try:
        header = json.loads(raw[:newline].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"malformed checkpoint header in {path}: {exc}") from exc
    if header.get("format") != _MODEL_FORMAT:
        raise ValueError(f"not a model checkpoint: {path}")
    payload = raw[newline + 1:]
    if (zlib.crc32(payload) & 0xFFFFFFFF) != int(header["checksum"]):
        raise ValueError(f"checkpoint payload checksum mismatch: {path}")
    cfg = ModelConfig(**header["config"])
    params: dict[str, np.ndarray] = {}
    offset = 0
    for entry in header["params"]:
        shape = tuple(int(s) for s in entry["shape"])
        count = int(np.prod(shape))
        chunk = payload[offset:offset + 4 * count]
        if len(chunk) != 4 * count:
            raise ValueError(f"checkpoint payload truncated: {path}")
        params[entry["name"]] = np.frombuffer(chunk, dtype="<f4").reshape(shape).copy()
        offset += 4 * count
    if offset != len(payload):
        raise ValueError(f"checkpoint payload has trailing bytes: {path}")
    expected = {f"{name}_{suffix}" for name, *_ in _layer_plan(cfg) for suffix in ("w", "b")}
    if set(params) != expected:
        raise ValueError(f"checkpoint parameters do not match the declared architecture: {path}")
    model = DenoiserModel(config=cfg, params=params, axis=canonical_axis(header["axis"]))
    model.history = [tuple(row) for row in header["history"]]
    return model
