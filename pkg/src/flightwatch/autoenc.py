"""1D convolutional autoencoder with hand-rolled backpropagation and Adam.

The encoder halves the sequence length twice with strided same-padded
convolutions; the decoder mirrors it with transposed convolutions and a final
linear reconstruction layer whose output is cropped back to the input length.
Dropout is active only during training; inference is deterministic.  Training
is bit-reproducible given the seed: weight init, shuffle order, and the
dropout stream all come from one generator.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

FORMAT_MAGIC = "flightwatch-model"
FORMAT_VERSION = 1


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def _same_pad(length: int, stride: int, kernel: int) -> tuple[int, int, int]:
    """(output length, left pad, right pad) for same-padded strided convolution."""
    out = _ceil_div(length, stride)
    total = max((out - 1) * stride + kernel - length, 0)
    return out, total // 2, total - total // 2


class Conv1d:
    """Same-padded strided 1D convolution (cross-correlation).

    Activations flow through the network in channels-first, batch-last layout
    (channels, length, batch) so each layer is a single large matrix product.
    """

    kind = "conv"

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 stride: int, rng: np.random.Generator | None = None):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        if rng is not None:
            limit = math.sqrt(6.0 / (in_channels * kernel_size))
            self.w = rng.uniform(-limit, limit, size=(out_channels, in_channels, kernel_size))
        else:
            self.w = np.zeros((out_channels, in_channels, kernel_size))
        self.b = np.zeros(out_channels)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._cache = None

    def output_length(self, length: int) -> int:
        return _same_pad(length, self.stride, self.kernel_size)[0]

    def _taps(self, length: int, out: int, pl: int):
        """Per-kernel-offset aligned slices between input positions and output
        positions, padding clipped away: output j reads input j*s + kk - pl."""
        k, s = self.kernel_size, self.stride
        taps = []
        for kk in range(k):
            j0 = max(0, _ceil_div(pl - kk, s))
            j1 = min(out - 1, (length - 1 - kk + pl) // s)
            if j0 > j1:
                taps.append(None)
                continue
            p0 = j0 * s + kk - pl
            count = j1 - j0 + 1
            taps.append((slice(j0, j1 + 1), slice(p0, p0 + count * s, s)))
        return taps

    def forward(self, x: np.ndarray, train: bool = False,
                rng: np.random.Generator | None = None) -> np.ndarray:
        c, length, n = x.shape
        k = self.kernel_size
        out, pl, _ = _same_pad(length, self.stride, k)
        cols = np.zeros((c, k, out, n))
        taps = self._taps(length, out, pl)
        for kk in range(k):
            if taps[kk] is not None:
                out_sl, in_sl = taps[kk]
                cols[:, kk, out_sl, :] = x[:, in_sl, :]
        flat = cols.reshape(c * k, out * n)
        y = (self.w.reshape(self.out_channels, c * k) @ flat) \
            .reshape(self.out_channels, out, n)
        y += self.b[:, None, None]
        self._cache = (flat, length, pl, out)
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        flat, length, pl, out = self._cache
        c, k = self.in_channels, self.kernel_size
        n = dy.shape[2]
        dy2 = dy.reshape(self.out_channels, out * n)
        self.dw = (dy2 @ flat.T).reshape(self.w.shape)
        self.db = dy.sum(axis=(1, 2))
        dcols = (self.w.reshape(self.out_channels, c * k).T @ dy2) \
            .reshape(c, k, out, n)
        dx = np.zeros((c, length, n))
        taps = self._taps(length, out, pl)
        for kk in range(k):
            if taps[kk] is not None:
                out_sl, in_sl = taps[kk]
                dx[:, in_sl, :] += dcols[:, kk, out_sl, :]
        return dx


class ConvTranspose1d:
    """Same-padded strided 1D transposed convolution (output length = input * stride)."""

    kind = "conv_transpose"

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 stride: int, rng: np.random.Generator | None = None):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        if rng is not None:
            limit = math.sqrt(6.0 / (in_channels * kernel_size))
            self.w = rng.uniform(-limit, limit, size=(in_channels, out_channels, kernel_size))
        else:
            self.w = np.zeros((in_channels, out_channels, kernel_size))
        self.b = np.zeros(out_channels)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._cache = None

    def output_length(self, length: int) -> int:
        return length * self.stride

    def _geometry(self, length: int) -> tuple[int, int, int]:
        k, s = self.kernel_size, self.stride
        out = length * s
        full = (length - 1) * s + k
        crop = max(full - out, 0)
        return out, full, crop // 2

    def _taps(self, length: int, out: int, pl: int):
        """Aligned slices between input positions and output positions for each
        kernel offset: input i writes output i*s + kk - pl, crop clipped away."""
        k, s = self.kernel_size, self.stride
        taps = []
        for kk in range(k):
            i0 = max(0, _ceil_div(pl - kk, s))
            i1 = min(length - 1, (out - 1 - kk + pl) // s)
            if i0 > i1:
                taps.append(None)
                continue
            t0 = i0 * s + kk - pl
            count = i1 - i0 + 1
            taps.append((slice(i0, i1 + 1), slice(t0, t0 + count * s, s)))
        return taps

    def forward(self, x: np.ndarray, train: bool = False,
                rng: np.random.Generator | None = None) -> np.ndarray:
        c, length, n = x.shape
        k = self.kernel_size
        f = self.out_channels
        out, _, pl = self._geometry(length)
        u = (self.w.reshape(c, f * k).T @ x.reshape(c, length * n)) \
            .reshape(f, k, length, n)
        y = np.zeros((f, out, n))
        taps = self._taps(length, out, pl)
        for kk in range(k):
            if taps[kk] is not None:
                in_sl, out_sl = taps[kk]
                y[:, out_sl, :] += u[:, kk, in_sl, :]
        y += self.b[:, None, None]
        self._cache = (x, length)
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        x, length = self._cache
        c, f, k = self.in_channels, self.out_channels, self.kernel_size
        n = dy.shape[2]
        out, _, pl = self._geometry(length)
        g = np.zeros((f, k, length, n))
        taps = self._taps(length, out, pl)
        for kk in range(k):
            if taps[kk] is not None:
                in_sl, out_sl = taps[kk]
                g[:, kk, in_sl, :] = dy[:, out_sl, :]
        g2 = g.reshape(f * k, length * n)
        dx = (self.w.reshape(c, f * k) @ g2).reshape(c, length, n)
        self.dw = (x.reshape(c, length * n) @ g2.T).reshape(self.w.shape)
        self.db = dy.sum(axis=(1, 2))
        return dx


class Relu:
    kind = "relu"

    def __init__(self):
        self._mask = None

    def output_length(self, length: int) -> int:
        return length

    def forward(self, x, train=False, rng=None):
        # x is this layer's own fresh buffer; rectify in place
        self._mask = x > 0
        np.maximum(x, 0.0, out=x)
        return x

    def backward(self, dy):
        np.multiply(dy, self._mask, out=dy)
        return dy


class Dropout:
    """Inverted dropout; identity at inference time."""

    kind = "dropout"

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")
        self.rate = rate
        self._mask = None

    def output_length(self, length: int) -> int:
        return length

    def forward(self, x, train=False, rng=None):
        if not train or self.rate == 0.0:
            self._mask = None
            return x
        if rng is None:
            raise ValueError("training-mode dropout needs an rng")
        self._mask = np.where(rng.random(x.shape) < self.rate, 0.0,
                              1.0 / (1.0 - self.rate))
        np.multiply(x, self._mask, out=x)
        return x

    def backward(self, dy):
        if self._mask is None:
            return dy
        np.multiply(dy, self._mask, out=dy)
        return dy


class Crop:
    """Keep the first ``target`` samples; backward zero-pads the tail."""

    kind = "crop"

    def __init__(self, target: int):
        self.target = target
        self._full = None

    def output_length(self, length: int) -> int:
        if length < self.target:
            raise ValueError(f"cannot crop length {length} to {self.target}")
        return self.target

    def forward(self, x, train=False, rng=None):
        self._full = x.shape[1]
        return x[:, :self.target, :]

    def backward(self, dy):
        pad = self._full - dy.shape[1]
        return np.pad(dy, ((0, 0), (0, pad), (0, 0)))


class AutoencoderModel:
    """Convolutional autoencoder over fixed-length heading windows.

    Metadata carried for serialization and downstream detection: window
    geometry (sample rate, window length, overlap), the calibrated alarm
    threshold, the rolling-mean width, and training provenance (seed, epochs,
    final loss).
    """

    def __init__(self, input_length: int = 25, filters: tuple[int, int] = (32, 16),
                 kernel_size: int = 3, dropout: float = 0.2,
                 rng: np.random.Generator | None = None, *, seed: int | None = None):
        if input_length < 8:
            raise ValueError("input_length must be >= 8 for the stride chain")
        # no rng and no seed -> all-zero weights (deserialization fills them in)
        if rng is None and seed is not None:
            rng = np.random.default_rng(seed)
        f1, f2 = filters
        self.input_length = input_length
        self.filters = (int(f1), int(f2))
        self.kernel_size = kernel_size
        self.dropout = dropout
        self.enc1 = Conv1d(1, f1, kernel_size, 2, rng)
        self.enc2 = Conv1d(f1, f2, kernel_size, 2, rng)
        self.dec1 = ConvTranspose1d(f2, f2, kernel_size, 2, rng)
        self.dec2 = ConvTranspose1d(f2, f1, kernel_size, 2, rng)
        self.out = ConvTranspose1d(f1, 1, kernel_size, 1, rng)
        self.layers = [self.enc1, Relu(), Dropout(dropout),
                       self.enc2, Relu(),
                       self.dec1, Relu(), Dropout(dropout),
                       self.dec2, Relu(),
                       self.out, Crop(input_length)]
        self.threshold: float | None = None
        self.n_consecutive: int = 4
        self.sample_rate: float | None = None
        self.window_length: float | None = None
        self.overlap: float | None = None
        self.seed: int | None = seed
        self.epochs_trained: int = 0
        self.final_loss: float | None = None
        self.loss_history: list[float] = []

    def weighted_layers(self) -> list[tuple[str, Conv1d | ConvTranspose1d]]:
        return [("enc1", self.enc1), ("enc2", self.enc2),
                ("dec1", self.dec1), ("dec2", self.dec2), ("out", self.out)]

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        params = []
        for name, layer in self.weighted_layers():
            params.append((f"{name}.w", layer.w))
            params.append((f"{name}.b", layer.b))
        return params

    def gradients(self) -> list[tuple[str, np.ndarray]]:
        grads = []
        for name, layer in self.weighted_layers():
            grads.append((f"{name}.w", layer.dw))
            grads.append((f"{name}.b", layer.db))
        return grads

    def shape_chain(self) -> list[int]:
        """Sequence lengths through the network, input first, cropped output last."""
        lengths = [self.input_length]
        for layer in self.layers:
            lengths.append(layer.output_length(lengths[-1]))
        return lengths

    def _run(self, x: np.ndarray, train: bool, rng) -> np.ndarray:
        # internal layout is (channels, length, batch)
        h = np.ascontiguousarray(x.T)[None, :, :]
        for layer in self.layers:
            h = layer.forward(h, train=train, rng=rng)
        return h[0].T

    def forward(self, values, mode: str = "infer",
                rng: np.random.Generator | None = None) -> np.ndarray:
        """Reconstruct one window or a batch of windows.

        ``mode`` is "infer" (deterministic) or "train" (dropout active, rng
        required).  Input length must match the model's input_length.
        """
        if mode not in ("infer", "train"):
            raise ValueError(f"mode must be 'infer' or 'train', got {mode!r}")
        x = np.asarray(values, dtype=float)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.input_length:
            raise ValueError(
                f"expected windows of length {self.input_length}, got shape {x.shape}")
        y = self._run(x, train=(mode == "train"), rng=rng)
        return y[0] if single else y

    def loss_and_grads(self, x: np.ndarray, *, train: bool = False,
                       rng: np.random.Generator | None = None) -> float:
        """MSE reconstruction loss of a batch; leaves gradients on the layers."""
        x = np.asarray(x, dtype=float)
        recon = self._run(x, train=train, rng=rng)
        diff = recon - x
        loss = float(np.mean(diff * diff))
        grad = (2.0 / diff.size) * diff
        h = np.ascontiguousarray(grad.T)[None, :, :]
        for layer in reversed(self.layers):
            h = layer.backward(h)
        return loss

    def reconstruction_losses(self, windows, batch_size: int = 1024) -> np.ndarray:
        """Per-window MSE reconstruction loss, inference mode."""
        x = _window_matrix(windows, self.input_length)
        losses = np.empty(x.shape[0])
        for lo in range(0, x.shape[0], batch_size):
            xb = x[lo:lo + batch_size]
            rb = self._run(xb, train=False, rng=None)
            losses[lo:lo + batch_size] = np.mean((rb - xb) ** 2, axis=1)
        return losses


def mse_loss(original, reconstruction) -> float:
    """Mean squared error between two equal-length arrays."""
    a = np.asarray(original, dtype=float)
    b = np.asarray(reconstruction, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


@dataclass(frozen=True)
class TrainConfig:
    """Adam and schedule hyperparameters for autoencoder training."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 128
    max_epochs: int = 300
    patience: int = 20
    min_delta: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if min(self.learning_rate, self.epsilon, self.min_delta) <= 0:
            raise ValueError("learning_rate, epsilon, and min_delta must be > 0")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("betas must lie in (0, 1)")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("batch_size, max_epochs, and patience must be >= 1")


class _Adam:
    def __init__(self, params: Sequence[np.ndarray], config: TrainConfig):
        self.config = config
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        cfg = self.config
        self.t += 1
        bc1 = 1.0 - cfg.beta1 ** self.t
        bc2 = 1.0 - cfg.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * (g * g)
            p -= cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.epsilon)


def _window_matrix(windows, expected_length: int | None = None) -> np.ndarray:
    if isinstance(windows, np.ndarray):
        x = np.asarray(windows, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
    else:
        rows = [getattr(w, "values", w) for w in windows]
        x = np.asarray(rows, dtype=float)
    if x.ndim != 2:
        raise ValueError(f"expected a 2D window matrix, got shape {x.shape}")
    if expected_length is not None and x.shape[1] != expected_length:
        raise ValueError(f"expected windows of length {expected_length}, got {x.shape[1]}")
    return x


def train(windows, config: TrainConfig = TrainConfig(), *,
          filters: tuple[int, int] = (32, 16), kernel_size: int = 3,
          dropout: float = 0.2, preprocess=None) -> AutoencoderModel:
    """Train an autoencoder on nominal heading windows.

    ``windows`` is a sequence of HeadingWindow (or a raw (n, W) matrix).
    Early stopping watches the training loss itself: training halts once no
    epoch improves the best loss by more than ``min_delta`` for ``patience``
    consecutive epochs.  Given the same seed and data, the returned weights
    are bit-for-bit identical across runs.
    """
    x = _window_matrix(windows)
    if x.shape[0] == 0:
        raise ValueError("training needs at least one window")
    rng = np.random.default_rng(config.seed)
    model = AutoencoderModel(input_length=x.shape[1], filters=filters,
                             kernel_size=kernel_size, dropout=dropout, rng=rng)
    model.seed = config.seed
    if preprocess is not None:
        if preprocess.window_samples != x.shape[1]:
            raise ValueError(
                f"preprocess config implies {preprocess.window_samples} samples per window "
                f"but data has {x.shape[1]}")
        model.sample_rate = preprocess.sample_rate
        model.window_length = preprocess.window_length
        model.overlap = preprocess.overlap
    params = [p for _, p in model.parameters()]
    adam = _Adam(params, config)
    n = x.shape[0]
    best = math.inf
    stale = 0
    history: list[float] = []
    for epoch in range(config.max_epochs):
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            loss = model.loss_and_grads(x[idx], train=True, rng=rng)
            adam.step(params, [g for _, g in model.gradients()])
            total += loss * idx.size
        epoch_loss = total / n
        history.append(epoch_loss)
        if best - epoch_loss > config.min_delta:
            best = epoch_loss
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    model.epochs_trained = len(history)
    model.final_loss = history[-1]
    model.loss_history = history
    return model


def save_model(model: AutoencoderModel, path) -> None:
    """Serialize a model to versioned JSON with full-precision weights."""
    doc = {
        "format": FORMAT_MAGIC,
        "version": FORMAT_VERSION,
        "meta": {
            "input_length": model.input_length,
            "filters": list(model.filters),
            "kernel_size": model.kernel_size,
            "dropout": model.dropout,
            "sample_rate": model.sample_rate,
            "window_length": model.window_length,
            "overlap": model.overlap,
            "threshold": model.threshold,
            "n_consecutive": model.n_consecutive,
            "seed": model.seed,
            "epochs_trained": model.epochs_trained,
            "final_loss": model.final_loss,
            "loss_history": model.loss_history,
        },
        "layers": [
            {
                "name": name,
                "kind": layer.kind,
                "in_channels": layer.in_channels,
                "out_channels": layer.out_channels,
                "kernel_size": layer.kernel_size,
                "stride": layer.stride,
                "w": layer.w.ravel().tolist(),
                "b": layer.b.tolist(),
            }
            for name, layer in model.weighted_layers()
        ],
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n",
                          encoding="utf-8")


def load_model(path) -> AutoencoderModel:
    """Load a model saved by :func:`save_model`; the round trip is bit-exact."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"corrupt model file: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_MAGIC:
        raise ValueError("not a flightwatch model file (bad magic header)")
    if doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model version {doc.get('version')!r}, "
                         f"expected {FORMAT_VERSION}")
    meta = doc["meta"]
    model = AutoencoderModel(
        input_length=int(meta["input_length"]),
        filters=tuple(meta["filters"]),
        kernel_size=int(meta["kernel_size"]),
        dropout=float(meta["dropout"]),
        rng=None,
    )
    model.sample_rate = meta["sample_rate"]
    model.window_length = meta["window_length"]
    model.overlap = meta["overlap"]
    model.threshold = meta["threshold"]
    model.n_consecutive = int(meta["n_consecutive"])
    model.seed = meta["seed"]
    model.epochs_trained = int(meta["epochs_trained"])
    model.final_loss = meta["final_loss"]
    model.loss_history = list(meta.get("loss_history", []))
    by_name = dict(model.weighted_layers())
    seen = set()
    for spec in doc["layers"]:
        layer = by_name.get(spec["name"])
        if layer is None:
            raise ValueError(f"unknown layer {spec['name']!r} in model file")
        w = np.array(spec["w"], dtype=float).reshape(layer.w.shape)
        b = np.array(spec["b"], dtype=float)
        if b.shape != layer.b.shape:
            raise ValueError(f"layer {spec['name']!r}: bias shape mismatch")
        layer.w = w
        layer.b = b
        seen.add(spec["name"])
    missing = set(by_name) - seen
    if missing:
        raise ValueError(f"model file is missing layers: {sorted(missing)}")
    return model
