"""Trainable per-pixel classifier over multi-channel rasters.

A small encoder-decoder: two 3x3 conv blocks, one 2x max-pool, two more
conv blocks, nearest-neighbour upsampling with a skip concatenation, two
decoder convs and a 1x1 classification head with per-pixel softmax.
Receptive field 17 pixels. Sized to train on a CPU in minutes; training
is single-threaded and bit-reproducible from the seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .nn import Conv1x1, Conv3x3, MaxPool2, ReLU, UpsampleNearest2, softmax, weighted_cross_entropy
from .raster import MultiChannelRaster, ProbabilityRaster

MODEL_MAGIC = "SRMODEL v1"


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 8
    max_epochs: int = 50
    patch_size: int = 64
    val_fraction: float = 0.1
    patience: int = 5
    seed: int = 0
    steps_per_epoch: int | None = None
    # Fraction of patches anchored on a pixel of a uniformly drawn class,
    # so rare classes are seen often enough to be learned at desk scale.
    class_balance: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError(f"val_fraction must be in (0, 1), got {self.val_fraction}")
        if not 0.0 <= self.class_balance <= 1.0:
            raise ValueError(f"class_balance must be in [0, 1], got {self.class_balance}")
        if self.patch_size % 2:
            raise ValueError(f"patch_size must be even, got {self.patch_size}")
        for name in ("learning_rate", "batch_size", "patch_size", "patience"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")


class PixelClassifier:
    """Encoder-decoder network producing per-pixel class distributions."""

    RECEPTIVE_FIELD = 17

    def __init__(
        self,
        in_channels: int = 6,
        num_classes: int = 5,
        base_filters: int = 8,
        seed: int = 0,
        dtype=np.float32,
        zero_init_channels_from: int | None = None,
    ):
        """`zero_init_channels_from` zeroes the first-layer taps of input
        channels at and beyond that index. Channels that are all-zero in
        early training (feedback planes before the first referee pass)
        then enter later training with zero influence instead of acting
        as frozen random projections."""
        if base_filters > 64:
            raise ValueError(f"base_filters capped at 64, got {base_filters}")
        if self.RECEPTIVE_FIELD < 16:
            raise AssertionError("receptive field contract broken")
        self.in_channels = in_channels
        self.num_classes = num_classes
        self.base_filters = base_filters
        self.seed = seed
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        f = base_filters
        self.enc1a = Conv3x3(in_channels, f, rng, dtype)
        if zero_init_channels_from is not None:
            self.enc1a.W[:, zero_init_channels_from:] = 0.0
        self.enc1b = Conv3x3(f, f, rng, dtype)
        self.enc2a = Conv3x3(f, 2 * f, rng, dtype)
        self.enc2b = Conv3x3(2 * f, 2 * f, rng, dtype)
        self.dec1a = Conv3x3(3 * f, f, rng, dtype)
        self.dec1b = Conv3x3(f, f, rng, dtype)
        self.head = Conv1x1(f, num_classes, rng, dtype)
        self._relus = [ReLU() for _ in range(6)]
        self.pool = MaxPool2()
        self.up = UpsampleNearest2()

    # -- parameter registry -------------------------------------------------

    def _layers(self):
        return (
            ("enc1a", self.enc1a),
            ("enc1b", self.enc1b),
            ("enc2a", self.enc2a),
            ("enc2b", self.enc2b),
            ("dec1a", self.dec1a),
            ("dec1b", self.dec1b),
            ("head", self.head),
        )

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for name, layer in self._layers():
            out.append((f"{name}.W", layer.W))
            out.append((f"{name}.b", layer.b))
        return out

    def gradients(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for name, layer in self._layers():
            out.append((f"{name}.W", layer.gW))
            out.append((f"{name}.b", layer.gb))
        return out

    def zero_grad(self) -> None:
        for _, layer in self._layers():
            layer.gW[...] = 0
            layer.gb[...] = 0

    def get_state(self) -> dict[str, np.ndarray]:
        return {name: arr.copy() for name, arr in self.parameters()}

    def set_state(self, state: dict[str, np.ndarray]) -> None:
        for name, arr in self.parameters():
            arr[...] = state[name]

    def architecture(self) -> dict[str, int]:
        return {
            "in_channels": self.in_channels,
            "num_classes": self.num_classes,
            "base_filters": self.base_filters,
        }

    def astype(self, dtype) -> "PixelClassifier":
        clone = PixelClassifier(
            self.in_channels, self.num_classes, self.base_filters, self.seed, dtype
        )
        for (_, src), (_, dst) in zip(self.parameters(), clone.parameters()):
            dst[...] = src.astype(dtype)
        return clone

    # -- forward / backward --------------------------------------------------

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ValueError(
                f"expected (N, {self.in_channels}, H, W) input, got {x.shape}"
            )
        if x.shape[2] % 2 or x.shape[3] % 2:
            raise ValueError(f"spatial dims must be even, got {x.shape[2]}x{x.shape[3]}")
        r = self._relus
        e1 = r[1].forward(self.enc1b.forward(r[0].forward(self.enc1a.forward(x))))
        e2 = r[3].forward(self.enc2b.forward(r[2].forward(self.enc2a.forward(self.pool.forward(e1)))))
        merged = np.concatenate([e1, self.up.forward(e2)], axis=1)
        d = r[5].forward(self.dec1b.forward(r[4].forward(self.dec1a.forward(merged))))
        return self.head.forward(d)

    def backward(self, grad_logits: np.ndarray) -> None:
        r = self._relus
        f = self.base_filters
        g = self.dec1a.backward(
            r[4].backward(self.dec1b.backward(r[5].backward(self.head.backward(grad_logits))))
        )
        g_skip, g_up = g[:, :f], g[:, f:]
        g2 = self.enc2a.backward(
            r[2].backward(self.enc2b.backward(r[3].backward(self.up.backward(g_up))))
        )
        g1 = g_skip + self.pool.backward(g2)
        self.enc1a.backward(r[0].backward(self.enc1b.backward(r[1].backward(g1))))

    def predict_probs(self, x: np.ndarray) -> np.ndarray:
        return softmax(self.forward(x), axis=1)


def median_frequency_weights(frequencies: np.ndarray) -> np.ndarray:
    """Per-class loss weights: median class frequency over class frequency.

    Every entry must be positive; callers exclude absent classes first.
    """
    freqs = np.asarray(frequencies, dtype=np.float64)
    if freqs.ndim != 1 or freqs.size == 0:
        raise ValueError("frequencies must be a non-empty 1-D array")
    zero = np.nonzero(freqs <= 0)[0]
    if zero.size:
        raise ValueError(f"zero frequency for class ids {zero.tolist()}")
    return np.median(freqs) / freqs


def weights_from_labels(labels: np.ndarray, num_classes: int) -> tuple[np.ndarray, list[int]]:
    """Median-frequency weights from observed labels.

    Classes absent from `labels` are excluded from the median, get weight
    zero, and are returned so the caller can report them.
    """
    counts = np.bincount(np.asarray(labels).ravel(), minlength=num_classes)[:num_classes]
    present = counts > 0
    absent = [int(i) for i in np.nonzero(~present)[0]]
    freqs = counts[present] / counts.sum()
    weights = np.zeros(num_classes, dtype=np.float64)
    weights[present] = median_frequency_weights(freqs)
    return weights, absent


class _Adam:
    def __init__(self, params: list[tuple[str, np.ndarray]], lr: float):
        self.lr = lr
        self.beta1, self.beta2, self.eps = 0.9, 0.999, 1e-8
        self.t = 0
        self.m = {name: np.zeros_like(arr) for name, arr in params}
        self.v = {name: np.zeros_like(arr) for name, arr in params}

    def step(self, params, grads) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for (name, arr), (_, g) in zip(params, grads):
            m = self.m[name]
            v = self.v[name]
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            arr -= (self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)).astype(arr.dtype)


def _as_nchw(patch: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(patch.transpose(2, 0, 1))


def _val_tiles(scenes, patch: int, fraction: float, rng: np.random.Generator):
    tiles = []
    for si, (inp, _) in enumerate(scenes):
        h, w = inp.shape[:2]
        for r0 in range(0, h - patch + 1, patch):
            for c0 in range(0, w - patch + 1, patch):
                tiles.append((si, r0, c0))
    order = rng.permutation(len(tiles))
    n_val = max(1, round(fraction * len(tiles)))
    return [tiles[i] for i in order[:n_val]]


def evaluate_loss(model: PixelClassifier, x: np.ndarray, y: np.ndarray, weights: np.ndarray) -> float:
    loss, _ = weighted_cross_entropy(model.forward(x), y, weights)
    return loss


def train(
    model: PixelClassifier,
    scenes: list[tuple[np.ndarray, np.ndarray]],
    weights: np.ndarray,
    config: TrainConfig,
) -> list[dict]:
    """Train in place on (input HWC float32, labels HW int) scenes.

    Random patches are drawn each epoch; a fixed fraction of the
    non-overlapping patch grid serves as the validation set. Training
    stops early once validation accuracy has not improved for
    `config.patience` epochs, and the best-validation parameters are
    restored. Returns the per-epoch history.
    """
    if not scenes:
        raise ValueError("no training scenes")
    for inp, lab in scenes:
        if inp.shape[:2] != lab.shape:
            raise ValueError(f"input {inp.shape} and labels {lab.shape} misaligned")
        if inp.shape[2] != model.in_channels:
            raise ValueError(f"scene has {inp.shape[2]} channels, model wants {model.in_channels}")
        if min(lab.shape) < config.patch_size:
            raise ValueError(
                f"patch size {config.patch_size} exceeds scene dims {lab.shape}"
            )
    rng = np.random.default_rng(config.seed)
    patch = config.patch_size
    val = _val_tiles(scenes, patch, config.val_fraction, rng)
    total_px = sum(lab.size for _, lab in scenes)
    steps = config.steps_per_epoch or max(1, round(total_px / (config.batch_size * patch * patch)))
    optimizer = _Adam(model.parameters(), config.learning_rate)
    class_pixels: list[dict[int, np.ndarray]] = []
    if config.class_balance > 0:
        for _, lab in scenes:
            class_pixels.append(
                {int(c): np.argwhere(lab == c) for c in np.unique(lab)}
            )

    def sample_origin(si: int) -> tuple[int, int]:
        inp, lab = scenes[si]
        if rng.random() < config.class_balance:
            pixels = class_pixels[si]
            classes = sorted(pixels)
            anchor = pixels[classes[int(rng.integers(len(classes)))]]
            pr, pc = anchor[int(rng.integers(len(anchor)))]
            r0 = int(np.clip(pr - rng.integers(patch), 0, inp.shape[0] - patch))
            c0 = int(np.clip(pc - rng.integers(patch), 0, inp.shape[1] - patch))
            return r0, c0
        return (
            int(rng.integers(inp.shape[0] - patch + 1)),
            int(rng.integers(inp.shape[1] - patch + 1)),
        )

    def val_metrics() -> tuple[float, float]:
        losses, correct, count = [], 0, 0
        for si, r0, c0 in val:
            inp, lab = scenes[si]
            x = _as_nchw(inp[r0 : r0 + patch, c0 : c0 + patch])[None]
            y = lab[r0 : r0 + patch, c0 : c0 + patch][None].astype(np.int64)
            logits = model.forward(x)
            loss, _ = weighted_cross_entropy(logits, y, weights)
            losses.append(loss)
            correct += int((logits.argmax(axis=1) == y).sum())
            count += y.size
        return float(np.mean(losses)), correct / count

    history: list[dict] = []
    best_acc = -np.inf
    best_state = model.get_state()
    wait = 0
    for epoch in range(config.max_epochs):
        epoch_losses = []
        correct = 0
        seen = 0
        for _ in range(steps):
            xs, ys = [], []
            for _ in range(config.batch_size):
                si = int(rng.integers(len(scenes)))
                inp, lab = scenes[si]
                r0, c0 = sample_origin(si)
                xs.append(_as_nchw(inp[r0 : r0 + patch, c0 : c0 + patch]))
                ys.append(lab[r0 : r0 + patch, c0 : c0 + patch])
            x = np.stack(xs)
            y = np.stack(ys).astype(np.int64)
            logits = model.forward(x)
            loss, grad = weighted_cross_entropy(logits, y, weights)
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}, step {len(epoch_losses)}")
            model.zero_grad()
            model.backward(grad)
            optimizer.step(model.parameters(), model.gradients())
            epoch_losses.append(loss)
            correct += int((logits.argmax(axis=1) == y).sum())
            seen += y.size
        val_loss, val_acc = val_metrics()
        history.append(
            {
                "epoch": epoch,
                "train_loss": float(np.mean(epoch_losses)),
                "train_accuracy": correct / seen,
                "val_loss": val_loss,
                "val_accuracy": val_acc,
            }
        )
        if val_acc > best_acc:
            best_acc = val_acc
            best_state = model.get_state()
            wait = 0
        else:
            wait += 1
            if wait >= config.patience:
                break
    model.set_state(best_state)
    return history


def predict(model: PixelClassifier, raster: MultiChannelRaster | np.ndarray) -> ProbabilityRaster:
    """Per-pixel class distributions for a whole scene.

    Odd scene sides are edge-padded to even for the pooling stage and the
    output is cropped back. Deterministic for a fixed model.
    """
    values = raster.values if isinstance(raster, MultiChannelRaster) else np.asarray(raster)
    if values.ndim != 3 or values.shape[2] != model.in_channels:
        raise ValueError(
            f"expected (H, W, {model.in_channels}) input, got {values.shape}"
        )
    h, w = values.shape[:2]
    ph, pw = h % 2, w % 2
    if ph or pw:
        values = np.pad(values, ((0, ph), (0, pw), (0, 0)), mode="edge")
    x = _as_nchw(values.astype(np.float32, copy=False))[None]
    probs = model.predict_probs(x)[0].transpose(1, 2, 0)[:h, :w]
    return ProbabilityRaster(np.ascontiguousarray(probs, dtype=np.float32))


def gradient_check(
    model: PixelClassifier,
    x: np.ndarray,
    labels: np.ndarray,
    weights: np.ndarray,
    step: float = 1e-4,
) -> float:
    """Max relative error of analytic gradients vs central differences.

    Runs on a float64 copy of the model so the finite differences are
    meaningful; intended for tiny models and small samples.
    """
    m64 = model.astype(np.float64)
    x64 = x.astype(np.float64)
    logits = m64.forward(x64)
    _, grad = weighted_cross_entropy(logits, labels, weights)
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite loss gradient")
    m64.zero_grad()
    m64.backward(grad)
    analytic = {name: g.copy() for name, g in m64.gradients()}
    if any(not np.all(np.isfinite(g)) for g in analytic.values()):
        raise FloatingPointError("non-finite parameter gradient")
    worst = 0.0
    for name, arr in m64.parameters():
        flat = arr.reshape(-1)
        ana = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up, _ = weighted_cross_entropy(m64.forward(x64), labels, weights)
            flat[i] = orig - step
            down, _ = weighted_cross_entropy(m64.forward(x64), labels, weights)
            flat[i] = orig
            numeric = (up - down) / (2.0 * step)
            rel = abs(ana[i] - numeric) / max(abs(ana[i]), abs(numeric), 1e-8)
            worst = max(worst, rel)
    return worst


def save_model(model: PixelClassifier, path: str | Path) -> None:
    """Checkpoint: text header with the architecture, then float32 payload."""
    lines = [MODEL_MAGIC]
    for key, value in model.architecture().items():
        lines.append(f"{key} {value}")
    params = model.parameters()
    lines.append(f"tensors {len(params)}")
    for name, arr in params:
        dims = " ".join(str(d) for d in arr.shape)
        lines.append(f"tensor {name} {dims}")
    lines.append("end")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        for _, arr in params:
            fh.write(arr.astype("<f4").tobytes(order="C"))


def load_model(path: str | Path) -> PixelClassifier:
    with open(path, "rb") as fh:
        magic = fh.readline().decode("ascii").rstrip("\n")
        if magic != MODEL_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        arch: dict[str, int] = {}
        specs: list[tuple[str, tuple[int, ...]]] = []
        n_tensors = None
        while True:
            line = fh.readline().decode("ascii").rstrip("\n")
            if line == "end":
                break
            if not line:
                raise ValueError(f"{path}: truncated header")
            tokens = line.split()
            if tokens[0] == "tensors":
                n_tensors = int(tokens[1])
            elif tokens[0] == "tensor":
                specs.append((tokens[1], tuple(int(t) for t in tokens[2:])))
            else:
                arch[tokens[0]] = int(tokens[1])
        if n_tensors is None or len(specs) != n_tensors:
            raise ValueError(f"{path}: tensor count mismatch")
        model = PixelClassifier(
            in_channels=arch["in_channels"],
            num_classes=arch["num_classes"],
            base_filters=arch["base_filters"],
        )
        by_name = dict(model.parameters())
        for name, shape in specs:
            if name not in by_name:
                raise ValueError(f"{path}: unknown tensor {name!r}")
            if by_name[name].shape != shape:
                raise ValueError(
                    f"{path}: tensor {name} has shape {shape}, expected {by_name[name].shape}"
                )
            count = int(np.prod(shape)) if shape else 1
            blob = fh.read(count * 4)
            if len(blob) != count * 4:
                raise ValueError(f"{path}: truncated payload for tensor {name}")
            by_name[name][...] = np.frombuffer(blob, dtype="<f4").reshape(shape)
        return model
