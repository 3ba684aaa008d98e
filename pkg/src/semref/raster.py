"""Raster data model and portable file I/O.

Three raster kinds share one on-disk container (see `save_raster`):

* ``label``       -- one uint8 class id per pixel
* ``channels``    -- C float32 planes (RGB, feedback channels, elevation, ...)
* ``probability`` -- K float32 planes forming a per-pixel distribution

Arrays are stored (height, width[, channels]) and treated as immutable
after construction; nothing in this package mutates a raster in place.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = "SRRASTER v1"
KINDS = ("label", "channels", "probability")

PROB_TOL = 1e-5


class RasterFormatError(ValueError):
    """Raised for malformed raster files or invariant violations."""


@dataclass(frozen=True)
class ClassDef:
    """A classifier label: small non-negative id plus a unique name."""

    id: int
    name: str


@dataclass(frozen=True)
class ClassTable:
    """Ordered class definitions; index in `names` is the class id."""

    names: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ValueError(f"duplicate class names: {self.names}")

    def __len__(self) -> int:
        return len(self.names)

    def __iter__(self):
        return (ClassDef(i, n) for i, n in enumerate(self.names))

    def id_of(self, name: str) -> int:
        return self.names.index(name)


@dataclass(frozen=True)
class LabelRaster:
    """Per-pixel class ids, shape (H, W), dtype uint8."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.uint8)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise RasterFormatError(f"label raster must be 2-D and non-empty, got shape {v.shape}")
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def validate_ids(self, num_classes: int) -> None:
        bad = np.argwhere(self.values >= num_classes)
        if bad.size:
            r, c = bad[0]
            raise RasterFormatError(
                f"class id {self.values[r, c]} out of range (K={num_classes}) at row {r}, col {c}"
            )


@dataclass(frozen=True)
class MultiChannelRaster:
    """Real-valued planes, shape (H, W, C), dtype float32. C may be zero."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim == 2:
            v = v[:, :, None]
        if v.ndim != 3 or v.shape[0] < 1 or v.shape[1] < 1:
            raise RasterFormatError(f"channel raster must be (H, W, C) with H, W > 0, got {v.shape}")
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class ProbabilityRaster:
    """Per-pixel class distributions, shape (H, W, K)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 3 or v.shape[2] < 1:
            raise RasterFormatError(f"probability raster must be (H, W, K), got {v.shape}")
        object.__setattr__(self, "values", v)
        self.validate()

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def num_classes(self) -> int:
        return self.values.shape[2]

    def validate(self) -> None:
        if np.any(self.values < 0):
            r, c, _ = np.argwhere(self.values < 0)[0]
            raise RasterFormatError(f"negative probability at row {r}, col {c}")
        sums = self.values.sum(axis=2, dtype=np.float64)
        bad = np.argwhere(np.abs(sums - 1.0) > PROB_TOL)
        if bad.size:
            r, c = bad[0]
            raise RasterFormatError(
                f"probabilities sum to {sums[r, c]:.6f} (not 1 within {PROB_TOL}) at row {r}, col {c}"
            )

    def argmax(self) -> LabelRaster:
        return LabelRaster(self.values.argmax(axis=2).astype(np.uint8))


Raster = LabelRaster | MultiChannelRaster | ProbabilityRaster


def _kind_of(raster: Raster) -> str:
    if isinstance(raster, LabelRaster):
        return "label"
    if isinstance(raster, ProbabilityRaster):
        return "probability"
    return "channels"


def save_raster(raster: Raster, path: str | Path) -> None:
    """Write a raster: text header, then a little-endian binary payload.

    Layout: line 1 the magic string, line 2 ``kind height width channels``,
    then the payload row-major with channels varying fastest. Labels are
    uint8; channel and probability planes are float32.
    """
    kind = _kind_of(raster)
    if kind == "label":
        payload = raster.values.astype("<u1")
        channels = 1
    else:
        payload = raster.values.astype("<f4")
        channels = raster.values.shape[2]
    header = f"{MAGIC}\n{kind} {raster.height} {raster.width} {channels}\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(payload.tobytes(order="C"))


def load_raster(path: str | Path, kind: str, num_classes: int | None = None) -> Raster:
    """Read a raster file, checking the header and every type invariant.

    `kind` is the expected kind; a file of another kind is an error.
    For ``label`` kind, `num_classes` (when given) bounds the class ids.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown raster kind {kind!r}; expected one of {KINDS}")
    with open(path, "rb") as fh:
        magic = fh.readline().decode("ascii", errors="replace").rstrip("\n")
        if magic != MAGIC:
            raise RasterFormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        header = fh.readline().decode("ascii", errors="replace").split()
        if len(header) != 4:
            raise RasterFormatError(f"{path}: malformed header line {header!r}")
        file_kind, h_s, w_s, c_s = header
        try:
            height, width, channels = int(h_s), int(w_s), int(c_s)
        except ValueError:
            raise RasterFormatError(f"{path}: non-integer dimensions in header {header!r}") from None
        if file_kind not in KINDS:
            raise RasterFormatError(f"{path}: unknown kind {file_kind!r} in header")
        if file_kind != kind:
            raise RasterFormatError(f"{path}: file kind {file_kind!r} does not match requested {kind!r}")
        if height < 1 or width < 1 or channels < 0:
            raise RasterFormatError(f"{path}: bad dimensions {height}x{width}x{channels}")
        if kind == "label" and channels != 1:
            raise RasterFormatError(f"{path}: label rasters carry exactly 1 channel, got {channels}")
        dtype = np.dtype("<u1") if kind == "label" else np.dtype("<f4")
        expected = height * width * channels * dtype.itemsize
        blob = fh.read()
    if len(blob) != expected:
        raise RasterFormatError(f"{path}: payload is {len(blob)} bytes, expected {expected}")
    data = np.frombuffer(blob, dtype=dtype)
    if kind == "label":
        raster = LabelRaster(data.reshape(height, width))
        if num_classes is not None:
            raster.validate_ids(num_classes)
        return raster
    data = data.reshape(height, width, channels)
    if kind == "probability":
        return ProbabilityRaster(data)
    return MultiChannelRaster(data)


def concat_channels(base: MultiChannelRaster, extra: MultiChannelRaster) -> MultiChannelRaster:
    """Stack `extra` planes after `base` planes; no resampling, values kept."""
    if (base.height, base.width) != (extra.height, extra.width):
        raise RasterFormatError(
            f"dimension mismatch: {base.height}x{base.width} vs {extra.height}x{extra.width}"
        )
    if extra.channels == 0:
        return base
    return MultiChannelRaster(np.concatenate([base.values, extra.values], axis=2))
