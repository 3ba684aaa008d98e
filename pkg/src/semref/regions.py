"""Connected regions of a label raster: extraction, scoring, tiling.

A region is a maximal connected set of same-label pixels. Regions carry a
bbox-cropped boolean mask, a hole-filled variant of it (used for
containment tests), and a clockwise outer-boundary pixel chain.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .raster import LabelRaster, ProbabilityRaster, RasterFormatError

STRUCTURE_4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
STRUCTURE_8 = np.ones((3, 3), dtype=bool)

# Clockwise Moore neighbourhood in image coordinates (row grows downward).
_MOORE = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))
_MOORE_INDEX = {d: i for i, d in enumerate(_MOORE)}


@dataclass
class Region:
    """One connected same-label component of a raster."""

    id: int
    class_id: int
    bbox: tuple[int, int, int, int]  # (r0, c0, r1, c1), half-open
    mask: np.ndarray                 # bool, cropped to bbox
    filled_mask: np.ndarray          # bool, cropped to bbox, interior holes filled
    boundary: list[tuple[int, int]]  # clockwise outer boundary, absolute coordinates
    area: int
    raster_shape: tuple[int, int]
    certainty: float | None = None

    def pixel_set(self) -> set[tuple[int, int]]:
        r0, c0, _, _ = self.bbox
        rs, cs = np.nonzero(self.mask)
        return {(int(r) + r0, int(c) + c0) for r, c in zip(rs, cs)}

    def filled_pixel_set(self) -> set[tuple[int, int]]:
        r0, c0, _, _ = self.bbox
        rs, cs = np.nonzero(self.filled_mask)
        return {(int(r) + r0, int(c) + c0) for r, c in zip(rs, cs)}

    def full_mask(self) -> np.ndarray:
        out = np.zeros(self.raster_shape, dtype=bool)
        r0, c0, r1, c1 = self.bbox
        out[r0:r1, c0:c1] = self.mask
        return out

    def is_interior(self) -> bool:
        """True when the bbox does not touch the raster border."""
        r0, c0, r1, c1 = self.bbox
        h, w = self.raster_shape
        return r0 > 0 and c0 > 0 and r1 < h and c1 < w


def trace_boundary(mask: np.ndarray, origin: tuple[int, int] = (0, 0)) -> list[tuple[int, int]]:
    """Clockwise outer-boundary pixel chain of a connected boolean mask.

    Moore-neighbour tracing started at the topmost-leftmost pixel; the walk
    terminates when its first move repeats. Thin appendages are traversed
    out and back, so pixels may repeat within the chain.
    """
    h, w = mask.shape
    rs, cs = np.nonzero(mask)
    if rs.size == 0:
        raise ValueError("cannot trace an empty mask")
    start = (int(rs[0]), int(cs[0]))

    def fg(r: int, c: int) -> bool:
        return 0 <= r < h and 0 <= c < w and bool(mask[r, c])

    if not any(fg(start[0] + dr, start[1] + dc) for dr, dc in _MOORE):
        return [(start[0] + origin[0], start[1] + origin[1])]

    contour = [start]
    b = start
    back = (start[0], start[1] - 1)  # west of start is background by scan order
    first_move = None
    limit = 8 * int(mask.sum()) + 16
    for _ in range(limit):
        i0 = _MOORE_INDEX[(back[0] - b[0], back[1] - b[1])]
        nb = prev = None
        for k in range(1, 9):
            idx = (i0 + k) % 8
            cand = (b[0] + _MOORE[idx][0], b[1] + _MOORE[idx][1])
            if fg(*cand):
                nb = cand
                pdx = (i0 + k - 1) % 8
                prev = (b[0] + _MOORE[pdx][0], b[1] + _MOORE[pdx][1])
                break
        if nb is None:
            break
        move = (b, nb)
        if first_move is None:
            first_move = move
        elif move == first_move:
            break
        b, back = nb, prev
        contour.append(b)
    if len(contour) > 1 and contour[-1] == start:
        contour.pop()
    return [(r + origin[0], c + origin[1]) for r, c in contour]


def region_from_mask(
    mask: np.ndarray,
    region_id: int = 0,
    class_id: int = 0,
    raster_shape: tuple[int, int] | None = None,
) -> Region:
    """Build a Region from a full-frame boolean mask (must be non-empty)."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("region mask is empty")
    if raster_shape is None:
        raster_shape = mask.shape
    rs, cs = np.nonzero(mask)
    r0, r1 = int(rs.min()), int(rs.max()) + 1
    c0, c1 = int(cs.min()), int(cs.max()) + 1
    crop = mask[r0:r1, c0:c1]
    filled = ndimage.binary_fill_holes(crop)
    boundary = trace_boundary(crop, origin=(r0, c0))
    return Region(
        id=region_id,
        class_id=class_id,
        bbox=(r0, c0, r1, c1),
        mask=crop,
        filled_mask=filled,
        boundary=boundary,
        area=int(crop.sum()),
        raster_shape=raster_shape,
    )


def extract_regions(labels: LabelRaster, connectivity: int = 4) -> list[Region]:
    """Partition a label raster into maximal connected same-label regions.

    Region ids are assigned deterministically: classes in ascending order,
    components within a class in scan order of their first pixel.
    """
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    structure = STRUCTURE_4 if connectivity == 4 else STRUCTURE_8
    values = labels.values
    regions: list[Region] = []
    next_id = 0
    for cid in np.unique(values):
        comp, n = ndimage.label(values == cid, structure=structure)
        slices = ndimage.find_objects(comp)
        for k in range(1, n + 1):
            sl = slices[k - 1]
            crop = comp[sl] == k
            r0, c0 = sl[0].start, sl[1].start
            filled = ndimage.binary_fill_holes(crop)
            regions.append(
                Region(
                    id=next_id,
                    class_id=int(cid),
                    bbox=(r0, c0, sl[0].stop, sl[1].stop),
                    mask=crop,
                    filled_mask=filled,
                    boundary=trace_boundary(crop, origin=(r0, c0)),
                    area=int(crop.sum()),
                    raster_shape=values.shape,
                )
            )
            next_id += 1
    return regions


@dataclass
class SegmentGrid:
    """Rectangular tiling of a raster; bounds which region pairs are related."""

    tile_size: int
    height: int
    width: int
    tiles: list[tuple[int, int, int, int]]
    assignment: dict[int, list[int]] = field(default_factory=dict)

    def tiles_for_bbox(self, bbox: tuple[int, int, int, int]) -> list[int]:
        r0, c0, r1, c1 = bbox
        t = self.tile_size
        ncols = (self.width + t - 1) // t
        out = []
        for tr in range(r0 // t, (r1 - 1) // t + 1):
            for tc in range(c0 // t, (c1 - 1) // t + 1):
                out.append(tr * ncols + tc)
        return out

    def assign_regions(self, regions: list[Region]) -> "SegmentGrid":
        self.assignment = {reg.id: self.tiles_for_bbox(reg.bbox) for reg in regions}
        return self


def grid_segments(height: int, width: int, tile_size: int) -> SegmentGrid:
    """Cover a height x width raster with ceil-divided square tiles."""
    if tile_size < 1:
        raise ValueError(f"tile_size must be >= 1, got {tile_size}")
    tiles = []
    for r0 in range(0, height, tile_size):
        for c0 in range(0, width, tile_size):
            tiles.append((r0, c0, min(r0 + tile_size, height), min(c0 + tile_size, width)))
    return SegmentGrid(tile_size=tile_size, height=height, width=width, tiles=tiles)


@dataclass(frozen=True)
class RegionPartition:
    """Regions split by certainty: at or above the threshold vs below it."""

    classified: tuple[int, ...]
    misclassified: tuple[int, ...]
    threshold: float


def score_regions(
    regions: list[Region], probs: ProbabilityRaster, threshold: float
) -> RegionPartition:
    """Assign each region its predicted class and certainty, then partition.

    Predicted class is the mode over the region's pixels of the per-pixel
    argmax (ties break toward the smallest class id); certainty is the mean
    probability of that class over the region's pixels. Regions with
    certainty below `threshold` land in the misclassified set.
    """
    if not regions:
        return RegionPartition((), (), threshold)
    shape = regions[0].raster_shape
    if (probs.height, probs.width) != shape:
        raise RasterFormatError(
            f"probability raster {probs.height}x{probs.width} does not match regions frame {shape}"
        )
    argmax = probs.values.argmax(axis=2)
    classified: list[int] = []
    misclassified: list[int] = []
    for reg in regions:
        r0, c0, r1, c1 = reg.bbox
        win = argmax[r0:r1, c0:c1][reg.mask]
        counts = np.bincount(win, minlength=probs.num_classes)
        cls = int(counts.argmax())
        win_p = probs.values[r0:r1, c0:c1, cls][reg.mask]
        cert = float(win_p.astype(np.float64).mean())
        reg.class_id = cls
        reg.certainty = cert
        (misclassified if cert < threshold else classified).append(reg.id)
    return RegionPartition(tuple(classified), tuple(misclassified), threshold)
