"""RCC-8 relations between discrete raster regions.

The eight base relations are decided from pixel-set predicates: shared
pixels, 8-adjacency between masks, and containment against the
hole-filled mask. Filling the container's holes makes "surrounded by"
count as proper parthood even when the two pixel sets are disjoint,
which is what a label partition produces for an enclosed region.

Decision order (symmetric under argument swap):

1. equal pixel sets                          -> eq
2. containment in the other's filled mask    -> tpp/ntpp or tppi/ntppi
   (tangential iff the inner region touches the outer one's exterior)
3. any shared pixel                          -> po
4. any 8-adjacent pixel pair                 -> ec
5. otherwise                                 -> dc
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Mapping

import numpy as np

from .regions import Region


class Rcc8(Enum):
    """The eight jointly exhaustive, pairwise disjoint base relations."""

    DC = "dc"
    EC = "ec"
    PO = "po"
    EQ = "eq"
    TPP = "tpp"
    NTPP = "ntpp"
    TPPI = "tppi"
    NTPPI = "ntppi"

    def __str__(self) -> str:
        return self.value

    def inverse(self) -> "Rcc8":
        return _INVERSE[self]

    @classmethod
    def from_name(cls, name: str) -> "Rcc8":
        try:
            return cls(name)
        except ValueError:
            raise ValueError(f"unknown RCC-8 relation {name!r}") from None


_INVERSE = {
    Rcc8.DC: Rcc8.DC,
    Rcc8.EC: Rcc8.EC,
    Rcc8.PO: Rcc8.PO,
    Rcc8.EQ: Rcc8.EQ,
    Rcc8.TPP: Rcc8.TPPI,
    Rcc8.NTPP: Rcc8.NTPPI,
    Rcc8.TPPI: Rcc8.TPP,
    Rcc8.NTPPI: Rcc8.NTPP,
}

BASE_RELATIONS = tuple(Rcc8)
INTERSECTS = "intersects"


@dataclass(frozen=True)
class RelationHierarchy:
    """Named relations mapped to the base relations they subsume."""

    children: Mapping[str, frozenset[Rcc8]]

    def subsumes(self, super_name: str, sub: Rcc8) -> bool:
        if super_name not in self.children:
            raise ValueError(f"unknown relation name {super_name!r}")
        return sub in self.children[super_name]

    def names(self) -> tuple[str, ...]:
        return tuple(self.children)


def _default_hierarchy() -> RelationHierarchy:
    children: dict[str, frozenset[Rcc8]] = {r.value: frozenset({r}) for r in Rcc8}
    # `intersects` covers every base relation except disconnection.
    children[INTERSECTS] = frozenset(r for r in Rcc8 if r is not Rcc8.DC)
    return RelationHierarchy(children)


DEFAULT_HIERARCHY = _default_hierarchy()


def relation_subsumes(
    super_name: str, sub: Rcc8 | str, hierarchy: RelationHierarchy = DEFAULT_HIERARCHY
) -> bool:
    """True iff `sub` is one of the base relations `super_name` covers."""
    if isinstance(sub, str):
        sub = Rcc8.from_name(sub)
    return hierarchy.subsumes(super_name, sub)


def _window(
    bbox: tuple[int, int, int, int], pad: int, shape: tuple[int, int]
) -> tuple[int, int, int, int]:
    r0, c0, r1, c1 = bbox
    return (max(r0 - pad, 0), max(c0 - pad, 0), min(r1 + pad, shape[0]), min(c1 + pad, shape[1]))


def _paste(region: Region, window: tuple[int, int, int, int], filled: bool = False) -> np.ndarray:
    """Region mask restricted to `window` coordinates."""
    wr0, wc0, wr1, wc1 = window
    out = np.zeros((wr1 - wr0, wc1 - wc0), dtype=bool)
    r0, c0, r1, c1 = region.bbox
    ir0, ic0 = max(r0, wr0), max(c0, wc0)
    ir1, ic1 = min(r1, wr1), min(c1, wc1)
    if ir0 >= ir1 or ic0 >= ic1:
        return out
    src = region.filled_mask if filled else region.mask
    out[ir0 - wr0 : ir1 - wr0, ic0 - wc0 : ic1 - wc0] = src[
        ir0 - r0 : ir1 - r0, ic0 - c0 : ic1 - c0
    ]
    return out


def _dilate8(mask: np.ndarray) -> np.ndarray:
    out = mask.copy()
    h, w = mask.shape
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == 0 and dc == 0:
                continue
            sr0, sr1 = max(dr, 0), h + min(dr, 0)
            tr0, tr1 = max(-dr, 0), h + min(-dr, 0)
            sc0, sc1 = max(dc, 0), w + min(dc, 0)
            tc0, tc1 = max(-dc, 0), w + min(-dc, 0)
            out[tr0:tr1, tc0:tc1] |= mask[sr0:sr1, sc0:sc1]
    return out


def _bbox_contains(outer: tuple[int, int, int, int], inner: tuple[int, int, int, int]) -> bool:
    return outer[0] <= inner[0] and outer[1] <= inner[1] and outer[2] >= inner[2] and outer[3] >= inner[3]


def _bbox_gap(a: tuple[int, int, int, int], b: tuple[int, int, int, int]) -> int:
    """Chebyshev gap between two boxes; 0 when they overlap or touch."""
    dr = max(a[0] - b[2], b[0] - a[2], 0)
    dc = max(a[1] - b[3], b[1] - a[3], 0)
    return max(dr, dc)


def _contained_in_filled(inner: Region, outer: Region) -> bool:
    if not _bbox_contains(outer.bbox, inner.bbox):
        return False
    window = inner.bbox
    return not np.any(_paste(inner, window) & ~_paste(outer, window, filled=True))


def _subset(inner: Region, outer: Region) -> bool:
    if not _bbox_contains(outer.bbox, inner.bbox):
        return False
    window = inner.bbox
    return not np.any(_paste(inner, window) & ~_paste(outer, window))


def _tangential(inner: Region, outer: Region) -> bool:
    """Some inner pixel is 8-adjacent to a pixel outside outer's filled mask."""
    window = _window(inner.bbox, 1, inner.raster_shape)
    inner_m = _paste(inner, window)
    exterior = ~_paste(outer, window, filled=True)
    return bool(np.any(_dilate8(inner_m) & exterior))


def _proper_part(inner: Region, outer: Region, inverse: bool) -> Rcc8:
    if _tangential(inner, outer):
        return Rcc8.TPPI if inverse else Rcc8.TPP
    return Rcc8.NTPPI if inverse else Rcc8.NTPP


def compute_rcc8(a: Region, b: Region) -> Rcc8:
    """Decide the unique RCC-8 relation between two regions of one raster."""
    if a.raster_shape != b.raster_shape:
        raise ValueError(
            f"coordinate-frame mismatch: {a.raster_shape} vs {b.raster_shape}"
        )
    # Far apart: nothing below can hold.
    if _bbox_gap(a.bbox, b.bbox) > 1:
        return Rcc8.DC

    if a.bbox == b.bbox and a.area == b.area and np.array_equal(a.mask, b.mask):
        return Rcc8.EQ

    a_in = _contained_in_filled(a, b)
    b_in = _contained_in_filled(b, a)
    if a_in and b_in:
        # Distinct sets with equal filled extent, e.g. a ring and its disk.
        if _subset(a, b):
            return _proper_part(a, b, inverse=False)
        if _subset(b, a):
            return _proper_part(b, a, inverse=True)
        return Rcc8.PO
    if a_in:
        return _proper_part(a, b, inverse=False)
    if b_in:
        return _proper_part(b, a, inverse=True)

    if _bbox_gap(a.bbox, b.bbox) == 0:
        window = (
            max(a.bbox[0], b.bbox[0]),
            max(a.bbox[1], b.bbox[1]),
            min(a.bbox[2], b.bbox[2]),
            min(a.bbox[3], b.bbox[3]),
        )
        if window[0] < window[2] and window[1] < window[3]:
            if np.any(_paste(a, window) & _paste(b, window)):
                return Rcc8.PO

    pad_a = _window(a.bbox, 1, a.raster_shape)
    pad_b = _window(b.bbox, 1, b.raster_shape)
    window = (
        max(pad_a[0], pad_b[0]),
        max(pad_a[1], pad_b[1]),
        min(pad_a[2], pad_b[2]),
        min(pad_a[3], pad_b[3]),
    )
    if window[0] < window[2] and window[1] < window[3]:
        if np.any(_dilate8(_paste(a, window)) & _paste(b, window)):
            return Rcc8.EC
    return Rcc8.DC
