"""Error characterization and feedback-channel synthesis.

Low-certainty regions are paired with confident regions sharing a grid
segment; each pair's RCC-8 relation feeds a histogram keyed by
(relation, neighbour concept). The dominant key is generalized through
the ontology, and per-region verdicts (shadow / inconsistent / none)
are rasterized into three feedback channels:

    shadow      in {-1, 0, 1}      (-1 not shadow, 0 no opinion, 1 shadow)
    elevation   in {-1, 0, 1, 2}   (-1 uncertain, then low/medium/high)
    uncertainty in {0, 1}          (1 marks ontologically inconsistent regions)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ontology import Ontology, Violation
from .raster import LabelRaster, MultiChannelRaster, ProbabilityRaster
from .rcc8 import Rcc8, compute_rcc8
from .regions import Region, RegionPartition, SegmentGrid, extract_regions, grid_segments, score_regions

SHADOW_VALUES = (-1, 0, 1)
ELEVATION_VALUES = (-1, 0, 1, 2)
UNCERTAINTY_VALUES = (0, 1)

ELEVATED_CONCEPT = "NonFlatRegion"
MEDIUM_CONCEPT = "VegetationArea"


@dataclass
class RelationHistogram:
    """Pair counts keyed by (relation name, neighbour concept).

    `witnesses` lists the low-certainty region id once per counted pair,
    so a key's count always equals the length of its witness list.
    """

    witnesses: dict[tuple[str, str], list[int]] = field(default_factory=dict)

    def add(self, relation: Rcc8, concept: str, region_id: int) -> None:
        self.witnesses.setdefault((relation.value, concept), []).append(region_id)

    @property
    def counts(self) -> dict[tuple[str, str], int]:
        return {k: len(v) for k, v in self.witnesses.items()}

    def region_counts(self) -> dict[tuple[str, str], int]:
        """Distinct low-certainty regions per key (table-style counts)."""
        return {k: len(set(v)) for k, v in self.witnesses.items()}

    def total_pairs(self) -> int:
        return sum(len(v) for v in self.witnesses.values())

    def dominant(self) -> tuple[str, str] | None:
        """Most frequent (relation, concept); ties break lexicographically."""
        if not self.witnesses:
            return None
        return min(self.counts.items(), key=lambda kv: (-kv[1], kv[0]))[0]

    @classmethod
    def from_counts(cls, counts: dict[tuple[str, str], int]) -> "RelationHistogram":
        hist = cls()
        nxt = 0
        for key in sorted(counts):
            hist.witnesses[key] = list(range(nxt, nxt + counts[key]))
            nxt += counts[key]
        return hist


def relations_between(
    regions: list[Region],
    partition: RegionPartition,
    grid: SegmentGrid,
    include_dc: bool = False,
) -> dict[tuple[int, int], Rcc8]:
    """RCC-8 relation for every co-segment (low-certainty, confident) pair.

    A pair sharing several tiles is computed and counted once.
    """
    by_id = {reg.id: reg for reg in regions}
    if not grid.assignment:
        grid.assign_regions(regions)
    mis = set(partition.misclassified)
    cls = set(partition.classified)
    tile_members: dict[int, list[int]] = {}
    for rid, tiles in grid.assignment.items():
        for t in tiles:
            tile_members.setdefault(t, []).append(rid)
    pairs: set[tuple[int, int]] = set()
    for members in tile_members.values():
        ps = [r for r in members if r in mis]
        rs = [r for r in members if r in cls]
        for p in ps:
            for r in rs:
                pairs.add((p, r))
    out: dict[tuple[int, int], Rcc8] = {}
    for p, r in sorted(pairs):
        rel = compute_rcc8(by_id[p], by_id[r])
        if rel is not Rcc8.DC or include_dc:
            out[(p, r)] = rel
    return out


def all_pair_relations(
    regions: list[Region], grid: SegmentGrid, include_dc: bool = False
) -> dict[tuple[int, int], Rcc8]:
    """RCC-8 relation for every unordered co-segment region pair (a < b)."""
    by_id = {reg.id: reg for reg in regions}
    if not grid.assignment:
        grid.assign_regions(regions)
    tile_members: dict[int, list[int]] = {}
    for rid, tiles in grid.assignment.items():
        for t in tiles:
            tile_members.setdefault(t, []).append(rid)
    pairs: set[tuple[int, int]] = set()
    for members in tile_members.values():
        members = sorted(members)
        for i, a in enumerate(members):
            for b in members[i + 1 :]:
                pairs.add((a, b))
    out: dict[tuple[int, int], Rcc8] = {}
    for a, b in sorted(pairs):
        rel = compute_rcc8(by_id[a], by_id[b])
        if rel is not Rcc8.DC or include_dc:
            out[(a, b)] = rel
    return out


def characterize_errors(
    segments: SegmentGrid,
    partition: RegionPartition,
    regions: list[Region],
    ontology: Ontology,
    relations: dict[tuple[int, int], Rcc8] | None = None,
) -> tuple[RelationHistogram, tuple[str, str] | None, list[str]]:
    """Histogram of error relations, the dominant pair, its generalization.

    Only relating pairs enter the histogram (disconnected pairs say
    nothing about why a region was confused with its vicinity). With no
    low-certainty regions the histogram is empty and no pair dominates.
    """
    if relations is None:
        relations = relations_between(regions, partition, segments)
    by_id = {reg.id: reg for reg in regions}
    hist = RelationHistogram()
    for (p, r), rel in relations.items():
        if rel is Rcc8.DC:
            continue
        hist.add(rel, ontology.binding(by_id[r].class_id), p)
    dominant = hist.dominant()
    concepts = ontology.query_exists(dominant[0], dominant[1]) if dominant else []
    return hist, dominant, concepts


@dataclass(frozen=True)
class RegionVerdict:
    """Referee opinion on one low-certainty region."""

    region_id: int
    verdict: str  # "shadow" | "inconsistent" | "none"
    concept: str | None = None
    violations: tuple[Violation, ...] = ()


def infer_region_verdicts(
    partition: RegionPartition,
    regions: list[Region],
    relations: dict[tuple[int, int], Rcc8],
    ontology: Ontology,
    elevated_concept: str = ELEVATED_CONCEPT,
) -> list[RegionVerdict]:
    """Classify each low-certainty region as shadow, inconsistent, or none.

    A region whose neighbourhood contradicts a constraint is inconsistent.
    Otherwise, if it relates (non-dc) to a neighbour whose concept is an
    elevated region, it is read as that neighbour's shadow, with the
    concept resolved by the existence query for the witnessing pair.
    """
    by_id = {reg.id: reg for reg in regions}
    neighbor_map: dict[int, list[tuple[str, str, int]]] = {}
    for (p, r), rel in relations.items():
        if rel is Rcc8.DC:
            continue
        concept = ontology.binding(by_id[r].class_id)
        neighbor_map.setdefault(p, []).append((rel.value, concept, r))
    verdicts: list[RegionVerdict] = []
    for p in sorted(partition.misclassified):
        reg = by_id[p]
        neigh = sorted(neighbor_map.get(p, []), key=lambda item: item[2])
        concept = ontology.binding(reg.class_id)
        violations = ontology.check_region_consistency(
            concept, neigh, reg.area, region_id=p, interior=reg.is_interior()
        )
        if violations:
            verdicts.append(RegionVerdict(p, "inconsistent", None, tuple(violations)))
            continue
        witness = next(
            ((rel, ncon) for rel, ncon, _ in neigh if ontology.subsumes(elevated_concept, ncon)),
            None,
        )
        if witness is not None:
            answers = ontology.query_exists(witness[0], witness[1])
            inferred = answers[0] if answers else None
            verdicts.append(RegionVerdict(p, "shadow", inferred))
        else:
            verdicts.append(RegionVerdict(p, "none"))
    return verdicts


@dataclass
class FeedbackChannels:
    """The three referee opinion rasters, all shaped like the scene."""

    shadow: np.ndarray       # int8 in {-1, 0, 1}
    elevation: np.ndarray    # int8 in {-1, 0, 1, 2}
    uncertainty: np.ndarray  # int8 in {0, 1}

    def validate(self) -> None:
        for name, arr, allowed in (
            ("shadow", self.shadow, SHADOW_VALUES),
            ("elevation", self.elevation, ELEVATION_VALUES),
            ("uncertainty", self.uncertainty, UNCERTAINTY_VALUES),
        ):
            if arr.shape != self.shadow.shape:
                raise ValueError(f"channel {name} shape {arr.shape} != {self.shadow.shape}")
            bad = np.setdiff1d(np.unique(arr), np.array(allowed))
            if bad.size:
                raise ValueError(f"channel {name} contains values {bad.tolist()} outside {allowed}")

    def to_raster(self) -> MultiChannelRaster:
        stacked = np.stack([self.shadow, self.elevation, self.uncertainty], axis=2)
        return MultiChannelRaster(stacked.astype(np.float32))

    @classmethod
    def from_raster(cls, raster: MultiChannelRaster) -> "FeedbackChannels":
        if raster.channels != 3:
            raise ValueError(f"feedback raster must have 3 channels, got {raster.channels}")
        v = raster.values
        ch = cls(
            shadow=v[:, :, 0].astype(np.int8),
            elevation=v[:, :, 1].astype(np.int8),
            uncertainty=v[:, :, 2].astype(np.int8),
        )
        ch.validate()
        return ch

    @classmethod
    def zeros(cls, shape: tuple[int, int]) -> "FeedbackChannels":
        return cls(
            np.zeros(shape, np.int8), np.zeros(shape, np.int8), np.zeros(shape, np.int8)
        )


def class_prior_elevation(ontology: Ontology, concept: str) -> int:
    """Coarse height from the concept: elevated 2, vegetation 1, else 0."""
    if ontology.subsumes(ELEVATED_CONCEPT, concept):
        return 2
    if ontology.subsumes(MEDIUM_CONCEPT, concept):
        return 1
    return 0


def synthesize_channels(
    verdicts: list[RegionVerdict],
    regions: list[Region],
    partition: RegionPartition,
    ontology: Ontology,
    shape: tuple[int, int],
    dsm: np.ndarray | None = None,
    dsm_thresholds: tuple[float, float] = (1.0, 5.0),
    round0_zero: bool = False,
) -> FeedbackChannels:
    """Rasterize verdicts into the three feedback channels.

    Confident regions are stamped not-shadow (-1) and given an elevation:
    from the class prior of their concept, or, when a `dsm` raster is
    supplied, from their mean height quantized at `dsm_thresholds`.
    Shadow-verdict regions get shadow 1; inconsistent regions get
    uncertainty 1 and elevation -1. With `round0_zero` every channel is
    zero, the blank feedback used before any prediction exists.
    """
    channels = FeedbackChannels.zeros(shape)
    if round0_zero:
        return channels
    if dsm is not None and dsm.shape != shape:
        raise ValueError(f"dsm shape {dsm.shape} does not match scene {shape}")
    by_id = {reg.id: reg for reg in regions}

    def stamp(arr: np.ndarray, reg: Region, value: int) -> None:
        r0, c0, r1, c1 = reg.bbox
        arr[r0:r1, c0:c1][reg.mask] = value

    def dsm_level(reg: Region) -> int:
        r0, c0, r1, c1 = reg.bbox
        mean = float(dsm[r0:r1, c0:c1][reg.mask].astype(np.float64).mean())
        low, high = dsm_thresholds
        if mean < low:
            return 0
        if mean < high:
            return 1
        return 2

    for rid in partition.classified:
        reg = by_id[rid]
        stamp(channels.shadow, reg, -1)
        if dsm is not None:
            stamp(channels.elevation, reg, dsm_level(reg))
        else:
            concept = ontology.binding(reg.class_id)
            stamp(channels.elevation, reg, class_prior_elevation(ontology, concept))

    for verdict in verdicts:
        reg = by_id[verdict.region_id]
        if verdict.verdict == "shadow":
            stamp(channels.shadow, reg, 1)
            if dsm is not None:
                stamp(channels.elevation, reg, dsm_level(reg))
        elif verdict.verdict == "inconsistent":
            stamp(channels.uncertainty, reg, 1)
            stamp(channels.elevation, reg, -1)
        elif dsm is not None:
            stamp(channels.elevation, reg, dsm_level(reg))
    channels.validate()
    return channels


def referee_channels(
    probs: ProbabilityRaster,
    ontology: Ontology,
    threshold: float = 0.7,
    tile_size: int = 64,
    connectivity: int = 4,
    dsm: np.ndarray | None = None,
    dsm_thresholds: tuple[float, float] = (1.0, 5.0),
) -> tuple[FeedbackChannels, RelationHistogram, tuple[str, str] | None, list[str], list[RegionVerdict]]:
    """Full referee pass over one prediction: channels plus diagnostics."""
    labels = probs.argmax()
    regions = extract_regions(labels, connectivity)
    partition = score_regions(regions, probs, threshold)
    grid = grid_segments(labels.height, labels.width, tile_size).assign_regions(regions)
    relations = relations_between(regions, partition, grid)
    hist, dominant, concepts = characterize_errors(grid, partition, regions, ontology, relations)
    verdicts = infer_region_verdicts(partition, regions, relations, ontology)
    channels = synthesize_channels(
        verdicts,
        regions,
        partition,
        ontology,
        (labels.height, labels.width),
        dsm=dsm,
        dsm_thresholds=dsm_thresholds,
    )
    return channels, hist, dominant, concepts, verdicts


def scene_consistency_violations(
    labels: LabelRaster,
    ontology: Ontology,
    tile_size: int = 64,
    connectivity: int = 4,
) -> list[Violation]:
    """Check every region of a label raster against the ontology.

    Neighbourhoods are the non-dc relations with co-segment regions;
    existential constraints apply to regions with interior bounding boxes.
    """
    regions = extract_regions(labels, connectivity)
    grid = grid_segments(labels.height, labels.width, tile_size).assign_regions(regions)
    # Relations among all co-segment pairs, both orientations per pair.
    pair_rels = all_pair_relations(regions, grid)
    neighbor_map: dict[int, list[tuple[str, str, int]]] = {}
    by_id = {reg.id: reg for reg in regions}
    for (a, b), rel in pair_rels.items():
        neighbor_map.setdefault(a, []).append((rel.value, ontology.binding(by_id[b].class_id), b))
        neighbor_map.setdefault(b, []).append(
            (rel.inverse().value, ontology.binding(by_id[a].class_id), a)
        )
    out: list[Violation] = []
    for reg in regions:
        neigh = sorted(neighbor_map.get(reg.id, []), key=lambda item: item[2])
        out.extend(
            ontology.check_region_consistency(
                ontology.binding(reg.class_id),
                neigh,
                reg.area,
                region_id=reg.id,
                interior=reg.is_interior(),
            )
        )
    return out
