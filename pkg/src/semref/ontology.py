"""Spatial ontology: concept taxonomy, relation hierarchy, constraints.

The ontology is written in a small line-oriented language:

    relation <name> [< parent]
    concept <Name> [< Parent ...]
    define <Name> some <rel> <Concept[|Concept...]>
    constraint <Name> (some|only|no) <rel> <Concept[|Concept...]>
    size <Name> [min <px>] [max <px>]
    bind <class-id> <Concept>
    # comment

`define` statements are the query-visible existential descriptions of a
concept (what it must relate to in order to be that concept).
`constraint` statements are checkable requirements on regions carrying
the concept; they never answer existence queries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .rcc8 import Rcc8

DEFAULT_ONTOLOGY_NAME = "ontocity_subset.onto"


class OntologyError(ValueError):
    """Raised for parse failures and unknown-name queries."""


def _err(line_no: int, msg: str) -> OntologyError:
    return OntologyError(f"line {line_no}: {msg}")


@dataclass(frozen=True)
class Concept:
    name: str
    parents: tuple[str, ...]
    line: int = 0


@dataclass(frozen=True)
class Restriction:
    """A spatial restriction on `subject`: kind is some, only, or no."""

    subject: str
    kind: str
    relation: str
    targets: tuple[str, ...]
    defining: bool = False
    line: int = 0

    def describe(self) -> str:
        word = "define" if self.defining else "constraint"
        return f"{word} {self.subject} {self.kind} {self.relation} {'|'.join(self.targets)}"


@dataclass(frozen=True)
class SizeRule:
    concept: str
    min_area: int | None
    max_area: int | None
    line: int = 0

    def describe(self) -> str:
        parts = [f"size {self.concept}"]
        if self.min_area is not None:
            parts.append(f"min {self.min_area}")
        if self.max_area is not None:
            parts.append(f"max {self.max_area}")
        return " ".join(parts)


@dataclass(frozen=True)
class Violation:
    """A contradicted restriction, with the neighbour that witnessed it."""

    region_id: int | None
    restriction: str
    kind: str
    witness: tuple[str, int | None, str] | None  # (relation, neighbour id, neighbour concept)

    def __str__(self) -> str:
        where = f"region {self.region_id}: " if self.region_id is not None else ""
        if self.witness is None:
            return f"{where}{self.restriction}"
        rel, nid, ncon = self.witness
        nb = f"region {nid} ({ncon})" if nid is not None else ncon
        return f"{where}{self.restriction} contradicted by {rel} {nb}"


_NeighborItem = tuple  # (relation, concept) or (relation, concept, neighbour id)


@dataclass
class Ontology:
    """Parsed ontology with cached subsumption queries."""

    concepts: dict[str, Concept]
    relation_parents: dict[str, str | None]
    defines: tuple[Restriction, ...]
    constraints: tuple[Restriction, ...]
    size_rules: tuple[SizeRule, ...]
    label_bindings: dict[int, str]
    _ancestors: dict[str, frozenset[str]] = field(default_factory=dict, repr=False)
    _rel_ancestors: dict[str, frozenset[str]] = field(default_factory=dict, repr=False)

    # -- taxonomy ---------------------------------------------------------

    def has_concept(self, name: str) -> bool:
        return name in self.concepts

    def _require_concept(self, name: str) -> None:
        if name not in self.concepts:
            raise OntologyError(f"unknown concept {name!r}")

    def ancestor_set(self, name: str) -> frozenset[str]:
        """All concepts reachable via parent edges, including `name`."""
        self._require_concept(name)
        cached = self._ancestors.get(name)
        if cached is not None:
            return cached
        out = {name}
        for parent in self.concepts[name].parents:
            out |= self.ancestor_set(parent)
        result = frozenset(out)
        self._ancestors[name] = result
        return result

    def subsumes(self, ancestor: str, descendant: str) -> bool:
        """True iff `ancestor` is reachable from `descendant` (reflexive)."""
        self._require_concept(ancestor)
        return ancestor in self.ancestor_set(descendant)

    def superclass_chain(self, name: str) -> list[str]:
        """Proper ancestors ordered nearest-first (BFS), names break ties."""
        self._require_concept(name)
        out: list[str] = []
        seen = {name}
        frontier = [name]
        while frontier:
            layer: list[str] = []
            for node in frontier:
                for parent in sorted(self.concepts[node].parents):
                    if parent not in seen:
                        seen.add(parent)
                        layer.append(parent)
            out.extend(layer)
            frontier = layer
        return out

    def depth(self, name: str) -> int:
        chain = self.concepts[name].parents
        if not chain:
            return 0
        return 1 + max(self.depth(p) for p in chain)

    # -- relations --------------------------------------------------------

    def has_relation(self, name: str) -> bool:
        return name in self.relation_parents

    def _require_relation(self, name: str) -> None:
        if name not in self.relation_parents:
            raise OntologyError(f"unknown relation {name!r}")

    def relation_ancestors(self, name: str) -> frozenset[str]:
        self._require_relation(name)
        cached = self._rel_ancestors.get(name)
        if cached is not None:
            return cached
        out = {name}
        parent = self.relation_parents[name]
        if parent is not None:
            out |= self.relation_ancestors(parent)
        result = frozenset(out)
        self._rel_ancestors[name] = result
        return result

    def relation_subsumes(self, super_name: str, sub: str | Rcc8) -> bool:
        sub_name = sub.value if isinstance(sub, Rcc8) else sub
        self._require_relation(super_name)
        return super_name in self.relation_ancestors(sub_name)

    # -- queries ----------------------------------------------------------

    def query_exists(self, relation: str | Rcc8, target: str) -> list[str]:
        """Concepts defined by an existential that generalizes (relation, target).

        A concept C answers the query when C carries a defining restriction
        "some Q' T'" with the queried relation below Q' and the queried
        target concept below T'. Direct answers come first (most specific
        first), each followed by its superclass chain.
        """
        rel_name = relation.value if isinstance(relation, Rcc8) else relation
        self._require_relation(rel_name)
        self._require_concept(target)
        direct: list[str] = []
        for rest in self.defines:
            if not self.relation_subsumes(rest.relation, rel_name):
                continue
            if not any(self.subsumes(t, target) for t in rest.targets):
                continue
            if rest.subject not in direct:
                direct.append(rest.subject)
        direct.sort(key=lambda n: (-self.depth(n), n))
        out: list[str] = []
        for name in direct:
            if name not in out:
                out.append(name)
            for anc in self.superclass_chain(name):
                if anc not in out:
                    out.append(anc)
        return out

    # -- consistency ------------------------------------------------------

    def check_region_consistency(
        self,
        concept: str,
        neighbors: list[_NeighborItem],
        area: int | None = None,
        *,
        region_id: int | None = None,
        interior: bool = False,
    ) -> list[Violation]:
        """Check a region's neighbourhood against the concept's constraints.

        `neighbors` holds (relation, neighbour concept[, neighbour id])
        entries, relations as base RCC-8 names. Existential (`some`)
        constraints are only enforced when `interior` is set, since a
        required neighbour of a border region may lie outside the raster.
        Returns one Violation per (restriction, witness) contradiction.
        """
        self._require_concept(concept)
        norm: list[tuple[str, str, int | None]] = []
        for item in neighbors:
            rel = item[0].value if isinstance(item[0], Rcc8) else str(item[0])
            ncon = item[1]
            nid = item[2] if len(item) > 2 else None
            self._require_relation(rel)
            self._require_concept(ncon)
            norm.append((rel, ncon, nid))

        out: list[Violation] = []
        for rest in self.constraints:
            if not self.subsumes(rest.subject, concept):
                continue
            if rest.kind == "no":
                for rel, ncon, nid in norm:
                    if self.relation_subsumes(rest.relation, rel) and any(
                        self.subsumes(t, ncon) for t in rest.targets
                    ):
                        out.append(Violation(region_id, rest.describe(), "no", (rel, nid, ncon)))
            elif rest.kind == "only":
                for rel, ncon, nid in norm:
                    if self.relation_subsumes(rest.relation, rel) and not any(
                        self.subsumes(t, ncon) for t in rest.targets
                    ):
                        out.append(Violation(region_id, rest.describe(), "only", (rel, nid, ncon)))
            elif rest.kind == "some" and interior:
                satisfied = any(
                    self.relation_subsumes(rest.relation, rel)
                    and any(self.subsumes(t, ncon) for t in rest.targets)
                    for rel, ncon, nid in norm
                )
                if not satisfied:
                    out.append(Violation(region_id, rest.describe(), "some", None))
        if area is not None:
            for rule in self.size_rules:
                if not self.subsumes(rule.concept, concept):
                    continue
                if rule.min_area is not None and area < rule.min_area:
                    out.append(
                        Violation(region_id, f"{rule.describe()} (area {area})", "size", None)
                    )
                if rule.max_area is not None and area > rule.max_area:
                    out.append(
                        Violation(region_id, f"{rule.describe()} (area {area})", "size", None)
                    )
        return out

    def binding(self, class_id: int) -> str:
        try:
            return self.label_bindings[class_id]
        except KeyError:
            raise OntologyError(f"no concept bound to class id {class_id}") from None


# -- parsing ---------------------------------------------------------------


def _split_targets(token: str) -> tuple[str, ...]:
    return tuple(t for t in token.split("|") if t)


def parse_ontology(text: str) -> Ontology:
    """Parse ontology source text; raise OntologyError with a line number."""
    concepts: dict[str, Concept] = {}
    relations: dict[str, str | None] = {}
    relation_lines: dict[str, int] = {}
    defines: list[Restriction] = []
    constraints: list[Restriction] = []
    size_rules: list[SizeRule] = []
    bindings: dict[int, str] = {}

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        head = tokens[0]

        if head == "relation":
            if len(tokens) == 2:
                name, parent = tokens[1], None
            elif len(tokens) == 4 and tokens[2] == "<":
                name, parent = tokens[1], tokens[3]
            else:
                raise _err(line_no, f"malformed relation statement: {line!r}")
            if name in relations:
                raise _err(line_no, f"duplicate relation {name!r}")
            relations[name] = parent
            relation_lines[name] = line_no

        elif head == "concept":
            if len(tokens) == 2:
                name, parents = tokens[1], ()
            elif len(tokens) >= 4 and tokens[2] == "<":
                name, parents = tokens[1], tuple(tokens[3:])
            else:
                raise _err(line_no, f"malformed concept statement: {line!r}")
            if name in concepts:
                raise _err(line_no, f"duplicate concept {name!r}")
            concepts[name] = Concept(name, parents, line_no)

        elif head in ("define", "constraint"):
            defining = head == "define"
            if defining:
                if len(tokens) != 5 or tokens[2] != "some":
                    raise _err(line_no, f"malformed define statement: {line!r}")
                kind = "some"
            else:
                if len(tokens) != 5 or tokens[2] not in ("some", "only", "no"):
                    raise _err(line_no, f"malformed constraint statement: {line!r}")
                kind = tokens[2]
            targets = _split_targets(tokens[4])
            if not targets:
                raise _err(line_no, f"empty target union in: {line!r}")
            rest = Restriction(tokens[1], kind, tokens[3], targets, defining, line_no)
            (defines if defining else constraints).append(rest)

        elif head == "size":
            if len(tokens) not in (4, 6) or len(tokens) % 2 != 0:
                raise _err(line_no, f"malformed size statement: {line!r}")
            min_area = max_area = None
            for key, val in zip(tokens[2::2], tokens[3::2]):
                if key not in ("min", "max"):
                    raise _err(line_no, f"size bound must be min or max, got {key!r}")
                try:
                    px = int(val)
                except ValueError:
                    raise _err(line_no, f"size bound {val!r} is not an integer") from None
                if px < 0:
                    raise _err(line_no, f"size bound must be non-negative, got {px}")
                if key == "min":
                    min_area = px
                else:
                    max_area = px
            if min_area is not None and max_area is not None and min_area > max_area:
                raise _err(line_no, f"size min {min_area} exceeds max {max_area}")
            size_rules.append(SizeRule(tokens[1], min_area, max_area, line_no))

        elif head == "bind":
            if len(tokens) != 3:
                raise _err(line_no, f"malformed bind statement: {line!r}")
            try:
                cid = int(tokens[1])
            except ValueError:
                raise _err(line_no, f"bind class id {tokens[1]!r} is not an integer") from None
            if cid < 0:
                raise _err(line_no, f"bind class id must be non-negative, got {cid}")
            if cid in bindings:
                raise _err(line_no, f"duplicate binding for class id {cid}")
            bindings[cid] = tokens[2]

        else:
            raise _err(line_no, f"unknown statement {head!r}")

    # Resolve references and reject cycles.
    for name, parent in relations.items():
        if parent is not None and parent not in relations:
            raise _err(relation_lines[name], f"relation {name!r} names unknown parent {parent!r}")
    seen: set[str] = set()
    for name in relations:
        chain = set()
        node: str | None = name
        while node is not None:
            if node in chain:
                raise _err(relation_lines[name], f"cyclic relation hierarchy at {node!r}")
            chain.add(node)
            node = relations[node]
        seen |= chain

    for con in concepts.values():
        for parent in con.parents:
            if parent not in concepts:
                raise _err(con.line, f"concept {con.name!r} names unknown parent {parent!r}")

    state: dict[str, int] = {}  # 0 visiting, 1 done

    def visit(name: str, trail: tuple[str, ...]) -> None:
        mark = state.get(name)
        if mark == 1:
            return
        if mark == 0:
            cycle = " -> ".join(trail + (name,))
            raise _err(concepts[name].line, f"cyclic taxonomy: {cycle}")
        state[name] = 0
        for parent in concepts[name].parents:
            visit(parent, trail + (name,))
        state[name] = 1

    for name in concepts:
        visit(name, ())

    for rest in defines + constraints:
        if rest.subject not in concepts:
            raise _err(rest.line, f"restriction subject {rest.subject!r} is not a declared concept")
        if rest.relation not in relations:
            raise _err(rest.line, f"restriction uses undeclared relation {rest.relation!r}")
        for target in rest.targets:
            if target not in concepts:
                raise _err(rest.line, f"restriction target {target!r} is not a declared concept")
    for rule in size_rules:
        if rule.concept not in concepts:
            raise _err(rule.line, f"size rule names unknown concept {rule.concept!r}")
    for cid, cname in bindings.items():
        if cname not in concepts:
            raise OntologyError(f"binding for class id {cid} names unknown concept {cname!r}")

    return Ontology(
        concepts=concepts,
        relation_parents=relations,
        defines=tuple(defines),
        constraints=tuple(constraints),
        size_rules=tuple(size_rules),
        label_bindings=bindings,
    )


def load_ontology(path: str | Path) -> Ontology:
    return parse_ontology(Path(path).read_text(encoding="utf-8"))


def default_ontology_path() -> Path:
    """Path of the city ontology shipped with the package."""
    return Path(str(resources.files("semref").joinpath("ontologies", DEFAULT_ONTOLOGY_NAME)))


def default_ontology() -> Ontology:
    return load_ontology(default_ontology_path())


# Module-level convenience wrappers mirroring the engine operations.

def subsumes(ontology: Ontology, ancestor: str, descendant: str) -> bool:
    return ontology.subsumes(ancestor, descendant)


def query_exists(ontology: Ontology, relation: str | Rcc8, target: str) -> list[str]:
    return ontology.query_exists(relation, target)


def check_region_consistency(
    ontology: Ontology,
    concept: str,
    neighbors: list[_NeighborItem],
    area: int | None = None,
    *,
    region_id: int | None = None,
    interior: bool = False,
) -> list[Violation]:
    return ontology.check_region_consistency(
        concept, neighbors, area, region_id=region_id, interior=interior
    )
