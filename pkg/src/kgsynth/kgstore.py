"""Load, filter, and index the knowledge graph consumed by sampling and decoding.

The graph is built from three TSV files (edges + entity/relation label files),
deduplicated, and indexed with dense integer ids. Labels and external ids only
appear at the I/O boundary; everything downstream works on dense indices.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

log = logging.getLogger(__name__)


class KgError(ValueError):
    """Raised on malformed or inconsistent graph input."""


class EntityRef(NamedTuple):
    index: int
    external_id: str
    label: str


class RelationRef(NamedTuple):
    index: int
    external_id: str
    label: str


class Triplet(NamedTuple):
    subject: int
    relation: int
    object: int


@dataclass(frozen=True)
class Catalog:
    """Immutable label catalog with dense indices in first-appearance order."""

    labels: tuple[str, ...]
    external_ids: tuple[str, ...]

    def __post_init__(self):
        if any(not label for label in self.labels):
            raise KgError("empty label in catalog")
        if len(set(self.labels)) != len(self.labels):
            raise KgError("duplicate label in catalog")
        if len(set(self.external_ids)) != len(self.external_ids):
            raise KgError("duplicate external id in catalog")
        object.__setattr__(self, "_by_label", {lab: i for i, lab in enumerate(self.labels)})
        object.__setattr__(self, "_by_external", {ext: i for i, ext in enumerate(self.external_ids)})

    def __len__(self) -> int:
        return len(self.labels)

    def index_of_label(self, label: str) -> int | None:
        return self._by_label.get(label)

    def index_of_external(self, external_id: str) -> int | None:
        return self._by_external.get(external_id)

    def label(self, index: int) -> str:
        return self.labels[index]


@dataclass
class IngestStats:
    n_entities: int = 0
    n_relations: int = 0
    n_edges: int = 0
    duplicate_edges_dropped: int = 0
    literal_relations_dropped: int = 0
    literal_edges_dropped: int = 0


@dataclass
class KnowledgeGraph:
    """Entity/relation catalogs plus a deduplicated edge set with adjacency indices.

    Immutable after construction; safe to share read-only across workers.
    """

    entities: Catalog
    relations: Catalog
    edges: tuple[Triplet, ...]
    stats: IngestStats = field(default_factory=IngestStats)

    def __post_init__(self):
        n_ent, n_rel = len(self.entities), len(self.relations)
        out_adj: list[list[tuple[int, int]]] = [[] for _ in range(n_ent)]
        in_adj: list[list[tuple[int, int]]] = [[] for _ in range(n_ent)]
        rel_edges: list[list[Triplet]] = [[] for _ in range(n_rel)]
        for t in self.edges:
            if not (0 <= t.subject < n_ent and 0 <= t.object < n_ent and 0 <= t.relation < n_rel):
                raise KgError(f"edge {t} references an index outside the catalogs")
            out_adj[t.subject].append((t.relation, t.object))
            in_adj[t.object].append((t.relation, t.subject))
            rel_edges[t.relation].append(t)
        for adj in (out_adj, in_adj):
            for lst in adj:
                lst.sort()
        for lst in rel_edges:
            lst.sort()
        self._out_adj = [tuple(a) for a in out_adj]
        self._in_adj = [tuple(a) for a in in_adj]
        self._rel_edges = [tuple(e) for e in rel_edges]
        self.stats.n_entities = n_ent
        self.stats.n_relations = n_rel
        self.stats.n_edges = len(self.edges)

    @classmethod
    def from_triples(
        cls,
        entity_labels: Sequence[str],
        relation_labels: Sequence[str],
        triples: Iterable[tuple[int, int, int]],
        entity_external_ids: Sequence[str] | None = None,
        relation_external_ids: Sequence[str] | None = None,
    ) -> "KnowledgeGraph":
        """Build a graph directly from dense-index triples (fixtures, tests)."""
        ents = Catalog(
            tuple(entity_labels),
            tuple(entity_external_ids) if entity_external_ids else tuple(f"E{i}" for i in range(len(entity_labels))),
        )
        rels = Catalog(
            tuple(relation_labels),
            tuple(relation_external_ids) if relation_external_ids else tuple(f"R{i}" for i in range(len(relation_labels))),
        )
        seen: set[Triplet] = set()
        edges = []
        for s, r, o in triples:
            t = Triplet(s, r, o)
            if t not in seen:
                seen.add(t)
                edges.append(t)
        return cls(ents, rels, tuple(edges))

    def entity_ref(self, index: int) -> EntityRef:
        self._check_entity(index)
        return EntityRef(index, self.entities.external_ids[index], self.entities.labels[index])

    def relation_ref(self, index: int) -> RelationRef:
        self._check_relation(index)
        return RelationRef(index, self.relations.external_ids[index], self.relations.labels[index])

    def degree(self, entity: int) -> int:
        """Total degree, incoming plus outgoing."""
        return len(self._out_adj[entity]) + len(self._in_adj[entity])

    def incident(self, entity: int) -> list[tuple[Triplet, int]]:
        """All edges touching ``entity`` in either direction, paired with the
        opposite endpoint. Emitted triplets keep the stored (s, r, o) orientation."""
        self._check_entity(entity)
        out = [(Triplet(entity, r, o), o) for r, o in self._out_adj[entity]]
        inc = [(Triplet(s, r, entity), s) for r, s in self._in_adj[entity]]
        return out + inc

    def triplet_labels(self, t: Triplet) -> tuple[str, str, str]:
        return (self.entities.label(t.subject), self.relations.label(t.relation), self.entities.label(t.object))

    def _check_entity(self, entity: int) -> None:
        if not (isinstance(entity, (int,)) and 0 <= entity < len(self.entities)):
            raise KgError(f"entity index {entity!r} out of range")

    def _check_relation(self, relation: int) -> None:
        if not (isinstance(relation, (int,)) and 0 <= relation < len(self.relations)):
            raise KgError(f"relation index {relation!r} out of range")


def _read_label_file(path, *, allow_flags: bool) -> list[tuple[str, str, set[str]]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) < 2 or not parts[0] or not parts[1]:
                raise KgError(f"{path}:{lineno}: expected 'external_id<TAB>label[<TAB>flags]'")
            flags = set(parts[2].split(",")) if allow_flags and len(parts) > 2 and parts[2] else set()
            rows.append((parts[0], parts[1], flags))
    return rows


def ingest(edges_file, entity_labels_file, relation_labels_file) -> KnowledgeGraph:
    """Read the three TSV files into a deduplicated, densely indexed graph.

    Dense indices follow first-appearance order of the label files. Relations
    flagged ``literal`` are dropped with a warning, along with their edges.
    An edge referencing an undeclared id is a hard error naming the line.
    """
    stats = IngestStats()

    ent_rows = _read_label_file(entity_labels_file, allow_flags=True)
    ent_labels = tuple(label for _, label, _ in ent_rows)
    ent_ext = tuple(ext for ext, _, _ in ent_rows)
    entities = Catalog(ent_labels, ent_ext)

    rel_rows = _read_label_file(relation_labels_file, allow_flags=True)
    literal_ids = {ext for ext, _, flags in rel_rows if "literal" in flags}
    kept = [(ext, label) for ext, label, flags in rel_rows if "literal" not in flags]
    stats.literal_relations_dropped = len(rel_rows) - len(kept)
    if stats.literal_relations_dropped:
        log.warning("dropped %d literal-valued relation(s) at ingest", stats.literal_relations_dropped)
    relations = Catalog(tuple(label for _, label in kept), tuple(ext for ext, _ in kept))

    seen: set[Triplet] = set()
    edges: list[Triplet] = []
    with open(edges_file, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise KgError(f"{edges_file}:{lineno}: expected 3 tab-separated columns")
            s_ext, r_ext, o_ext = parts
            if r_ext in literal_ids:
                stats.literal_edges_dropped += 1
                continue
            s = entities.index_of_external(s_ext)
            if s is None:
                raise KgError(f"{edges_file}:{lineno}: unknown entity id {s_ext!r}")
            o = entities.index_of_external(o_ext)
            if o is None:
                raise KgError(f"{edges_file}:{lineno}: unknown entity id {o_ext!r}")
            r = relations.index_of_external(r_ext)
            if r is None:
                raise KgError(f"{edges_file}:{lineno}: unknown relation id {r_ext!r}")
            t = Triplet(s, r, o)
            if t in seen:
                stats.duplicate_edges_dropped += 1
                continue
            seen.add(t)
            edges.append(t)
    if stats.literal_edges_dropped:
        log.warning("dropped %d edge(s) using literal-valued relations", stats.literal_edges_dropped)

    return KnowledgeGraph(entities, relations, tuple(edges), stats)


def filter_zero_degree(graph: KnowledgeGraph) -> KnowledgeGraph:
    """Remove entities with degree 0 (in + out). Edges are unchanged; surviving
    entities are re-indexed densely, preserving catalog order."""
    keep = [i for i in range(len(graph.entities)) if graph.degree(i) > 0]
    if len(keep) == len(graph.entities):
        return graph
    remap = {old: new for new, old in enumerate(keep)}
    entities = Catalog(
        tuple(graph.entities.labels[i] for i in keep),
        tuple(graph.entities.external_ids[i] for i in keep),
    )
    edges = tuple(Triplet(remap[t.subject], t.relation, remap[t.object]) for t in graph.edges)
    return KnowledgeGraph(entities, graph.relations, edges, graph.stats)


def neighbors(graph: KnowledgeGraph, entity: int) -> list[tuple[int, int]]:
    """Outgoing (relation, object) pairs of ``entity``, sorted by relation then object."""
    graph._check_entity(entity)
    return list(graph._out_adj[entity])


def triples_of_relation(graph: KnowledgeGraph, relation: int) -> list[Triplet]:
    """All edges carrying ``relation``, in deterministic sorted order."""
    graph._check_relation(relation)
    return list(graph._rel_edges[relation])
