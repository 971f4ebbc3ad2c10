import numpy as np
import pytest

from kgsynth import kgstore


@pytest.fixture
def tiny_graph():
    """4 entities, 2 relations, 4 hand-enumerable edges."""
    return kgstore.KnowledgeGraph.from_triples(
        ["Alpha", "Beta", "Gamma", "Delta"],
        ["linked to", "part of"],
        [
            (0, 0, 1),  # Alpha -linked to-> Beta
            (0, 1, 2),  # Alpha -part of-> Gamma
            (1, 0, 2),  # Beta -linked to-> Gamma
            (3, 1, 0),  # Delta -part of-> Alpha
        ],
    )


@pytest.fixture
def path_graph():
    """A - B - C chain with distinct relations."""
    return kgstore.KnowledgeGraph.from_triples(
        ["A", "B", "C"],
        ["r1", "r2"],
        [(0, 0, 1), (1, 1, 2)],
    )


def make_zipf_kg(
    seed: int = 1234,
    n_entities: int = 10_000,
    n_relations: int = 200,
    entity_exponent: float = 1.6,
    min_edges_per_relation: int = 20,
    relation_scale: float = 8000.0,
    relation_exponent: float = 1.3,
    segment_spread: float = 0.95,
) -> kgstore.KnowledgeGraph:
    """Synthetic KG with Zipf-like degrees and skewed relation mass.

    Relation popularity correlates with its endpoints' popularity, as in real
    KG exports: relation r draws endpoints Zipf-distributed around a home
    segment that slides toward rarer entities as r grows. Every relation gets
    at least ``min_edges_per_relation`` edges.
    """
    rng = np.random.default_rng(seed)
    local = 1.0 / np.arange(1, n_entities + 1, dtype=float) ** entity_exponent
    cum = np.cumsum(local / local.sum())
    edges: set[tuple[int, int, int]] = set()
    triples: list[tuple[int, int, int]] = []
    for r in range(n_relations):
        n_edges_r = min_edges_per_relation + int(relation_scale / (r + 1) ** relation_exponent)
        offset = int(r / n_relations * n_entities * segment_spread)
        count = 0
        while count < n_edges_r:
            batch = max(16, 2 * (n_edges_r - count))
            draws = np.searchsorted(cum, rng.random(2 * batch), side="right").reshape(2, batch)
            for s_raw, o_raw in zip(draws[0], draws[1]):
                s = (offset + int(s_raw)) % n_entities
                o = (offset + int(o_raw)) % n_entities
                if s != o and (s, r, o) not in edges:
                    edges.add((s, r, o))
                    triples.append((s, r, o))
                    count += 1
                    if count == n_edges_r:
                        break
    graph = kgstore.KnowledgeGraph.from_triples(
        [f"Entity {i}" for i in range(n_entities)],
        [f"relation {j}" for j in range(n_relations)],
        triples,
    )
    return kgstore.filter_zero_degree(graph)


@pytest.fixture(scope="session")
def zipf_kg():
    return make_zipf_kg()
