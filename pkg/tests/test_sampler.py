import io
import math

import numpy as np
import pytest

from kgsynth import kgstore, sampler
from kgsynth.kgstore import Triplet
from kgsynth.sampler import SamplerConfig, SamplerState

ZTP_MEAN = 3.0 / (1.0 - math.exp(-3.0))  # zero-truncated Poisson(3) mean


def make_state(graph, **overrides):
    cfg = SamplerConfig(**overrides)
    return SamplerState(graph, cfg), cfg


# --- config validation ---

@pytest.mark.parametrize(
    "kwargs",
    [
        {"poisson_mean": 0},
        {"bias_factor": -1},
        {"dampening": 0},
        {"dampening": 1.5},
        {"reweight_interval": 0},
        {"strategy": "bogus"},
    ],
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        SamplerConfig(**kwargs)


def test_config_allows_unbiased_baseline():
    SamplerConfig(bias_factor=0.0)


# --- set sizes ---

def test_set_size_reproducible(tiny_graph):
    sizes_a = [sampler.sample_set_size(make_state(tiny_graph, seed=5)[0], SamplerConfig(seed=5)) for _ in range(1)]
    state_a, cfg = make_state(tiny_graph, seed=5)
    state_b, _ = make_state(tiny_graph, seed=5)
    run_a = [sampler.sample_set_size(state_a, cfg) for _ in range(200)]
    run_b = [sampler.sample_set_size(state_b, cfg) for _ in range(200)]
    assert run_a == run_b


def test_set_size_never_zero(tiny_graph):
    state, cfg = make_state(tiny_graph, seed=11)
    assert all(sampler.sample_set_size(state, cfg) >= 1 for _ in range(5000))


def brute_force_truncated_poisson(mean, rng, n):
    """Independent rejection sampler over plain Poisson draws."""
    out = []
    while len(out) < n:
        draw = rng.poisson(mean)
        if draw >= 1:
            out.append(draw)
    return np.array(out)


def test_set_size_empirical_mean(tiny_graph):
    state, cfg = make_state(tiny_graph, seed=123)
    draws = np.array([sampler.sample_set_size(state, cfg) for _ in range(100_000)])
    se = draws.std() / math.sqrt(len(draws))
    assert abs(draws.mean() - ZTP_MEAN) < 3 * se
    oracle = brute_force_truncated_poisson(3.0, np.random.default_rng(321), 100_000)
    assert abs(draws.mean() - oracle.mean()) < 3 * se + 3 * oracle.std() / math.sqrt(len(oracle))


# --- coherence weights ---

def test_coherence_weight_formula():
    distinct = [10, 20, 30]  # ranks 1, 2, 3
    assert sampler.coherence_weight(10, distinct, 7.0) == 2187  # (3+1-1)^7
    assert sampler.coherence_weight(20, distinct, 7.0) == 128  # 2^7
    assert sampler.coherence_weight(30, distinct, 7.0) == 1  # 1^7
    assert sampler.coherence_weight(99, distinct, 7.0) == 1.0


def test_coherence_weight_accepts_triplet_set():
    ts = sampler.TripletSet([Triplet(0, 0, 1)], [0, 1])
    assert sampler.coherence_weight(0, ts, 2.0) == 4.0


def test_coherence_weight_unbiased():
    distinct = [1, 2, 3, 4]
    assert all(sampler.coherence_weight(e, distinct, 0.0) == 1.0 for e in distinct)


@pytest.mark.parametrize("n,bf", [(2, 1.0), (5, 7.0), (9, 3.0)])
def test_coherence_ratio_scale(n, bf):
    distinct = list(range(n))
    ratio = sampler.coherence_weight(0, distinct, bf) / sampler.coherence_weight(n - 1, distinct, bf)
    assert ratio == pytest.approx(n**bf)


# --- reweighting ---

def test_reweight_uniform_when_unseen():
    dist = sampler.reweight_distribution(np.zeros(8), dampening=0.5)
    assert np.allclose(dist, 1 / 8)
    assert dist.sum() == pytest.approx(1.0, abs=1e-9)


def test_reweight_full_inversion_ratio():
    # (9,1) at d=1 with a tiny epsilon: relative masses approach (0.1, 0.9)
    counts = np.zeros(10_000)
    counts[0], counts[1] = 9, 1
    dist = sampler.reweight_distribution(counts, dampening=1.0)
    pairwise = dist[0] / (dist[0] + dist[1])
    assert pairwise == pytest.approx(0.1, abs=1e-3)


def test_reweight_default_dampening_near_uniform():
    dist = sampler.reweight_distribution(np.array([9.0, 1.0]), dampening=0.01)
    assert np.all(np.abs(dist - 0.5) < 0.01)


def test_reweight_updates_state(tiny_graph):
    state, _ = make_state(tiny_graph, dampening=1.0)
    state.entity_counts[0] = 50
    sampler.reweight(state)
    assert state.entity_dist.sum() == pytest.approx(1.0, abs=1e-9)
    assert state.entity_dist[0] == min(state.entity_dist)


# --- starts ---

def test_start_single_entity():
    graph = kgstore.KnowledgeGraph.from_triples(["Only"], ["r"], [(0, 0, 0)])
    state, cfg = make_state(graph, strategy=sampler.ENTITY_CENTRIC)
    assert all(sampler.sample_start(state, graph, cfg) == 0 for _ in range(20))


def test_relation_centric_renormalizes_over_subjects():
    graph = kgstore.KnowledgeGraph.from_triples(
        ["A", "B", "C"], ["r"], [(0, 0, 2), (1, 0, 2)]
    )
    state, cfg = make_state(graph, strategy=sampler.RELATION_CENTRIC, seed=77)
    state.entity_dist = np.array([0.9, 0.1, 0.0])
    picks = [sampler.sample_start(state, graph, cfg) for _ in range(4000)]
    frac_a = sum(1 for t in picks if t.subject == 0) / len(picks)
    assert frac_a == pytest.approx(0.9, abs=0.02)


def test_relation_centric_resamples_empty_relations():
    graph = kgstore.KnowledgeGraph.from_triples(
        ["A", "B"], ["empty", "used"], [(0, 1, 1)]
    )
    state, cfg = make_state(graph, strategy=sampler.RELATION_CENTRIC, seed=3)
    starts = [sampler.sample_start(state, graph, cfg) for _ in range(50)]
    assert all(isinstance(t, Triplet) and t.relation == 1 for t in starts)


def test_mixed_strategy_alternates_every_interval(tiny_graph):
    state, cfg = make_state(tiny_graph, strategy=sampler.MIXED, reweight_interval=2)
    observed = []
    for i in range(6):
        state.sets_sampled = i
        observed.append(state.active_start_strategy)
    assert observed == [
        sampler.ENTITY_CENTRIC,
        sampler.ENTITY_CENTRIC,
        sampler.RELATION_CENTRIC,
        sampler.RELATION_CENTRIC,
        sampler.ENTITY_CENTRIC,
        sampler.ENTITY_CENTRIC,
    ]


# --- walks ---

def test_edge_start_target_one(tiny_graph):
    state, cfg = make_state(tiny_graph)
    start = Triplet(0, 0, 1)
    ts = sampler.sample_triplet_set(state, tiny_graph, cfg, start, target_size=1)
    assert ts.triplets == [start]
    assert ts.distinct_entities == [0, 1]
    assert not ts.partial


def test_walk_emits_only_graph_edges_without_duplicates(zipf_kg):
    state, cfg = make_state(zipf_kg, seed=42)
    edges = set(zipf_kg.edges)
    for _ in range(1000):
        start = sampler.sample_start(state, zipf_kg, cfg)
        ts = sampler.sample_triplet_set(state, zipf_kg, cfg, start)
        assert len(ts.triplets) >= 1
        assert len(set(ts.triplets)) == len(ts.triplets)
        assert all(t in edges for t in ts.triplets)


def test_huge_bias_keeps_walk_near_anchor(path_graph):
    # A-B-C path: with an overwhelming bias the second triplet is always
    # incident to an entity of the first.
    hits = 0
    n_runs = 200
    for seed in range(n_runs):
        state, cfg = make_state(path_graph, bias_factor=50.0, seed=seed)
        ts = sampler.sample_triplet_set(state, path_graph, cfg, 0, target_size=2)
        assert len(ts.triplets) == 2
        anchor_entities = {ts.triplets[0].subject, ts.triplets[0].object}
        second = ts.triplets[1]
        if second.subject in anchor_entities or second.object in anchor_entities:
            hits += 1
    assert hits == n_runs


def test_counts_incremented_per_mention(tiny_graph):
    state, cfg = make_state(tiny_graph)
    ts = sampler.sample_triplet_set(state, tiny_graph, cfg, Triplet(0, 0, 1), target_size=1)
    assert state.entity_counts[0] == 1
    assert state.entity_counts[1] == 1
    assert state.relation_counts[0] == 1
    assert state.sets_sampled == 1


def test_partial_set_flagged():
    # single edge, target 5: only one triplet can ever be found
    graph = kgstore.KnowledgeGraph.from_triples(["A", "B"], ["r"], [(0, 0, 1)])
    state, cfg = make_state(graph, seed=1)
    ts = sampler.sample_triplet_set(state, graph, cfg, 0, target_size=5)
    assert ts.triplets == [Triplet(0, 0, 1)]
    assert ts.partial


# --- dataset orchestration ---

def test_dataset_deterministic(tiny_graph):
    cfg = SamplerConfig(seed=9, reweight_interval=10)
    a = io.StringIO()
    b = io.StringIO()
    sampler.write_dataset_jsonl(tiny_graph, cfg, 50, a)
    sampler.write_dataset_jsonl(tiny_graph, cfg, 50, b)
    assert a.getvalue() == b.getvalue()


def test_dataset_reweight_schedule(tiny_graph, monkeypatch):
    # n = 2K: recomputation fires exactly at K and 2K sampled sets
    calls = []
    original = sampler.reweight
    monkeypatch.setattr(sampler, "reweight", lambda state: (calls.append(state.sets_sampled), original(state))[1])
    list(sampler.sample_dataset(tiny_graph, SamplerConfig(seed=2, reweight_interval=25), 50))
    assert calls == [25, 50]


def test_dataset_rejects_nonpositive_n(tiny_graph):
    with pytest.raises(ValueError):
        list(sampler.sample_dataset(tiny_graph, SamplerConfig(), 0))


def test_dataset_record_format(tiny_graph):
    out = io.StringIO()
    summary = sampler.write_dataset_jsonl(tiny_graph, SamplerConfig(seed=4), 5, out)
    import json

    lines = [json.loads(line) for line in out.getvalue().splitlines()]
    assert len(lines) == 5
    for i, row in enumerate(lines):
        assert row["id"] == i
        assert isinstance(row["partial"], bool)
        for t in row["triplets"]:
            assert set(t) == {"s", "r", "o"}
    assert summary["sets"] == 5
    assert summary["mean_set_size"] >= 1
