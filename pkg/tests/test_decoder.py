import itertools
import json
import sys

import numpy as np
import pytest

from kgsynth import codec
from kgsynth.codec import LinearizationSchema, Variant
from kgsynth.decoder import (
    AdversarialScorer,
    ByteTokenizer,
    ConstraintEngine,
    ConstraintError,
    DecodeParams,
    DEFAULT_LENGTH_PENALTY,
    OracleScorer,
    SubprocessScorer,
    UniformScorer,
    WordPieceTokenizer,
    build_trie,
    constrained_beam_search,
    filter_tokenizable,
)

FE = LinearizationSchema(variant=Variant.FE)
SC = LinearizationSchema(variant=Variant.SC)

DELIM_PIECES = ["[s] ", " [s] ", " [r] ", " [o] ", " [e]"]


def toy_world(entities, relations):
    """Single-token word-piece tokenizer + engine over a toy catalog."""
    tokenizer = WordPieceTokenizer(DELIM_PIECES + entities + relations)
    entity_trie = build_trie(entities, tokenizer)
    relation_trie = build_trie(relations, tokenizer)
    return tokenizer, entity_trie, relation_trie


ENTITIES = ["Ada", "Bob", "Computer", "Lab", "Zuse"]
RELATIONS = ["knows", "works at", "built"]


@pytest.fixture
def fe_engine():
    tokenizer, et, rt = toy_world(ENTITIES, RELATIONS)
    return ConstraintEngine(FE, tokenizer, et, rt)


@pytest.fixture
def sc_engine():
    tokenizer, et, rt = toy_world(ENTITIES, RELATIONS)
    return ConstraintEngine(SC, tokenizer, et, rt)


# --- tokenizers ---

def test_byte_tokenizer_round_trip():
    tok = ByteTokenizer()
    for text in ("plain ascii", "Zürich [r] text", "日本語"):
        assert tok.decode(tok.encode(text)) == text
    assert tok.vocab_size == 257
    assert tok.eos_id == 256


def test_wordpiece_greedy_longest_match():
    tok = WordPieceTokenizer(["New", " York", "ark", "New York City"])
    assert tok.decode(tok.encode("New York")) == "New York"
    assert tok.encode("New York City") == [tok.piece_ids["New York City"]]
    assert tok.encode("Newark") == [tok.piece_ids["New"], tok.piece_ids["ark"]]


def test_wordpiece_encode_failure():
    tok = WordPieceTokenizer(["a", "b"])
    assert tok.try_encode("abc") is None
    with pytest.raises(Exception):
        tok.encode("abc")


def test_wordpiece_rejects_bad_vocab():
    with pytest.raises(ValueError):
        WordPieceTokenizer([])
    with pytest.raises(ValueError):
        WordPieceTokenizer(["a", "a"])


def test_filter_tokenizable_drops_unencodable():
    ascii_pieces = [chr(c) for c in range(32, 127)]
    tok = WordPieceTokenizer(ascii_pieces)
    kept, dropped = filter_tokenizable(["Zurich", "Zürich"], tok)
    assert kept == ["Zurich"]
    assert dropped == [("Zürich", "not tokenizable")]


def test_filter_tokenizable_identity_when_all_encodable():
    tok = ByteTokenizer()
    labels = ["anything", "Zürich", "日本語"]
    kept, dropped = filter_tokenizable(labels, tok)
    assert kept == labels and dropped == []


def test_filter_tokenizable_counts():
    ascii_pieces = [chr(c) for c in range(32, 127)]
    tok = WordPieceTokenizer(ascii_pieces)
    labels = [f"label {i}" for i in range(93)] + [f"label {i} é" for i in range(7)]
    kept, dropped = filter_tokenizable(labels, tok)
    assert len(kept) == 93 and len(dropped) == 7


# --- tries ---

def test_trie_shares_prefix_nodes():
    tok = WordPieceTokenizer(["New", " York", "ark"])
    trie = build_trie(["New York", "Newark"], tok)
    new_id = tok.piece_ids["New"]
    assert set(trie.root.children) == {new_id}
    node = trie.root.children[new_id]
    assert set(node.children) == {tok.piece_ids[" York"], tok.piece_ids["ark"]}
    assert all(child.terminal for child in node.children.values())
    assert trie.n_entries == 2
    assert sorted(trie.entries()) == ["New York", "Newark"]


def test_trie_empty_catalog_is_error():
    with pytest.raises(ValueError):
        build_trie([], ByteTokenizer())


def test_trie_singleton_path():
    tok = ByteTokenizer()
    trie = build_trie(["solo"], tok)
    node = trie.walk(tok.encode("solo"))
    assert node is not None and node.terminal
    assert trie.walk(tok.encode("sol")).terminal is False


def test_trie_duplicate_keeps_first_and_logs(caplog):
    tok = ByteTokenizer()
    with caplog.at_level("WARNING"):
        trie = build_trie(["dup", "dup"], tok)
    assert trie.n_entries == 1
    assert trie.collisions == 1
    assert "duplicate" in caplog.text


# --- constraint automaton ---

def test_allowed_next_in_entity(fe_engine):
    tok = fe_engine.tokenizer
    state = fe_engine.initial_state()
    allowed, eos = fe_engine.allowed_next(state)
    assert allowed == {tok.piece_ids["[s] "]} and not eos
    state = fe_engine.advance(state, tok.piece_ids["[s] "])
    allowed, eos = fe_engine.allowed_next(state)
    assert allowed == {tok.piece_ids[e] for e in ENTITIES} and not eos


def test_allowed_next_expect_relation(fe_engine):
    tok = fe_engine.tokenizer
    state = fe_engine.replay([tok.piece_ids["[s] "], tok.piece_ids["Ada"]])
    allowed, eos = fe_engine.allowed_next(state)
    assert allowed == {tok.piece_ids[" [r] "]} and not eos


def test_allowed_next_after_end_fe(fe_engine):
    tok = fe_engine.tokenizer
    prefix = [tok.piece_ids[p] for p in ("[s] ", "Ada", " [r] ", "knows", " [o] ", "Bob", " [e]")]
    state = fe_engine.replay(prefix)
    allowed, eos = fe_engine.allowed_next(state)
    assert allowed == {tok.piece_ids[" [s] "]}
    assert eos
    assert fe_engine.is_accepting(state)


def test_allowed_next_after_end_sc(sc_engine):
    tok = sc_engine.tokenizer
    prefix = [tok.piece_ids[p] for p in ("[s] ", "Ada", " [r] ", "knows", " [o] ", "Bob", " [e]")]
    state = sc_engine.replay(prefix)
    allowed, eos = sc_engine.allowed_next(state)
    assert allowed == {tok.piece_ids[" [s] "], tok.piece_ids[" [r] "]}
    assert eos
    # carrying the subject: continue with a relation-object unit
    state = sc_engine.advance(state, tok.piece_ids[" [r] "])
    allowed, _ = sc_engine.allowed_next(state)
    assert allowed == {tok.piece_ids[r] for r in RELATIONS}


def test_advance_rejects_disallowed_token(fe_engine):
    tok = fe_engine.tokenizer
    state = fe_engine.initial_state()
    with pytest.raises(ConstraintError):
        fe_engine.advance(state, tok.piece_ids["Ada"])


def test_paper_example_walks_to_acceptance():
    tok = ByteTokenizer()
    entities = ["Mount_Lanning", "Sentinel_Range", "Newcomer_Glacier", "Mountain"]
    relations = ["instance of", "mountain range"]
    engine = ConstraintEngine(FE, tok, build_trie(entities, tok), build_trie(relations, tok))
    text = (
        "[s] Mount_Lanning [r] instance of [o] Mountain [e]"
        " [s] Mount_Lanning [r] mountain range [o] Sentinel_Range [e]"
        " [s] Newcomer_Glacier [r] mountain range [o] Sentinel_Range [e]"
    )
    assert engine.accepts(tok.encode(text))
    engine_sc = ConstraintEngine(SC, tok, build_trie(entities, tok), build_trie(relations, tok))
    text_sc = (
        "[s] Mount_Lanning [r] instance of [o] Mountain [e]"
        " [r] mountain range [o] Sentinel_Range [e]"
        " [s] Newcomer_Glacier [r] mountain range [o] Sentinel_Range [e]"
    )
    assert engine_sc.accepts(tok.encode(text_sc))


def test_byte_level_relation_space_ambiguity():
    # "instance" is a prefix of "instance of" and the object delimiter starts
    # with the same space byte: the automaton must keep both readings alive
    tok = ByteTokenizer()
    engine = ConstraintEngine(FE, tok, build_trie(["A", "B"], tok), build_trie(["instance", "instance of"], tok))
    for rel in ("instance", "instance of"):
        assert engine.accepts(tok.encode(f"[s] A [r] {rel} [o] B [e]"))


def test_every_reachable_state_has_options(fe_engine):
    # random walks through the automaton can always continue or stop
    rng = np.random.default_rng(0)
    for _ in range(50):
        state = fe_engine.initial_state()
        for _step in range(30):
            allowed, eos = fe_engine.allowed_next(state)
            assert allowed or eos
            state = fe_engine.advance(state, int(rng.choice(sorted(allowed))))


# --- completeness ---

def enumerate_toy_sets(entities, relations, max_triplets=2):
    singles = list(itertools.product(entities, relations, entities))
    for t in singles:
        yield [t]
    for a, b in itertools.combinations(singles, 2):
        yield [a, b]


def test_completeness_exhaustive_toy_world():
    entities, relations = ENTITIES, RELATIONS
    tokenizer, et, rt = toy_world(entities, relations)
    engines = {
        Variant.FE: ConstraintEngine(FE, tokenizer, et, rt),
        Variant.SC: ConstraintEngine(SC, tokenizer, et, rt),
    }
    checked = 0
    for triplets in enumerate_toy_sets(entities, relations):
        for variant, engine in engines.items():
            schema = LinearizationSchema(variant=variant)
            text = codec.linearize(triplets, schema).text
            ids = tokenizer.try_encode(text)
            assert ids is not None
            assert engine.accepts(ids), text
        checked += 1
    assert checked > 2800


# --- beam search ---

def test_uniform_scorer_returns_distinct_valid_sequences(fe_engine):
    scorer = UniformScorer(fe_engine.tokenizer.vocab_size)
    results = constrained_beam_search(scorer, "", fe_engine, DecodeParams(num_beams=4, max_length=40, top_k_returned=4))
    assert len(results) == 4
    assert len({r.tokens for r in results}) == 4
    for r in results:
        assert r.finished
        assert fe_engine.accepts(r.tokens)
        parsed = codec.parse(r.text, FE, entity_catalog=ENTITIES, relation_catalog=RELATIONS)
        assert parsed.triplets and parsed.dropped_fragments == 0 and parsed.dropped_unresolvable == 0


def test_adversarial_scorer_cannot_escape_catalog(fe_engine):
    # all probability mass on a token that is never a legal continuation here
    favored = fe_engine.tokenizer.piece_ids[" [e]"]
    scorer = AdversarialScorer(fe_engine.tokenizer.vocab_size, favored)
    results = constrained_beam_search(scorer, "", fe_engine, DecodeParams(num_beams=2, max_length=40, top_k_returned=1))
    best = results[0]
    assert best.finished
    parsed = codec.parse(best.text, FE, entity_catalog=ENTITIES, relation_catalog=RELATIONS)
    assert parsed.triplets and parsed.dropped_unresolvable == 0


def test_oracle_scorer_target_ranked_first():
    entities, relations = ["Ada", "Bob", "Lab"], ["knows", "runs"]
    tokenizer, et, rt = toy_world(entities, relations)
    engine = ConstraintEngine(FE, tokenizer, et, rt)
    target_text = codec.linearize([("Bob", "runs", "Lab")], FE).text
    target = tuple(tokenizer.encode(target_text))
    scorer = OracleScorer(tokenizer.vocab_size, target, tokenizer.eos_id)
    results = constrained_beam_search(scorer, "", engine, DecodeParams(num_beams=4, max_length=30, top_k_returned=4))
    assert results[0].tokens == target
    assert results[0].text == target_text
    # exhaustive cross-check: no single-triplet linearization scores higher
    best_alternative = max(
        (
            sum(scorer.score_next("", tuple(tokenizer.encode(codec.linearize([t], FE).text))[:i])[tok]
                for i, tok in enumerate(tokenizer.encode(codec.linearize([t], FE).text)))
            for t in itertools.product(entities, relations, entities)
            if codec.linearize([t], FE).text != target_text
        ),
    )
    assert best_alternative < results[0].score


def test_single_beam_equals_greedy(fe_engine):
    scorer = OracleScorer(
        fe_engine.tokenizer.vocab_size,
        tuple(fe_engine.tokenizer.encode(codec.linearize([("Ada", "knows", "Bob")], FE).text)),
        fe_engine.tokenizer.eos_id,
    )

    def reference_greedy(max_length):
        state = fe_engine.initial_state()
        tokens = ()
        for _ in range(max_length):
            allowed, eos_ok = fe_engine.allowed_next(state)
            row = scorer.score_next("", tokens)
            candidates = []
            if eos_ok:
                candidates.append((row[fe_engine.eos_id], 0, fe_engine.eos_id))
            for t in sorted(allowed):
                candidates.append((row[t], 1, t))
            candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
            _, eos_rank, token = candidates[0]
            if eos_rank == 0:
                return tokens, True
            state = fe_engine.advance(state, token)
            tokens += (token,)
        return tokens, False

    expected_tokens, expected_finished = reference_greedy(40)
    result = constrained_beam_search(scorer, "", fe_engine, DecodeParams(num_beams=1, max_length=40))
    assert result[0].tokens == expected_tokens
    assert result[0].finished == expected_finished


def test_zero_length_penalty_is_raw_sum_ranking(fe_engine):
    scorer = UniformScorer(fe_engine.tokenizer.vocab_size)
    results = constrained_beam_search(
        scorer, "", fe_engine, DecodeParams(num_beams=4, max_length=40, top_k_returned=4, length_penalty=0.0)
    )
    for r in results:
        assert r.normalized_score == r.score
    scores = [r.score for r in results]
    assert scores == sorted(scores, reverse=True)


def test_truncation_flag_when_max_length_too_small(fe_engine):
    scorer = UniformScorer(fe_engine.tokenizer.vocab_size)
    results = constrained_beam_search(scorer, "", fe_engine, DecodeParams(num_beams=2, max_length=3))
    assert results and not results[0].finished


def test_decode_params_defaults_and_validation():
    params = DecodeParams()
    assert params.num_beams == 10
    assert params.resolve_length_penalty(Variant.FE) == 0.8
    assert params.resolve_length_penalty(Variant.SC) == 0.6
    assert DEFAULT_LENGTH_PENALTY == {Variant.FE: 0.8, Variant.SC: 0.6}
    with pytest.raises(ValueError):
        DecodeParams(num_beams=2, top_k_returned=3)
    with pytest.raises(ValueError):
        DecodeParams(num_beams=0)


def test_soundness_finished_outputs_fully_parse(sc_engine):
    rng = np.random.default_rng(123)
    scorer = UniformScorer(sc_engine.tokenizer.vocab_size)
    for seed in range(20):
        results = constrained_beam_search(
            scorer, f"ctx{seed}", sc_engine, DecodeParams(num_beams=3, max_length=50, top_k_returned=3)
        )
        for r in results:
            if r.finished:
                parsed = codec.parse(r.text, SC, entity_catalog=ENTITIES, relation_catalog=RELATIONS)
                assert parsed.dropped_fragments == 0
                assert parsed.dropped_unresolvable == 0
                assert parsed.triplets


# --- scorer subprocess protocol ---

SCORER_SCRIPT = """\
import json, sys
vocab = int(sys.argv[1])
for line in sys.stdin:
    request = json.loads(line)
    prefix = request["prefix_tokens"]
    row = [-1.0 - 0.001 * (i % 7) for i in range(vocab)]
    row[len(prefix) % vocab] = -0.5
    if len(prefix) >= 7:
        row[vocab - 1] = -0.1  # favor end-of-sequence once a block is done
    print(json.dumps({"logprobs": row}))
    sys.stdout.flush()
"""


def test_subprocess_scorer_protocol(tmp_path, fe_engine):
    script = tmp_path / "scorer.py"
    script.write_text(SCORER_SCRIPT, encoding="utf-8")
    vocab = fe_engine.tokenizer.vocab_size
    with SubprocessScorer([sys.executable, str(script), str(vocab)], vocab) as scorer:
        row = scorer.score_next("ctx", [1, 2, 3])
        assert row.shape == (vocab,)
        assert row[3] == -0.5
        results = constrained_beam_search(scorer, "", fe_engine, DecodeParams(num_beams=2, max_length=40))
        assert results[0].finished
        assert fe_engine.accepts(results[0].tokens)


def test_subprocess_scorer_rejects_bad_row(tmp_path):
    script = tmp_path / "bad_scorer.py"
    script.write_text(
        "import json,sys\n"
        "for line in sys.stdin:\n"
        "    print(json.dumps({'logprobs': [0.0, 0.0]}))\n"
        "    sys.stdout.flush()\n",
        encoding="utf-8",
    )
    with SubprocessScorer([sys.executable, str(script)], vocab_size=5) as scorer:
        with pytest.raises(RuntimeError, match="expected 5"):
            scorer.score_next("", [])
