import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from slotsearch.scenes import CorpusConfig, generate_scene
from slotsearch.simrank import (
    RetrievalIndex,
    TurnMetrics,
    metrics_csv,
    pair_cosine,
    rank_corpus,
    recall_at_k,
    region_attention,
    set_image_similarity,
    state_image_similarity,
    turn_metrics,
)
from slotsearch.statebank import StateSet, init_states


def bank(slots, mask=None):
    slots = np.asarray(slots, dtype=float)
    if mask is None:
        mask = np.zeros(len(slots), dtype=bool)
    return StateSet(slots=slots, empty_mask=np.asarray(mask), turn=int((~np.asarray(mask)).sum()))


def single_region_index(cosines):
    """Images with one region each, engineered so image i scores cosines[i]
    against the slot [1, 0]."""
    mats = [np.array([[c, math.sqrt(max(0.0, 1 - c * c))]]) for c in cosines]
    return RetrievalIndex(list(range(len(cosines))), mats)


# ---------------------------------------------------------------------------
# pairwise cosine

def test_pair_cosine_identical():
    v = np.array([0.3, -0.7, 0.2])
    assert_allclose(pair_cosine(v, v), 1.0, atol=1e-12)


def test_pair_cosine_orthogonal():
    assert pair_cosine([1.0, 0.0], [0.0, 1.0]) == 0.0


def test_pair_cosine_45_degrees():
    assert_allclose(pair_cosine([1.0, 1.0], [1.0, 0.0]), 0.70711, atol=5e-6)


def test_pair_cosine_zero_vector_guard():
    assert pair_cosine([0.0, 0.0], [1.0, 0.0]) == 0.0


# ---------------------------------------------------------------------------
# region attention

def test_attention_uniform_over_identical_regions():
    V = np.tile([0.5, 0.5], (4, 1))
    assert_allclose(region_attention([1.0, 0.0], V), np.full(4, 0.25), atol=1e-12)


def test_attention_sharpened_values():
    V = np.array([[1.0, 0.0], [0.0, 1.0]])  # cosines [1, 0] against x
    att = region_attention([1.0, 0.0], V, lam=9.0)
    assert_allclose(att, [0.99988, 0.00012], atol=5e-6)


def test_attention_single_region():
    assert_allclose(region_attention([1.0, 2.0], np.array([[3.0, 1.0]])), [1.0])


def test_attention_validation():
    with pytest.raises(ValueError):
        region_attention([1.0], np.zeros((0, 1)))
    with pytest.raises(ValueError):
        region_attention([1.0, 0.0], np.eye(2), lam=0.0)


# ---------------------------------------------------------------------------
# state-image similarity

def test_similarity_single_region_equals_cosine():
    x = np.array([0.2, 0.9])
    V = np.array([[0.7, -0.1]])
    assert_allclose(state_image_similarity(x, V), pair_cosine(x, V[0]), atol=1e-12)


def test_similarity_sharpened_value():
    V = np.array([[1.0, 0.0], [0.0, 1.0]])
    s = state_image_similarity([1.0, 0.0], V, lam=9.0)
    assert_allclose(s, 0.99988, atol=5e-6)


def test_similarity_literal_inverse_n():
    V = np.array([[1.0, 0.0], [0.0, 1.0]])
    s = state_image_similarity([1.0, 0.0], V, lam=9.0, literal_inverse_n=True)
    assert_allclose(s, 0.49994, atol=5e-6)


# ---------------------------------------------------------------------------
# set-level similarity

def test_set_similarity_all_empty_is_zero():
    V = np.random.default_rng(0).normal(size=(3, 4))
    assert set_image_similarity(init_states(3, 4), V) == 0.0


def test_set_similarity_mean_of_occupied():
    V = np.array([[1.0, 0.0]])
    x_a = [0.8, 0.6]
    x_b = [0.4, math.sqrt(1 - 0.16)]
    s = set_image_similarity(bank([x_a, x_b]), V)
    assert_allclose(s, 0.6, atol=1e-12)


def test_set_similarity_no_dilution_by_empties():
    V = np.array([[1.0, 0.0]])
    states = bank([[0.8, 0.6], [0.0, 0.0], [0.0, 0.0]],
                  mask=[False, True, True])
    assert_allclose(set_image_similarity(states, V), 0.8, atol=1e-12)


# ---------------------------------------------------------------------------
# brute-force oracle over random tiny instances

def oracle_set_similarity(slots, empty_mask, V, lam, flag):
    eps = 1e-8
    vals = []
    for i in range(len(slots)):
        if empty_mask[i]:
            continue
        x = slots[i]
        cos = []
        for v in V:
            nx = max(math.sqrt(sum(c * c for c in x)), eps)
            nv = max(math.sqrt(sum(c * c for c in v)), eps)
            cos.append(sum(a * b for a, b in zip(x, v)) / (nx * nv))
        weights = [math.exp(lam * c) for c in cos]
        total = sum(weights)
        s = sum(w / total * c for w, c in zip(weights, cos))
        if flag:
            s /= len(V)
        vals.append(s)
    if not vals:
        return 0.0
    return sum(vals) / len(vals)


def test_brute_force_oracle_agreement():
    rng = np.random.default_rng(123)
    for case in range(100):
        m = int(rng.integers(1, 4))
        n = int(rng.integers(1, 5))
        d = int(rng.integers(2, 6))
        slots = rng.normal(size=(m, d))
        mask = rng.random(m) < 0.3
        V = rng.normal(size=(n, d))
        lam = float(rng.uniform(0.5, 12.0))
        flag = bool(rng.random() < 0.5)
        states = StateSet(slots=slots, empty_mask=mask, turn=int((~mask).sum()))
        got = set_image_similarity(states, V, lam, flag)
        want = oracle_set_similarity(slots.tolist(), mask.tolist(), V.tolist(), lam, flag)
        assert abs(got - want) <= 1e-10, f"case {case}: {got} vs {want}"


def test_index_score_all_matches_per_image_path():
    rng = np.random.default_rng(7)
    mats = [rng.normal(size=(4, 5)) for _ in range(9)]
    index = RetrievalIndex(list(range(9)), mats)
    states = bank(rng.normal(size=(3, 5)), mask=[False, True, False])
    scores = index.score_all(states, lam=9.0)
    for i, V in enumerate(mats):
        assert_allclose(scores[i], set_image_similarity(states, V, lam=9.0),
                        atol=1e-12)


# ---------------------------------------------------------------------------
# invariances

def test_scale_invariance():
    rng = np.random.default_rng(8)
    slots = rng.normal(size=(2, 5))
    V = rng.normal(size=(3, 5))
    base_att = region_attention(slots[0], V, lam=9.0)
    base_sim = set_image_similarity(bank(slots), V, lam=9.0)
    scaled_att = region_attention(slots[0] * 17.0, V * 0.03, lam=9.0)
    scaled_sim = set_image_similarity(bank(slots * 5.0), V * 250.0, lam=9.0)
    assert_allclose(scaled_att, base_att, atol=1e-12)
    assert_allclose(scaled_sim, base_sim, atol=1e-12)


def test_inverse_n_flag_preserves_ranking():
    rng = np.random.default_rng(9)
    index = RetrievalIndex(list(range(20)), [rng.normal(size=(4, 6)) for _ in range(20)])
    states = bank(rng.normal(size=(3, 6)))
    plain, _ = rank_corpus(states, index, target_id=0)
    flagged, _ = rank_corpus(states, index, target_id=0, literal_inverse_n=True)
    assert [i for i, _ in plain] == [i for i, _ in flagged]
    for (_, a), (_, b) in zip(plain, flagged):
        assert_allclose(b, a / 4.0, atol=1e-12)


# ---------------------------------------------------------------------------
# ranking

def test_rank_corpus_of_one():
    index = single_region_index([0.4])
    _, rank = rank_corpus(bank([[1.0, 0.0]]), index, target_id=0)
    assert rank == 1


def test_rank_corpus_tie_rule_follows_ids():
    index = RetrievalIndex([5, 2, 9], [np.array([[1.0, 0.0]])] * 3)
    ranking, rank = rank_corpus(bank([[1.0, 0.0]]), index, target_id=9)
    assert [i for i, _ in ranking] == [2, 5, 9]
    assert rank == 3


def test_rank_corpus_orders_by_score():
    index = single_region_index([0.9, 0.5, 0.7])  # ids 0, 1, 2
    ranking, rank = rank_corpus(bank([[1.0, 0.0]]), index, target_id=1)
    assert [i for i, _ in ranking] == [0, 2, 1]
    assert rank == 3


def test_rank_corpus_is_permutation():
    rng = np.random.default_rng(10)
    ids = list(rng.permutation(30))
    index = RetrievalIndex(ids, [rng.normal(size=(3, 4)) for _ in range(30)])
    ranking, _ = rank_corpus(bank(rng.normal(size=(2, 4))), index, target_id=ids[0])
    assert sorted(i for i, _ in ranking) == sorted(ids)


def test_rank_corpus_missing_target():
    index = single_region_index([0.5])
    with pytest.raises(ValueError):
        rank_corpus(bank([[1.0, 0.0]]), index, target_id=404)


def test_index_build_from_scenes():
    cfg = CorpusConfig(n_regions=4, t_turns=3)
    rng = np.random.default_rng(11)
    scenes = [generate_scene(cfg, rng, scene_id=i) for i in range(3)]
    W = rng.normal(size=(6, 27))
    b = rng.normal(size=6)
    index = RetrievalIndex.from_scenes(scenes, W, b)
    assert len(index) == 3 and index.n_regions == 4
    expect = np.asarray([r.feature for r in scenes[1].regions]) @ W.T + b
    assert_allclose(index.matrix(scenes[1].id), expect, atol=1e-12)


def test_index_validation():
    with pytest.raises(ValueError):
        RetrievalIndex([], [])
    with pytest.raises(ValueError):
        RetrievalIndex([1, 1], [np.zeros((2, 2))] * 2)
    with pytest.raises(ValueError):
        RetrievalIndex([1, 2], [np.zeros((2, 2)), np.zeros((3, 2))])


# ---------------------------------------------------------------------------
# recall metrics

def test_recall_basics():
    assert recall_at_k([1], 1) == 1.0
    assert recall_at_k([7], 5) == 0.0
    assert recall_at_k([7], 10) == 1.0


def test_recall_two_of_three():
    assert_allclose(recall_at_k([1, 7, 30], 10), 0.6667, atol=5e-5)


def test_recall_validation():
    with pytest.raises(ValueError):
        recall_at_k([1, 2], 0)
    with pytest.raises(ValueError):
        recall_at_k([0], 5)
    with pytest.raises(ValueError):
        recall_at_k([], 5)


def test_turn_metrics_monotone():
    m = turn_metrics(2, [1, 3, 8, 40, 2])
    assert m.r1 <= m.r5 <= m.r10
    assert m.turn == 2
    assert_allclose(m.mean_rank, 10.8)


def test_metrics_csv_format():
    rows = [TurnMetrics(1, 0.1, 0.3, 0.5, 12.25), TurnMetrics(2, 0.2, 0.4, 0.6, 8.0)]
    text = metrics_csv(rows)
    lines = text.strip().split("\n")
    assert lines[0] == "turn,r1,r5,r10,mean_rank"
    assert lines[1] == "1,0.100000,0.300000,0.500000,12.250000"
    assert len(lines) == 3
