"""Episode drivers and split-level metrics."""

import numpy as np
import pytest

from slotsearch.evaluate import (encode_query, episode_ids_for, episode_states,
                                 evaluate_split, final_turn_recall,
                                 mean_episode_reward, policy_mode_for,
                                 query_to_ids, split_turn_ranks, write_metrics_csv)
from slotsearch.model import TrainConfig, init_model
from slotsearch.scenes import CorpusConfig, load_corpus, make_corpus, sample_episode
from slotsearch.simrank import (RetrievalIndex, metrics_csv, set_image_similarity,
                                target_rank)
from slotsearch.statebank import run_episode
from slotsearch.text import UNK_ID, Vocab, build_vocab, tokenize
from slotsearch.trainer import pretrain


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    make_corpus(CorpusConfig(n_train=10, n_val=5, n_test=8, n_regions=4,
                             t_turns=3, seed=2), out)
    return out


@pytest.fixture(scope="module")
def test_scenes(corpus):
    return load_corpus(f"{corpus}/test.jsonl")


def _model(kind="drilldown", scenes=None, **overrides):
    captions = [c.text for s in scenes for c in s.captions]
    vocab = build_vocab(captions)
    base = dict(model=kind, turns=3, slots=2, state_dim=8, embed_dim=6,
                batch_size=4)
    base.update(overrides)
    cfg = TrainConfig(**base)
    feat = scenes[0].regions[0].feature.size
    return init_model(cfg, vocab, feat, np.random.default_rng(0))


def test_query_to_ids_maps_blank_to_unknown():
    vocab = Vocab(["red", "circle"])
    assert query_to_ids(vocab, "red circle") == vocab.encode(["red", "circle"])
    assert query_to_ids(vocab, "   ...   ") == [UNK_ID]


def test_episode_ids_deterministic_without_rng(test_scenes):
    model = _model(scenes=test_scenes)
    scene = test_scenes[0]
    a = episode_ids_for(scene, model.vocab, 3)
    b = episode_ids_for(scene, model.vocab, 3)
    assert a == b
    texts = sample_episode(scene, 3, "eval")
    assert a == [model.vocab.encode(tokenize(t)) for t in texts]


def test_policy_mode_follows_training_phase(test_scenes):
    pre = _model(scenes=test_scenes, phase="pretrain")
    post = _model(scenes=test_scenes, phase="joint")
    flat = _model("rre", scenes=test_scenes, slots=1)
    assert policy_mode_for(pre) == "fixed"
    assert policy_mode_for(post) == "greedy"
    assert policy_mode_for(flat) == "fixed"


def test_episode_states_matches_statebank_driver(test_scenes):
    model = _model(scenes=test_scenes)
    rng = np.random.default_rng(3)
    qs = [rng.normal(size=8) for _ in range(3)]
    got = episode_states(model, qs, "fixed")
    want, _ = run_episode(qs, model.effective_slots, model.policy, model.fuse,
                          "fixed")
    assert len(got) == 3
    for a, b in zip(got, want):
        np.testing.assert_allclose(a.slots, b.slots, atol=1e-15)
        np.testing.assert_array_equal(a.empty_mask, b.empty_mask)


def test_split_turn_ranks_are_valid_ranks(test_scenes):
    for kind in ("drilldown", "hre", "rhre", "rre", "rankfusion"):
        model = _model(kind, scenes=test_scenes,
                       slots=2 if kind == "drilldown" else 1)
        episode_ids = [episode_ids_for(s, model.vocab, 3) for s in test_scenes]
        ranks = split_turn_ranks(model, test_scenes, episode_ids)
        assert len(ranks) == 3
        for per_turn in ranks:
            assert len(per_turn) == len(test_scenes)
            assert all(1 <= r <= len(test_scenes) for r in per_turn)


def test_single_slot_model_matches_context_baseline_ranks(test_scenes):
    slot_model = _model("drilldown", scenes=test_scenes, slots=1)
    twin = _model("rhre", scenes=test_scenes, slots=1)
    for name, p in twin.store.items():
        p.data[:] = slot_model.store[name].data
    episode_ids = [episode_ids_for(s, slot_model.vocab, 3) for s in test_scenes]
    a = split_turn_ranks(slot_model, test_scenes, episode_ids)
    b = split_turn_ranks(twin, test_scenes, episode_ids)
    assert a == b


def test_rank_fusion_first_turn_equals_plain_ranking(test_scenes):
    model = _model("rankfusion", scenes=test_scenes, slots=1)
    episode_ids = [episode_ids_for(s, model.vocab, 3) for s in test_scenes]
    fused = split_turn_ranks(model, test_scenes, episode_ids)
    index = RetrievalIndex.from_scenes(test_scenes, model.img_w.data,
                                       model.img_b.data)
    ids_arr = np.array(index.ids)
    from slotsearch.statebank import StateSet
    for i, scene in enumerate(test_scenes):
        state = encode_query(model, episode_ids[i][0])
        bank = StateSet(slots=state[None, :], empty_mask=np.array([False]), turn=1)
        scores = index.score_all(bank, model.config.sharpness, False)
        assert fused[0][i] == target_rank(scores, ids_arr, scene.id)


def test_evaluate_split_turn_numbers(test_scenes):
    model = _model(scenes=test_scenes)
    metrics = evaluate_split(model, test_scenes)
    assert [m.turn for m in metrics] == [1, 2, 3]
    assert all(0.0 <= m.r10 <= 1.0 for m in metrics)
    assert all(m.mean_rank >= 1.0 for m in metrics)


def test_mean_episode_reward_matches_manual_sum(test_scenes):
    model = _model(scenes=test_scenes)
    scene = test_scenes[0]
    episode_ids = [episode_ids_for(scene, model.vocab, 3)]
    got = mean_episode_reward(model, [scene], episode_ids)
    qs = [encode_query(model, ids) for ids in episode_ids[0]]
    target = np.stack([r.feature for r in scene.regions])
    v = target @ model.img_w.data.T + model.img_b.data
    want = sum(set_image_similarity(bank, v, model.config.sharpness, False)
               for bank in episode_states(model, qs))
    assert got == pytest.approx(want, abs=1e-12)


def test_mean_episode_reward_needs_slot_model(test_scenes):
    model = _model("hre", scenes=test_scenes, slots=1)
    with pytest.raises(ValueError):
        mean_episode_reward(model, test_scenes)


def test_final_turn_recall_in_unit_interval(test_scenes):
    model = _model(scenes=test_scenes)
    value = final_turn_recall(model, test_scenes)
    assert 0.0 <= value <= 1.0


def test_write_metrics_csv_round_trip(tmp_path, test_scenes):
    model = _model(scenes=test_scenes)
    metrics = evaluate_split(model, test_scenes)
    path = tmp_path / "metrics.csv"
    write_metrics_csv(metrics, path)
    assert path.read_text() == metrics_csv(metrics)


def test_trained_model_beats_untrained_on_its_train_split(corpus):
    # two quick epochs must improve summed validation recall over epoch "0"
    cfg = TrainConfig(model="drilldown", pretrain_epochs=2, turns=3, slots=2,
                      state_dim=8, embed_dim=6, batch_size=4, seed=0)
    cp = pretrain(cfg, corpus, log=None)
    assert cp.val_history[-1]["mean_loss"] <= cp.val_history[0]["mean_loss"] * 1.5
