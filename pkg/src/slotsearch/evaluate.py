"""Inference-time evaluation: drive episodes over a split with simulated
queries (region captions in a deterministic or seeded order), rank the
corpus each turn, and aggregate per-turn retrieval metrics.

Every model kind is scored here with the machinery it was trained with:
slot banks with the fixed or greedy learned policy, single-state context
folds against global or region-level image vectors, flat concatenation
encodings, and per-turn rank averaging for the fusion baseline.
"""

from __future__ import annotations

import numpy as np

from .baselines import corpus_ranks, global_image_vectors, hre_encode, rank_fusion, rre_encode
from .encoder import encode_sentence
from .grad import no_grad
from .model import Model
from .scenes import Scene, sample_episode
from .simrank import (RetrievalIndex, TurnMetrics, metrics_csv, recall_at_k,
                      set_image_similarity, target_rank, turn_metrics)
from .statebank import StateSet, fixed_policy_slot, init_states, select_slot, update_slot
from .text import UNK_ID, Vocab, tokenize


def encode_query(model: Model, token_ids: list[int]) -> np.ndarray:
    """Sentence vector for one query; never records gradients."""
    with no_grad():
        return encode_sentence(token_ids, model.table, model.enc).data


def query_to_ids(vocab: Vocab, text: str) -> list[int]:
    """Tokenize and encode free text; a query with no usable tokens maps
    to a single unknown-word token rather than an empty sequence."""
    ids = vocab.encode(tokenize(text))
    return ids if ids else [UNK_ID]


def episode_ids_for(scene: Scene, vocab: Vocab, t_turns: int,
                    rng: np.random.Generator | None = None) -> list[list[int]]:
    """Token-id sequences for one evaluation episode.  Without an rng the
    episode is the scene's fixed evaluation order; with one, a sampled
    order (for seeded simulation runs)."""
    if rng is None:
        queries = sample_episode(scene, t_turns, "eval")
    else:
        queries = sample_episode(scene, t_turns, "train", rng)
    return [query_to_ids(vocab, q) for q in queries]


def policy_mode_for(model: Model) -> str:
    """How slots are chosen at inference: the greedy learned policy once
    the joint phase has trained it, the fixed circular schedule before."""
    if model.kind == "drilldown" and model.config.phase == "joint":
        return "greedy"
    return "fixed"


def episode_states(model: Model, query_vecs: list[np.ndarray],
                   policy_mode: str | None = None) -> list[StateSet]:
    """Run one episode through the slot bank, returning the bank after
    each turn."""
    if policy_mode is None:
        policy_mode = policy_mode_for(model)
    states = init_states(model.effective_slots, model.state_dim)
    out = []
    with no_grad():
        for turn, q in enumerate(query_vecs, start=1):
            if policy_mode == "fixed" or model.policy is None:
                k = fixed_policy_slot(turn, model.effective_slots)
            else:
                k, _ = select_slot(states, q, model.policy, policy_mode)
            states = update_slot(states, k, q, model.fuse)
            out.append(states)
    return out


def _single_state_bank(state: np.ndarray, turn: int) -> StateSet:
    return StateSet(slots=state[None, :], empty_mask=np.array([False]), turn=turn)


def split_turn_ranks(model: Model, scenes: list[Scene],
                     episode_ids: list[list[list[int]]]) -> list[list[int]]:
    """Rank of each scene's target at every turn of its episode.  Returns
    one list per turn, each over all scenes, computed with the scoring
    scheme matching the model kind."""
    if len(scenes) != len(episode_ids):
        raise ValueError("one episode per scene required")
    kind = model.kind
    cfg = model.config
    t_turns = len(episode_ids[0])
    ranks: list[list[int]] = [[] for _ in range(t_turns)]

    if kind == "hre":
        ids_arr, vectors = global_image_vectors(scenes, model.img_w.data,
                                                model.img_b.data)
        norms = np.linalg.norm(vectors, axis=1, keepdims=True)
        unit = vectors / np.maximum(norms, 1e-8)
        for scene, turns in zip(scenes, episode_ids):
            qs = [encode_query(model, ids) for ids in turns]
            for t in range(t_turns):
                x = hre_encode(qs[:t + 1], model.fuse)
                xn = x / max(np.linalg.norm(x), 1e-8)
                scores = unit @ xn
                ranks[t].append(target_rank(scores, ids_arr, scene.id))
        return ranks

    index = RetrievalIndex.from_scenes(scenes, model.img_w.data, model.img_b.data)
    ids_arr = np.array(index.ids)

    if kind in ("drilldown", "rhre"):
        for scene, turns in zip(scenes, episode_ids):
            qs = [encode_query(model, ids) for ids in turns]
            for t, bank in enumerate(episode_states(model, qs)):
                scores = index.score_all(bank, cfg.sharpness, cfg.literal_inverse_n)
                ranks[t].append(target_rank(scores, ids_arr, scene.id))
    elif kind == "rre":
        for scene, turns in zip(scenes, episode_ids):
            flat: list[int] = []
            for t in range(t_turns):
                flat = flat + turns[t]
                state = rre_encode(flat, model.table, model.enc)
                bank = _single_state_bank(state, t + 1)
                scores = index.score_all(bank, cfg.sharpness, cfg.literal_inverse_n)
                ranks[t].append(target_rank(scores, ids_arr, scene.id))
    elif kind == "rankfusion":
        for scene, turns in zip(scenes, episode_ids):
            per_turn: list[dict[int, int]] = []
            for t in range(t_turns):
                state = encode_query(model, turns[t])
                bank = _single_state_bank(state, t + 1)
                scores = index.score_all(bank, cfg.sharpness, cfg.literal_inverse_n)
                turn_ranks = corpus_ranks(scores, ids_arr)
                per_turn.append(dict(zip(ids_arr.tolist(), turn_ranks.tolist())))
                fused = rank_fusion(per_turn)
                position = next(i for i, (image_id, _) in enumerate(fused, start=1)
                                if image_id == scene.id)
                ranks[t].append(position)
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    return ranks


def evaluate_split(model: Model, scenes: list[Scene], t_turns: int | None = None,
                   rng: np.random.Generator | None = None) -> list[TurnMetrics]:
    """Per-turn retrieval metrics over one split, using each scene's
    deterministic evaluation episode (or a seeded sampled one)."""
    if t_turns is None:
        t_turns = model.config.turns
    episode_ids = [episode_ids_for(s, model.vocab, t_turns, rng) for s in scenes]
    ranks = split_turn_ranks(model, scenes, episode_ids)
    return [turn_metrics(t + 1, r) for t, r in enumerate(ranks)]


def summed_recall(metrics: list[TurnMetrics]) -> float:
    return float(sum(m.r10 for m in metrics))


def final_turn_recall(model: Model, scenes: list[Scene], k: int = 10) -> float:
    episode_ids = [episode_ids_for(s, model.vocab, model.config.turns)
                   for s in scenes]
    ranks = split_turn_ranks(model, scenes, episode_ids)
    return recall_at_k(ranks[-1], k)


def mean_episode_reward(model: Model, scenes: list[Scene],
                        episode_ids: list[list[list[int]]] | None = None) -> float:
    """Average over episodes of the summed per-turn similarity between the
    evolving query state and the target image (the quantity the slot
    policy's look-ahead maximizes)."""
    if model.kind != "drilldown":
        raise ValueError("episode reward is defined for the slot model")
    if episode_ids is None:
        episode_ids = [episode_ids_for(s, model.vocab, model.config.turns)
                       for s in scenes]
    cfg = model.config
    totals = []
    with no_grad():
        for scene, turns in zip(scenes, episode_ids):
            target = np.stack([r.feature for r in scene.regions])
            v_target = target @ model.img_w.data.T + model.img_b.data
            qs = [encode_query(model, ids) for ids in turns]
            total = 0.0
            for bank in episode_states(model, qs):
                total += set_image_similarity(bank, v_target, cfg.sharpness,
                                              cfg.literal_inverse_n)
            totals.append(total)
    return float(np.mean(totals))


def write_metrics_csv(metrics: list[TurnMetrics], path) -> None:
    text = metrics_csv(metrics)
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write metrics to {path}: {exc}") from exc
