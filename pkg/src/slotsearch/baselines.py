"""Comparison encoders that share the tokenizer, sentence encoder, region
projection, and similarity machinery with the slot model.

Three single-state alternatives are covered:

* a context fold whose state is scored against one global image vector
  (projection of the mean raw region feature),
* the same fold scored against regions with attention, and
* a flat recurrence over the concatenation of every turn's tokens.

Rank fusion is the non-recurrent alternative: each turn is ranked
independently by a single-turn model and the per-image ranks are averaged.
"""

from __future__ import annotations

import numpy as np

from .encoder import GRUCell, encode_sentence, gru_step
from .grad import Tensor


def hre_encode(query_vecs: list[np.ndarray], fuse: GRUCell) -> np.ndarray:
    """Fold the context recurrence over per-turn sentence vectors, starting
    from zero.  Returns the final context state."""
    if not query_vecs:
        raise ValueError("context fold needs at least one query")
    x = np.zeros(fuse.hidden_dim)
    for q in query_vecs:
        x = gru_step(Tensor(np.asarray(q, dtype=float)), Tensor(x), fuse).data
    return x


def rre_encode(token_ids: list[int], table: Tensor, enc: GRUCell) -> np.ndarray:
    """Single flat recurrence over one token sequence (typically the
    concatenation of several turns' tokens, no separator)."""
    if not token_ids:
        raise ValueError("cannot encode an empty token sequence")
    return encode_sentence(token_ids, table, enc).data


def global_image_vectors(scenes, weight: np.ndarray,
                         bias: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One projected vector per scene: mean of the raw region features,
    through the shared linear projection.  Returns (ids, (S, D) matrix)."""
    if not scenes:
        raise ValueError("no scenes to index")
    ids = np.array([s.id for s in scenes])
    means = np.stack([np.mean([r.feature for r in s.regions], axis=0)
                      for s in scenes])
    return ids, means @ weight.T + bias


def corpus_ranks(scores: np.ndarray, ids: np.ndarray) -> np.ndarray:
    """1-based rank of every image under one score vector (descending
    score, ties broken by ascending id).  ranks[i] ranks ids[i]."""
    scores = np.asarray(scores, dtype=float)
    ids = np.asarray(ids)
    if scores.shape != ids.shape or scores.ndim != 1 or scores.size == 0:
        raise ValueError("scores and ids must be matching non-empty vectors")
    order = np.lexsort((ids, -scores))
    ranks = np.empty(len(ids), dtype=int)
    ranks[order] = np.arange(1, len(ids) + 1)
    return ranks


def rank_fusion(per_turn_ranks: list[dict[int, int]]) -> list[tuple[int, float]]:
    """Average each image's rank across turns.  Input: one {image id: rank}
    mapping per turn, all over the same corpus.  Output: (id, mean rank)
    pairs sorted by ascending mean, ties by ascending id."""
    if not per_turn_ranks:
        raise ValueError("rank fusion needs at least one turn")
    base = per_turn_ranks[0].keys()
    if not base:
        raise ValueError("rank fusion needs a non-empty corpus")
    for turn, ranks in enumerate(per_turn_ranks[1:], start=2):
        if ranks.keys() != base:
            raise ValueError(f"turn {turn} ranks a different corpus")
    n_turns = len(per_turn_ranks)
    fused = [(image_id, sum(r[image_id] for r in per_turn_ranks) / n_turns)
             for image_id in base]
    fused.sort(key=lambda pair: (pair[1], pair[0]))
    return fused
