"""Cross-modal similarity between slot states and region sets, corpus
ranking, and recall metrics.

A state vector is compared to an image by attending over the image's
projected regions: cosine per (state, region) pair, attention weights
from a sharpened softmax over those cosines (sharpness ``lam``), and the
attention-weighted sum of cosines as the state-image score.  The
set-level score averages over occupied slots only; a bank with no
occupied slot scores 0.

The literal 1/N factor over regions is available behind
``literal_inverse_n`` (default off).  It rescales every score by the
same constant, so rankings are unchanged either way; the default keeps
scores on the cosine scale, where a fixed triplet margin is meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .statebank import StateSet

DEFAULT_SHARPNESS = 9.0
_EPS = 1e-8


def _unit_rows(a: np.ndarray) -> np.ndarray:
    norms = np.sqrt((a * a).sum(axis=-1, keepdims=True))
    return a / np.maximum(norms, _EPS)


def pair_cosine(x: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity with eps-guarded norms; zero vectors score 0."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    nx = max(np.linalg.norm(x), _EPS)
    nv = max(np.linalg.norm(v), _EPS)
    return float(x @ v / (nx * nv))


def region_attention(x: np.ndarray, V: np.ndarray,
                     lam: float = DEFAULT_SHARPNESS) -> np.ndarray:
    """Attention of one state over an image's N regions."""
    V = np.asarray(V, dtype=float)
    if V.ndim != 2 or V.shape[0] == 0:
        raise ValueError(f"region matrix must be non-empty 2-D, got {V.shape}")
    if not lam > 0:
        raise ValueError(f"sharpness must be positive, got {lam}")
    cos = _unit_rows(V) @ (np.asarray(x, float) / max(np.linalg.norm(x), _EPS))
    z = lam * cos
    e = np.exp(z - z.max())
    return e / e.sum()


def state_image_similarity(x: np.ndarray, V: np.ndarray,
                           lam: float = DEFAULT_SHARPNESS,
                           literal_inverse_n: bool = False) -> float:
    """Attention-weighted sum of state-region cosines."""
    V = np.asarray(V, dtype=float)
    cos = _unit_rows(V) @ (np.asarray(x, float) / max(np.linalg.norm(x), _EPS))
    att = region_attention(x, V, lam)
    s = float(att @ cos)
    if literal_inverse_n:
        s /= V.shape[0]
    return s


def set_image_similarity(states: StateSet, V: np.ndarray,
                         lam: float = DEFAULT_SHARPNESS,
                         literal_inverse_n: bool = False) -> float:
    """Mean state-image similarity over occupied slots; 0 if none occupied."""
    occupied = states.occupied()
    if not occupied.any():
        return 0.0
    vals = [state_image_similarity(x, V, lam, literal_inverse_n)
            for x in states.slots[occupied]]
    return float(np.mean(vals))


class RetrievalIndex:
    """Immutable id -> projected-region-matrix store for corpus ranking."""

    def __init__(self, ids: list[int], matrices: list[np.ndarray]):
        if not ids:
            raise ValueError("retrieval index needs at least one image")
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate image ids in index")
        shapes = {m.shape for m in matrices}
        if len(shapes) != 1:
            raise ValueError(f"all images must share one region shape, got {shapes}")
        self.ids = list(ids)
        self._pos = {img_id: i for i, img_id in enumerate(ids)}
        self._V = np.stack([np.asarray(m, dtype=float) for m in matrices])
        self._Vn = _unit_rows(self._V)

    @classmethod
    def from_scenes(cls, scenes, weight: np.ndarray, bias: np.ndarray) -> "RetrievalIndex":
        """Project every scene's raw region features through W, b."""
        ids = [s.id for s in scenes]
        mats = [np.asarray([r.feature for r in s.regions]) @ weight.T + bias
                for s in scenes]
        return cls(ids, mats)

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, img_id: int) -> bool:
        return img_id in self._pos

    @property
    def n_regions(self) -> int:
        return self._V.shape[1]

    def matrix(self, img_id: int) -> np.ndarray:
        return self._V[self._pos[img_id]]

    def score_all(self, states: StateSet, lam: float = DEFAULT_SHARPNESS,
                  literal_inverse_n: bool = False) -> np.ndarray:
        """set_image_similarity against every image, aligned with self.ids."""
        occupied = states.occupied()
        n_images = len(self.ids)
        if not occupied.any():
            return np.zeros(n_images)
        X = _unit_rows(states.slots[occupied])          # (m, D)
        cos = np.einsum("md,ind->imn", X, self._Vn)      # (images, m, N)
        z = lam * cos
        z -= z.max(axis=2, keepdims=True)
        e = np.exp(z)
        att = e / e.sum(axis=2, keepdims=True)
        sims = (att * cos).sum(axis=2)                   # (images, m)
        if literal_inverse_n:
            sims = sims / self.n_regions
        return sims.mean(axis=1)


def rank_corpus(states: StateSet, index: RetrievalIndex, target_id: int,
                lam: float = DEFAULT_SHARPNESS,
                literal_inverse_n: bool = False,
                ) -> tuple[list[tuple[int, float]], int]:
    """Rank every image for a state bank.

    Returns (ordered [(image id, score)] best first, 1-based rank of the
    target).  Order is descending score with ties broken by ascending id.
    """
    if target_id not in index:
        raise ValueError(f"target image {target_id} not in index")
    scores = index.score_all(states, lam, literal_inverse_n)
    order = sorted(range(len(index.ids)),
                   key=lambda i: (-scores[i], index.ids[i]))
    ranking = [(index.ids[i], float(scores[i])) for i in order]
    rank = next(pos + 1 for pos, (img_id, _) in enumerate(ranking)
                if img_id == target_id)
    return ranking, rank


def target_rank(scores: np.ndarray, ids, target_id: int) -> int:
    """1-based rank of target under descending score, ties by ascending id.

    Same ordering as rank_corpus, without materializing the full ranking.
    """
    ids = np.asarray(list(ids))
    where = np.nonzero(ids == target_id)[0]
    if where.size != 1:
        raise ValueError(f"target image {target_id} not in index")
    pos = int(where[0])
    s = scores[pos]
    better = int((scores > s).sum())
    tied_before = int(((scores == s) & (ids < target_id)).sum())
    return 1 + better + tied_before


def recall_at_k(target_ranks, k: int) -> float:
    """Fraction of episodes whose target rank is within the top k."""
    ranks = np.asarray(list(target_ranks))
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if ranks.size == 0:
        raise ValueError("no ranks given")
    if (ranks < 1).any():
        raise ValueError("ranks are 1-based")
    return float((ranks <= k).mean())


@dataclass(frozen=True)
class TurnMetrics:
    turn: int
    r1: float
    r5: float
    r10: float
    mean_rank: float


def turn_metrics(turn: int, target_ranks) -> TurnMetrics:
    return TurnMetrics(
        turn=turn,
        r1=recall_at_k(target_ranks, 1),
        r5=recall_at_k(target_ranks, 5),
        r10=recall_at_k(target_ranks, 10),
        mean_rank=float(np.mean(list(target_ranks))),
    )


def metrics_csv(rows: list[TurnMetrics]) -> str:
    lines = ["turn,r1,r5,r10,mean_rank"]
    for m in rows:
        lines.append(f"{m.turn},{m.r1:.6f},{m.r5:.6f},{m.r10:.6f},{m.mean_rank:.6f}")
    return "\n".join(lines) + "\n"
