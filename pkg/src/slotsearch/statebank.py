"""Slot-state query memory: a bank of M state vectors, the learned
slot-selection policy, the fixed circular schedule used for pretraining,
and the GRU-cell fusion that folds a new query into the chosen slot.

Selection rule: while any slot is still empty, choose uniformly among the
empty ones; once all are occupied, choose from a softmax over a learned
score of each (slot, query) pair.  Inference uses the greedy argmax with
ties resolved to the lowest index; training samples.

This module is the plain-numpy reference path used for evaluation and
serving.  The trainer mirrors the same arithmetic with taped tensors and
is tested for equivalence against this implementation.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .encoder import GRUCell, gru_step
from .grad import ParamStore, Tensor


@dataclass(frozen=True)
class StateSet:
    """Immutable snapshot of the M slot vectors after some number of turns.

    empty_mask is authoritative: a slot that numerically reaches zero
    after updates still counts as occupied.
    """

    slots: np.ndarray        # (M, D)
    empty_mask: np.ndarray   # (M,) bool, True where never updated
    turn: int

    @property
    def m_slots(self) -> int:
        return self.slots.shape[0]

    def occupied(self) -> np.ndarray:
        return ~self.empty_mask


def init_states(m_slots: int, dim: int) -> StateSet:
    if m_slots < 1 or dim < 1:
        raise ValueError(f"need at least one slot and one dimension, got ({m_slots}, {dim})")
    return StateSet(
        slots=np.zeros((m_slots, dim)),
        empty_mask=np.ones(m_slots, dtype=bool),
        turn=0,
    )


@dataclass(frozen=True)
class PolicyMLP:
    """Three-layer ReLU scorer over the concatenation of a slot and a query."""

    W1: Tensor  # (D, 2D)
    b1: Tensor  # (D,)
    W2: Tensor  # (D, D)
    b2: Tensor  # (D,)
    W3: Tensor  # (1, D)
    b3: Tensor  # (1,)

    NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")

    @classmethod
    def create(cls, store: ParamStore, prefix: str, dim: int,
               rng: np.random.Generator) -> "PolicyMLP":
        store.matrix(f"{prefix}.W1", dim, 2 * dim, rng)
        store.vector(f"{prefix}.b1", dim)
        store.matrix(f"{prefix}.W2", dim, dim, rng)
        store.vector(f"{prefix}.b2", dim)
        store.matrix(f"{prefix}.W3", 1, dim, rng)
        store.vector(f"{prefix}.b3", 1)
        return cls.view(store, prefix)

    @classmethod
    def view(cls, store: ParamStore, prefix: str) -> "PolicyMLP":
        return cls(**{name: store[f"{prefix}.{name}"] for name in cls.NAMES})


def policy_score(x: np.ndarray, q: np.ndarray, policy: PolicyMLP) -> float:
    """Score one (slot, query) pair; plain numpy, no gradients."""
    xq = np.concatenate([np.asarray(x, dtype=float), np.asarray(q, dtype=float)])
    h1 = np.maximum(policy.W1.data @ xq + policy.b1.data, 0.0)
    h2 = np.maximum(policy.W2.data @ h1 + policy.b2.data, 0.0)
    return float((policy.W3.data @ h2 + policy.b3.data)[0])


def _softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max()
    e = np.exp(z)
    return e / e.sum()


def selection_distribution(states: StateSet, q: np.ndarray,
                           policy: PolicyMLP) -> np.ndarray:
    """Slot-choice probabilities: uniform over empties if any, else softmax
    over the learned scores of every occupied slot."""
    if states.empty_mask.any():
        dist = states.empty_mask.astype(float)
        return dist / dist.sum()
    scores = np.array([policy_score(x, q, policy) for x in states.slots])
    return _softmax(scores)


def select_slot(states: StateSet, q: np.ndarray, policy: PolicyMLP, mode: str,
                rng: np.random.Generator | None = None) -> tuple[int, np.ndarray]:
    """Pick the slot the next query should update.

    mode="greedy": argmax of the distribution, ties to the lowest index.
    mode="sample": draw from the distribution (requires rng).
    """
    dist = selection_distribution(states, q, policy)
    if mode == "greedy":
        k = int(np.argmax(dist))
    elif mode == "sample":
        if rng is None:
            raise ValueError("sample mode needs an rng")
        k = int(rng.choice(len(dist), p=dist))
    else:
        raise ValueError(f"unknown selection mode {mode!r}")
    return k, dist


def fixed_policy_slot(turn: int, m_slots: int) -> int:
    """Circular schedule for pretraining: turn t >= 1 updates slot (t-1) mod M."""
    if turn < 1:
        raise ValueError(f"turns are 1-based, got {turn}")
    return (turn - 1) % m_slots


def update_slot(states: StateSet, k: int, q: np.ndarray, fusion: GRUCell) -> StateSet:
    """Fold the query into slot k; returns a new StateSet."""
    if not 0 <= k < states.m_slots:
        raise ValueError(f"slot {k} out of range for {states.m_slots} slots")
    new_slot = gru_step(Tensor(np.asarray(q, dtype=float)),
                        Tensor(states.slots[k]), fusion).data
    slots = states.slots.copy()
    slots[k] = new_slot
    mask = states.empty_mask.copy()
    mask[k] = False
    return StateSet(slots=slots, empty_mask=mask, turn=states.turn + 1)


def run_episode(queries: list[np.ndarray], m_slots: int, policy: PolicyMLP,
                fusion: GRUCell, mode: str,
                rng: np.random.Generator | None = None,
                ) -> tuple[list[StateSet], list[int]]:
    """Drive one retrieval episode over already-encoded queries.

    mode is "greedy"/"sample" for the learned policy or "fixed" for the
    circular pretraining schedule.  Returns the trajectory X^1..X^T and
    the slot index chosen at each turn.
    """
    if not queries:
        raise ValueError("episode needs at least one query")
    states = init_states(m_slots, len(queries[0]))
    trajectory: list[StateSet] = []
    actions: list[int] = []
    for t, q in enumerate(queries, start=1):
        if mode == "fixed":
            k = fixed_policy_slot(t, m_slots)
        else:
            k, _ = select_slot(states, q, policy, mode, rng)
        states = update_slot(states, k, q, fusion)
        trajectory.append(states)
        actions.append(k)
    return trajectory, actions
