"""Word embedding, GRU sentence encoder, and linear region projection.

All functions take and return ``grad.Tensor`` values so the same code
serves differentiable training (inside a tape) and plain inference.
Single vectors and batched row-matrices both work: gate math uses
row-vector linear maps, so an input of shape (E,) or (B, E) against a
hidden state of shape (D,) or (B, D) folds identically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import grad as G
from .grad import ParamStore, Tensor


@dataclass(frozen=True)
class GRUCell:
    """Gated recurrent unit with a separate bias on the gated hidden term.

    Gate convention::

        r  = sigmoid(W_r e + U_r h + b_r)
        z  = sigmoid(W_z e + U_z h + b_z)
        n  = tanh(W_n e + b_n + r * (U_n h + b_u))
        h' = (1 - z) * n + z * h
    """

    W_r: Tensor
    U_r: Tensor
    b_r: Tensor
    W_z: Tensor
    U_z: Tensor
    b_z: Tensor
    W_n: Tensor
    U_n: Tensor
    b_n: Tensor
    b_u: Tensor

    NAMES = ("W_r", "U_r", "b_r", "W_z", "U_z", "b_z", "W_n", "U_n", "b_n", "b_u")

    @classmethod
    def create(cls, store: ParamStore, prefix: str, in_dim: int, hidden_dim: int,
               rng: np.random.Generator) -> "GRUCell":
        for gate in ("r", "z", "n"):
            store.matrix(f"{prefix}.W_{gate}", hidden_dim, in_dim, rng)
            store.matrix(f"{prefix}.U_{gate}", hidden_dim, hidden_dim, rng)
            store.vector(f"{prefix}.b_{gate}", hidden_dim)
        store.vector(f"{prefix}.b_u", hidden_dim)
        return cls.view(store, prefix)

    @classmethod
    def view(cls, store: ParamStore, prefix: str) -> "GRUCell":
        return cls(**{name: store[f"{prefix}.{name}"] for name in cls.NAMES})

    @property
    def hidden_dim(self) -> int:
        return self.W_r.shape[0]

    @property
    def in_dim(self) -> int:
        return self.W_r.shape[1]


def gru_step(e: Tensor, h: Tensor, cell: GRUCell) -> Tensor:
    """One GRU update; e and h may be single vectors or matching row batches."""
    r = G.sigmoid(G.linear(e, cell.W_r) + G.linear(h, cell.U_r) + cell.b_r)
    z = G.sigmoid(G.linear(e, cell.W_z) + G.linear(h, cell.U_z) + cell.b_z)
    n = G.tanh(G.linear(e, cell.W_n) + cell.b_n + r * (G.linear(h, cell.U_n) + cell.b_u))
    return (1.0 - z) * n + z * h


def embed_words(table: Tensor, ids) -> Tensor:
    """Rows of word vectors for a sequence of ids; table is (E, vocab)."""
    return G.embed_lookup(table, ids)


def gru_fold(embeds: Tensor, cell: GRUCell) -> list[Tensor]:
    """Fold from a zero state over rows of embeds; returns all hidden states."""
    h = Tensor(np.zeros(cell.hidden_dim))
    states = []
    for k in range(embeds.shape[0]):
        h = gru_step(G.take_row(embeds, k), h, cell)
        states.append(h)
    return states


def encode_sentence(ids, table: Tensor, cell: GRUCell) -> Tensor:
    """Final GRU state over the embedded id sequence, from a zero start."""
    if len(ids) == 0:
        raise ValueError("cannot encode an empty id sequence")
    return gru_fold(embed_words(table, ids), cell)[-1]


def encode_sentence_trace(ids, table: Tensor, cell: GRUCell) -> list[Tensor]:
    """All intermediate states h_1..h_L of the sentence fold."""
    if len(ids) == 0:
        raise ValueError("cannot encode an empty id sequence")
    return gru_fold(embed_words(table, ids), cell)


def encode_batch(ids_padded: np.ndarray, lengths: np.ndarray, table: Tensor,
                 cell: GRUCell) -> Tensor:
    """Encode B sequences at once; returns (B, D) of final states.

    ids_padded is (B, L) right-padded with the pad id; rows beyond a
    sequence's length leave its state untouched (and contribute no
    gradient, because the carry mask multiplies them by zero).
    """
    B, L = ids_padded.shape
    if L == 0 or (lengths <= 0).any():
        raise ValueError("cannot encode an empty id sequence")
    h = Tensor(np.zeros((B, cell.hidden_dim)))
    for k in range(L):
        e = G.embed_lookup(table, ids_padded[:, k])
        h_new = gru_step(e, h, cell)
        mask = Tensor((k < lengths).astype(float).reshape(B, 1))
        h = mask * h_new + (1.0 - mask) * h
    return h


def project_regions(raw, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine projection of raw region features: rows of raw @ W.T + b."""
    return G.linear(G.as_tensor(raw), weight) + bias
