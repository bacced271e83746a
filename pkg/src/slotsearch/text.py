"""Caption tokenization, vocabulary construction, and integer encoding."""

from __future__ import annotations

import string
from collections import Counter

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
PAD_ID = 0
UNK_ID = 1


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip surrounding ASCII punctuation."""
    out = []
    for raw in text.lower().split():
        tok = raw.strip(string.punctuation)
        if tok:
            out.append(tok)
    return out


class Vocab:
    """Immutable token<->id mapping with reserved ids 0=<pad>, 1=<unk>."""

    def __init__(self, tokens: list[str], min_count: int = 1):
        self.min_count = min_count
        self.id_to_token = [PAD_TOKEN, UNK_TOKEN] + list(tokens)
        self.token_to_id = {tok: i for i, tok in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def encode(self, tokens: list[str]) -> list[int]:
        """Map tokens to ids, unknown tokens to the <unk> id; order preserved."""
        return [self.token_to_id.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: list[int]) -> list[str]:
        out = []
        for i in ids:
            if not 0 <= i < len(self.id_to_token):
                raise ValueError(f"id {i} out of range for vocabulary of {len(self)}")
            out.append(self.id_to_token[i])
        return out

    def to_dict(self) -> dict[str, int]:
        return dict(self.token_to_id)

    @classmethod
    def from_dict(cls, mapping: dict[str, int], min_count: int = 1) -> "Vocab":
        items = sorted(mapping.items(), key=lambda kv: kv[1])
        ids = [i for _, i in items]
        if ids != list(range(len(ids))):
            raise ValueError("vocabulary ids must be 0..V-1 without gaps")
        tokens = [t for t, _ in items]
        if tokens[:2] != [PAD_TOKEN, UNK_TOKEN]:
            raise ValueError("vocabulary must reserve ids 0=<pad>, 1=<unk>")
        return cls(tokens[2:], min_count=min_count)


def build_vocab(captions: list[str], min_count: int = 1) -> Vocab:
    """Count tokens over all captions and keep those seen >= min_count times.

    Ids are assigned in descending count order, ties broken lexicographically,
    so construction is deterministic and independent of caption order.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    if not captions:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    counts: Counter[str] = Counter()
    for cap in captions:
        counts.update(tokenize(cap))
    kept = [(tok, c) for tok, c in counts.items() if c >= min_count]
    kept.sort(key=lambda kv: (-kv[1], kv[0]))
    return Vocab([tok for tok, _ in kept], min_count=min_count)
