"""
Query encoding, region projection, and attention-based scoring
==============================================================

Text queries and image regions live in different spaces. A GRU encoder
turns a token sequence into a state-sized vector; a linear projection
lifts raw region features into the same space; and an attention-weighted
cosine score says how well a query state matches an image's regions.
"""

import tempfile
from pathlib import Path

import numpy as np

from slotsearch.evaluate import encode_query, query_to_ids
from slotsearch.model import TrainConfig, init_model
from slotsearch.scenes import CorpusConfig, feature_dim, load_corpus, make_corpus
from slotsearch.simrank import (
    RetrievalIndex,
    rank_corpus,
    region_attention,
    state_image_similarity,
)
from slotsearch.statebank import init_states, update_slot
from slotsearch.text import build_vocab

# Build a small corpus and a vocabulary over its training captions.
config = CorpusConfig(n_train=40, n_val=10, n_test=10, n_regions=5, t_turns=4, seed=3)
out = Path(tempfile.mkdtemp()) / "corpus"
make_corpus(config, out)
train = load_corpus(out / "train.jsonl")
vocab = build_vocab([c.text for s in train for c in s.captions])
print("vocabulary size:", len(vocab))

# An untrained model still wires everything together: word embeddings,
# the GRU query encoder, and the region projection.
model = init_model(TrainConfig(model="drilldown", slots=3, state_dim=16, embed_dim=8),
                   vocab, feature_dim(config), np.random.default_rng(0))

# Encode one caption into the shared space. Unknown words fall back to
# a dedicated UNK id, so arbitrary user text is always encodable.
caption = train[0].captions[0].text
ids = query_to_ids(vocab, caption)
q = encode_query(model, ids)
print(f"query {caption!r} -> ids {ids} -> vector of shape {q.shape}")

# Project the regions of one scene into the same space.
scene = train[0]
raw = np.stack([r.feature for r in scene.regions])
V = raw @ model.img_w.data.T + model.img_b.data
print("projected regions:", V.shape)

# The similarity between a query state and an image is an attention-
# weighted sum of per-region cosines: sharp attention concentrates on
# the best-matching region instead of averaging the whole scene.
att = region_attention(q, V, lam=9.0)
sim = state_image_similarity(q, V, lam=9.0)
print("attention over regions:", np.round(att, 3))
print("state-image similarity:", round(sim, 4))

# Corpus ranking runs the same score against every image at once.
index = RetrievalIndex.from_scenes(train, model.img_w.data, model.img_b.data)
states = update_slot(init_states(3, model.state_dim), 0, q, model.fuse)
ranking, rank = rank_corpus(states, index, target_id=scene.id)
print(f"target scene {scene.id} ranks {rank} of {len(index)} (untrained weights)")
print("top three:", [(img, round(s, 4)) for img, s in ranking[:3]])
