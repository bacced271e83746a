"""
Synthetic scenes, region features, and dialogue-style captions
==============================================================

Retrieval experiments need images with known content. The corpus generator
builds abstract scenes out of colored shapes, extracts one feature vector
per object region, and writes a sequence of short caption "turns" that
describe the scene one detail at a time — the raw material for simulated
multi-turn search sessions.
"""

import tempfile
from pathlib import Path

import numpy as np

from slotsearch.scenes import CorpusConfig, load_corpus, make_corpus, render_svg, sample_episode

# A corpus is fully described by its config: split sizes, regions per
# scene, caption turns per scene, feature noise, and a seed.
config = CorpusConfig(n_train=30, n_val=10, n_test=10, n_regions=6,
                      t_turns=4, noise=0.05, seed=7)

out = Path(tempfile.mkdtemp()) / "corpus"
manifest = make_corpus(config, out)
print("splits written (train/val/test):", manifest["counts"])

# Each scene carries one feature vector per region plus ordered captions,
# each caption tied to the region it describes.
scenes = load_corpus(out / "train.jsonl")
scene = scenes[0]
features = np.stack([r.feature for r in scene.regions])
print("scene id:", scene.id)
print("region feature block:", features.shape)
for i, cap in enumerate(scene.captions, start=1):
    print(f"  caption {i} (region {cap.region}): {cap.text}")

# Scenes render to SVG so a browser (or the retrieval service) can show
# exactly what the features describe.
svg = render_svg(scene)
print("svg starts with:", svg[:60], "...")

# Simulated sessions don't always follow caption order. The "train"
# sampler shuffles caption choice and order per episode while "eval"
# uses a fixed per-scene permutation, so training sees varied query
# streams but evaluation is repeatable.
rng = np.random.default_rng(scene.seed)
train_order = sample_episode(scene, 3, "train", rng)
eval_order = sample_episode(scene, 3, "eval")
print("one training episode  :", train_order)
print("the evaluation episode:", eval_order)
