"""
Two-phase training on a miniature corpus
========================================

Training happens in two phases. Pretraining teaches the encoders and the
similarity to separate targets from distractors with a triplet loss over
in-batch hard negatives, while slot choice follows the fixed circular
schedule. The joint phase then switches to sampled slot choices and adds
a look-ahead cross-entropy that teaches the policy which slot an incoming
query should refine. This demo runs both phases small enough to watch.
"""

import tempfile
from pathlib import Path

import numpy as np

from slotsearch.evaluate import evaluate_split, final_turn_recall
from slotsearch.model import TrainConfig, load_checkpoint, save_checkpoint
from slotsearch.scenes import CorpusConfig, load_corpus, make_corpus
from slotsearch.trainer import joint_train, pretrain

# A corpus small enough that every epoch takes well under a second.
work = Path(tempfile.mkdtemp())
corpus = work / "corpus"
make_corpus(CorpusConfig(n_train=24, n_val=8, n_test=8, n_regions=4,
                         t_turns=3, seed=11), corpus)

# The config names the model kind and every hyperparameter in one place.
config = TrainConfig(model="drilldown", slots=2, state_dim=12, embed_dim=8,
                     turns=3, batch_size=8, pretrain_epochs=4, joint_epochs=3,
                     lr=1e-3, seed=5)

# Phase one: triplet pretraining with the circular slot schedule.
# The returned checkpoint is the best-validation epoch, not the last one.
print("--- pretraining ---")
pre = pretrain(config, corpus, log=lambda *_: None)
print("best epoch:", pre.epoch)
for entry in pre.val_history:
    print(f"  epoch {entry['epoch']}: mean loss {entry['mean_loss']:.4f} "
          f"val {entry['val_metric']:.3f}")

# Phase two: joint refinement of the same parameters. Episodes now sample
# slot choices from the learned policy, and the loss adds a policy term
# supervised by a sampled look-ahead over possible slot assignments.
print("--- joint refinement ---")
joint = joint_train(pre, config, corpus, log=lambda *_: None)
print("best epoch:", joint.epoch)
for entry in joint.val_history:
    policy = entry["mean_policy_loss"]
    tag = "(pretrained init)" if policy is None else f"policy {policy:.4f}"
    print(f"  epoch {entry['epoch']}: val {entry['val_metric']:.3f} {tag}")

# Checkpoints round-trip through JSON byte-for-byte.
path = work / "model.json"
save_checkpoint(joint, path)
model = load_checkpoint(path).to_model()

# Evaluate on held-out scenes: recall at several cutoffs per session turn.
test = load_corpus(corpus / "test.jsonl")
for row in evaluate_split(model, test):
    print(f"turn {row.turn}: R@1 {row.r1:.2f} R@5 {row.r5:.2f} "
          f"R@10 {row.r10:.2f} mean rank {row.mean_rank:.1f}")
print("final-turn R@10:", final_turn_recall(model, test))
