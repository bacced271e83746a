"""Model assembly and checkpoint serialization.

Five retrieval model kinds share one parameter namespace:

- ``drilldown``: M-slot query memory with a learned slot-selection policy.
- ``hre``: single recurrent context state scored against one global image
  vector (mean of raw region features, linearly projected).
- ``rhre``: single recurrent context state scored against regions with
  attention (equals drilldown with M=1, minus the policy machinery).
- ``rre``: one flat GRU over the concatenation of all turns' tokens.
- ``rankfusion``: single-turn encoder; multi-turn retrieval fuses the
  per-turn ranks downstream.

Checkpoints are single JSON documents with fixed parameter names, so any
kind can be rebuilt from file alone.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .encoder import GRUCell
from .grad import ParamStore
from .statebank import PolicyMLP
from .text import Vocab

MODEL_KINDS = ("drilldown", "hre", "rhre", "rre", "rankfusion")
CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    model: str = "drilldown"
    margin: float = 0.2
    sharpness: float = 9.0
    discount: float = 1.0
    tradeoff: float = 0.1
    lr: float = 2e-4
    batch_size: int = 32
    clip_norm: float = 10.0
    pretrain_epochs: int = 60
    joint_epochs: int = 30
    turns: int = 5
    slots: int = 3
    state_dim: int = 48
    embed_dim: int = 32
    min_count: int = 1
    literal_inverse_n: bool = False
    seed: int = 0
    phase: str = "pretrain"  # pretrain | joint; decides the eval-time policy

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.model!r}")
        if not self.margin > 0:
            raise ValueError("margin must be positive")
        if not 0.0 <= self.discount <= 1.0:
            raise ValueError("discount must lie in [0, 1]")
        if self.tradeoff < 0:
            raise ValueError("tradeoff must be >= 0")
        if self.batch_size < 2:
            raise ValueError("batch size must be >= 2 (hard negatives need company)")
        if min(self.turns, self.slots, self.state_dim, self.embed_dim) < 1:
            raise ValueError("turns, slots, and dimensions must be >= 1")
        if not self.sharpness > 0:
            raise ValueError("sharpness must be positive")
        if self.phase not in ("pretrain", "joint"):
            raise ValueError(f"unknown phase {self.phase!r}")


def _kind_uses_fusion(kind: str) -> bool:
    return kind in ("drilldown", "hre", "rhre")


def _kind_uses_policy(kind: str) -> bool:
    return kind == "drilldown"


class Model:
    """Parameter store plus typed views for one model kind."""

    def __init__(self, config: TrainConfig, vocab: Vocab, feature_dim: int,
                 store: ParamStore):
        self.config = config
        self.vocab = vocab
        self.feature_dim = feature_dim
        self.store = store
        self.table = store["embed.W_E"]
        self.enc = GRUCell.view(store, "enc")
        self.img_w = store["img.W_I"]
        self.img_b = store["img.b_I"]
        self.fuse = GRUCell.view(store, "fuse") if _kind_uses_fusion(config.model) else None
        self.policy = PolicyMLP.view(store, "policy") if _kind_uses_policy(config.model) else None

    @property
    def kind(self) -> str:
        return self.config.model

    @property
    def state_dim(self) -> int:
        return self.config.state_dim

    @property
    def effective_slots(self) -> int:
        return self.config.slots if self.kind == "drilldown" else 1


def init_model(config: TrainConfig, vocab: Vocab, feature_dim: int,
               rng: np.random.Generator) -> Model:
    """Fresh parameters for a model kind, in canonical name order."""
    store = ParamStore()
    d, e = config.state_dim, config.embed_dim
    store.matrix("embed.W_E", e, len(vocab), rng)
    GRUCell.create(store, "enc", e, d, rng)
    store.matrix("img.W_I", d, feature_dim, rng)
    store.vector("img.b_I", d)
    if _kind_uses_fusion(config.model):
        GRUCell.create(store, "fuse", d, d, rng)
    if _kind_uses_policy(config.model):
        PolicyMLP.create(store, "policy", d, rng)
    return Model(config, vocab, feature_dim, store)


@dataclass
class Checkpoint:
    config: TrainConfig
    vocab: Vocab
    params: ParamStore
    epoch: int
    val_history: list = field(default_factory=list)

    def to_model(self) -> Model:
        feature_dim = self.params["img.W_I"].shape[1]
        return Model(self.config, self.vocab, feature_dim, self.params)


def save_checkpoint(cp: Checkpoint, path) -> None:
    doc = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": asdict(cp.config),
        "vocab": cp.vocab.to_dict(),
        "epoch": cp.epoch,
        "val_history": cp.val_history,
        "params": cp.params.state_dict(),
    }
    path = Path(path)
    try:
        with open(path, "w") as fh:
            json.dump(doc, fh, separators=(",", ":"))
    except OSError as exc:
        raise OSError(f"failed writing checkpoint {path}: {exc}") from exc


def _expected_param_names(config: TrainConfig) -> list[str]:
    names = ["embed.W_E"]
    names += [f"enc.{n}" for n in GRUCell.NAMES]
    names += ["img.W_I", "img.b_I"]
    if _kind_uses_fusion(config.model):
        names += [f"fuse.{n}" for n in GRUCell.NAMES]
    if _kind_uses_policy(config.model):
        names += [f"policy.{n}" for n in PolicyMLP.NAMES]
    return names


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise OSError(f"failed reading checkpoint {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValueError(f"checkpoint {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ValueError(f"checkpoint {path}: expected a JSON object")
    version = doc.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(
            f"checkpoint {path}: format_version {version!r} unsupported "
            f"(expected {CHECKPOINT_FORMAT_VERSION})")
    for key in ("config", "vocab", "epoch", "val_history", "params"):
        if key not in doc:
            raise ValueError(f"checkpoint {path}: missing field {key!r}")
    try:
        config = TrainConfig(**doc["config"])
    except TypeError as exc:
        raise ValueError(f"checkpoint {path}: config field mismatch: {exc}") from exc
    vocab = Vocab.from_dict(doc["vocab"], min_count=config.min_count)
    params = ParamStore.from_state_dict(doc["params"])
    for name in _expected_param_names(config):
        if name not in params:
            raise ValueError(f"checkpoint {path}: missing parameter {name!r}")
    table = params["embed.W_E"]
    if table.shape[1] != len(vocab):
        raise ValueError(
            f"checkpoint {path}: embedding width {table.shape[1]} != vocab size {len(vocab)}")
    return Checkpoint(config=config, vocab=vocab, params=params,
                      epoch=int(doc["epoch"]), val_history=doc["val_history"])
