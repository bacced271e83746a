"""Self-contained battery of finite-difference gradient checks.

Covers every differentiable operation the models use, composite recurrent
chains, and the full pretraining loss on a miniature instance.  Each check
returns its max relative error; the whole battery is the backing for the
``gradcheck`` command and runs in seconds.
"""

from __future__ import annotations

import numpy as np

from . import grad as G
from .encoder import GRUCell, encode_sentence
from .grad import ParamStore, Tensor, grad_check, uniform_init
from .model import TrainConfig, init_model
from .text import Vocab
from .trainer import Batch, drilldown_forward, episode_loss, triplet_loss_batch

TOLERANCE = 1e-4


def _elementwise_checks(rng: np.random.Generator) -> dict[str, float]:
    out = {}
    store = ParamStore()
    x = store.add("x", rng.normal(size=(3, 4)) * 0.5 + 1.5)  # positive data
    y = store.add("y", rng.normal(size=(3, 4)) * 0.5)
    v = store.add("v", rng.normal(size=4))

    cases = {
        "add_broadcast": lambda: G.tsum(x + v),
        "sub": lambda: G.tsum(x - y),
        "mul": lambda: G.tsum(x * y),
        "relu": lambda: G.tsum(G.relu(y + 0.4)),  # inputs away from the kink
        "sigmoid": lambda: G.tsum(G.sigmoid(y)),
        "tanh": lambda: G.tsum(G.tanh(y)),
        "exp": lambda: G.tsum(G.exp(y)),
        "log": lambda: G.tsum(G.log(x)),
        "tmean": lambda: G.tmean(x * y),
        "sum_axis": lambda: G.tsum(G.tsum(x, axis=0) * v),
        # modest logit spread: at sharpness 9, near-saturated rows push true
        # gradients below what central differences can resolve
        "softmax_sharp": lambda: G.tsum(G.softmax_sharp(y * 0.35, 9.0, axis=1) * x),
        "log_softmax": lambda: G.tsum(G.log_softmax(y, axis=1) * x),
        "l2_normalize": lambda: G.tsum(G.l2_normalize(x) * y),
        "reshape_transpose": lambda: G.tsum(G.transpose(G.reshape(x, (4, 3))) * y),
        "concat": lambda: G.tsum(G.concat([x, y], axis=1) * G.concat([y, x], axis=1)),
    }
    for name, f in cases.items():
        out[name] = grad_check(f, store.tensors())
    return out


def _linear_checks(rng: np.random.Generator) -> dict[str, float]:
    out = {}
    store = ParamStore()
    w = store.add("w", rng.normal(size=(3, 4)))
    a = store.add("a", rng.normal(size=(2, 4)))
    b = store.add("b", rng.normal(size=(4, 3)))
    out["matmul"] = grad_check(lambda: G.tsum(a @ b), store.tensors())
    out["linear"] = grad_check(lambda: G.tsum(G.linear(a, w)), store.tensors())
    return out


def _gather_checks(rng: np.random.Generator) -> dict[str, float]:
    out = {}
    store = ParamStore()
    table = store.add("table", rng.normal(size=(3, 5)))
    x = store.add("x", rng.normal(size=(4, 3)))
    ids = [1, 4, 1, 0]
    out["embed_lookup"] = grad_check(
        lambda: G.tsum(G.embed_lookup(table, ids) * 0.7), store.tensors())
    out["take_row"] = grad_check(lambda: G.tsum(G.take_row(x, 2)), store.tensors())
    out["take_flat"] = grad_check(
        lambda: G.tsum(G.take_flat(x, np.array([0, 5, 5, 11]))), store.tensors())
    out["stack_rows"] = grad_check(
        lambda: G.tsum(G.stack_rows([G.take_row(x, 0), G.take_row(x, 2)]) * 0.3),
        store.tensors())
    return out


def _recurrent_check(rng: np.random.Generator) -> dict[str, float]:
    store = ParamStore()
    table = store.add("table", uniform_init(rng, 3, 6))
    enc = GRUCell.create(store, "enc", 3, 4, rng)
    ids = [2, 5, 1, 4, 0]

    def f():
        h = encode_sentence(ids, table, enc)
        return G.tsum(h * h)

    return {"gru_sentence": grad_check(f, store.tensors())}


def _loss_checks(rng: np.random.Generator) -> dict[str, float]:
    store = ParamStore()
    store.add("sims", rng.normal(size=(3, 3)) * 0.3)
    return {"triplet_loss": grad_check(
        lambda: triplet_loss_batch(store["sims"], 0.37), store.tensors())}


def _end_to_end_check(rng: np.random.Generator) -> dict[str, float]:
    vocab = Vocab(["red", "blue", "circle", "square", "top", "left"])
    config = TrainConfig(model="drilldown", slots=2, turns=2, state_dim=4,
                         embed_dim=3, batch_size=2)
    model = init_model(config, vocab, 5, np.random.default_rng(0))
    ids = [[[int(w) for w in rng.integers(0, 8, size=3)] for _ in range(2)]
           for _ in range(2)]
    batch = Batch(query_ids=ids, features=rng.normal(size=(2, 3, 5)),
                  scene_ids=[0, 1])

    def f():
        result = drilldown_forward(model, batch, "fixed", None)
        return episode_loss(result, 0.2)

    return {"pretraining_loss": grad_check(f, model.store.tensors())}


def gradient_suite(seed: int = 17) -> dict[str, float]:
    """Run every check; returns {check name: max relative error}."""
    rng = np.random.default_rng(seed)
    results: dict[str, float] = {}
    results.update(_elementwise_checks(rng))
    results.update(_linear_checks(rng))
    results.update(_gather_checks(rng))
    results.update(_recurrent_check(rng))
    results.update(_loss_checks(rng))
    results.update(_end_to_end_check(rng))
    return results
