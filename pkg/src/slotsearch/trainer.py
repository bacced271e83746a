"""Training: triplet loss with in-batch hard negatives, fixed-policy
pretraining, look-ahead action-value estimation, the policy cross-entropy,
and the joint phase that optimizes both together.

Both phases run the same batched, taped forward pass.  The pretraining
phase drives slot updates with the circular schedule; the joint phase
samples slot choices from the learned policy, supervises the policy with
the argmax of sampled look-ahead returns, and weights that term by the
trade-off factor.  Look-ahead rollouts are plain numpy (no tape), so
reward values can never leak gradients into the encoders.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import grad as G
from .encoder import encode_batch, gru_step, project_regions
from .grad import AdamState, ParamStore, Tape, Tensor, adam_step, clip_global_norm, global_norm, no_grad
from .model import Checkpoint, Model, TrainConfig, init_model
from .scenes import Scene, load_corpus, sample_episode
from .simrank import recall_at_k, set_image_similarity
from .statebank import PolicyMLP, StateSet, fixed_policy_slot, select_slot, update_slot
from .text import build_vocab, tokenize


# ---------------------------------------------------------------------------
# batches

@dataclass
class Batch:
    """One training batch: per-example, per-turn query id sequences plus
    the raw region features of each example's target image."""

    query_ids: list[list[list[int]]]   # [example][turn] -> token ids
    features: np.ndarray               # (B, N, F)
    scene_ids: list[int]

    @property
    def size(self) -> int:
        return len(self.query_ids)

    @property
    def turns(self) -> int:
        return len(self.query_ids[0])


def make_batch(scenes: list[Scene], ids_of: dict[str, list[int]], t_turns: int,
               rng: np.random.Generator) -> Batch:
    episodes = [sample_episode(s, t_turns, "train", rng) for s in scenes]
    return Batch(
        query_ids=[[ids_of[text] for text in ep] for ep in episodes],
        features=np.stack([[r.feature for r in s.regions] for s in scenes]),
        scene_ids=[s.id for s in scenes],
    )


def _pad(seqs: list[list[int]]) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([len(s) for s in seqs])
    out = np.zeros((len(seqs), int(lengths.max())), dtype=int)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
    return out, lengths


def _encode_turn(model: Model, batch: Batch, turn: int) -> Tensor:
    padded, lengths = _pad([ex[turn] for ex in batch.query_ids])
    return encode_batch(padded, lengths, model.table, model.enc)


# ---------------------------------------------------------------------------
# losses

def triplet_loss_batch(sims: Tensor, margin: float) -> Tensor:
    """Hinge loss over a (B, B) state-image score matrix whose diagonal
    holds the positives.  For each example the hardest in-batch negative
    image and hardest negative state are chosen by value; gradients flow
    through the gathered entries only."""
    if sims.ndim != 2 or sims.shape[0] != sims.shape[1]:
        raise ValueError(f"similarity matrix must be square, got {sims.shape}")
    B = sims.shape[0]
    if B < 2:
        raise ValueError("hard negatives need a batch of at least 2")
    S = sims.data
    masked = S.copy()
    np.fill_diagonal(masked, -np.inf)
    hardest_img = masked.argmax(axis=1)    # per example (row): worst other image
    hardest_state = masked.argmax(axis=0)  # per image (column): worst other state
    idx = np.arange(B)
    pos = G.take_flat(sims, idx * B + idx)
    neg_img = G.take_flat(sims, idx * B + hardest_img)
    neg_state = G.take_flat(sims, hardest_state * B + idx)
    losses = G.relu(neg_img - pos + margin) + G.relu(neg_state - pos + margin)
    return G.tmean(losses)


def policy_ce(scores: Tensor, k_star: np.ndarray) -> Tensor:
    """Mean cross-entropy of the softmax over slot scores against the
    look-ahead-optimal slot indices."""
    B, M = scores.shape
    logp = G.log_softmax(scores, axis=1)
    picked = G.take_flat(logp, np.arange(B) * M + np.asarray(k_star, dtype=int))
    return G.neg(G.tmean(picked))


def _policy_scores(slots: list[Tensor], q: Tensor, policy: PolicyMLP) -> Tensor:
    """(B, M) slot scores from detached inputs: the cross-entropy trains
    only the policy network, never the encoders beneath it."""
    qd = q.detach()
    cols = []
    for x in slots:
        h = G.relu(G.linear(G.concat([x.detach(), qd], axis=1), policy.W1) + policy.b1)
        h = G.relu(G.linear(h, policy.W2) + policy.b2)
        cols.append(G.linear(h, policy.W3) + policy.b3)
    return G.concat(cols, axis=1)


def policy_loss(states: StateSet, q: np.ndarray, k_star: int,
                policy: PolicyMLP) -> Tensor:
    """Cross-entropy for one decision; requires a fully occupied bank."""
    if states.empty_mask.any():
        raise ValueError("policy decisions only happen with no empty slot")
    slots = [Tensor(states.slots[k][None, :]) for k in range(states.m_slots)]
    scores = _policy_scores(slots, Tensor(q[None, :]), policy)
    return policy_ce(scores, np.array([k_star]))


# ---------------------------------------------------------------------------
# look-ahead action values

def estimate_q(states: StateSet, remaining: list[np.ndarray], v_target: np.ndarray,
               model: Model, rng: np.random.Generator) -> np.ndarray:
    """Sampled look-ahead return for each of the M possible slot choices.

    For action k: fuse the next query into slot k, then roll to the end of
    the episode sampling further actions from the current policy, summing
    discounted target similarities.  One trajectory per action; everything
    runs outside any tape.
    """
    if states.empty_mask.any():
        raise ValueError("look-ahead only applies once every slot is occupied")
    if not remaining:
        raise ValueError("no remaining queries to look ahead over")
    cfg = model.config
    q_values = np.zeros(states.m_slots)
    with no_grad():
        for k in range(states.m_slots):
            bank = update_slot(states, k, remaining[0], model.fuse)
            total = set_image_similarity(bank, v_target, cfg.sharpness,
                                         cfg.literal_inverse_n)
            discount = cfg.discount
            for q in remaining[1:]:
                action, _ = select_slot(bank, q, model.policy, "sample", rng)
                bank = update_slot(bank, action, q, model.fuse)
                total += discount * set_image_similarity(
                    bank, v_target, cfg.sharpness, cfg.literal_inverse_n)
                discount *= cfg.discount
            q_values[k] = total
    return q_values


# ---------------------------------------------------------------------------
# batched forward passes (one per model kind)

@dataclass
class ForwardResult:
    sims_per_turn: list[Tensor]               # each (B, B)
    actions: list[np.ndarray] = field(default_factory=list)
    policy_terms: list[tuple[Tensor, np.ndarray]] = field(default_factory=list)


def _region_tensors(model: Model, batch: Batch) -> tuple[Tensor, Tensor]:
    """Projected region rows for the whole batch: raw (B*N, D) and
    row-normalized variants."""
    B, N, F = batch.features.shape
    proj = project_regions(batch.features.reshape(B * N, F), model.img_w, model.img_b)
    return proj, G.l2_normalize(proj)


def _attention_sims(state_rows: Tensor, vn: Tensor, B: int, n_regions: int,
                    cfg: TrainConfig) -> Tensor:
    """(B, B) state-vs-image scores for one (B, D) batch of states."""
    xn = G.l2_normalize(state_rows)
    cos = G.reshape(G.linear(xn, vn), (B, B, n_regions))
    att = G.softmax_sharp(cos, cfg.sharpness, axis=2)
    sims = G.tsum(att * cos, axis=2)
    if cfg.literal_inverse_n:
        sims = sims * (1.0 / n_regions)
    return sims


def _sample_rows(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One categorical draw per row, one uniform consumed per row."""
    u = rng.random(probs.shape[0])
    cdf = probs.cumsum(axis=1)
    actions = (cdf <= u[:, None]).sum(axis=1)
    actions = np.minimum(actions, probs.shape[1] - 1)
    rows = np.arange(len(actions))
    bad = probs[rows, actions] <= 0.0
    for i in np.nonzero(bad)[0]:
        actions[i] = int(np.argmax(probs[i] > 0.0))
    return actions


def drilldown_forward(model: Model, batch: Batch, mode: str,
                      rng: np.random.Generator | None,
                      estimate_actions: bool = False) -> ForwardResult:
    """Run the slot-memory model over a batch of episodes.

    mode="fixed" drives the circular pretraining schedule; mode="sample"
    draws slot choices from the policy (empty-first enforced).  With
    estimate_actions, decision turns also compute look-ahead targets and
    the (detached-input) policy scores needed for the cross-entropy.
    """
    cfg = model.config
    B, N, _ = batch.features.shape
    M, T = cfg.slots, batch.turns
    q_list = [_encode_turn(model, batch, t) for t in range(T)]
    proj, vn = _region_tensors(model, batch)
    v_data = proj.data.reshape(B, N, cfg.state_dim)

    slots = [Tensor(np.zeros((B, cfg.state_dim))) for _ in range(M)]
    occupancy = np.zeros((B, M), dtype=bool)
    result = ForwardResult(sims_per_turn=[])

    for t in range(T):
        q = q_list[t]
        if mode == "fixed":
            actions = np.full(B, fixed_policy_slot(t + 1, M))
        elif mode == "sample":
            if occupancy.all():
                scores = _policy_scores(slots, q, model.policy)
                if estimate_actions:
                    k_star = np.zeros(B, dtype=int)
                    for i in range(B):
                        bank = StateSet(slots=np.stack([s.data[i] for s in slots]),
                                        empty_mask=~occupancy[i], turn=t)
                        remaining = [q_list[u].data[i] for u in range(t, T)]
                        k_star[i] = int(np.argmax(estimate_q(
                            bank, remaining, v_data[i], model, rng)))
                    result.policy_terms.append((scores, k_star))
                z = scores.data - scores.data.max(axis=1, keepdims=True)
                e = np.exp(z)
                actions = _sample_rows(e / e.sum(axis=1, keepdims=True), rng)
            else:
                empties = ~occupancy
                probs = empties / empties.sum(axis=1, keepdims=True)
                actions = _sample_rows(probs, rng)
        else:
            raise ValueError(f"unknown forward mode {mode!r}")

        if (actions == actions[0]).all():
            k = int(actions[0])
            slots[k] = gru_step(q, slots[k], model.fuse)
        else:
            onehots = [Tensor((actions == k).astype(float)[:, None]) for k in range(M)]
            x_sel = onehots[0] * slots[0]
            for k in range(1, M):
                x_sel = x_sel + onehots[k] * slots[k]
            fused = gru_step(q, x_sel, model.fuse)
            for k in range(M):
                slots[k] = onehots[k] * fused + (1.0 - onehots[k]) * slots[k]
        occupancy[np.arange(B), actions] = True
        result.actions.append(actions)

        counts = occupancy.sum(axis=1, keepdims=True).astype(float)
        sims = None
        for k in range(M):
            if not occupancy[:, k].any():
                continue
            weight = Tensor((occupancy[:, k] / counts[:, 0])[:, None])
            term = _attention_sims(slots[k], vn, B, N, cfg) * weight
            sims = term if sims is None else sims + term
        result.sims_per_turn.append(sims)
    return result


def _context_fold(model: Model, batch: Batch) -> list[Tensor]:
    """Per-turn single context state: GRU over the turn encodings."""
    B = batch.size
    x = Tensor(np.zeros((B, model.config.state_dim)))
    states = []
    for t in range(batch.turns):
        x = gru_step(_encode_turn(model, batch, t), x, model.fuse)
        states.append(x)
    return states


def hre_forward(model: Model, batch: Batch) -> ForwardResult:
    """Context state scored by plain cosine against one global image vector
    (projection of the mean raw region feature)."""
    B = batch.size
    mean_feat = batch.features.mean(axis=1)
    g = project_regions(mean_feat, model.img_w, model.img_b)
    gn = G.l2_normalize(g)
    sims = [G.linear(G.l2_normalize(x), gn) for x in _context_fold(model, batch)]
    return ForwardResult(sims_per_turn=sims)


def rhre_forward(model: Model, batch: Batch) -> ForwardResult:
    """Context state scored against regions with attention."""
    cfg = model.config
    B, N, _ = batch.features.shape
    _, vn = _region_tensors(model, batch)
    sims = [_attention_sims(x, vn, B, N, cfg) for x in _context_fold(model, batch)]
    return ForwardResult(sims_per_turn=sims)


def rre_forward(model: Model, batch: Batch) -> ForwardResult:
    """Flat GRU over the concatenation of all turns' tokens; turn t scores
    with the state after the first t turns' worth of tokens."""
    cfg = model.config
    B, N, _ = batch.features.shape
    _, vn = _region_tensors(model, batch)
    sims = []
    for t in range(batch.turns):
        flat = [sum((ex[u] for u in range(t + 1)), []) for ex in batch.query_ids]
        padded, lengths = _pad(flat)
        state = encode_batch(padded, lengths, model.table, model.enc)
        sims.append(_attention_sims(state, vn, B, N, cfg))
    return ForwardResult(sims_per_turn=sims)


def batch_forward(model: Model, batch: Batch, mode: str,
                  rng: np.random.Generator | None,
                  estimate_actions: bool = False) -> ForwardResult:
    kind = model.kind
    if kind == "drilldown":
        return drilldown_forward(model, batch, mode, rng, estimate_actions)
    if kind == "hre":
        return hre_forward(model, batch)
    if kind == "rhre":
        return rhre_forward(model, batch)
    if kind in ("rre", "rankfusion"):
        return rre_forward(model, batch)
    raise ValueError(f"unknown model kind {kind!r}")


def episode_loss(result: ForwardResult, margin: float) -> Tensor:
    """Per-turn average of the batch triplet loss."""
    total = None
    for sims in result.sims_per_turn:
        term = triplet_loss_batch(sims, margin)
        total = term if total is None else total + term
    return total * (1.0 / len(result.sims_per_turn))


# ---------------------------------------------------------------------------
# training loops

def _corpus_tables(scenes: list[Scene], vocab) -> dict[str, list[int]]:
    ids_of: dict[str, list[int]] = {}
    for scene in scenes:
        for cap in scene.captions:
            if cap.text not in ids_of:
                ids_of[cap.text] = vocab.encode(tokenize(cap.text))
    return ids_of


def _check_uniform_regions(scenes: list[Scene], where: str) -> tuple[int, int]:
    shapes = {(len(s.regions), s.regions[0].feature.size) for s in scenes}
    if len(shapes) != 1:
        raise ValueError(f"{where}: scenes disagree on region count/feature size: {shapes}")
    return shapes.pop()


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for lo in range(0, n, batch_size):
        chunk = perm[lo:lo + batch_size]
        if len(chunk) >= 2:
            yield chunk


def _step(model: Model, loss: Tensor, tape: Tape, adam: AdamState,
          clip_norm: float, where: str) -> float:
    value = float(loss.data)
    if not np.isfinite(value):
        raise RuntimeError(f"non-finite loss at {where}")
    model.store.zero_grads()
    tape.backward(loss)
    grads = model.store.grads()
    if not np.isfinite(global_norm(grads.values())):
        raise RuntimeError(f"non-finite gradients at {where}")
    clip_global_norm(grads, clip_norm)
    adam_step(model.store, grads, adam)
    return value


def _eval_ids_for(scenes: list[Scene], vocab, t_turns: int) -> list[list[list[int]]]:
    out = []
    for scene in scenes:
        queries = sample_episode(scene, t_turns, "eval")
        out.append([vocab.encode(tokenize(q)) for q in queries])
    return out


def pretrain(config: TrainConfig, corpus_dir, log=print) -> Checkpoint:
    """Train a model of the configured kind with the fixed circular policy
    (a no-op distinction for single-state kinds); returns the checkpoint
    whose validation metric was best across epochs."""
    config = replace(config, phase="pretrain")
    train = load_corpus(f"{corpus_dir}/train.jsonl")
    val = load_corpus(f"{corpus_dir}/val.jsonl")
    _, feat = _check_uniform_regions(train + val, corpus_dir)
    vocab = build_vocab([c.text for s in train for c in s.captions],
                        min_count=config.min_count)
    model = init_model(config, vocab, feat, np.random.default_rng([config.seed, 0]))
    rng = np.random.default_rng([config.seed, 1])
    ids_of = _corpus_tables(train + val, vocab)

    train_turns = 1 if config.model == "rankfusion" else config.turns
    eval_ids = _eval_ids_for(val, vocab, config.turns)
    adam = AdamState(lr=config.lr)
    mode = "fixed"

    best = None
    history = []
    for epoch in range(1, config.pretrain_epochs + 1):
        losses = []
        for chunk in _batches(len(train), config.batch_size, rng):
            batch = make_batch([train[i] for i in chunk], ids_of, train_turns, rng)
            with Tape() as tape:
                result = batch_forward(model, batch, mode, rng)
                loss = episode_loss(result, config.margin)
            losses.append(_step(model, loss, tape, adam, config.clip_norm,
                                f"pretrain epoch {epoch}"))
        metric = _validate_any(model, val, eval_ids)
        history.append({"epoch": epoch, "val_metric": metric,
                        "mean_loss": float(np.mean(losses)),
                        "mean_policy_loss": None})
        if log:
            log(f"[pretrain {config.model}] epoch {epoch}: "
                f"loss {np.mean(losses):.4f} val {metric:.3f}")
        if best is None or metric > best[0]:
            best = (metric, epoch, model.store.state_dict())

    _, best_epoch, best_params = best
    return Checkpoint(config=config, vocab=vocab,
                      params=ParamStore.from_state_dict(best_params),
                      epoch=best_epoch, val_history=history)


def _validate_any(model: Model, scenes: list[Scene],
                  episode_ids: list[list[list[int]]]) -> float:
    from .evaluate import split_turn_ranks  # late import; evaluate builds on trainer types
    ranks = split_turn_ranks(model, scenes, episode_ids)
    return float(sum(recall_at_k(r, 10) for r in ranks))


def joint_train(checkpoint: Checkpoint, config: TrainConfig, corpus_dir,
                log=print) -> Checkpoint:
    """Refine a pretrained slot model: sampled-policy episodes, triplet loss
    along the executed trajectory, plus the look-ahead cross-entropy on the
    policy, weighted by config.tradeoff."""
    if checkpoint.config.model != "drilldown" or config.model != "drilldown":
        raise ValueError("the joint phase trains the slot-policy model only")
    config = replace(config, phase="joint")
    train = load_corpus(f"{corpus_dir}/train.jsonl")
    val = load_corpus(f"{corpus_dir}/val.jsonl")
    _, feat = _check_uniform_regions(train + val, corpus_dir)
    vocab = checkpoint.vocab
    params = ParamStore.from_state_dict(checkpoint.params.state_dict())
    model = Model(config, vocab, feat, params)
    rng = np.random.default_rng([config.seed, 2])
    ids_of = _corpus_tables(train + val, vocab)
    eval_ids = _eval_ids_for(val, vocab, config.turns)
    adam = AdamState(lr=config.lr)

    metric0 = _validate_any(model, val, eval_ids)
    history = [{"epoch": 0, "val_metric": metric0, "mean_loss": None,
                "mean_policy_loss": None}]
    best = (metric0, 0, model.store.state_dict())
    if log:
        log(f"[joint] epoch 0 (pretrained init): val {metric0:.3f}")

    for epoch in range(1, config.joint_epochs + 1):
        losses, policy_losses = [], []
        for chunk in _batches(len(train), config.batch_size, rng):
            batch = make_batch([train[i] for i in chunk], ids_of, config.turns, rng)
            with Tape() as tape:
                result = batch_forward(model, batch, "sample", rng,
                                       estimate_actions=True)
                loss = episode_loss(result, config.margin)
                if result.policy_terms:
                    ce_total = None
                    for scores, k_star in result.policy_terms:
                        term = policy_ce(scores, k_star)
                        ce_total = term if ce_total is None else ce_total + term
                    loss = loss + config.tradeoff * ce_total
                    policy_losses.append(float(ce_total.data))
            losses.append(_step(model, loss, tape, adam, config.clip_norm,
                                f"joint epoch {epoch}"))
        metric = _validate_any(model, val, eval_ids)
        mean_pi = float(np.mean(policy_losses)) if policy_losses else None
        history.append({"epoch": epoch, "val_metric": metric,
                        "mean_loss": float(np.mean(losses)),
                        "mean_policy_loss": mean_pi})
        if log:
            pi_text = f" policy {mean_pi:.4f}" if mean_pi is not None else ""
            log(f"[joint] epoch {epoch}: loss {np.mean(losses):.4f}{pi_text} "
                f"val {metric:.3f}")
        if metric > best[0]:
            best = (metric, epoch, model.store.state_dict())

    _, best_epoch, best_params = best
    return Checkpoint(config=config, vocab=vocab,
                      params=ParamStore.from_state_dict(best_params),
                      epoch=best_epoch, val_history=history)
