"""Dense float64 tensor math with taped reverse-mode differentiation.

The engine is deliberately small: it supports exactly the shapes the
retrieval model needs (vectors, matrices, and one 3-D case for batched
attention), records executed ops on an explicit tape, and walks the tape
in reverse to accumulate gradients.  Everything is 64-bit; there is no
GPU path and no broadcasting beyond what numpy gives the listed ops.

Ops only record onto a tape while one is active::

    with Tape() as tape:
        loss = some_scalar_computation(params)
    tape.backward(loss)          # fills .grad on requires_grad tensors

Outside a ``Tape`` context the same functions compute plain values, which
is what inference and reward rollouts use.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

FINITE_CHECKS = False  # enabled by the test suite; cheap but redundant in steady state


class GradError(ValueError):
    """Shape mismatch or misuse of a tensor op."""


class Tensor:
    """A dense float64 array plus a requires-grad flag.

    Values are treated as immutable once created; the optimizer swaps
    ``data`` wholesale between steps.  ``grad`` is filled by
    ``Tape.backward`` and accumulates across calls until cleared.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if FINITE_CHECKS and arr.size and not np.isfinite(arr).all():
            raise GradError("non-finite entries in tensor")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; plain numbers/arrays lift to constant tensors
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# tape

_TLS = threading.local()


def _tape_stack() -> list:
    stack = getattr(_TLS, "stack", None)
    if stack is None:
        stack = []
        _TLS.stack = stack
    return stack


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Execution-ordered record of ops for one backward pass.

    Entries are appended as ops execute, so the list is topologically
    ordered by construction; ``backward`` walks it once in reverse.
    """

    def __init__(self):
        self._entries: list[tuple[Tensor, tuple]] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack().pop()
        assert popped is self
        return False

    def __len__(self) -> int:
        return len(self._entries)

    def record(self, out: Tensor, pulls: tuple) -> None:
        """pulls: tuple of (parent Tensor, fn(out_grad) -> parent grad)."""
        self._entries.append((out, pulls))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into .grad on every reachable leaf.

        A leaf is a requires_grad tensor that is not the output of any op
        on this tape (parameters, mostly).  Leaves not on a path to the
        loss keep grad None, which readers treat as zero.  The loss must
        be a scalar.
        """
        if loss.ndim != 0:
            raise GradError(f"backward needs a scalar loss, got shape {loss.shape}")
        acc: dict[int, np.ndarray] = {id(loss): np.ones(())}
        holders: dict[int, Tensor] = {id(loss): loss}
        for out, pulls in reversed(self._entries):
            g = acc.pop(id(out), None)
            if g is None:
                continue
            holders.pop(id(out), None)
            for parent, pull in pulls:
                contrib = np.asarray(pull(g), dtype=np.float64)
                pid = id(parent)
                if pid in acc:
                    acc[pid] = acc[pid] + contrib
                else:
                    acc[pid] = contrib
                    holders[pid] = parent
        for pid, g in acc.items():
            t = holders[pid]
            t.grad = g.copy() if t.grad is None else t.grad + g


def backward(tape: Tape, loss: Tensor) -> None:
    tape.backward(loss)


class _TapePause:
    """Masks any active tape so enclosed ops compute plain values."""

    def __enter__(self):
        _tape_stack().append(None)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack().pop()
        assert popped is None
        return False


def no_grad() -> _TapePause:
    return _TapePause()


def _wants_grad(*tensors: Tensor) -> bool:
    return active_tape() is not None and any(t.requires_grad for t in tensors)


def _make(out_data: np.ndarray, pulls: tuple) -> Tensor:
    """Create the output tensor, recording pulls for parents that need grad."""
    tape = active_tape()
    live = tuple((p, fn) for p, fn in pulls if p.requires_grad)
    out = Tensor(out_data, requires_grad=bool(live) and tape is not None)
    if out.requires_grad:
        tape.record(out, live)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise and linear-algebra ops

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    return _make(out, (
        (a, lambda g: _unbroadcast(g, a.data.shape)),
        (b, lambda g: _unbroadcast(g, b.data.shape)),
    ))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data
    return _make(out, (
        (a, lambda g: _unbroadcast(g, a.data.shape)),
        (b, lambda g: _unbroadcast(-g, b.data.shape)),
    ))


def neg(x) -> Tensor:
    x = as_tensor(x)
    return _make(-x.data, ((x, lambda g: -g),))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data
    return _make(out, (
        (a, lambda g: _unbroadcast(g * b.data, a.data.shape)),
        (b, lambda g: _unbroadcast(g * a.data, b.data.shape)),
    ))


def matmul(a, b) -> Tensor:
    """Matrix product for 1-D/2-D operands with a strict inner-dim check."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise GradError(f"matmul supports 1-D/2-D operands, got {a.shape} @ {b.shape}")
    inner_a = a.data.shape[-1]
    inner_b = b.data.shape[0]
    if inner_a != inner_b:
        raise GradError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    out = a.data @ b.data
    ad, bd = a.data, b.data

    def pull_a(g):
        if a.ndim == 1 and b.ndim == 1:
            return g * bd
        if a.ndim == 1:           # (k,) @ (k,n) -> (n,)
            return bd @ g
        if b.ndim == 1:           # (m,k) @ (k,) -> (m,)
            return np.outer(g, bd)
        return g @ bd.T

    def pull_b(g):
        if a.ndim == 1 and b.ndim == 1:
            return g * ad
        if a.ndim == 1:
            return np.outer(ad, g)
        if b.ndim == 1:
            return ad.T @ g
        return ad.T @ g

    return _make(out, ((a, pull_a), (b, pull_b)))


def linear(x, w) -> Tensor:
    """x @ w.T for row-vector conventions: (B,k) @ (n,k)^T -> (B,n); 1-D x ok."""
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 2:
        raise GradError(f"linear weight must be 2-D, got {w.shape}")
    if x.data.shape[-1] != w.data.shape[1]:
        raise GradError(f"linear dimension mismatch: {x.shape} vs {w.shape}")
    out = x.data @ w.data.T
    xd, wd = x.data, w.data

    def pull_x(g):
        return g @ wd

    def pull_w(g):
        if xd.ndim == 1:
            return np.outer(g, xd)
        return g.T @ xd

    return _make(out, ((x, pull_x), (w, pull_w)))


def relu(x) -> Tensor:
    x = as_tensor(x)
    out = np.maximum(x.data, 0.0)
    mask = x.data > 0.0
    return _make(out, ((x, lambda g: g * mask),))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = 1.0 / (1.0 + np.exp(-x.data))
    return _make(out, ((x, lambda g: g * out * (1.0 - out)),))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _make(out, ((x, lambda g: g * (1.0 - out * out)),))


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _make(out, ((x, lambda g: g * out),))


def log(x) -> Tensor:
    x = as_tensor(x)
    out = np.log(x.data)
    return _make(out, ((x, lambda g: g / x.data),))


_ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh}


def activation(x, kind: str) -> Tensor:
    """Elementwise nonlinearity: kind in {relu, sigmoid, tanh}."""
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise GradError(f"unknown activation kind {kind!r}") from None
    return fn(x)


def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)
    shape = x.data.shape

    def pull(g):
        gg = g if (axis is None or keepdims) else np.expand_dims(g, axis)
        return np.broadcast_to(gg, shape).copy()

    return _make(out, ((x, pull),))


def tmean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    n = x.size if axis is None else x.data.shape[axis]
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def softmax_sharp(x, lam: float, axis: int = -1) -> Tensor:
    """Softmax of lam * x along one axis, with max-subtraction for stability.

    Output entries are nonnegative and sum to 1 along the axis.
    """
    x = as_tensor(x)
    if x.size == 0:
        raise GradError("softmax_sharp on empty input")
    if not lam > 0:
        raise GradError(f"softmax sharpness must be > 0, got {lam}")
    if not np.isfinite(x.data).all():
        raise GradError("softmax_sharp needs finite scores")
    z = lam * x.data
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def pull(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return lam * out * (g - inner)

    return _make(out, ((x, pull),))


def log_softmax(x, axis: int = -1) -> Tensor:
    """log(softmax(x)); numerically safe even for very peaked inputs."""
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def pull(g):
        return g - p * g.sum(axis=axis, keepdims=True)

    return _make(out, ((x, pull),))


def l2_normalize(x, eps: float = 1e-8, axis: int = -1) -> Tensor:
    """x / max(||x||, eps) along one axis; zero vectors pass through scaled by 1/eps."""
    x = as_tensor(x)
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    denom = np.maximum(norm, eps)
    out = x.data / denom
    guarded = norm <= eps  # below the guard the map is plain division by eps

    def pull(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        main = (g - out * inner) / denom
        flat = g / denom
        return np.where(guarded, flat, main)

    return _make(out, ((x, pull),))


# ---------------------------------------------------------------------------
# shape and gather ops

def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.data.shape
    out = x.data.reshape(shape)
    return _make(out, ((x, lambda g: g.reshape(old)),))


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    out = x.data.transpose(axes)
    if axes is None:
        inv = None
    else:
        inv = np.argsort(axes)
    return _make(out, ((x, lambda g: g.transpose(inv)),))


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise GradError("concat of nothing")
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)
    pulls = []
    for i, t in enumerate(ts):
        lo, hi = offsets[i], offsets[i + 1]

        def pull(g, lo=lo, hi=hi):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            return g[tuple(index)]

        pulls.append((t, pull))
    return _make(out, tuple(pulls))


def stack_rows(vectors) -> Tensor:
    """Stack 1-D tensors into a matrix, one per row."""
    return concat([reshape(v, (1, -1)) for v in vectors], axis=0)


def embed_lookup(table, ids) -> Tensor:
    """Row i of the result is column ids[i] of the (E, V) table."""
    table = as_tensor(table)
    idx = np.asarray(ids, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[1]):
        raise GradError(f"embedding id out of range for table {table.shape}")
    out = table.data[:, idx].T.copy()

    def pull(g):
        gw = np.zeros_like(table.data)
        np.add.at(gw.T, idx, g)
        return gw

    return _make(out, ((table, pull),))


def take_row(x, i: int) -> Tensor:
    """Row i of a 2-D tensor as a vector; backward scatters into that row."""
    x = as_tensor(x)
    if x.ndim != 2:
        raise GradError(f"take_row needs a 2-D tensor, got {x.shape}")
    if not 0 <= i < x.data.shape[0]:
        raise GradError(f"row {i} out of range for {x.shape}")
    out = x.data[i].copy()

    def pull(g):
        gx = np.zeros_like(x.data)
        gx[i] = g
        return gx

    return _make(out, ((x, pull),))


def take_flat(x, flat_indices) -> Tensor:
    """Gather from the flattened tensor; backward scatter-adds."""
    x = as_tensor(x)
    idx = np.asarray(flat_indices, dtype=np.intp)
    out = x.data.reshape(-1)[idx]

    def pull(g):
        gx = np.zeros(x.data.size)
        np.add.at(gx, idx, g)
        return gx.reshape(x.data.shape)

    return _make(out, ((x, pull),))


# ---------------------------------------------------------------------------
# optimizer, clipping, checking

def uniform_init(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    """Uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)] with fan_in = cols."""
    bound = 1.0 / np.sqrt(cols)
    return rng.uniform(-bound, bound, size=(rows, cols))


class ParamStore:
    """Ordered mapping of names to trainable tensors."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, data) -> Tensor:
        if name in self._params:
            raise GradError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(data, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def matrix(self, name: str, rows: int, cols: int, rng: np.random.Generator) -> Tensor:
        return self.add(name, uniform_init(rng, rows, cols))

    def vector(self, name: str, n: int) -> Tensor:
        return self.add(name, np.zeros(n))

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def zero_grads(self) -> None:
        for t in self._params.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        """Current gradients, zeros for parameters untouched by backward."""
        return {
            name: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for name, t in self._params.items()
        }

    def state_dict(self) -> dict:
        return {
            name: {"shape": list(t.data.shape), "data": t.data.reshape(-1).tolist()}
            for name, t in self._params.items()
        }

    @classmethod
    def from_state_dict(cls, d: dict) -> "ParamStore":
        store = cls()
        for name, entry in d.items():
            shape = tuple(entry["shape"])
            arr = np.array(entry["data"], dtype=np.float64).reshape(shape)
            store.add(name, arr)
        return store


@dataclass
class AdamState:
    """Adam moments and step counter for one parameter store."""

    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: ParamStore, grads: dict[str, np.ndarray], state: AdamState) -> AdamState:
    """One bias-corrected Adam update, in place on the parameter data."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    scale = state.lr * np.sqrt(1.0 - b2 ** t) / (1.0 - b1 ** t)
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise GradError(f"gradient shape {g.shape} != parameter shape {p.data.shape} for {name!r}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data = p.data - scale * m / (np.sqrt(v) + state.eps)
    return state


def global_norm(grads) -> float:
    total = 0.0
    for g in grads:
        total += float((g * g).sum())
    return float(np.sqrt(total))


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    """Scale all grads by max_norm/||g|| when the global L2 norm exceeds max_norm."""
    if not max_norm > 0:
        raise GradError("max_norm must be positive")
    norm = global_norm(grads.values())
    if norm > max_norm:
        factor = max_norm / norm
        for g in grads.values():
            g *= factor
    return grads


def grad_check(f, params, h: float = 1e-5) -> float:
    """Compare taped gradients of f() against central finite differences.

    f computes a fresh scalar Tensor from the current parameter values.
    Returns the max of |ad - fd| / max(1e-8, |ad| + |fd|) over all
    coordinates of the given parameters.  Mutates parameter data in place
    during probing and restores it.
    """
    params = list(params)
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = f()
    if loss.ndim != 0:
        raise GradError("grad_check needs a scalar function")
    if not np.isfinite(loss.data):
        raise GradError("grad_check: non-finite loss")
    tape.backward(loss)
    analytic = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]

    worst = 0.0
    for p, ad in zip(params, analytic):
        flat = p.data.reshape(-1)
        ad_flat = ad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(f().data)
            flat[i] = orig - h
            f_minus = float(f().data)
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise GradError("grad_check: non-finite probe value")
            fd = (f_plus - f_minus) / (2.0 * h)
            err = abs(ad_flat[i] - fd) / max(1e-8, abs(ad_flat[i]) + abs(fd))
            if err > worst:
                worst = err
    return worst
