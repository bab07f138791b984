"""Reverse-mode differentiation over dense float64 matrices.

Covers exactly the op set the architecture needs: dense linear algebra,
pointwise nonlinearities, limited row/column-vector broadcasting, sparse
segment operations (per-target softmax, scatter-sum, row gather), stochastic
regularizers with straight-through gradients, an Adam optimizer, and a flat
binary checkpoint format. Everything is double precision; vectors travel as
column matrices [m, 1].

Gradients accumulate additively into ``requires_grad`` leaves; the caller
zeroes them between steps.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from cnlgnn.errors import DataError
from cnlgnn.rng import RngStream


class Value:
    """A node in the computation graph: payload, grad slot, provenance."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward_fn", "_done")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf", parents=(), backward_fn=None):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 2:
            raise ValueError(f"Value payloads must be 2-D matrices, got shape {data.shape}")
        self.data = data
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents = tuple(parents)
        self._backward_fn = backward_fn
        self._done = False

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self) -> str:
        return f"Value(shape={self.data.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # light operator sugar; the op functions below do the real work
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return hadamard(self, other)


def constant(data) -> Value:
    return Value(data, requires_grad=False, op="const")


def parameter(data) -> Value:
    return Value(np.array(data, dtype=np.float64), requires_grad=True, op="param")


def _as_value(x) -> Value:
    return x if isinstance(x, Value) else constant(x)


def _track(*parents: Value) -> bool:
    return any(p.requires_grad for p in parents)


def _make(data, op, parents, backward_fn) -> Value:
    track = _track(*parents)
    return Value(data, requires_grad=track, op=op, parents=parents if track else (),
                 backward_fn=backward_fn if track else None)


def backward(loss: Value) -> None:
    """Accumulate d(loss)/d(leaf) into every requires_grad leaf.

    ``loss`` must be scalar ([1, 1]). Calling backward twice on the same node
    is an error; rebuild the forward graph per step instead.
    """
    if loss.shape != (1, 1):
        raise ValueError(f"backward expects a scalar [1x1] loss, got shape {loss.shape}")
    if loss._done:
        raise RuntimeError("backward already ran on this node; rebuild the graph before re-running")
    loss._done = True

    topo: list[Value] = []
    visited: set[int] = set()
    stack: list[tuple[Value, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited or not node.requires_grad:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    loss.accumulate(np.ones((1, 1)))
    for node in reversed(topo):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)


# ---------------------------------------------------------------------------
# broadcasting helpers (full shape match, or [1, c] / [r, 1] / [1, 1] operand)
# ---------------------------------------------------------------------------

def _check_broadcast(a: np.ndarray, b: np.ndarray) -> None:
    for ax in (0, 1):
        if a.shape[ax] != b.shape[ax] and a.shape[ax] != 1 and b.shape[ax] != 1:
            raise ValueError(f"shapes {a.shape} and {b.shape} are not broadcast-compatible")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    g = grad
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# dense core ops
# ---------------------------------------------------------------------------

def matmul(a: Value, b: Value) -> Value:
    a, b = _as_value(a), _as_value(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def bw(g):
        if a.requires_grad:
            a.accumulate(g @ b.data.T)
        if b.requires_grad:
            b.accumulate(a.data.T @ g)

    return _make(out_data, "matmul", (a, b), bw)


def transpose(a: Value) -> Value:
    a = _as_value(a)

    def bw(g):
        if a.requires_grad:
            a.accumulate(g.T)

    return _make(a.data.T.copy(), "transpose", (a,), bw)


def _binary(a, b, fn, dfa, dfb, name) -> Value:
    a, b = _as_value(a), _as_value(b)
    _check_broadcast(a.data, b.data)
    out_data = fn(a.data, b.data)

    def bw(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(dfa(g, a.data, b.data), a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(dfb(g, a.data, b.data), b.shape))

    return _make(out_data, name, (a, b), bw)


def add(a, b) -> Value:
    return _binary(a, b, lambda x, y: x + y, lambda g, x, y: g, lambda g, x, y: g, "add")


def sub(a, b) -> Value:
    return _binary(a, b, lambda x, y: x - y, lambda g, x, y: g, lambda g, x, y: -g, "sub")


def hadamard(a, b) -> Value:
    return _binary(a, b, lambda x, y: x * y, lambda g, x, y: g * y, lambda g, x, y: g * x, "hadamard")


def divide(a, b) -> Value:
    return _binary(
        a, b,
        lambda x, y: x / y,
        lambda g, x, y: g / y,
        lambda g, x, y: -g * x / (y * y),
        "divide",
    )


def scale(a: Value, s: float) -> Value:
    a = _as_value(a)
    s = float(s)

    def bw(g):
        if a.requires_grad:
            a.accumulate(g * s)

    return _make(a.data * s, "scale", (a,), bw)


def shift(a: Value, c: float) -> Value:
    a = _as_value(a)

    def bw(g):
        if a.requires_grad:
            a.accumulate(g)

    return _make(a.data + float(c), "shift", (a,), bw)


def concat_cols(a: Value, b: Value) -> Value:
    a, b = _as_value(a), _as_value(b)
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"concat_cols row mismatch: {a.shape} vs {b.shape}")
    ca = a.shape[1]

    def bw(g):
        if a.requires_grad:
            a.accumulate(g[:, :ca])
        if b.requires_grad:
            b.accumulate(g[:, ca:])

    return _make(np.concatenate([a.data, b.data], axis=1), "concat_cols", (a, b), bw)


def row_select(a: Value, idx) -> Value:
    a = _as_value(a)
    idx = np.asarray(idx, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ValueError("row_select index out of range")

    def bw(g):
        if a.requires_grad:
            acc = np.zeros_like(a.data)
            np.add.at(acc, idx, g)
            a.accumulate(acc)

    return _make(a.data[idx], "row_select", (a,), bw)


# ---------------------------------------------------------------------------
# pointwise nonlinearities
# ---------------------------------------------------------------------------

def leaky_relu(a: Value, slope: float = 0.2) -> Value:
    a = _as_value(a)
    pos = a.data > 0
    out_data = np.where(pos, a.data, slope * a.data)

    def bw(g):
        if a.requires_grad:
            a.accumulate(g * np.where(pos, 1.0, slope))

    return _make(out_data, "leaky_relu", (a,), bw)


def elu(a: Value) -> Value:
    a = _as_value(a)
    pos = a.data > 0
    expm1 = np.expm1(np.minimum(a.data, 0.0))
    out_data = np.where(pos, a.data, expm1)

    def bw(g):
        if a.requires_grad:
            a.accumulate(g * np.where(pos, 1.0, expm1 + 1.0))

    return _make(out_data, "elu", (a,), bw)


def sigmoid(a: Value) -> Value:
    a = _as_value(a)
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def bw(g):
        if a.requires_grad:
            a.accumulate(g * out_data * (1.0 - out_data))

    return _make(out_data, "sigmoid", (a,), bw)


def tanh(a: Value) -> Value:
    a = _as_value(a)
    out_data = np.tanh(a.data)

    def bw(g):
        if a.requires_grad:
            a.accumulate(g * (1.0 - out_data * out_data))

    return _make(out_data, "tanh", (a,), bw)


def exp(a: Value) -> Value:
    a = _as_value(a)
    out_data = np.exp(a.data)

    def bw(g):
        if a.requires_grad:
            a.accumulate(g * out_data)

    return _make(out_data, "exp", (a,), bw)


def log(a: Value) -> Value:
    a = _as_value(a)

    def bw(g):
        if a.requires_grad:
            a.accumulate(g / a.data)

    return _make(np.log(a.data), "log", (a,), bw)


def sqrt(a: Value) -> Value:
    a = _as_value(a)
    out_data = np.sqrt(a.data)

    def bw(g):
        if a.requires_grad:
            a.accumulate(g * 0.5 / out_data)

    return _make(out_data, "sqrt", (a,), bw)


# ---------------------------------------------------------------------------
# stochastic regularizers (straight-through gradients)
# ---------------------------------------------------------------------------

def dropout(a: Value, p: float, rng: RngStream) -> Value:
    a = _as_value(a)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {p}")
    if p == 0.0:
        return a
    mask = (rng.uniform(a.shape) >= p) / (1.0 - p)

    def bw(g):
        if a.requires_grad:
            a.accumulate(g * mask)

    return _make(a.data * mask, "dropout", (a,), bw)


def gaussian_noise(a: Value, sigma: float, rng: RngStream) -> Value:
    a = _as_value(a)
    if sigma < 0.0:
        raise ValueError(f"noise sigma must be >= 0, got {sigma}")
    if sigma == 0.0:
        return a
    noise = rng.normal(a.shape, sigma=sigma)

    def bw(g):
        if a.requires_grad:
            a.accumulate(g)

    return _make(a.data + noise, "gaussian_noise", (a,), bw)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def reduce_mean(a: Value) -> Value:
    a = _as_value(a)
    n = a.data.size

    def bw(g):
        if a.requires_grad:
            a.accumulate(np.full_like(a.data, g[0, 0] / n))

    return _make(np.array([[a.data.mean()]]), "reduce_mean", (a,), bw)


def sum_rows(a: Value) -> Value:
    a = _as_value(a)

    def bw(g):
        if a.requires_grad:
            a.accumulate(np.broadcast_to(g, a.shape).copy())

    return _make(a.data.sum(axis=1, keepdims=True), "sum_rows", (a,), bw)


def sum_cols(a: Value) -> Value:
    a = _as_value(a)

    def bw(g):
        if a.requires_grad:
            a.accumulate(np.broadcast_to(g, a.shape).copy())

    return _make(a.data.sum(axis=0, keepdims=True), "sum_cols", (a,), bw)


def l2_norm_rows(a: Value) -> Value:
    """Euclidean norm per row -> [n, 1]; zero rows get zero gradient."""
    a = _as_value(a)
    out_data = np.sqrt((a.data * a.data).sum(axis=1, keepdims=True))

    def bw(g):
        if a.requires_grad:
            safe = np.where(out_data > 0.0, out_data, 1.0)
            a.accumulate(g * a.data / safe)

    return _make(out_data, "l2_norm_rows", (a,), bw)


# ---------------------------------------------------------------------------
# sparse segment ops
# ---------------------------------------------------------------------------

def segment_softmax(logits: Value, targets) -> Value:
    """Softmax within groups of entries sharing a target id.

    ``logits`` is a column vector [m, 1]; ``targets`` maps each entry to its
    group. Max-subtracted for stability; a singleton group yields exactly 1.0.
    """
    logits = _as_value(logits)
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    m = logits.shape[0]
    if logits.shape[1] != 1:
        raise ValueError(f"segment_softmax expects a column vector, got {logits.shape}")
    if targets.shape[0] != m:
        raise ValueError(f"targets length {targets.shape[0]} != logits length {m}")
    if m == 0:
        return _make(np.zeros((0, 1)), "segment_softmax", (logits,), lambda g: None)
    if targets.min() < 0:
        raise ValueError("segment targets must be non-negative")
    n_seg = int(targets.max()) + 1

    flat = logits.data[:, 0]
    seg_max = np.full(n_seg, -np.inf)
    np.maximum.at(seg_max, targets, flat)
    e = np.exp(flat - seg_max[targets])
    seg_sum = np.zeros(n_seg)
    np.add.at(seg_sum, targets, e)
    out = (e / seg_sum[targets]).reshape(-1, 1)

    def bw(g):
        if logits.requires_grad:
            gs = g[:, 0] * out[:, 0]
            seg_dot = np.zeros(n_seg)
            np.add.at(seg_dot, targets, gs)
            logits.accumulate((gs - out[:, 0] * seg_dot[targets]).reshape(-1, 1))

    return _make(out, "segment_softmax", (logits,), bw)


def scatter_sum(messages: Value, targets, num_rows: int) -> Value:
    """Row t of the result is the sum of messages whose target is t."""
    messages = _as_value(messages)
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if targets.shape[0] != messages.shape[0]:
        raise ValueError("scatter_sum targets length must match message rows")
    if targets.size and (targets.min() < 0 or targets.max() >= num_rows):
        raise ValueError("scatter_sum target outside [0, num_rows)")
    out = np.zeros((num_rows, messages.shape[1]))
    np.add.at(out, targets, messages.data)

    def bw(g):
        if messages.requires_grad:
            messages.accumulate(g[targets])

    return _make(out, "scatter_sum", (messages,), bw)


# ---------------------------------------------------------------------------
# classification heads
# ---------------------------------------------------------------------------

def softmax_rows(logits: Value) -> Value:
    logits = _as_value(logits)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        if logits.requires_grad:
            dot = (g * out).sum(axis=1, keepdims=True)
            logits.accumulate(out * (g - dot))

    return _make(out, "softmax_rows", (logits,), bw)


def cross_entropy(logits: Value, labels, mask_idx) -> Value:
    """Mean negative log-likelihood of ``labels`` over the rows in ``mask_idx``."""
    logits = _as_value(logits)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    mask_idx = np.asarray(mask_idx, dtype=np.int64).reshape(-1)
    if mask_idx.size == 0:
        raise DataError("cross_entropy: empty node mask")
    sel = logits.data[mask_idx]
    y = labels[mask_idx]
    z = sel - sel.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsumexp
    loss = -logp[np.arange(mask_idx.size), y].mean()
    probs = np.exp(logp)

    def bw(g):
        if logits.requires_grad:
            grad_sel = probs.copy()
            grad_sel[np.arange(mask_idx.size), y] -= 1.0
            grad_sel *= g[0, 0] / mask_idx.size
            acc = np.zeros_like(logits.data)
            np.add.at(acc, mask_idx, grad_sel)
            logits.accumulate(acc)

    return _make(np.array([[loss]]), "cross_entropy", (logits,), bw)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """First/second moment accumulators, keyed like the parameter dict."""

    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, Value],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update, in place. Missing grads count as zero."""
    if lr <= 0.0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    state.t += 1
    t = state.t
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * g * g
        m_hat = state.m[name] / (1.0 - beta1 ** t)
        v_hat = state.v[name] / (1.0 - beta2 ** t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)


def zero_grads(params: dict[str, Value]) -> None:
    for p in params.values():
        p.zero_grad()


# ---------------------------------------------------------------------------
# checkpoint container: magic CNL1, little-endian throughout
# ---------------------------------------------------------------------------

_MAGIC = b"CNL1"
_VERSION = 1


def save_checkpoint(path, tensors: dict[str, np.ndarray]) -> None:
    """Write named float64 tensors: header, then per-tensor name/rank/dims/payload."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(tensors)))
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype=np.float64)
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise DataError(f"not a checkpoint file (magic {magic!r})")
        version, count = struct.unpack("<II", fh.read(8))
        if version != _VERSION:
            raise DataError(f"unsupported checkpoint version {version}")
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            dims = struct.unpack(f"<{rank}Q", fh.read(8 * rank))
            n_items = int(np.prod(dims)) if rank else 1
            payload = np.frombuffer(fh.read(8 * n_items), dtype="<f8")
            tensors[name] = payload.reshape(dims).astype(np.float64)
        return tensors
