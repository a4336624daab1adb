"""Reverse-mode automatic differentiation over dense float64 matrices.

Define-by-run: every operation appends a node to a Tape, and backward()
sweeps the tape in reverse topological (= creation) order, accumulating
gradients additively across fan-out. Values are 2-D C-contiguous float64
arrays; scalars are 1x1 matrices. The tape is rebuilt on every training
step.

Elementwise and reduction inner loops go through irr.kernels, which picks
the compiled or numpy backend at import time. Matrix products use BLAS.
"""

from __future__ import annotations

import math

import numpy as np

from . import kernels
from .errors import ContractError, DimensionError

LAYERNORM_EPS = 1e-5

# Probability floor inside -log(p): keeps the loss and its gradient finite
# when a softmax entry underflows.
_LOG_FLOOR = 1e-300


def as_matrix(value) -> np.ndarray:
    """Coerce to a 2-D C-contiguous float64 array."""
    arr = np.ascontiguousarray(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise DimensionError(f"expected at most 2 dimensions, got shape {arr.shape}")
    return arr


class Parameter:
    """A named trainable matrix with a persistent gradient accumulator."""

    def __init__(self, name: str, value):
        self.name = name
        self.value = as_matrix(value)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[:] = 0.0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


class Node:
    """One recorded value in the computation graph."""

    __slots__ = ("tape", "value", "grad", "_backward", "attn")

    def __init__(self, tape, value):
        self.tape = tape
        self.value = value
        self.grad = None
        self._backward = None
        self.attn = None  # attention probabilities, set by causal_attention

    @property
    def rows(self):
        return self.value.shape[0]

    @property
    def cols(self):
        return self.value.shape[1]

    def item(self) -> float:
        if self.value.size != 1:
            raise ContractError(f"item() on non-scalar node of shape {self.value.shape}")
        return float(self.value[0, 0])


class Tape:
    """Ordered record of primitive applications for one forward pass."""

    def __init__(self, check_finite: bool = False):
        self.nodes: list[Node] = []
        self.check_finite = check_finite
        self._param_nodes: dict[Parameter, Node] = {}

    def _record(self, value, backward=None) -> Node:
        value = np.ascontiguousarray(value, dtype=np.float64)
        if self.check_finite and not np.isfinite(value).all():
            raise ContractError("non-finite value produced during forward pass")
        node = Node(self, value)
        node._backward = backward
        self.nodes.append(node)
        return node

    def constant(self, value) -> Node:
        """A leaf node. Gradients still accumulate on it and can be read back."""
        return self._record(as_matrix(value))

    def parameter(self, param: Parameter) -> Node:
        """Leaf node for a Parameter; repeated calls on one tape share the node."""
        node = self._param_nodes.get(param)
        if node is None:
            node = self._record(param.value)
            self._param_nodes[param] = node
        return node

    def backward(self, root: Node) -> None:
        """Reverse sweep from a scalar root; deposits gradients into Parameters."""
        if root.tape is not self:
            raise ContractError("root node belongs to a different tape")
        if root.value.shape != (1, 1):
            raise ContractError(f"backward root must be scalar, got shape {root.value.shape}")
        root.grad = np.ones((1, 1))
        for node in reversed(self.nodes):
            if node.grad is not None and node._backward is not None:
                if self.check_finite and not np.isfinite(node.grad).all():
                    raise ContractError("non-finite gradient produced during backward pass")
                node._backward(node.grad)
        for param, node in self._param_nodes.items():
            if node.grad is not None:
                param.grad += node.grad


def _same_tape(*nodes) -> Tape:
    tape = nodes[0].tape
    for n in nodes[1:]:
        if n.tape is not tape:
            raise ContractError("operands recorded on different tapes")
    return tape


def _ensure_grad(node: Node) -> np.ndarray:
    if node.grad is None:
        node.grad = np.zeros_like(node.value)
    return node.grad


def matmul(a: Node, b: Node) -> Node:
    if a.cols != b.rows:
        raise DimensionError(f"matmul shape mismatch: {a.value.shape} x {b.value.shape}")
    tape = _same_tape(a, b)
    av, bv = a.value, b.value

    def backward(g):
        _ensure_grad(a)
        a.grad += g @ bv.T
        _ensure_grad(b)
        b.grad += av.T @ g

    return tape._record(av @ bv, backward)


def transpose(a: Node) -> Node:
    def backward(g):
        _ensure_grad(a)
        a.grad += g.T

    return a.tape._record(a.value.T, backward)


def concat_cols(a: Node, b: Node) -> Node:
    if a.rows != b.rows:
        raise DimensionError(f"concat_cols row mismatch: {a.value.shape} vs {b.value.shape}")
    tape = _same_tape(a, b)
    split = a.cols

    def backward(g):
        _ensure_grad(a)
        a.grad += g[:, :split]
        _ensure_grad(b)
        b.grad += g[:, split:]

    return tape._record(np.concatenate([a.value, b.value], axis=1), backward)


def slice_cols(a: Node, start: int, stop: int) -> Node:
    if not (0 <= start <= stop <= a.cols):
        raise DimensionError(f"slice_cols [{start}:{stop}] out of range for {a.value.shape}")

    def backward(g):
        _ensure_grad(a)
        a.grad[:, start:stop] += g

    return a.tape._record(a.value[:, start:stop], backward)


def gather_rows(a: Node, indices) -> Node:
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise DimensionError("gather_rows expects a flat index array")
    if idx.size and (idx.min() < 0 or idx.max() >= a.rows):
        raise IndexError(f"row index out of range for {a.value.shape}")

    def backward(g):
        _ensure_grad(a)
        np.add.at(a.grad, idx, g)

    return a.tape._record(a.value[idx], backward)


def _binary_shapes(a: Node, b: Node, opname: str) -> bool:
    """Returns True when b is a broadcast row; raises on incompatible shapes."""
    if a.value.shape == b.value.shape:
        return False
    if b.rows == 1 and b.cols == a.cols:
        return True
    raise DimensionError(f"{opname} shape mismatch: {a.value.shape} vs {b.value.shape}")


def add(a: Node, b: Node) -> Node:
    tape = _same_tape(a, b)
    row_broadcast = _binary_shapes(a, b, "add")

    def backward(g):
        _ensure_grad(a)
        a.grad += g
        _ensure_grad(b)
        b.grad += g.sum(axis=0, keepdims=True) if row_broadcast else g

    return tape._record(a.value + b.value, backward)


def sub(a: Node, b: Node) -> Node:
    tape = _same_tape(a, b)
    row_broadcast = _binary_shapes(a, b, "sub")

    def backward(g):
        _ensure_grad(a)
        a.grad += g
        _ensure_grad(b)
        b.grad -= g.sum(axis=0, keepdims=True) if row_broadcast else g

    return tape._record(a.value - b.value, backward)


def scale(a: Node, factor: float) -> Node:
    factor = float(factor)

    def backward(g):
        _ensure_grad(a)
        a.grad += factor * g

    return a.tape._record(factor * a.value, backward)


def relu(a: Node) -> Node:
    av = a.value

    def backward(g):
        _ensure_grad(a)
        a.grad += kernels.relu_grad(av, np.ascontiguousarray(g))

    return a.tape._record(kernels.relu(av), backward)


def layernorm(x: Node, gain: Node, bias: Node) -> Node:
    """Row-wise normalization to zero mean / unit variance, then gain and bias."""
    for p, nm in ((gain, "gain"), (bias, "bias")):
        if p.value.shape != (1, x.cols):
            raise DimensionError(f"layernorm {nm} must be (1, {x.cols}), got {p.value.shape}")
    tape = _same_tape(x, gain, bias)
    y, mean, rstd = kernels.layernorm(x.value, gain.value, bias.value, LAYERNORM_EPS)
    xv, gv = x.value, gain.value

    def backward(g):
        gx, ggain, gbias = kernels.layernorm_grad(xv, gv, mean, rstd, np.ascontiguousarray(g))
        _ensure_grad(x)
        x.grad += gx
        _ensure_grad(gain)
        gain.grad += ggain
        _ensure_grad(bias)
        bias.grad += gbias

    return tape._record(y, backward)


def softmax_rows(x: Node) -> Node:
    if x.rows == 0 or x.cols == 0:
        raise DimensionError(f"softmax_rows on empty input of shape {x.value.shape}")
    p = kernels.softmax_rows(x.value)

    def backward(g):
        _ensure_grad(x)
        x.grad += kernels.softmax_rows_grad(p, np.ascontiguousarray(g))

    return x.tape._record(p, backward)


def nll_rows(probs: Node, targets) -> Node:
    """Per-row negative log of the target entry; (B,K) probs -> (B,1) losses."""
    idx = np.asarray(targets, dtype=np.intp).reshape(-1)
    if idx.shape[0] != probs.rows:
        raise DimensionError(f"{idx.shape[0]} targets for {probs.rows} rows")
    if idx.size and (idx.min() < 0 or idx.max() >= probs.cols):
        raise IndexError(f"target index out of range for row length {probs.cols}")
    rows = np.arange(probs.rows)
    picked = np.maximum(probs.value[rows, idx], _LOG_FLOOR)

    def backward(g):
        _ensure_grad(probs)
        probs.grad[rows, idx] -= g[:, 0] / picked

    return probs.tape._record(-np.log(picked).reshape(-1, 1), backward)


def nll_of_index(prob_row: Node, target: int) -> Node:
    """Scalar -log(prob_row[target]) for a single softmax output row."""
    if prob_row.rows != 1:
        raise ContractError(f"nll_of_index expects one row, got {prob_row.rows}")
    return nll_rows(prob_row, [target])


def sum_all(a: Node) -> Node:
    def backward(g):
        _ensure_grad(a)
        a.grad += g[0, 0]

    return a.tape._record(np.array([[a.value.sum()]]), backward)


def mean_all(a: Node) -> Node:
    return scale(sum_all(a), 1.0 / a.value.size)


def elementwise(kind: str, *inputs) -> Node:
    """Dispatcher over the elementwise family: add, sub, scale, relu, layernorm."""
    ops = {"add": add, "sub": sub, "scale": scale, "relu": relu, "layernorm": layernorm}
    if kind not in ops:
        raise ContractError(f"unknown elementwise kind {kind!r}")
    return ops[kind](*inputs)


def causal_attention(q: Node, k: Node, v: Node, batch: int, seq: int,
                     heads: int, lengths) -> Node:
    """Fused multi-head causal self-attention over a padded batch.

    q, k, v are (batch*seq, d) stacks of per-user sequences. Position j is
    visible from position i iff j <= i and j < lengths[b]; padded rows
    produce outputs but no loss may read them. The attention probabilities
    are kept on the node (node.attn, shape (batch, heads, seq, seq)) for
    inspection.
    """
    tape = _same_tape(q, k, v)
    d = q.cols
    if q.value.shape != k.value.shape or q.value.shape != v.value.shape:
        raise DimensionError("attention operands must share a shape")
    if q.rows != batch * seq:
        raise DimensionError(f"expected {batch * seq} rows, got {q.rows}")
    if d % heads:
        raise DimensionError(f"width {d} not divisible by {heads} heads")
    dh = d // heads
    inv = 1.0 / math.sqrt(dh)
    lengths = np.asarray(lengths, dtype=np.intp)
    if lengths.shape != (batch,) or lengths.min() < 1 or lengths.max() > seq:
        raise ContractError("lengths must be in [1, seq] with one entry per sequence")

    def split(m):  # (batch*seq, d) -> (batch, heads, seq, dh)
        return m.reshape(batch, seq, heads, dh).transpose(0, 2, 1, 3)

    def merge(m):  # inverse of split
        return np.ascontiguousarray(m.transpose(0, 2, 1, 3).reshape(batch * seq, d))

    qh, kh, vh = split(q.value), split(k.value), split(v.value)
    scores = np.matmul(qh, kh.transpose(0, 1, 3, 2)) * inv
    pos = np.arange(seq)
    visible = (pos[None, :] <= pos[:, None])[None, :, :] & (pos[None, None, :] < lengths[:, None, None])
    scores += np.where(visible, 0.0, -1e30)[:, None, :, :]
    attn = kernels.softmax_rows(np.ascontiguousarray(scores.reshape(-1, seq))).reshape(
        batch, heads, seq, seq)
    out = merge(np.matmul(attn, vh))

    def backward(g):
        gh = split(np.ascontiguousarray(g))
        dv = np.matmul(attn.transpose(0, 1, 3, 2), gh)
        da = np.matmul(gh, vh.transpose(0, 1, 3, 2))
        ds = kernels.softmax_rows_grad(
            np.ascontiguousarray(attn.reshape(-1, seq)),
            np.ascontiguousarray(da.reshape(-1, seq)),
        ).reshape(batch, heads, seq, seq) * inv
        dq = np.matmul(ds, kh)
        dk = np.matmul(ds.transpose(0, 1, 3, 2), qh)
        _ensure_grad(q)
        q.grad += merge(dq)
        _ensure_grad(k)
        k.grad += merge(dk)
        _ensure_grad(v)
        v.grad += merge(dv)

    node = tape._record(out, backward)
    node.attn = attn
    return node
