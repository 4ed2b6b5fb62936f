"""Dense float32 tensors with reverse-mode autodiff and recompute boundaries.

Values are plain numpy float32 arrays. Graph nodes record the op that
produced them so `backward` can run reverse-mode differentiation;
`checkpoint_segment` marks a subgraph whose interior activations are
discarded after the forward pass and rebuilt by re-running the segment
during the backward pass. A `GraphTrace` can be installed to account for
live interior activation scalars, attention-score entries and block
forward executions; the accounting counts node output arrays only (not
gradient buffers or op-internal scratch).
"""

from __future__ import annotations

import math
import threading
from typing import Callable, Sequence

import numpy as np

DTYPE = np.float32

# Tensor values are numpy float32 arrays throughout.
Tensor = np.ndarray


class TensorError(Exception):
    pass


class ShapeError(TensorError):
    pass


class NumericError(TensorError):
    pass


class GraphError(TensorError):
    pass


def tensor(data) -> Tensor:
    """Coerce to a contiguous float32 array, rejecting non-finite input."""
    arr = np.ascontiguousarray(data, dtype=DTYPE)
    if not np.all(np.isfinite(arr)):
        raise NumericError("tensor holds non-finite values")
    return arr


# ---------------------------------------------------------------------------
# activation accounting


class GraphTrace:
    """Tally of live interior activation scalars plus op-level counters.

    `live` rises when a non-leaf node is created and falls when a
    checkpoint segment discards (or finishes replaying) its interior.
    `peak` is the high-water mark. `attn_entries` counts attention score
    matrix entries by tag; `forward_counts` counts block executions by tag.
    """

    def __init__(self):
        self.live = 0
        self.peak = 0
        self.attn_entries: dict[str, int] = {}
        self.forward_counts: dict[str, int] = {}
        self._scopes: list[int] = []

    def alloc(self, n: int):
        self.live += n
        if self.live > self.peak:
            self.peak = self.live
        if self._scopes:
            self._scopes = [s + n for s in self._scopes]

    def free(self, n: int):
        self.live -= n
        if self._scopes:
            self._scopes = [s - n for s in self._scopes]

    def push_scope(self):
        self._scopes.append(0)

    def pop_scope(self) -> int:
        """Close the innermost scope and return its net live allocation."""
        return self._scopes.pop()

    def count_attn(self, tag: str, entries: int):
        self.attn_entries[tag] = self.attn_entries.get(tag, 0) + entries

    def count_forward(self, tag: str):
        self.forward_counts[tag] = self.forward_counts.get(tag, 0) + 1

    def total_attn_entries(self, prefix: str = "") -> int:
        return sum(v for k, v in self.attn_entries.items() if k.startswith(prefix))


_state = threading.local()


def active_trace() -> GraphTrace | None:
    return getattr(_state, "trace", None)


class trace:
    """Context manager installing a GraphTrace for the enclosed graph work."""

    def __init__(self, t: GraphTrace | None = None):
        self.trace = t if t is not None else GraphTrace()

    def __enter__(self) -> GraphTrace:
        self._prev = active_trace()
        _state.trace = self.trace
        return self.trace

    def __exit__(self, *exc):
        _state.trace = self._prev
        return False


# ---------------------------------------------------------------------------
# graph nodes

_uid = 0


def _next_uid() -> int:
    global _uid
    _uid += 1
    return _uid


class Node:
    """One value in the computation graph.

    `op` is "leaf" for parameters/inputs, "const" for untracked constants
    (masks etc.), "segment" for checkpoint boundary outputs, otherwise an
    op tag. Gradients flow to leaves; constants block them.
    """

    __slots__ = ("value", "op", "inputs", "attrs", "grad", "segment",
                 "seg_index", "is_param", "name", "uid")

    def __init__(self, value: Tensor, op: str, inputs: tuple = (),
                 attrs: dict | None = None, is_param: bool = False,
                 name: str | None = None):
        self.value = value
        self.op = op
        self.inputs = inputs
        self.attrs = attrs or {}
        self.grad: Tensor | None = None
        self.segment = None
        self.seg_index = 0
        self.is_param = is_param
        self.name = name
        self.uid = _next_uid()
        if op not in ("leaf", "const"):
            t = active_trace()
            if t is not None:
                t.alloc(value.size)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self):
        nm = f" {self.name!r}" if self.name else ""
        return f"<Node {self.op}{nm} shape={self.value.shape}>"


def leaf(data, name: str | None = None, is_param: bool = False) -> Node:
    return Node(tensor(data), "leaf", is_param=is_param, name=name)


def const(data, name: str | None = None) -> Node:
    """Untracked constant (no gradient); used for masks and fixed scalars."""
    arr = np.ascontiguousarray(data, dtype=DTYPE)
    return Node(arr, "const", name=name)


# ---------------------------------------------------------------------------
# forward ops

def _check_finite(arr: Tensor, kind: str):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"op {kind!r} produced non-finite values")


def _shape_err(kind: str, *shapes) -> ShapeError:
    return ShapeError(f"op {kind!r}: incompatible shapes {' vs '.join(str(s) for s in shapes)}")


_GELU_C = math.sqrt(2.0 / math.pi)


def _gelu_fwd(x):
    u = _GELU_C * (x + DTYPE(0.044715) * x * x * x)
    return DTYPE(0.5) * x * (1.0 + np.tanh(u))


def _softmax_fwd(x, axis):
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def _layer_norm_fwd(x, axis, eps):
    mu = np.mean(x, axis=axis, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    return (xc * inv).astype(DTYPE), inv.astype(DTYPE)


def _unbroadcast(grad: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Sum grad down to `shape`, inverting numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def forward_op(kind: str, inputs: Sequence[Node], attrs: dict | None = None) -> Node:
    """Apply one primitive op and record it on the graph.

    Supported kinds: matmul, add, mul, scale, relu, gelu, softmax,
    layer_norm, embedding_lookup, concat, slice, transpose, reshape, sum,
    cross_entropy. Shape mismatches raise ShapeError naming the op; any
    non-finite output raises NumericError.
    """
    attrs = attrs or {}
    vals = [n.value for n in inputs]

    with np.errstate(all="ignore"):  # overflow surfaces as NumericError below
        return _forward_op(kind, inputs, vals, attrs)


def _forward_op(kind, inputs, vals, attrs):
    if kind == "matmul":
        a, b = vals
        if a.ndim < 2 or b.ndim < 2 or a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2] \
                or a.shape[-1] != b.shape[-2]:
            raise _shape_err(kind, a.shape, b.shape)
        out = np.matmul(a, b)
    elif kind == "add":
        a, b = vals
        try:
            out = a + b
        except ValueError:
            raise _shape_err(kind, a.shape, b.shape) from None
    elif kind == "mul":
        a, b = vals
        try:
            out = a * b
        except ValueError:
            raise _shape_err(kind, a.shape, b.shape) from None
    elif kind == "scale":
        out = vals[0] * DTYPE(attrs["factor"])
    elif kind == "relu":
        out = np.maximum(vals[0], 0.0)
    elif kind == "gelu":
        out = _gelu_fwd(vals[0])
    elif kind == "softmax":
        out = _softmax_fwd(vals[0], attrs["axis"])
    elif kind == "layer_norm":
        out, inv = _layer_norm_fwd(vals[0], attrs["axis"], attrs.get("eps", 1e-5))
        attrs = dict(attrs, _inv=inv)
    elif kind == "embedding_lookup":
        table = vals[0]
        ids = attrs["ids"]
        if table.ndim != 2:
            raise _shape_err(kind, table.shape)
        if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
            raise ShapeError(f"op 'embedding_lookup': id out of range for table {table.shape}")
        out = table[ids]
    elif kind == "concat":
        axis = attrs["axis"]
        ref = vals[0].shape
        for v in vals[1:]:
            if len(v.shape) != len(ref) or any(
                    i != axis and v.shape[i] != ref[i] for i in range(len(ref))):
                raise _shape_err(kind, *[v.shape for v in vals])
        out = np.concatenate(vals, axis=axis)
    elif kind == "slice":
        out = np.ascontiguousarray(vals[0][attrs["index"]])
    elif kind == "transpose":
        out = np.ascontiguousarray(np.transpose(vals[0], attrs["axes"]))
    elif kind == "reshape":
        try:
            out = np.ascontiguousarray(vals[0].reshape(attrs["shape"]))
        except ValueError:
            raise _shape_err(kind, vals[0].shape, tuple(attrs["shape"])) from None
    elif kind == "sum":
        out = np.asarray(vals[0].sum(axis=attrs.get("axis"), keepdims=attrs.get("keepdims", False)))
    elif kind == "cross_entropy":
        logits = vals[0]
        targets = attrs["targets"]
        pad_id = attrs.get("pad_id", -1)
        if logits.ndim != 2 or targets.ndim != 1 or logits.shape[0] != targets.shape[0]:
            raise _shape_err(kind, logits.shape, targets.shape)
        mask = targets != pad_id
        n = int(mask.sum())
        if n == 0:
            raise ShapeError("op 'cross_entropy': all target positions are padding")
        m = np.max(logits, axis=1, keepdims=True)
        lse = m + np.log(np.sum(np.exp(logits - m), axis=1, keepdims=True))
        logp = logits - lse
        picked = logp[np.arange(len(targets)), np.where(mask, targets, 0)]
        out = np.asarray(-(picked * mask).sum() / n, dtype=DTYPE)
        attrs = dict(attrs, _probs=np.exp(logp).astype(DTYPE), _mask=mask, _n=n)
    else:
        raise GraphError(f"unknown op kind {kind!r}")

    out = np.ascontiguousarray(out, dtype=DTYPE)
    _check_finite(out, kind)
    return Node(out, kind, tuple(inputs), attrs)


# convenience wrappers

def matmul(a: Node, b: Node) -> Node:
    return forward_op("matmul", (a, b))


def add(a: Node, b: Node) -> Node:
    return forward_op("add", (a, b))


def mul(a: Node, b: Node) -> Node:
    return forward_op("mul", (a, b))


def scale(a: Node, factor: float) -> Node:
    return forward_op("scale", (a,), {"factor": float(factor)})


def relu(a: Node) -> Node:
    return forward_op("relu", (a,))


def gelu(a: Node) -> Node:
    return forward_op("gelu", (a,))


def softmax(a: Node, axis: int = -1) -> Node:
    return forward_op("softmax", (a,), {"axis": axis})


def layer_norm(a: Node, axis: int = -1, eps: float = 1e-5) -> Node:
    return forward_op("layer_norm", (a,), {"axis": axis, "eps": eps})


def embedding_lookup(table: Node, ids) -> Node:
    return forward_op("embedding_lookup", (table,), {"ids": np.asarray(ids, dtype=np.int64)})


def concat(nodes: Sequence[Node], axis: int = 0) -> Node:
    return forward_op("concat", tuple(nodes), {"axis": axis})


def slice_(a: Node, index) -> Node:
    return forward_op("slice", (a,), {"index": index})


def transpose(a: Node, axes: tuple[int, ...]) -> Node:
    return forward_op("transpose", (a,), {"axes": tuple(axes)})


def reshape(a: Node, shape) -> Node:
    return forward_op("reshape", (a,), {"shape": tuple(shape)})


def reduce_sum(a: Node, axis=None, keepdims: bool = False) -> Node:
    return forward_op("sum", (a,), {"axis": axis, "keepdims": keepdims})


def cross_entropy(logits: Node, targets, pad_id: int = -1) -> Node:
    return forward_op("cross_entropy", (logits,),
                      {"targets": np.asarray(targets, dtype=np.int64), "pad_id": pad_id})


# ---------------------------------------------------------------------------
# vector-Jacobian products

def _vjp(node: Node, g: Tensor) -> list[Tensor | None]:
    kind = node.op
    vals = [n.value for n in node.inputs]
    at = node.attrs

    if kind == "matmul":
        a, b = vals
        sw = lambda x: np.swapaxes(x, -1, -2)
        return [np.matmul(g, sw(b)), np.matmul(sw(a), g)]
    if kind == "add":
        return [_unbroadcast(g, vals[0].shape), _unbroadcast(g, vals[1].shape)]
    if kind == "mul":
        a, b = vals
        return [_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)]
    if kind == "scale":
        return [g * DTYPE(at["factor"])]
    if kind == "relu":
        return [g * (vals[0] > 0)]
    if kind == "gelu":
        x = vals[0]
        u = _GELU_C * (x + DTYPE(0.044715) * x * x * x)
        t = np.tanh(u)
        du = _GELU_C * (1.0 + 3.0 * DTYPE(0.044715) * x * x)
        return [(g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)).astype(DTYPE)]
    if kind == "softmax":
        y = node.value
        axis = at["axis"]
        return [(y * (g - np.sum(g * y, axis=axis, keepdims=True))).astype(DTYPE)]
    if kind == "layer_norm":
        axis = at["axis"]
        inv = at["_inv"]
        y = node.value
        gm = np.mean(g, axis=axis, keepdims=True)
        gym = np.mean(g * y, axis=axis, keepdims=True)
        return [(inv * (g - gm - y * gym)).astype(DTYPE)]
    if kind == "embedding_lookup":
        table = vals[0]
        dtable = np.zeros_like(table)
        np.add.at(dtable, at["ids"], g)
        return [dtable]
    if kind == "concat":
        axis = at["axis"]
        grads = []
        off = 0
        for v in vals:
            n = v.shape[axis]
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(off, off + n)
            grads.append(np.ascontiguousarray(g[tuple(sl)]))
            off += n
        return grads
    if kind == "slice":
        dx = np.zeros_like(vals[0])
        dx[at["index"]] = g
        return [dx]
    if kind == "transpose":
        axes = at["axes"]
        inverse = np.argsort(axes)
        return [np.ascontiguousarray(np.transpose(g, inverse))]
    if kind == "reshape":
        return [np.ascontiguousarray(g.reshape(vals[0].shape))]
    if kind == "sum":
        axis = at.get("axis")
        if axis is None:
            return [np.broadcast_to(g, vals[0].shape).astype(DTYPE)]
        gx = g
        if not at.get("keepdims", False):
            gx = np.expand_dims(g, axis)
        return [np.broadcast_to(gx, vals[0].shape).astype(DTYPE)]
    if kind == "cross_entropy":
        probs, mask, n = at["_probs"], at["_mask"], at["_n"]
        targets = at["targets"]
        d = probs.copy()
        d[np.arange(len(targets)), np.where(mask, targets, 0)] -= 1.0
        d *= (mask[:, None] / n)
        return [(d * g).astype(DTYPE)]
    raise GraphError(f"no gradient rule for op {kind!r}")


# ---------------------------------------------------------------------------
# backward with checkpoint replay

class _Segment:
    """Bookkeeping for one checkpointed subgraph."""

    __slots__ = ("replay", "inputs", "output_values", "n_outputs", "uid")

    def __init__(self, replay, inputs, output_values):
        self.replay = replay
        self.inputs = inputs
        self.output_values = output_values
        self.n_outputs = len(output_values)
        self.uid = _next_uid()


def checkpoint_segment(replay: Callable, inputs: Sequence[Node]) -> list[Node]:
    """Run `replay` on `inputs`, keeping only boundary values.

    The interior graph built by `replay` is discarded after the forward
    pass; `backward` re-executes `replay` to rebuild it (and raises
    GraphError if the outputs differ, i.e. the replay is not
    deterministic). Returns one boundary Node per replay output.
    """
    inputs = list(inputs)
    t = active_trace()
    if t is not None:
        t.push_scope()
    fresh = [Node(n.value, "leaf", name=n.name) for n in inputs]
    outs = replay(*fresh)
    if isinstance(outs, Node):
        outs = [outs]
    out_values = [o.value for o in outs]
    interior = t.pop_scope() if t is not None else 0
    if t is not None:
        # boundary outputs stay cached; only the interior is released
        t.free(interior)

    seg = _Segment(replay, inputs, out_values)
    boundary = []
    for i, v in enumerate(out_values):
        node = Node(v, "segment", tuple(inputs))
        node.segment = seg
        node.seg_index = i
        boundary.append(node)
    return boundary


def _topo(roots: Sequence[Node]) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(r, False) for r in reversed(roots)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.uid in seen:
            continue
        seen.add(node.uid)
        stack.append((node, True))
        for inp in node.inputs:
            if inp.uid not in seen:
                stack.append((inp, False))
    return order


def _accum(store: dict[int, Tensor], node: Node, g: Tensor):
    prev = store.get(node.uid)
    store[node.uid] = g if prev is None else prev + g


def _backward_multi(roots: list[Node], seeds: list[Tensor]) -> dict[int, tuple[Node, Tensor]]:
    """Reverse-mode sweep from several roots; returns grads for leaf nodes.

    Keys are node uids (stable topological accumulation order); values
    pair the leaf Node with its gradient.
    """
    topo = _topo(roots)
    grads: dict[int, Tensor] = {}
    by_uid = {n.uid: n for n in topo}
    for root, seed in zip(roots, seeds):
        _accum(grads, root, seed)

    # group checkpoint boundary nodes so each segment replays exactly once
    seg_reachable: dict[int, list[Node]] = {}
    for n in topo:
        if n.op == "segment":
            seg_reachable.setdefault(n.segment.uid, []).append(n)
    seg_remaining = {k: len(v) for k, v in seg_reachable.items()}
    seg_grads: dict[int, dict[int, Tensor]] = {}

    leaf_grads: dict[int, tuple[Node, Tensor]] = {}

    for node in reversed(topo):
        g = grads.pop(node.uid, None)
        if g is None:
            continue
        if node.op == "leaf":
            if node.uid in leaf_grads:
                leaf_grads[node.uid] = (node, leaf_grads[node.uid][1] + g)
            else:
                leaf_grads[node.uid] = (node, g)
            node.grad = leaf_grads[node.uid][1]
            continue
        if node.op == "const":
            continue
        if node.op == "segment":
            seg = node.segment
            seg_grads.setdefault(seg.uid, {})[node.seg_index] = g
            seg_remaining[seg.uid] -= 1
            if seg_remaining[seg.uid] == 0:
                inner = _replay_backward(seg, seg_grads.pop(seg.uid))
                for n, ig in inner:
                    if n.uid in by_uid or n.uid in grads:
                        _accum(grads, n, ig)
                    else:
                        # leaves living only inside the segment (parameters)
                        if n.uid in leaf_grads:
                            leaf_grads[n.uid] = (n, leaf_grads[n.uid][1] + ig)
                        else:
                            leaf_grads[n.uid] = (n, ig)
                        n.grad = leaf_grads[n.uid][1]
            continue
        for inp, ig in zip(node.inputs, _vjp(node, g)):
            if ig is not None and inp.op != "const":
                _accum(grads, inp, ig)
    return leaf_grads


def _replay_backward(seg: _Segment, out_grads: dict[int, Tensor]) -> list[tuple[Node, Tensor]]:
    t = active_trace()
    if t is not None:
        t.push_scope()
    fresh = [Node(n.value, "leaf", name=n.name) for n in seg.inputs]
    fresh_uids = {f.uid: i for i, f in enumerate(fresh)}
    outs = seg.replay(*fresh)
    if isinstance(outs, Node):
        outs = [outs]
    if len(outs) != seg.n_outputs:
        raise GraphError("checkpoint replay returned a different number of outputs")
    for o, stored in zip(outs, seg.output_values):
        if not np.array_equal(o.value, stored):
            raise GraphError("checkpoint replay is nondeterministic: outputs changed on re-execution")

    roots, seeds = [], []
    for i, o in enumerate(outs):
        if i in out_grads:
            roots.append(o)
            seeds.append(out_grads[i])
    inner = _backward_multi(roots, seeds) if roots else {}

    result: list[tuple[Node, Tensor]] = []
    for uid, (n, g) in inner.items():
        if uid in fresh_uids:
            result.append((seg.inputs[fresh_uids[uid]], g))
        else:
            result.append((n, g))
    if t is not None:
        t.free(t.pop_scope())
    return result


def backward(loss: Node) -> dict[Node, Tensor]:
    """Gradients of a scalar loss for every reachable leaf node.

    Accumulation is a sum over all paths, applied in a fixed reverse
    topological order so repeated runs are bitwise identical.
    """
    if loss.value.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.value.shape}")
    seed = np.ones_like(loss.value)
    leaf_grads = _backward_multi([loss], [seed])
    return {n: g for n, g in leaf_grads.values()}


def parameter_grads(grads: dict[Node, Tensor]) -> dict[str, Tensor]:
    """Restrict a backward() result to named parameter leaves."""
    return {n.name: g for n, g in grads.items() if n.is_param and n.name}
