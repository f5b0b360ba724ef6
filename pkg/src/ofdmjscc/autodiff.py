"""Reverse-mode automatic differentiation on dense float64 numpy arrays.

A small define-by-run engine: every operation returns a :class:`Node` holding
the forward value, references to its parent nodes and a closure that computes
vector-Jacobian products. :func:`backward` sweeps the graph in reverse
topological order and accumulates gradients.

Determinism contract: gradient contributions into a node are summed in a
canonical order (sorted by consumer node id), so *any* valid topological
order passed to :func:`backward` produces bitwise-identical gradients.

Complex signals are represented as pairs of real nodes (see :mod:`.cplx`);
there is no complex dtype anywhere in the graph.
"""

from __future__ import annotations

import itertools
import math
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

_ids = itertools.count()

# Test hook: scales the VJP of a given op tag during backward. Used by the
# gradient-check harness to prove it can detect a broken backward pass.
_vjp_scale: dict[str, float] = {}


@contextmanager
def perturb_vjp(op: str, scale: float):
    """Scale the backward pass of every node tagged ``op`` (test hook)."""
    _vjp_scale[op] = float(scale)
    try:
        yield
    finally:
        _vjp_scale.pop(op, None)


class Node:
    """One value in the computation graph."""

    __slots__ = ("value", "parents", "vjp", "op", "nid", "grad")

    def __init__(self, value: np.ndarray, parents: tuple = (), vjp=None, op: str = "leaf"):
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.op = op
        self.nid = next(_ids)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Node(op={self.op!r}, shape={self.value.shape}, nid={self.nid})"


def _freeze(arr: np.ndarray) -> np.ndarray:
    # note: not ascontiguousarray -- that silently promotes 0-d to 1-d
    out = np.array(arr, dtype=np.float64, order="C", copy=True)
    out.setflags(write=False)
    return out


def leaf(value, op: str = "leaf") -> Node:
    """Wrap an array as a graph leaf (copied; values are immutable)."""
    return Node(_freeze(np.asarray(value, dtype=np.float64)), op=op)


def constant(value) -> Node:
    return leaf(value, op="const")


def as_node(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


def assign(node: Node, value) -> None:
    """Replace a leaf's value in place (optimizer updates between graphs)."""
    if node.parents:
        raise ValueError("assign: only leaf nodes can be assigned")
    new = _freeze(np.asarray(value, dtype=np.float64))
    if new.shape != node.value.shape:
        raise ValueError(f"assign: shape {new.shape} != {node.value.shape}")
    if not np.all(np.isfinite(new)):
        raise FloatingPointError("assign: non-finite value")
    node.value = new


def record(op: str, inputs: Sequence[Node], forward: Callable, vjp: Callable) -> Node:
    """Run ``forward`` on the input values and record the result node.

    Raises ``FloatingPointError`` if the forward produces NaN/Inf and
    ``TypeError``/``ValueError`` on malformed inputs.
    """
    for n in inputs:
        if not isinstance(n, Node):
            raise TypeError(f"{op}: inputs must be Node, got {type(n).__name__}")
    with np.errstate(over="raise", invalid="raise", divide="raise"):
        try:
            value = forward(*(n.value for n in inputs))
        except FloatingPointError as e:
            raise FloatingPointError(f"{op}: non-finite forward value ({e})") from None
    value = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(value)):
        raise FloatingPointError(f"{op}: non-finite forward value")
    value.setflags(write=False)
    return Node(value, tuple(inputs), vjp, op)


def _require_same_shape(op: str, a: Node, b: Node) -> None:
    if a.value.shape != b.value.shape:
        raise ValueError(f"{op}: shape mismatch {a.value.shape} vs {b.value.shape} "
                         "(no implicit broadcasting)")


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a: Node, b: Node) -> Node:
    _require_same_shape("add", a, b)
    return record("add", (a, b), np.add, lambda g: (g, g))


def sub(a: Node, b: Node) -> Node:
    _require_same_shape("sub", a, b)
    return record("sub", (a, b), np.subtract, lambda g: (g, -g))


def mul(a: Node, b: Node) -> Node:
    _require_same_shape("mul", a, b)
    av, bv = a.value, b.value
    return record("mul", (a, b), np.multiply, lambda g: (g * bv, g * av))


def div(a: Node, b: Node) -> Node:
    _require_same_shape("div", a, b)
    if np.any(b.value == 0.0):
        raise ZeroDivisionError("div: zero denominator")
    av, bv = a.value, b.value
    return record("div", (a, b), np.divide,
                  lambda g: (g / bv, -g * av / (bv * bv)))


def neg(a: Node) -> Node:
    return record("neg", (a,), np.negative, lambda g: (-g,))


def add_const(a: Node, c: float) -> Node:
    c = float(c)
    return record("add_const", (a,), lambda x: x + c, lambda g: (g,))


def mul_const(a: Node, c: float) -> Node:
    c = float(c)
    return record("mul_const", (a,), lambda x: x * c, lambda g: (g * c,))


def sqrt(a: Node) -> Node:
    if np.any(a.value < 0.0):
        raise ValueError("sqrt: negative input")
    out = record("sqrt", (a,), np.sqrt, None)
    sv = out.value
    out.vjp = lambda g: (g * (0.5 / sv),)
    return out


def recip(a: Node) -> Node:
    if np.any(a.value == 0.0):
        raise ZeroDivisionError("recip: zero input")
    av = a.value
    return record("recip", (a,), np.reciprocal, lambda g: (-g / (av * av),))


def safe_recip(a: Node) -> Node:
    """1/x where x > 0, else 0 (receiver convention for null denominators)."""
    av = a.value
    pos = av > 0.0
    inv = np.zeros_like(av)
    np.divide(1.0, av, where=pos, out=inv)
    return record("safe_recip", (a,), lambda x: inv,
                  lambda g: (np.where(pos, -g * inv * inv, 0.0),))


def relu(a: Node) -> Node:
    mask = a.value > 0.0
    return record("relu", (a,), lambda x: np.where(mask, x, 0.0),
                  lambda g: (np.where(mask, g, 0.0),))


def sigmoid(a: Node) -> Node:
    x = a.value
    out = np.empty_like(x)
    pos = x >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    node = record("sigmoid", (a,), lambda x_: out, None)
    sv = node.value
    node.vjp = lambda g: (g * sv * (1.0 - sv),)
    return node


# ---------------------------------------------------------------------------
# reductions / shape ops
# ---------------------------------------------------------------------------

def sum_all(a: Node) -> Node:
    shape = a.value.shape
    return record("sum_all", (a,), lambda x: np.asarray(np.sum(x)),
                  lambda g: (np.broadcast_to(g, shape),))


def sum_axes(a: Node, axes: int | tuple) -> Node:
    if isinstance(axes, int):
        axes = (axes,)
    axes = tuple(ax % a.value.ndim for ax in axes)
    shape = a.value.shape
    kshape = tuple(1 if i in axes else s for i, s in enumerate(shape))

    def bwd(g):
        return (np.broadcast_to(g.reshape(kshape), shape),)

    return record("sum_axes", (a,), lambda x: np.sum(x, axis=axes), bwd)


def reshape(a: Node, shape: tuple) -> Node:
    old = a.value.shape
    return record("reshape", (a,), lambda x: np.reshape(x, shape),
                  lambda g: (np.reshape(g, old),))


def slice_(a: Node, key) -> Node:
    """Basic slicing (tuple of ``slice``/int); the gradient scatters back."""
    shape = a.value.shape

    def bwd(g):
        out = np.zeros(shape)
        out[key] = g
        return (out,)

    return record("slice", (a,), lambda x: x[key].copy(), bwd)


def concat(nodes: Sequence[Node], axis: int) -> Node:
    nodes = list(nodes)
    if not nodes:
        raise ValueError("concat: empty input list")
    axis = axis % nodes[0].value.ndim
    sizes = [n.value.shape[axis] for n in nodes]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return record("concat", tuple(nodes), lambda *xs: np.concatenate(xs, axis=axis), bwd)


def tile(a: Node, axis: int, reps: int) -> Node:
    """Repeat a size-1 axis ``reps`` times; gradient sums back over it."""
    axis = axis % a.value.ndim
    if a.value.shape[axis] != 1:
        raise ValueError(f"tile: axis {axis} must have size 1, got {a.value.shape}")
    return record("tile", (a,), lambda x: np.repeat(x, reps, axis=axis),
                  lambda g: (np.sum(g, axis=axis, keepdims=True),))


def matmul(a: Node, b: Node) -> Node:
    """``a @ b`` with ``a`` of shape (..., n, k) and ``b`` strictly (k, m)."""
    if b.value.ndim != 2 or a.value.ndim < 2:
        raise ValueError(f"matmul: need a(...,n,k) @ b(k,m), got {a.shape} @ {b.shape}")
    if a.value.shape[-1] != b.value.shape[0]:
        raise ValueError(f"matmul: inner dims {a.shape} @ {b.shape}")
    av, bv = a.value, b.value

    def bwd(g):
        ga = g @ bv.T
        a2 = av.reshape(-1, av.shape[-1])
        g2 = g.reshape(-1, g.shape[-1])
        gb = a2.T @ g2
        return ga, gb

    return record("matmul", (a, b), np.matmul, bwd)


# ---------------------------------------------------------------------------
# broadcast helpers (explicit, no silent broadcasting elsewhere)
# ---------------------------------------------------------------------------

def bias_last(x: Node, b: Node) -> Node:
    """Add a vector along the last axis: ``x + b`` with b of shape (C,)."""
    if b.value.ndim != 1 or x.value.shape[-1] != b.value.shape[0]:
        raise ValueError(f"bias_last: {x.shape} + {b.shape}")
    red = tuple(range(x.value.ndim - 1))
    return record("bias_last", (x, b), lambda xv, bv: xv + bv,
                  lambda g: (g, np.sum(g, axis=red)))


def scale_last(x: Node, s: Node) -> Node:
    """Multiply by a vector along the last axis (shape (C,))."""
    if s.value.ndim != 1 or x.value.shape[-1] != s.value.shape[0]:
        raise ValueError(f"scale_last: {x.shape} * {s.shape}")
    red = tuple(range(x.value.ndim - 1))
    xv, sv = x.value, s.value
    return record("scale_last", (x, s), lambda a, b: a * b,
                  lambda g: (g * sv, np.sum(g * xv, axis=red)))


def scale_first(x: Node, s: Node) -> Node:
    """Multiply by a per-row scalar: x of shape (B, ...), s of shape (B,)."""
    if s.value.ndim != 1 or x.value.ndim < 1 or x.value.shape[0] != s.value.shape[0]:
        raise ValueError(f"scale_first: {x.shape} * {s.shape}")
    bshape = (s.value.shape[0],) + (1,) * (x.value.ndim - 1)
    red = tuple(range(1, x.value.ndim))
    xv = x.value
    sv = s.value.reshape(bshape)
    return record("scale_first", (x, s), lambda a, b: a * sv,
                  lambda g: (g * sv, np.sum(g * xv, axis=red)))


def scale_all(x: Node, s: Node) -> Node:
    """Multiply the whole tensor by a scalar node (shape ())."""
    if s.value.shape not in ((), (1,)):
        raise ValueError(f"scale_all: scalar node required, got {s.shape}")
    xv = x.value
    sv = float(s.value)
    return record("scale_all", (x, s), lambda a, b: a * sv,
                  lambda g: (g * sv, np.asarray(np.sum(g * xv)).reshape(s.value.shape)))


# ---------------------------------------------------------------------------
# DSP / NN structured ops
# ---------------------------------------------------------------------------

def clip_scale(a2: Node, threshold: float) -> Node:
    """Per-sample scale factor for amplitude clipping.

    Input is the squared amplitude ``a2 = re**2 + im**2``; output is
    ``min(1, t / sqrt(a2))`` so that the clipped signal ``s * (re, im)`` has
    amplitude ``min(t, sqrt(a2))`` and unchanged phase. Samples on or below
    the threshold pass through the identity branch. On the clipped branch a
    4-ulp shrink keeps the measured amplitude <= t under rounding.
    """
    t = float(threshold)
    if not (t > 0.0):
        raise ValueError("clip_scale: threshold must be > 0")
    v = a2.value
    if np.any(v < 0.0):
        raise ValueError("clip_scale: squared amplitudes must be >= 0")
    mask = v > t * t
    s = np.ones_like(v)
    shrink = 1.0 - 4.0 * np.finfo(np.float64).eps
    np.divide(t * shrink, np.sqrt(v, where=mask, out=np.ones_like(v)), where=mask, out=s)

    def bwd(g):
        d = np.zeros_like(v)
        np.divide(-0.5 * t, v * np.sqrt(v, where=mask, out=np.ones_like(v)),
                  where=mask, out=d)
        return (g * d,)

    return record("clip_scale", (a2,), lambda x: s, bwd)


def fir(y: Node, taps: np.ndarray) -> Node:
    """Leading-aligned FIR filter with constant (non-differentiated) taps.

    ``y`` has shape (B, T) and ``taps`` (B, L); output sample n of row b is
    ``sum_l taps[b, l] * y[b, n - l]`` (zero for n < l), truncated to length T.
    """
    taps = np.asarray(taps, dtype=np.float64)
    if y.value.ndim != 2 or taps.ndim != 2 or taps.shape[0] != y.value.shape[0]:
        raise ValueError(f"fir: need y(B,T), taps(B,L); got {y.shape}, {taps.shape}")
    B, T = y.value.shape
    L = taps.shape[1]
    if L > T:
        raise ValueError("fir: more taps than samples")

    def fwd(yv):
        out = np.zeros_like(yv)
        for l in range(L):
            out[:, l:] += taps[:, l:l + 1] * yv[:, :T - l]
        return out

    def bwd(g):
        gy = np.zeros((B, T))
        for l in range(L):
            gy[:, :T - l] += taps[:, l:l + 1] * g[:, l:]
        return (gy,)

    return record("fir", (y,), fwd, bwd)


def conv2d(x: Node, w: Node, stride: int = 1, pad: tuple[int, int] = (0, 0)) -> Node:
    """2-D convolution. x: (B, H, W, Cin), w: (kh, kw, Cin, Cout)."""
    if x.value.ndim != 4 or w.value.ndim != 4:
        raise ValueError(f"conv2d: need x(B,H,W,C), w(kh,kw,Cin,Cout); got {x.shape}, {w.shape}")
    B, H, W, Cin = x.value.shape
    kh, kw, wc, Cout = w.value.shape
    if wc != Cin:
        raise ValueError(f"conv2d: channel mismatch {Cin} vs {wc}")
    ph, pw = pad
    s = int(stride)
    Ho = (H + 2 * ph - kh) // s + 1
    Wo = (W + 2 * pw - kw) // s + 1
    if Ho < 1 or Wo < 1:
        raise ValueError("conv2d: output would be empty")

    xp = np.pad(x.value, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    cols = win[:, ::s, ::s].transpose(0, 1, 2, 4, 5, 3).reshape(B * Ho * Wo, kh * kw * Cin)
    wmat = w.value.reshape(kh * kw * Cin, Cout)

    def fwd(xv, wv):
        return (cols @ wmat).reshape(B, Ho, Wo, Cout)

    def bwd(g):
        g2 = g.reshape(B * Ho * Wo, Cout)
        gw = (cols.T @ g2).reshape(kh, kw, Cin, Cout)
        gcols = (g2 @ wmat.T).reshape(B, Ho, Wo, kh, kw, Cin)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, i:i + s * Ho:s, j:j + s * Wo:s, :] += gcols[:, :, :, i, j, :]
        gx = gxp[:, ph:ph + H, pw:pw + W, :]
        return np.ascontiguousarray(gx), gw

    return record("conv2d", (x, w), fwd, bwd)


def upsample2x(x: Node) -> Node:
    """Nearest-neighbour 2x upsampling of (B, H, W, C); gradient sum-pools."""
    if x.value.ndim != 4:
        raise ValueError(f"upsample2x: need (B,H,W,C), got {x.shape}")
    B, H, W, C = x.value.shape

    def bwd(g):
        return (g.reshape(B, H, 2, W, 2, C).sum(axis=(2, 4)),)

    return record("upsample2x", (x,),
                  lambda v: np.repeat(np.repeat(v, 2, axis=1), 2, axis=2), bwd)


# ---------------------------------------------------------------------------
# backward sweep
# ---------------------------------------------------------------------------

def _reachable(loss: Node) -> list[Node]:
    seen = {loss.nid: loss}
    stack = [loss]
    while stack:
        node = stack.pop()
        for p in node.parents:
            if p.nid >= node.nid:
                raise RuntimeError("cycle detected: parent id >= child id")
            if p.nid not in seen:
                seen[p.nid] = p
                stack.append(p)
    return [seen[k] for k in sorted(seen, reverse=True)]


def backward(loss: Node, order: Sequence[Node] | None = None) -> dict[Node, np.ndarray]:
    """Accumulate d(loss)/d(node) for every node reachable from ``loss``.

    Returns a map node -> gradient and also stores it on ``node.grad``
    (overwriting anything from a previous sweep). ``order`` may supply an
    alternative topological order (children before parents) for testing; the
    result is bitwise-identical for any valid order.
    """
    if loss.value.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.value.shape}")
    canonical = _reachable(loss)
    if order is None:
        nodes = canonical
    else:
        nodes = list(order)
        if {n.nid for n in nodes} != {n.nid for n in canonical} or len(nodes) != len(canonical):
            raise ValueError("backward: order must cover exactly the reachable graph")
        pos = {n.nid: i for i, n in enumerate(nodes)}
        for n in nodes:
            for p in n.parents:
                if pos[p.nid] <= pos[n.nid]:
                    raise ValueError("backward: order is not topological")

    pending: dict[int, list[tuple[int, np.ndarray]]] = {
        loss.nid: [(-1, np.ones(loss.value.shape))]}
    grads: dict[Node, np.ndarray] = {}
    for node in nodes:
        parts = pending.pop(node.nid, None)
        if parts is None:
            g = np.zeros(node.value.shape)
        else:
            parts.sort(key=lambda t: t[0], reverse=True)
            g = parts[0][1]
            for _, arr in parts[1:]:
                g = g + arr
            g = np.asarray(g, dtype=np.float64)
            if g.shape != node.value.shape:
                raise ValueError(f"backward: gradient shape {g.shape} != value shape "
                                 f"{node.value.shape} at op {node.op!r}")
        node.grad = g
        grads[node] = g
        if node.parents:
            factor = _vjp_scale.get(node.op, 1.0)
            pgrads = node.vjp(g)
            if len(pgrads) != len(node.parents):
                raise RuntimeError(f"backward: op {node.op!r} returned {len(pgrads)} "
                                   f"gradients for {len(node.parents)} parents")
            for p, pg in zip(node.parents, pgrads):
                if factor != 1.0:
                    pg = pg * factor
                pending.setdefault(p.nid, []).append((node.nid, pg))
    return grads


# ---------------------------------------------------------------------------
# finite-difference gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    name: str
    n_coords: int
    max_rel_err: float
    max_abs_err: float
    worst_index: int
    passed: bool
    noise_floor: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status}  {self.name:<28s} coords={self.n_coords:<6d} "
                f"max_rel_err={self.max_rel_err:.3e}")


def fd_noise_floor(f0: float, step: float) -> float:
    """Absolute resolution of a central difference of a scalar of size ``f0``.

    Rounding of the two function evaluations alone perturbs the quotient by
    about ``eps * |f0| / step``; anything below a small multiple of that is
    indistinguishable from an exact match.
    """
    return 64.0 * np.finfo(np.float64).eps * (1.0 + abs(f0)) / step


def grad_errors(analytic: np.ndarray, fd: np.ndarray, tol: float,
                floor: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-coordinate (rel_err, abs_err, ok) arrays.

    ``rel_err = |a - f| / (|a| + |f| + 1e-12)``; a coordinate passes when the
    relative error is within ``tol`` or the absolute error is below the
    finite-difference noise floor (relevant only where the true gradient is
    zero or tiny — e.g. parameters whose effect is cancelled by a later
    normalization — and the comparison is noise against noise).
    """
    abs_err = np.abs(analytic - fd)
    rel_err = abs_err / (np.abs(analytic) + np.abs(fd) + 1e-12)
    ok = (rel_err <= tol) | (abs_err <= floor)
    return rel_err, abs_err, ok


def finite_diff_check(fn: Callable[[Node], Node], point: np.ndarray,
                      step: float = 1e-5, tol: float = 1e-6,
                      name: str = "fn", coords: np.ndarray | None = None) -> GradCheckReport:
    """Compare the analytic gradient of a scalar ``fn`` against central
    finite differences.

    ``fn`` maps a leaf node to a scalar node and must be deterministic (any
    randomness frozen); this is verified by evaluating the base point twice.
    ``coords`` optionally restricts the check to a subset of flat indices.
    Pass criterion per coordinate: see :func:`grad_errors`.
    """
    point = np.asarray(point, dtype=np.float64)
    x0 = leaf(point)
    loss = fn(x0)
    if loss.value.size != 1:
        raise ValueError("finite_diff_check: fn must return a scalar node")
    v0 = float(loss.value)
    v0b = float(fn(leaf(point)).value)
    if v0 != v0b:
        raise RuntimeError("finite_diff_check: fn is nondeterministic at the base point")
    analytic = backward(loss)[x0].reshape(-1)

    flat_idx = np.arange(point.size) if coords is None else np.asarray(coords, dtype=int)
    fd = np.empty(flat_idx.size)
    for j, idx in enumerate(flat_idx):
        pert = point.copy().reshape(-1)
        pert[idx] += step
        hi = float(fn(leaf(pert.reshape(point.shape))).value)
        pert[idx] -= 2 * step
        lo = float(fn(leaf(pert.reshape(point.shape))).value)
        fd[j] = (hi - lo) / (2 * step)

    floor = fd_noise_floor(v0, step)
    rel_err, abs_err, ok = grad_errors(analytic[flat_idx], fd, tol, floor)
    if rel_err.size == 0:
        return GradCheckReport(name, 0, 0.0, 0.0, 0, True, floor)
    bad = ~ok
    worst = int(np.argmax(np.where(bad, rel_err, -1.0))) if bad.any() \
        else int(np.argmax(rel_err))
    return GradCheckReport(name=name, n_coords=int(flat_idx.size),
                           max_rel_err=float(rel_err[worst]),
                           max_abs_err=float(abs_err[worst]),
                           worst_index=int(flat_idx[worst]),
                           passed=bool(ok.all()), noise_floor=floor)
