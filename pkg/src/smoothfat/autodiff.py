"""Tape-based reverse-mode automatic differentiation over numpy arrays.

A :class:`Tape` records every primitive applied to tensors that descend from
one of its leaves. ``tape.backward(root)`` walks the record once in reverse and
returns the gradient of the scalar ``root`` for every leaf.

    tape = Tape()
    x = tape.leaf(np.array([3.0]))
    y = (x * x).sum()
    tape.backward(y)[x]        # -> array([6.])

Tensors created without a tape are constants: they never receive gradients and
are safe to share between threads. A tape itself is single-threaded.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels


class ShapeError(ValueError):
    """Input shapes do not satisfy a primitive's shape rule."""


class NonFiniteError(ValueError):
    """A NaN or Inf reached a tensor."""


def _check_finite(arr, what):
    # one reduction instead of an elementwise mask: any NaN/Inf poisons the sum
    if arr.dtype.kind == "f" and not np.isfinite(arr.sum()):
        raise NonFiniteError(f"non-finite values in {what}")


class Tensor:
    """Dense real array, optionally attached to a :class:`Tape`."""

    __slots__ = ("data", "tape", "node", "__weakref__")

    def __init__(self, data, tape=None, node=None):
        self.data = data
        self.tape = tape
        self.node = node

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def requires_grad(self):
        return self.tape is not None and self.tape.nodes[self.node].needs_grad

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def __repr__(self):
        tag = f", node={self.node}" if self.tape is not None else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    # operator sugar; each maps onto one registered primitive
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def relu(self):
        return relu(self)

    def abs(self):
        return absolute(self)

    def sum(self, axis=None):
        return reduce_sum(self, axis)

    def mean(self, axis=None):
        return reduce_mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def constant(value, dtype=None):
    """Wrap ``value`` as a tape-less tensor. Non-finite values are rejected."""
    if isinstance(value, Tensor):
        return value
    arr = np.asarray(value, dtype=dtype)
    if arr.dtype.kind not in "fiub":
        raise TypeError(f"unsupported dtype {arr.dtype}")
    if arr.dtype.kind != "f":
        arr = arr.astype(np.float64)
    _check_finite(arr, "constant")
    return Tensor(arr)


@dataclass
class Node:
    kind: str
    parents: tuple
    ctx: object
    shape: tuple
    needs_grad: bool
    attrs: dict = field(default_factory=dict)


class Tape:
    """Ordered record of primitive applications.

    Nodes are appended as operations execute, so parents always precede
    children and the reversed list is a valid backward order.
    """

    def __init__(self):
        self.nodes = []
        self.leaves = []

    def leaf(self, value, dtype=None, requires_grad=True):
        arr = np.array(value, dtype=dtype, copy=True)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        _check_finite(arr, "leaf tensor")
        nid = len(self.nodes)
        self.nodes.append(Node("leaf", (), None, arr.shape, requires_grad))
        t = Tensor(arr, self, nid)
        if requires_grad:
            self.leaves.append(t)
        return t

    def record(self, kind, inputs, out, ctx, attrs):
        parents = tuple(t.node if t.tape is self else None for t in inputs)
        needs = any(p is not None and self.nodes[p].needs_grad for p in parents)
        nid = len(self.nodes)
        self.nodes.append(Node(kind, parents, ctx, out.shape, needs, attrs))
        return Tensor(out, self, nid)

    def backward(self, root):
        """Gradients of scalar ``root`` for every leaf, as ``{leaf: array}``.

        Leaves with no path to ``root`` get zeros. The tape is not modified,
        so repeated calls return identical gradients.
        """
        if root.tape is not self:
            raise ValueError("root tensor is not recorded on this tape")
        if root.data.size != 1:
            raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")
        grads = {root.node: np.ones(root.shape, dtype=root.dtype)}
        for nid in range(root.node, -1, -1):
            g = grads.pop(nid, None) if self.nodes[nid].kind != "leaf" else grads.get(nid)
            node = self.nodes[nid]
            if g is None or node.kind == "leaf" or not node.needs_grad:
                continue
            needs = tuple(p is not None and self.nodes[p].needs_grad for p in node.parents)
            in_grads = BACKWARD_RULES[node.kind](node.ctx, g, needs, **node.attrs)
            for p, need, gi in zip(node.parents, needs, in_grads):
                if not need or gi is None:
                    continue
                if p in grads:
                    grads[p] = grads[p] + gi
                else:
                    grads[p] = gi
        out = {}
        for leaf in self.leaves:
            g = grads.get(leaf.node)
            out[leaf] = np.zeros_like(leaf.data) if g is None else g.reshape(leaf.shape)
        return out

    def gradient(self, root, *wrt):
        """Gradients of ``root`` for the given leaves, in order."""
        all_grads = self.backward(root)
        return [all_grads[t] for t in wrt]


def backward(tape, root):
    return tape.backward(root)


# ---------------------------------------------------------------------------
# primitive registry
# ---------------------------------------------------------------------------

# kind -> forward(*arrays, **attrs) -> (out, ctx)
FORWARD_RULES = {}
# kind -> backward(ctx, grad_out, needs, **attrs) -> tuple of input grads
BACKWARD_RULES = {}


def primitive(kind):
    def register(fwd):
        FORWARD_RULES[kind] = fwd
        return fwd
    return register


def gradient_rule(kind):
    def register(bwd):
        BACKWARD_RULES[kind] = bwd
        return bwd
    return register


def forward_primitive(kind, *inputs, **attrs):
    """Apply primitive ``kind`` to tensors (or array-likes) and record it."""
    tensors = [x if isinstance(x, Tensor) else constant(x) for x in inputs]
    tapes = {id(t.tape): t.tape for t in tensors if t.tape is not None}
    if len(tapes) > 1:
        raise ValueError(f"{kind}: inputs belong to different tapes")
    out, ctx = FORWARD_RULES[kind](*(t.data for t in tensors), **attrs)
    _check_finite(out, f"output of {kind}")
    if not tapes:
        return Tensor(out)
    tape = next(iter(tapes.values()))
    return tape.record(kind, tensors, out, ctx, attrs)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shape(kind, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: cannot broadcast shapes {a.shape} and {b.shape}") from None


def _dtype(a, b):
    # float32 training stays float32 when mixed with float64 constants
    return np.result_type(a.dtype, b.dtype) if a.dtype == b.dtype else min(
        a.dtype, b.dtype, key=lambda d: d.itemsize)


@primitive("add")
def _add_fwd(a, b):
    _broadcast_shape("add", a, b)
    dt = _dtype(a, b)
    return (a + b).astype(dt, copy=False), (a.shape, b.shape)


@gradient_rule("add")
def _add_bwd(ctx, g, needs):
    sa, sb = ctx
    return (_unbroadcast(g, sa) if needs[0] else None,
            _unbroadcast(g, sb) if needs[1] else None)


@primitive("sub")
def _sub_fwd(a, b):
    _broadcast_shape("sub", a, b)
    dt = _dtype(a, b)
    return (a - b).astype(dt, copy=False), (a.shape, b.shape)


@gradient_rule("sub")
def _sub_bwd(ctx, g, needs):
    sa, sb = ctx
    return (_unbroadcast(g, sa) if needs[0] else None,
            _unbroadcast(-g, sb) if needs[1] else None)


@primitive("mul")
def _mul_fwd(a, b):
    _broadcast_shape("mul", a, b)
    dt = _dtype(a, b)
    return (a * b).astype(dt, copy=False), (a, b)


@gradient_rule("mul")
def _mul_bwd(ctx, g, needs):
    a, b = ctx
    return (_unbroadcast(g * b, a.shape).astype(a.dtype, copy=False) if needs[0] else None,
            _unbroadcast(g * a, b.shape).astype(b.dtype, copy=False) if needs[1] else None)


@primitive("scale")
def _scale_fwd(a, factor):
    return a * a.dtype.type(factor), None


@gradient_rule("scale")
def _scale_bwd(ctx, g, needs, factor):
    return (g * g.dtype.type(factor),)


@primitive("matmul")
def _matmul_fwd(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    # einsum evaluates every row with the same loop, so a sample's logits do not
    # depend on its position in the batch (BLAS gemm uses different tail kernels)
    return np.einsum("ik,kj->ij", a, b), (a, b)


@gradient_rule("matmul")
def _matmul_bwd(ctx, g, needs):
    a, b = ctx
    return (g @ b.T if needs[0] else None, a.T @ g if needs[1] else None)


@primitive("relu")
def _relu_fwd(a):
    out = np.maximum(a, a.dtype.type(0))
    return out, out > 0


@gradient_rule("relu")
def _relu_bwd(mask, g, needs):
    return (g * mask,)


@primitive("abs")
def _abs_fwd(a):
    return np.abs(a), np.sign(a)


@gradient_rule("abs")
def _abs_bwd(sign, g, needs):
    # np.sign(0) == 0: subgradient 0 at the kink
    return (g * sign,)


@primitive("sum")
def _sum_fwd(a, axis=None):
    return np.asarray(a.sum(axis=axis)), a.shape


@gradient_rule("sum")
def _sum_bwd(shape, g, needs, axis=None):
    if axis is not None:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, shape).copy(),)


@primitive("mean")
def _mean_fwd(a, axis=None):
    return np.asarray(a.mean(axis=axis)), a.shape


@gradient_rule("mean")
def _mean_bwd(shape, g, needs, axis=None):
    count = int(np.prod(shape)) if axis is None else int(np.prod(np.array(shape)[np.atleast_1d(axis)]))
    if axis is not None:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g / g.dtype.type(count), shape).copy(),)


@primitive("reshape")
def _reshape_fwd(a, shape):
    try:
        return a.reshape(shape), a.shape
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from None


@gradient_rule("reshape")
def _reshape_bwd(in_shape, g, needs, shape):
    return (g.reshape(in_shape),)


@primitive("sqdist")
def _sqdist_fwd(a, b):
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeError(f"sqdist: need equal 2-D shapes, got {a.shape} and {b.shape}")
    diff = a - b
    return (diff * diff).sum(axis=1), diff


@gradient_rule("sqdist")
def _sqdist_bwd(diff, g, needs):
    gd = 2 * diff * g[:, None]
    return (gd if needs[0] else None, -gd if needs[1] else None)


@primitive("pnorm")
def _pnorm_fwd(a, p=2):
    if p < 1:
        raise ValueError(f"pnorm: p must be >= 1, got {p}")
    mag = np.abs(a)
    norm = np.asarray(np.power(np.power(mag, p).sum(), 1.0 / p), dtype=a.dtype)
    return norm, (a, norm)


@gradient_rule("pnorm")
def _pnorm_bwd(ctx, g, needs, p=2):
    a, norm = ctx
    if norm == 0:
        # gradient of a norm at the origin: take the zero subgradient
        return (np.zeros_like(a),)
    if p == 2:
        return (g * a / norm,)
    return (g * np.sign(a) * np.power(np.abs(a) / norm, p - 1),)


@primitive("softmax_xent")
def _xent_fwd(logits, labels):
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"softmax_xent: logits {logits.shape} vs labels {labels.shape}")
    y = labels.astype(np.int64)
    if y.min(initial=0) < 0 or y.max(initial=0) >= logits.shape[1]:
        raise ValueError("softmax_xent: label out of range")
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(len(y))
    loss = lse - z[rows, y]
    return loss, (z, lse, y)


@gradient_rule("softmax_xent")
def _xent_bwd(ctx, g, needs):
    z, lse, y = ctx
    p = np.exp(z - lse[:, None])
    p[np.arange(len(y)), y] -= 1
    return (p * g[:, None], None)


@primitive("concat")
def _concat_fwd(*arrays):
    if not arrays:
        raise ShapeError("concat: no inputs")
    dt = min((a.dtype for a in arrays), key=lambda d: d.itemsize)
    return np.concatenate([a.reshape(-1).astype(dt, copy=False) for a in arrays]), \
        [a.shape for a in arrays]


@gradient_rule("concat")
def _concat_bwd(shapes, g, needs):
    out, off = [], 0
    for shape, need in zip(shapes, needs):
        n = int(np.prod(shape))
        out.append(g[off:off + n].reshape(shape) if need else None)
        off += n
    return tuple(out)


@primitive("conv3x3")
def _conv_fwd(x, w, b):
    if x.ndim != 4 or w.ndim != 4 or w.shape[2:] != (3, 3) or w.shape[1] != x.shape[1] \
            or b.shape != (w.shape[0],):
        raise ShapeError(f"conv3x3: input {x.shape}, kernel {w.shape}, bias {b.shape}")
    return _kernels.conv3x3_forward(x, w, b), (x, w)


@gradient_rule("conv3x3")
def _conv_bwd(ctx, g, needs):
    x, w = ctx
    gx = _kernels.conv3x3_backward_input(g, w) if needs[0] else None
    gw = gb = None
    if needs[1] or needs[2]:
        gw, gb = _kernels.conv3x3_backward_weight(g, x)
    return gx, gw, gb


@primitive("meanpool2")
def _pool_fwd(x):
    if x.ndim != 4 or x.shape[2] % 2 or x.shape[3] % 2:
        raise ShapeError(f"meanpool2: need NCHW with even H, W, got {x.shape}")
    return _kernels.meanpool2_forward(x), None


@gradient_rule("meanpool2")
def _pool_bwd(ctx, g, needs):
    return (_kernels.meanpool2_backward(g),)


# ---------------------------------------------------------------------------
# functional front-end
# ---------------------------------------------------------------------------

def add(a, b):
    return forward_primitive("add", a, b)


def sub(a, b):
    return forward_primitive("sub", a, b)


def mul(a, b):
    return forward_primitive("mul", a, b)


def scale(a, factor):
    return forward_primitive("scale", a, factor=float(factor))


def matmul(a, b):
    return forward_primitive("matmul", a, b)


def relu(a):
    return forward_primitive("relu", a)


def absolute(a):
    return forward_primitive("abs", a)


def reduce_sum(a, axis=None):
    return forward_primitive("sum", a, axis=axis)


def reduce_mean(a, axis=None):
    return forward_primitive("mean", a, axis=axis)


def reshape(a, shape):
    return forward_primitive("reshape", a, shape=tuple(shape))


def sqdist(a, b):
    """Row-wise squared l2 distance of two [n, k] tensors -> [n]."""
    return forward_primitive("sqdist", a, b)


def pnorm(a, p=2):
    """p-norm of all entries of ``a`` (scalar)."""
    return forward_primitive("pnorm", a, p=p)


def softmax_cross_entropy(logits, labels):
    """Per-sample cross-entropy of [n, K] logits against integer labels -> [n]."""
    if isinstance(labels, Tensor):
        labels = labels.data
    labels = np.asarray(labels)
    if labels.dtype.kind not in "iu":
        raise TypeError("labels must be integers")
    return forward_primitive("softmax_xent", logits, Tensor(labels))


def concat(tensors):
    """Flatten each tensor and join them into one vector."""
    return forward_primitive("concat", *tensors)


def conv3x3(x, w, b):
    return forward_primitive("conv3x3", x, w, b)


def meanpool2(x):
    return forward_primitive("meanpool2", x)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def finite_difference_check(fn, point, step=1e-6, grad=None):
    """Largest relative disagreement between autodiff and central differences.

    ``fn`` maps a tensor to a scalar tensor. The error per coordinate is
    ``|analytic - numeric| / max(1, |analytic|)``. ``grad`` may supply an
    analytic gradient computed elsewhere (used when checking a foreign rule).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    point = np.array(point, dtype=np.float64)
    if grad is None:
        tape = Tape()
        x = tape.leaf(point)
        out = fn(x)
        # an output that never touched the tape is constant in the input
        analytic = tape.backward(out)[x] if out.tape is tape else np.zeros_like(point)
    else:
        analytic = np.asarray(grad, dtype=np.float64)
    numeric = np.empty_like(point)
    flat = point.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = float(fn(Tensor(point.copy())).data)
        flat[i] = orig - step
        fm = float(fn(Tensor(point.copy())).data)
        flat[i] = orig
        nflat[i] = (fp - fm) / (2 * step)
    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    return float(err.max()) if err.size else 0.0
