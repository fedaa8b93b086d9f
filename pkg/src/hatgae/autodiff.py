"""Small reverse-mode differentiation tape over dense float64 matrices.

Every tensor is 2-D (vectors are ``1 x F`` rows or ``N x 1`` columns). Ops
record a closure that maps the output gradient to parent gradients; the tape
replays them in reverse insertion order. Parameters are registered by name so
:meth:`Tape.backward` can return a ``name -> gradient`` map.

    >>> tape = Tape()
    >>> x = tape.param("x", [1.0, 2.0])
    >>> tape.backward(sum_all(x * x))["x"]
    array([[2., 4.]])
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .exceptions import FiniteCheckError

NORM_EPS = 1e-12


def _as2d(value):
    a = np.array(value, dtype=np.float64)
    if a.ndim == 0:
        return a.reshape(1, 1)
    if a.ndim == 1:
        return a.reshape(1, -1)
    if a.ndim != 2:
        raise ValueError(f"tensors are at most rank 2, got shape {a.shape}")
    return a


def _scatter_sum(values, idx, n_rows):
    """``out[idx[i]] += values[i]`` via a sparse incidence product (``np.add.at`` is slow)."""
    e = len(idx)
    inc = sp.csr_matrix((np.ones(e), (idx, np.arange(e))), shape=(n_rows, e))
    return np.asarray(inc @ values)


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    return grad.sum(axis=axes, keepdims=True).reshape(shape)


class Tensor:
    __slots__ = ("value", "tape", "id", "parents", "backward_fn", "requires_grad", "name")

    def __init__(self, value, tape, parents=(), backward_fn=None, requires_grad=False, name=None):
        self.value = value
        self.tape = tape
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.name = name
        self.id = len(tape.nodes)
        tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    def numpy(self):
        return self.value.copy()

    def item(self):
        return float(self.value.reshape(-1)[0])

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

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

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


class Tape:
    """Append-only op record plus a named parameter registry."""

    def __init__(self, check_finite=True):
        self.nodes = []
        self.params = {}
        self.check_finite = check_finite

    def param(self, name, value):
        if name in self.params:
            raise KeyError(f"parameter {name!r} already registered")
        t = Tensor(_as2d(value), self, requires_grad=True, name=name)
        self.params[name] = t
        return t

    def const(self, value):
        return Tensor(_as2d(value), self)

    def backward(self, loss):
        """Gradients of the ``1 x 1`` tensor ``loss`` for every registered parameter."""
        if loss.tape is not self or loss.id >= len(self.nodes) or self.nodes[loss.id] is not loss:
            raise ValueError("loss tensor is not on this tape")
        if loss.shape != (1, 1):
            raise ValueError(f"backward needs a 1x1 scalar, got shape {loss.shape}")
        grads = {loss.id: np.ones((1, 1))}
        for node in reversed(self.nodes[:loss.id + 1]):
            g = grads.pop(node.id, None)
            if g is None or node.backward_fn is None:
                if node.requires_grad and node.name is not None and g is not None:
                    grads[("param", node.name)] = g
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.id in grads:
                    grads[parent.id] = grads[parent.id] + pg
                else:
                    grads[parent.id] = pg
        return {
            name: grads.get(("param", name), np.zeros_like(t.value))
            for name, t in self.params.items()
        }


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Tensor):
            return x.tape
    raise TypeError("at least one operand must be a Tensor")


def _lift(x, tape):
    return x if isinstance(x, Tensor) else tape.const(x)


def _record(value, parents, backward_fn, op):
    tape = parents[0].tape
    if tape.check_finite and not np.isfinite(value).all():
        raise FiniteCheckError(f"non-finite output from {op}")
    needs = any(p.requires_grad for p in parents)
    return Tensor(value, tape, parents if needs else (), backward_fn if needs else None,
                  requires_grad=needs)


# --------------------------------------------------------------------------
# elementwise arithmetic (numpy broadcasting, gradients reduced back)


def add(a, b):
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    sa, sb = a.shape, b.shape
    return _record(a.value + b.value, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b):
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    sa, sb = a.shape, b.shape
    return _record(a.value - b.value, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b):
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    av, bv = a.value, b.value
    return _record(av * bv, (a, b),
                   lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
                   "mul")


def scale(a, c):
    c = float(c)
    return _record(a.value * c, (a,), lambda g: (g * c,), "scale")


def matmul(a, b):
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    av, bv = a.value, b.value
    if av.shape[1] != bv.shape[0]:
        raise ValueError(f"matmul shape mismatch {av.shape} @ {bv.shape}")
    return _record(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g), "matmul")


def square(a):
    av = a.value
    return _record(av * av, (a,), lambda g: (2.0 * av * g,), "square")


def sum_all(a):
    shape = a.shape
    return _record(np.array([[a.value.sum()]]), (a,),
                   lambda g: (np.broadcast_to(g, shape).copy(),), "sum")


def detach(a):
    """Copy of ``a`` that blocks gradient flow."""
    return a.tape.const(a.value)


# --------------------------------------------------------------------------
# activations


def leaky_relu(a, slope=0.2):
    av = a.value
    d = np.where(av > 0, 1.0, slope)
    return _record(av * d, (a,), lambda g: (g * d,), "leaky_relu")


def prelu(a, slope):
    """PReLU with one learned ``1 x 1`` slope. The kink at 0 takes the negative branch."""
    av, s = a.value, slope.value[0, 0]
    pos = av > 0
    out = np.where(pos, av, s * av)

    def back(g):
        return g * np.where(pos, 1.0, s), np.array([[np.sum(g * np.where(pos, 0.0, av))]])

    return _record(out, (a, slope), back, "prelu")


# --------------------------------------------------------------------------
# graph plumbing


def gather_rows(a, idx):
    idx = np.asarray(idx, dtype=np.int64)
    n = a.shape[0]

    return _record(a.value[idx], (a,), lambda g: (_scatter_sum(g, idx, n),), "gather_rows")


def scatter_add_rows(a, idx, n_rows):
    """``out[idx[i]] += a[i]`` into an ``n_rows``-row result."""
    idx = np.asarray(idx, dtype=np.int64)
    out = _scatter_sum(a.value, idx, n_rows)
    return _record(out, (a,), lambda g: (g[idx],), "scatter_add_rows")


def segment_softmax(logits, segments, n_segments):
    """Softmax of an ``E x 1`` column within groups given by ``segments``.

    Each segment's max is subtracted first, so large logits cannot overflow.
    """
    seg = np.asarray(segments, dtype=np.int64)
    x = logits.value[:, 0]
    m = np.full(n_segments, -np.inf)
    np.maximum.at(m, seg, x)
    ex = np.exp(x - m[seg])
    denom = np.bincount(seg, weights=ex, minlength=n_segments)
    y = ex / denom[seg]

    def back(g):
        g = g[:, 0]
        dot = np.bincount(seg, weights=g * y, minlength=n_segments)
        return ((y * (g - dot[seg]))[:, None],)

    return _record(y[:, None], (logits,), back, "segment_softmax")


def concat_cols(tensors):
    tensors = list(tensors)
    widths = [t.shape[1] for t in tensors]
    cuts = np.cumsum(widths)[:-1]
    return _record(np.concatenate([t.value for t in tensors], axis=1), tuple(tensors),
                   lambda g: tuple(np.split(g, cuts, axis=1)), "concat_cols")


def add_to_rows(a, v, rows):
    """Add the ``1 x F`` row ``v`` to the listed rows of ``a``; other rows are copied as-is."""
    rows = np.asarray(rows, dtype=np.int64)
    out = a.value.copy()
    out[rows] += v.value
    return _record(out, (a, v), lambda g: (g, g[rows].sum(axis=0, keepdims=True)), "add_to_rows")


def zero_rows(a, rows):
    """Set the listed rows to exactly zero; no gradient reaches them."""
    rows = np.asarray(rows, dtype=np.int64)
    out = a.value.copy()
    out[rows] = 0.0

    def back(g):
        g = g.copy()
        g[rows] = 0.0
        return (g,)

    return _record(out, (a,), back, "zero_rows")


# --------------------------------------------------------------------------
# loss plumbing


def row_cosine(a, b):
    """Row-wise cosine similarity as an ``N x 1`` column.

    Rows where either norm is below ``NORM_EPS`` yield 0 with zero gradient.
    """
    av, bv = a.value, b.value
    if av.shape != bv.shape:
        raise ValueError(f"row_cosine shape mismatch {av.shape} vs {bv.shape}")
    na = np.sqrt((av * av).sum(axis=1))
    nb = np.sqrt((bv * bv).sum(axis=1))
    ok = (na >= NORM_EPS) & (nb >= NORM_EPS)
    na_s = np.where(ok, na, 1.0)
    nb_s = np.where(ok, nb, 1.0)
    dots = (av * bv).sum(axis=1)
    c = np.where(ok, dots / (na_s * nb_s), 0.0)

    def back(g):
        g = np.where(ok, g[:, 0], 0.0)[:, None]
        inv = (1.0 / (na_s * nb_s))[:, None]
        cc = c[:, None]
        ga = g * (bv * inv - cc * av / (na_s ** 2)[:, None])
        gb = g * (av * inv - cc * bv / (nb_s ** 2)[:, None])
        return ga, gb

    return _record(c[:, None], (a, b), back, "row_cosine")


def mean_rows(a, idx):
    """Mean of the selected rows, as a ``1 x C`` row."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("mean over an empty index set")
    n, k = a.shape[0], len(idx)

    def back(g):
        out = np.zeros((n, g.shape[1]))
        np.add.at(out, idx, np.broadcast_to(g / k, (k, g.shape[1])))
        return (out,)

    return _record(a.value[idx].mean(axis=0, keepdims=True), (a,), back, "mean_rows")


# --------------------------------------------------------------------------
# finite-difference check


def grad_check(build_fn, params, eps=1e-5, names=None, per_param=False):
    """Compare tape gradients against central differences.

    ``build_fn(tape, tensors)`` must rebuild the same ``1 x 1`` loss from the
    registered parameter tensors. Returns the maximum relative error
    ``|a - b| / max(1, |a|, |b|)`` over all checked coordinates, or a
    ``name -> max error`` dict when ``per_param`` is set.
    """
    params = {k: _as2d(v) for k, v in params.items()}
    names = list(params) if names is None else list(names)

    def evaluate(values):
        tape = Tape()
        ts = {k: tape.param(k, v) for k, v in values.items()}
        return tape, build_fn(tape, ts)

    tape, loss = evaluate(params)
    _, again = evaluate(params)
    if loss.item() != again.item():
        raise RuntimeError("build_fn is not deterministic: two baseline evaluations differ")
    analytic = tape.backward(loss)

    errors = {}
    for name in names:
        base = params[name]
        worst = 0.0
        for ix in np.ndindex(base.shape):
            plus, minus = base.copy(), base.copy()
            plus[ix] += eps
            minus[ix] -= eps
            fp = evaluate({**params, name: plus})[1].item()
            fm = evaluate({**params, name: minus})[1].item()
            numeric = (fp - fm) / (2.0 * eps)
            a = analytic[name][ix]
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a), abs(numeric)))
        errors[name] = worst
    if per_param:
        return errors
    return max(errors.values(), default=0.0)
