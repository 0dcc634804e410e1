"""Reverse-mode automatic differentiation on an append-only tape.

A :class:`Tape` records every primitive applied to its :class:`Var` handles
together with the local partials needed for the backward sweep. Node values
are numpy arrays, so one tape can carry a batch of independent evaluations:
latent inputs have shape ``(B, d)``, per-observation terms broadcast to
``(B, n)`` and reductions run over the last axis. Because every primitive is
elementwise or a last-axis reduction, row ``b`` of any result depends only on
row ``b`` of the input and the backward pass yields per-row gradients.

The primitive functions (:func:`exp`, :func:`log1pexp`, ...) accept plain
arrays too, in which case they just evaluate with numpy. Model code written
against them therefore runs both on and off the tape.
"""

from __future__ import annotations

from typing import Callable

import numpy as np
from scipy import special

from .errors import DimensionError, NonFiniteValue

# ln(1 + e^x) == x to double precision beyond this point
_SOFTPLUS_BRANCH = 30.0


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape``, undoing numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class _Node:
    __slots__ = ("value", "parents")

    def __init__(self, value, parents):
        self.value = value
        # tuple of (parent index, vjp callable mapping output adjoint -> parent adjoint)
        self.parents = parents


class Tape:
    """Append-only record of primitive operations.

    Parents always precede children, so a single reverse sweep over the node
    list is a valid topological order.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._swept = False

    def variable(self, value) -> "Var":
        """Register an input array and return its handle."""
        if self._swept:
            raise RuntimeError("tape has already been swept; record a new one")
        return self._push(np.array(value, dtype=float), ())

    def _push(self, value, parents) -> "Var":
        self.nodes.append(_Node(value, parents))
        return Var(self, len(self.nodes) - 1, value)

    def backward(self, output: "Var", seed=None) -> list:
        """Propagate adjoints from ``output`` to every node.

        Returns the list of adjoints indexed by node position (``None`` for
        nodes the output does not depend on). A tape can be swept once.
        """
        if output.tape is not self:
            raise ValueError("output was recorded on a different tape")
        if self._swept:
            raise RuntimeError("tape has already been swept")
        self._swept = True
        adj: list = [None] * len(self.nodes)
        adj[output.index] = np.ones_like(output.value) if seed is None else np.asarray(seed, float)
        for i in range(output.index, -1, -1):
            g = adj[i]
            if g is None:
                continue
            for p, vjp in self.nodes[i].parents:
                contrib = vjp(g)
                adj[p] = contrib if adj[p] is None else adj[p] + contrib
        return adj


class Var:
    """Handle to one node of a :class:`Tape`."""

    __slots__ = ("tape", "index", "value")
    # make numpy defer to our reflected operators
    __array_ufunc__ = None

    def __init__(self, tape: Tape, index: int, value: np.ndarray):
        self.tape = tape
        self.index = index
        self.value = value

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Var(index={self.index}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(other))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, idx):
        return getitem(self, idx)


def _val(x):
    return x.value if isinstance(x, Var) else x


def _tape_of(*xs) -> Tape | None:
    tape = None
    for x in xs:
        if isinstance(x, Var):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise ValueError("operands live on different tapes")
    return tape


def _elementwise(value, operands_and_partials) -> Var:
    """Record an elementwise node; partials broadcast against the output."""
    tape = None
    parents = []
    for x, partial in operands_and_partials:
        if isinstance(x, Var):
            tape = x.tape
            shape = x.value.shape
            parents.append((x.index, lambda g, p=partial, s=shape: _unbroadcast(g * p, s)))
    return tape._push(value, tuple(parents))


# ---------------------------------------------------------------------------
# primitives


def add(a, b):
    av, bv = _val(a), _val(b)
    if _tape_of(a, b) is None:
        return av + bv
    tape = _tape_of(a, b)
    parents = []
    for x in (a, b):
        if isinstance(x, Var):
            s = x.value.shape
            parents.append((x.index, lambda g, s=s: _unbroadcast(g, s)))
    return tape._push(av + bv, tuple(parents))


def neg(a):
    if not isinstance(a, Var):
        return -a
    return a.tape._push(-a.value, ((a.index, lambda g: -g),))


def mul(a, b):
    av, bv = _val(a), _val(b)
    if _tape_of(a, b) is None:
        return av * bv
    return _elementwise(av * bv, ((a, bv), (b, av)))


def div(a, b):
    av, bv = _val(a), _val(b)
    out = av / bv
    if _tape_of(a, b) is None:
        return out
    return _elementwise(out, ((a, 1.0 / bv), (b, -out / bv)))


def square(a):
    av = _val(a)
    if not isinstance(a, Var):
        return av * av
    return _elementwise(av * av, ((a, 2.0 * av),))


def sqrt(a):
    out = np.sqrt(_val(a))
    if not isinstance(a, Var):
        return out
    return _elementwise(out, ((a, 0.5 / out),))


def exp(a):
    out = np.exp(_val(a))
    if not isinstance(a, Var):
        return out
    return _elementwise(out, ((a, out),))


def log(a):
    av = _val(a)
    out = np.log(av)
    if not isinstance(a, Var):
        return out
    return _elementwise(out, ((a, 1.0 / av),))


def _logistic(x):
    x = np.asarray(x, dtype=float)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _log1pexp(x):
    x = np.asarray(x, dtype=float)
    big = x > _SOFTPLUS_BRANCH
    safe = np.where(big, 0.0, x)
    return np.where(big, x + np.exp(-np.where(big, x, 0.0)), np.log1p(np.exp(safe)))


def logistic(a):
    """Logistic sigmoid, evaluated without overflow for any sign."""
    out = _logistic(_val(a))
    if not isinstance(a, Var):
        return out
    return _elementwise(out, ((a, out * (1.0 - out)),))


def log1pexp(a):
    """ln(1 + e^a), branching to the asymptote above a = 30."""
    av = _val(a)
    out = _log1pexp(av)
    if not isinstance(a, Var):
        return out
    return _elementwise(out, ((a, _logistic(av)),))


def gammaln(a):
    av = _val(a)
    out = special.gammaln(av)
    if not isinstance(a, Var):
        return out
    return _elementwise(out, ((a, special.digamma(av)),))


def sum(a, axis: int = -1):
    """Sum over ``axis`` keeping it as a length-1 dimension."""
    av = _val(a)
    out = np.sum(av, axis=axis, keepdims=True)
    if not isinstance(a, Var):
        return out
    shape = av.shape
    return a.tape._push(out, ((a.index, lambda g: np.broadcast_to(g, shape).copy()),))


def getitem(a, idx):
    av = _val(a)
    out = av[idx]
    if not isinstance(a, Var):
        return out
    shape = av.shape

    def vjp(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return full

    return a.tape._push(np.array(out), ((a.index, vjp),))


def linear(w, X: np.ndarray):
    """Row-wise ``w @ X.T`` for weights ``w`` of shape (B, d) and fixed X (n, d).

    Accumulates one column at a time so each output row is computed
    identically regardless of the batch size.
    """
    wv = _val(w)
    X = np.asarray(X, dtype=float)
    if wv.shape[-1] != X.shape[1]:
        raise DimensionError(f"weights have {wv.shape[-1]} columns, design matrix {X.shape[1]}")
    out = wv[..., 0:1] * X[:, 0]
    for j in range(1, X.shape[1]):
        out = out + wv[..., j : j + 1] * X[:, j]
    if not isinstance(w, Var):
        return out
    shape = wv.shape

    def vjp(g):
        cols = [np.sum(g * X[:, j], axis=-1, keepdims=True) for j in range(X.shape[1])]
        return _unbroadcast(np.concatenate(cols, axis=-1), shape)

    return w.tape._push(out, ((w.index, vjp),))


# ---------------------------------------------------------------------------
# drivers

DifferentiableFn = Callable[[Var], Var]


def batch_value_and_grad(f: DifferentiableFn, Z, check_finite: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Values and gradients of a row-wise function at each row of ``Z``.

    ``f`` maps a (B, d) input to B scalars (any shape with B elements) and
    must treat rows independently.

    Raises:
        NonFiniteValue: if any row evaluates to NaN or an infinity.
    """
    Z = np.asarray(Z, dtype=float)
    if Z.ndim != 2:
        raise DimensionError(f"expected a (B, d) array, got shape {Z.shape}")
    tape = Tape()
    u = tape.variable(Z)
    out = f(u)
    if not isinstance(out, Var):
        values = np.broadcast_to(np.asarray(out, dtype=float), (Z.shape[0],)).copy()
        if check_finite:
            _check_finite(values)
        return values, np.zeros_like(Z)
    values = out.value.reshape(-1)
    if values.shape[0] != Z.shape[0]:
        raise DimensionError(f"function returned {values.shape[0]} values for {Z.shape[0]} rows")
    if check_finite:
        _check_finite(values)
    adj = tape.backward(out)
    grad = adj[u.index]
    if grad is None:
        grad = np.zeros_like(Z)
    return values.copy(), grad


def _check_finite(values):
    if not np.all(np.isfinite(values)):
        bad = np.flatnonzero(~np.isfinite(values))
        raise NonFiniteValue(f"non-finite function value in rows {bad.tolist()}")


def value_and_grad(f: DifferentiableFn, z) -> tuple[float, np.ndarray]:
    """Value and gradient of ``f`` at a single point ``z`` of shape (d,).

    >>> v, g = value_and_grad(lambda u: 0.5 * sum(square(u)), [1.0, -2.0])
    >>> float(v), g.tolist()
    (2.5, [1.0, -2.0])
    """
    z = np.asarray(z, dtype=float)
    if z.ndim != 1:
        raise DimensionError(f"expected a vector, got shape {z.shape}")
    values, grads = batch_value_and_grad(f, z[None, :])
    return float(values[0]), grads[0]


def batch_hessian(f: DifferentiableFn, Z, symmetrize: bool = True, check_finite: bool = True) -> np.ndarray:
    """Hessians at each row of ``Z`` by forward differences of gradients.

    Uses d + 1 batched gradient evaluations with per-row step
    ``1e-5 * max(1, max|z|)``. Returns shape (B, d, d). With
    ``check_finite=False`` non-finite rows propagate instead of raising.
    """
    Z = np.asarray(Z, dtype=float)
    B, d = Z.shape
    h = 1e-5 * np.maximum(1.0, np.max(np.abs(Z), axis=1))
    _, g0 = batch_value_and_grad(f, Z, check_finite)
    H = np.empty((B, d, d))
    for j in range(d):
        Zj = Z.copy()
        Zj[:, j] += h
        _, gj = batch_value_and_grad(f, Zj, check_finite)
        H[:, :, j] = (gj - g0) / h[:, None]
    if symmetrize:
        H = 0.5 * (H + np.swapaxes(H, 1, 2))
    return H


def hessian(f: DifferentiableFn, z, symmetrize: bool = True) -> np.ndarray:
    """Hessian of ``f`` at a single point, shape (d, d)."""
    z = np.asarray(z, dtype=float)
    if z.ndim != 1:
        raise DimensionError(f"expected a vector, got shape {z.shape}")
    return batch_hessian(f, z[None, :], symmetrize=symmetrize)[0]
