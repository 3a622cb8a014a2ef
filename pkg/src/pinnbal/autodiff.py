"""Reverse-mode differentiation over numpy arrays, plus truncated Taylor jets.

Two pieces live here:

* :class:`Record` is a tape of elementary operations. Values are plain
  ``numpy`` arrays wrapped in :class:`Node`; every arithmetic operation on a
  node appends a new node holding its vector-Jacobian products. One call to
  :meth:`Record.gradient` is one reverse sweep.
* Multivariate truncated Taylor arithmetic (:class:`MultiIndexSet`,
  :func:`jet_affine`, :func:`jet_activation`) used to push input derivatives
  up to order 4 through a feed-forward network. Jet coefficients are stored
  as normalised Taylor coefficients ``d^a u / a!`` along the leading axis, and
  the jet primitives are themselves recorded, so a loss built from input
  derivatives can be differentiated with respect to the network weights in a
  single sweep.
"""
from __future__ import annotations

import builtins
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, NumericError

MAX_ORDER = 4

_total_sweeps = 0


def sweep_count() -> int:
    """Number of reverse sweeps performed in this process so far."""
    return _total_sweeps


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------


class Record:
    """Computation record for one training step.

    Nodes are appended in creation order, which is a valid topological order
    because a node's parents always exist before it does.
    """

    def __init__(self):
        self._nodes: list[Node] = []
        self.sweeps = 0

    def __len__(self):
        return len(self._nodes)

    def variable(self, value) -> "Node":
        """Create a leaf node (an independent variable)."""
        return Node(np.asarray(value, dtype=float), self)

    def gradient(self, output: "Node", wrt: Sequence["Node"]) -> list[np.ndarray]:
        """Gradients of the scalar ``output`` with respect to each node in ``wrt``.

        Nodes that do not influence ``output`` get an exact zero gradient.
        """
        global _total_sweeps
        if output.record is not self:
            raise ConfigurationError("output node belongs to a different record")
        if np.size(output.value) != 1:
            raise ConfigurationError("gradient requires a scalar output")
        if not np.all(np.isfinite(output.value)):
            raise NumericError("non-finite value at the start of a reverse sweep")
        self.sweeps += 1
        _total_sweeps += 1

        targets = {n.index for n in wrt}
        found: dict[int, np.ndarray] = {}
        adjoints = {output.index: np.ones_like(output.value)}
        for node in reversed(self._nodes[: output.index + 1]):
            g = adjoints.pop(node.index, None)
            if g is None:
                continue  # unreachable from the output
            if node.index in targets:
                found[node.index] = g
            for parent, vjp in node.parents:
                contrib = vjp(g)
                prev = adjoints.get(parent.index)
                adjoints[parent.index] = contrib if prev is None else prev + contrib
        return [
            np.array(found[n.index], dtype=float) if n.index in found else np.zeros_like(n.value)
            for n in wrt
        ]

    def release(self) -> None:
        """Drop every recorded node.

        Nodes and their record reference each other, so without this a
        finished record waits for the cyclic collector while holding all
        intermediate arrays.
        """
        self._nodes.clear()

    def replay_check(self) -> bool:
        """True when every node's value is finite (cheap sanity probe)."""
        return all(np.all(np.isfinite(n.value)) for n in self._nodes)


class Node:
    """A value on a :class:`Record` together with how it was produced."""

    __slots__ = ("value", "record", "index", "parents")
    # make ndarray binary ops defer to our reflected operators
    __array_ufunc__ = None

    def __init__(self, value, record: Record, parents=()):
        self.value = value
        self.record = record
        self.parents = tuple(parents)
        self.index = len(record._nodes)
        record._nodes.append(self)

    @property
    def shape(self):
        return np.shape(self.value)

    @property
    def ndim(self):
        return np.ndim(self.value)

    def __repr__(self):
        return f"Node(#{self.index}, shape={self.shape})"

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

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return take(self, idx)


def value_of(x):
    return x.value if isinstance(x, Node) else x


def _record_of(*args) -> Record | None:
    for a in args:
        if isinstance(a, Node):
            return a.record
    return None


def _unbroadcast(g, shape):
    g = np.asarray(g)
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _make(value, parents):
    """Wrap ``value`` as a node if any parent is a node, else return it raw."""
    live = [(p, f) for p, f in parents if isinstance(p, Node)]
    rec = _record_of(*(p for p, _ in live))
    if rec is None:
        return value
    return Node(value, rec, live)


# ---------------------------------------------------------------------------
# Elementary operations (accept nodes or arrays; return arrays when no node)
# ---------------------------------------------------------------------------


def add(a, b):
    av, bv = value_of(a), value_of(b)
    out = av + bv
    sa, sb = np.shape(av), np.shape(bv)
    return _make(out, [(a, lambda g: _unbroadcast(g, sa)), (b, lambda g: _unbroadcast(g, sb))])


def neg(a):
    return _make(-value_of(a), [(a, lambda g: -g)])


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    sa, sb = np.shape(av), np.shape(bv)
    return _make(
        av * bv,
        [(a, lambda g: _unbroadcast(g * bv, sa)), (b, lambda g: _unbroadcast(g * av, sb))],
    )


def div(a, b):
    av, bv = value_of(a), value_of(b)
    sa, sb = np.shape(av), np.shape(bv)
    out = av / bv
    return _make(
        out,
        [(a, lambda g: _unbroadcast(g / bv, sa)), (b, lambda g: _unbroadcast(-g * out / bv, sb))],
    )


def power(a, p):
    if isinstance(p, Node):
        raise ConfigurationError("only constant exponents are supported")
    av = value_of(a)
    return _make(av**p, [(a, lambda g: g * p * av ** (p - 1))])


def square(a):
    av = value_of(a)
    return _make(av * av, [(a, lambda g: 2.0 * g * av)])


def sin(a):
    av = value_of(a)
    return _make(np.sin(av), [(a, lambda g: g * np.cos(av))])


def exp(a):
    av = value_of(a)
    out = np.exp(av)
    return _make(out, [(a, lambda g: g * out)])


def sum(a, axis=None):  # noqa: A001 - mirrors numpy naming
    av = value_of(a)
    shape = np.shape(av)

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, shape).copy()

    return _make(np.sum(av, axis=axis), [(a, vjp)])


def mean(a, axis=None):
    av = value_of(a)
    n = np.size(av) if axis is None else np.shape(av)[axis]
    return mul(sum(a, axis=axis), 1.0 / n)


def _is_basic_index(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is Ellipsis for i in items)


def take(a, idx):
    av = value_of(a)
    shape = np.shape(av)
    basic = _is_basic_index(idx)

    def vjp(g):
        out = np.zeros(shape)
        if basic:
            out[idx] += g
        else:
            np.add.at(out, idx, g)
        return out

    return _make(av[idx], [(a, vjp)])


def reshape(a, shape):
    av = value_of(a)
    old = np.shape(av)
    return _make(np.reshape(av, shape), [(a, lambda g: np.reshape(g, old))])


def stack(items):
    values = [value_of(x) for x in items]
    out = np.stack(values)
    parents = [(x, (lambda g, i=i: g[i])) for i, x in enumerate(items)]
    return _make(out, parents)


def concatenate_gradients(grads: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate([np.ravel(g) for g in grads])


def parameter_gradient(loss: Node, leaves: Sequence[Node]) -> np.ndarray:
    """Flat gradient of ``loss`` w.r.t. ``leaves`` (one reverse sweep)."""
    return concatenate_gradients(loss.record.gradient(loss, leaves))


# ---------------------------------------------------------------------------
# Activation derivative tables (closed form up to order 5; order 5 is needed
# for the reverse sweep through an order-4 jet)
# ---------------------------------------------------------------------------


def _tanh_derivatives(z, n):
    t = np.tanh(z)
    t2 = t * t
    s = 1.0 - t2
    table = [t, s, -2.0 * t * s, s * (6.0 * t2 - 2.0), 8.0 * t * s * (2.0 - 3.0 * t2),
             s * (16.0 - 120.0 * t2 + 120.0 * t2 * t2)]
    return table[: n + 1]


def _sigmoid_derivatives(z, n):
    s = 0.5 * (1.0 + np.tanh(0.5 * z))  # overflow-free logistic
    p = s * (1.0 - s)
    s2 = s * s
    table = [
        s,
        p,
        p * (1.0 - 2.0 * s),
        p * (1.0 - 6.0 * s + 6.0 * s2),
        p * (1.0 - 14.0 * s + 36.0 * s2 - 24.0 * s2 * s),
        p * (1.0 - 30.0 * s + 150.0 * s2 - 240.0 * s2 * s + 120.0 * s2 * s2),
    ]
    return table[: n + 1]


ACTIVATIONS: dict[str, Callable] = {
    "tanh": _tanh_derivatives,
    "sigmoid": _sigmoid_derivatives,
}


def activation_derivatives(name: str, z, n: int):
    """List ``[f(z), f'(z), ..., f^(n)(z)]`` for a registered activation."""
    try:
        table = ACTIVATIONS[name]
    except KeyError:
        raise ConfigurationError(f"unsupported activation {name!r}") from None
    if n > 5:
        raise ConfigurationError("activation tables stop at order 5")
    return table(z, n)


# ---------------------------------------------------------------------------
# Multi-index bookkeeping
# ---------------------------------------------------------------------------


class MultiIndexSet:
    """Downward-closed set of multi-indices, ordered by total degree.

    Any downward-closed set is closed under truncated multiplication, so a
    jet restricted to e.g. ``{(0,0), (1,0), (2,0), (0,1)}`` propagates exactly.
    """

    def __init__(self, required: Sequence[tuple[int, ...]], dim: int):
        closure = set()
        for mi in required:
            mi = tuple(int(v) for v in mi)
            if len(mi) != dim:
                raise ConfigurationError(f"multi-index {mi} does not match dimension {dim}")
            if builtins.sum(mi) > MAX_ORDER:
                raise ConfigurationError(f"derivative order above {MAX_ORDER} requested: {mi}")
            closure.update(itertools.product(*(range(v + 1) for v in mi)))
        closure.add((0,) * dim)
        self.dim = dim
        self.indices = sorted(closure, key=lambda m: (builtins.sum(m), tuple(-v for v in m)))
        self.position = {m: i for i, m in enumerate(self.indices)}
        self.degree = np.array([builtins.sum(m) for m in self.indices])
        self.max_degree = int(self.degree.max())
        self.factorial = np.array([math.prod(math.factorial(v) for v in m) for m in self.indices],
                                  dtype=float)
        # start[k] = first row of degree >= k
        self.start = [int(np.searchsorted(self.degree, k)) for k in range(self.max_degree + 2)]
        # triples[k]: rows (g, a, b) with g = a + b, deg(a) >= k-1, deg(b) >= 1
        self.triples = {}
        for k in range(2, self.max_degree + 1):
            rows = []
            for a in self.indices[self.start[k - 1]:]:
                for b in self.indices[self.start[1]:]:
                    g = tuple(x + y for x, y in zip(a, b))
                    if g in self.position:
                        rows.append((self.position[g], self.position[a], self.position[b]))
            self.triples[k] = rows

    @classmethod
    def full(cls, dim: int, order: int) -> "MultiIndexSet":
        req = [m for m in itertools.product(range(order + 1), repeat=dim) if builtins.sum(m) <= order]
        return cls(req, dim)

    def __len__(self):
        return len(self.indices)

    def __contains__(self, mi):
        return tuple(mi) in self.position

    def __repr__(self):
        return f"MultiIndexSet({self.indices})"


# ---------------------------------------------------------------------------
# Jet primitives
# ---------------------------------------------------------------------------


def input_seed(points: np.ndarray, iset: MultiIndexSet, scale=None, shift=None) -> np.ndarray:
    """Jet of the (optionally normalised) input coordinates.

    The network sees ``(points - shift) * scale``; the first-order rows carry
    ``scale`` so derivatives come out with respect to the physical coordinates.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n, d = points.shape
    if d != iset.dim:
        raise ConfigurationError(f"points have dimension {d}, expected {iset.dim}")
    scale = np.ones(d) if scale is None else np.asarray(scale, dtype=float)
    shift = np.zeros(d) if shift is None else np.asarray(shift, dtype=float)
    seed = np.zeros((len(iset), n, d))
    seed[0] = (points - shift) * scale
    for i in range(d):
        unit = tuple(1 if j == i else 0 for j in range(d))
        if unit in iset.position:
            seed[iset.position[unit], :, i] = scale[i]
    return seed


def jet_affine(jet, weight, bias):
    """``jet @ weight`` on every coefficient; the bias only shifts the value row."""
    jv, wv, bv = value_of(jet), value_of(weight), value_of(bias)
    c, n, fin = jv.shape
    out = (jv.reshape(c * n, fin) @ wv).reshape(c, n, -1)
    out[0] += bv

    def vjp_jet(g):
        return g @ wv.T

    def vjp_weight(g):
        return jv.reshape(c * n, fin).T @ g.reshape(c * n, -1)

    def vjp_bias(g):
        return g[0].sum(axis=0)

    return _make(out, [(jet, vjp_jet), (weight, vjp_weight), (bias, vjp_bias)])


def jet_activation(jet, iset: MultiIndexSet, activation: str):
    """Compose an elementwise activation with a truncated multivariate jet.

    With ``z = z0 + d`` (``d`` the non-constant part) the result is
    ``sum_k f^(k)(z0)/k! * d^k`` truncated at the set's maximum degree.
    """
    zv = value_of(jet)
    K = iset.max_degree
    start = iset.start
    z0 = zv[0]
    derivs = activation_derivatives(activation, z0, K + 1)
    coeffs = [derivs[k] / math.factorial(k) for k in range(K + 2)]

    # powers[k] holds rows start[k]: of d**k
    powers = {1: zv[start[1]:]}
    for k in range(2, K + 1):
        pk = np.zeros((len(iset) - start[k],) + z0.shape)
        prev = powers[k - 1]
        for g, a, b in iset.triples[k]:
            pk[g - start[k]] += prev[a - start[k - 1]] * zv[b]
        powers[k] = pk

    out = np.empty_like(zv)
    out[0] = coeffs[0]
    if K >= 1:
        out[start[1]:] = 0.0
        for k in range(1, K + 1):
            out[start[k]:] += coeffs[k] * powers[k]

    def vjp(gout):
        gz = np.zeros_like(zv)
        gz0 = gout[0] * coeffs[1]
        gpow = {}
        for k in range(1, K + 1):
            gk = gout[start[k]:]
            gpow[k] = coeffs[k] * gk
            # d/dz0 of f^(k)(z0)/k! is f^(k+1)(z0)/k!
            gz0 = gz0 + np.einsum("r...,r...->...", gk, powers[k]) * (derivs[k + 1] / math.factorial(k))
        for k in range(K, 1, -1):
            prev = powers[k - 1]
            gprev = gpow[k - 1]
            gk = gpow[k]
            for g, a, b in iset.triples[k]:
                gg = gk[g - start[k]]
                gprev[a - start[k - 1]] += gg * zv[b]
                gz[b] += gg * prev[a - start[k - 1]]
        if K >= 1:
            gz[start[1]:] += gpow[1]
        gz[0] = gz0
        return gz

    return _make(out, [(jet, vjp)])


# ---------------------------------------------------------------------------
# Derivative jets
# ---------------------------------------------------------------------------


@dataclass
class DerivativeJet:
    """Value and mixed partial derivatives of a scalar field at a batch of points.

    ``partials`` maps a multi-index (one count per input dimension) to an
    array (or recorded :class:`Node`) of shape ``(n_points,)`` holding the
    corresponding partial derivative. ``labels`` name the input dimensions so
    that ``jet.d("x", "x", "y")`` works; request order is irrelevant.
    """

    partials: dict
    labels: tuple[str, ...] = ()
    dim: int = field(init=False)

    def __post_init__(self):
        self.dim = len(next(iter(self.partials)))
        if (0,) * self.dim not in self.partials:
            raise ConfigurationError("a jet must contain the zero multi-index")

    @property
    def value(self):
        return self.partials[(0,) * self.dim]

    def __getitem__(self, mi):
        key = tuple(mi)
        try:
            return self.partials[key]
        except KeyError:
            raise ConfigurationError(f"jet has no entry for multi-index {key}") from None

    def __contains__(self, mi):
        return tuple(mi) in self.partials

    def d(self, *axes):
        """Partial derivative along the given axes (labels or integer positions)."""
        counts = [0] * self.dim
        for ax in axes:
            i = self.labels.index(ax) if isinstance(ax, str) else int(ax)
            counts[i] += 1
        return self[tuple(counts)]

    def values(self) -> dict:
        """Plain-array copy of all entries."""
        return {k: np.asarray(value_of(v)) for k, v in self.partials.items()}


def jet_from_coefficients(coeffs, iset: MultiIndexSet, labels=(), keep=None) -> DerivativeJet:
    """Turn a ``(C, N)`` Taylor-coefficient node into a :class:`DerivativeJet`."""
    keep = iset.indices if keep is None else [tuple(m) for m in keep]
    partials = {}
    for mi in keep:
        row = iset.position[mi]
        entry = take(coeffs, row)
        fac = iset.factorial[row]
        partials[mi] = entry * fac if fac != 1.0 else entry
    if (0,) * iset.dim not in partials:
        partials[(0,) * iset.dim] = take(coeffs, 0)
    return DerivativeJet(partials, tuple(labels))


# ---------------------------------------------------------------------------
# Finite-difference verification
# ---------------------------------------------------------------------------


def finite_difference_check(f: Callable, x, step: float = 1e-6) -> float:
    """Max relative deviation between the recorded gradient of ``f`` and central differences.

    ``f`` receives a recorded leaf and must return a scalar built from
    recorded operations. The deviation is ``|analytic - numeric| / max(1, |analytic|)``.
    """
    if step <= 0:
        raise ConfigurationError("step must be positive")
    x = np.array(x, dtype=float)
    rec = Record()
    leaf = rec.variable(x)
    out = f(leaf)
    if not isinstance(out, Node):
        raise ConfigurationError("f must build its output from the recorded input")
    analytic = rec.gradient(out, [leaf])[0].ravel()

    def evaluate(point):
        r = Record()
        v = value_of(f(r.variable(point)))
        if not np.all(np.isfinite(v)):
            raise NumericError("non-finite function value during finite differencing")
        return float(np.asarray(v).reshape(()))

    flat = x.ravel()
    numeric = np.empty_like(flat)
    for i in range(flat.size):
        xp, xm = flat.copy(), flat.copy()
        xp[i] += step
        xm[i] -= step
        numeric[i] = (evaluate(xp.reshape(x.shape)) - evaluate(xm.reshape(x.shape))) / (2 * step)
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))))
