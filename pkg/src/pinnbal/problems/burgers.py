"""Viscous Burgers equation on x in [-1, 1], t in [0, 1].

    u_t + u u_x - nu u_xx = 0,   u(x, 0) = -sin(pi x),   u(-1, t) = u(1, t) = 0

Inputs are ordered ``(x, t)``. The reference solution uses the Cole-Hopf
representation evaluated with Gauss-Hermite quadrature; an independent
Crank-Nicolson finite-difference solver is provided to cross-check it.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.linalg import solve_banded
from scipy.special import roots_hermite

from ..autodiff import DerivativeJet
from ..errors import DomainError
from .base import Problem, Region, mse

NU = 1.0 / (100.0 * np.pi)
_CHUNK = 4096


def burgers_residual(jet: DerivativeJet, nu):
    return jet[0, 1] + jet.value * jet[1, 0] - nu * jet[2, 0]


@lru_cache(maxsize=None)
def _hermite(n):
    return roots_hermite(n)


def _heat_moments(x, t, nu, n, orders=(0, 1)):
    """Quadrature sums of ``f^(k)(x - eta)`` against the heat kernel, scaled by a common factor.

    ``f(y) = exp(-cos(pi y) / (2 pi nu))``; derivatives of ``f`` are ``f`` times a
    polynomial in ``g' = sin(pi y)/(2 nu)`` and its derivatives.
    """
    z, w = _hermite(n)
    c = np.sqrt(4.0 * nu * t)
    y = x[:, None] - c[:, None] * z[None, :]
    e = -np.cos(np.pi * y) / (2.0 * np.pi * nu)
    f = w * np.exp(e - e.max(axis=1, keepdims=True))
    out = {0: f.sum(axis=1)}
    if max(orders) >= 1:
        g1 = np.sin(np.pi * y) / (2.0 * nu)
        out[1] = (g1 * f).sum(axis=1)
    if max(orders) >= 2:
        g2 = np.pi * np.cos(np.pi * y) / (2.0 * nu)
        out[2] = ((g2 + g1 * g1) * f).sum(axis=1)
    if max(orders) >= 3:
        g3 = -np.pi**2 * np.sin(np.pi * y) / (2.0 * nu)
        out[3] = ((g3 + 3.0 * g1 * g2 + g1**3) * f).sum(axis=1)
    return out


def _converged(fn, x, t, tol, n_start, n_max):
    """Evaluate ``fn(x, t, n)`` doubling ``n`` until successive results agree within ``tol``."""
    n = n_start
    prev = fn(x, t, n)
    while n < n_max:
        n *= 2
        cur = fn(x, t, n)
        if np.max(np.abs(cur - prev)) < tol:
            return cur
        prev = cur
    return prev


def burgers_reference(x, t, nu=NU, tol=1e-8, n_start=32, n_max=1024):
    """Cole-Hopf solution ``u(x, t)`` for the ``-sin(pi x)`` initial condition."""
    x, t = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(t, dtype=float))
    if np.any(t < 0):
        raise DomainError("Burgers reference is defined for t >= 0 only")
    if nu <= 0:
        raise DomainError("viscosity must be positive")
    shape = x.shape
    x, t = x.ravel(), t.ravel()
    out = -np.sin(np.pi * x)
    pos = np.flatnonzero(t > 0)

    def quotient(xs, ts, n):
        m = _heat_moments(xs, ts, nu, n, orders=(0, 1))
        return -2.0 * nu * m[1] / m[0]

    for start in range(0, len(pos), _CHUNK):
        idx = pos[start:start + _CHUNK]
        out[idx] = _converged(quotient, x[idx], t[idx], tol, n_start, n_max)
    return out.reshape(shape)


def burgers_reference_jet(x, t, nu=NU, tol=1e-12, n_start=32, n_max=1024) -> DerivativeJet:
    """Reference value with ``u_x``, ``u_t`` and ``u_xx`` from differentiating under the integral.

    Uses ``u = -2 nu phi_x / phi`` and the heat equation ``phi_t = nu phi_xx``.
    Requires ``t > 0``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    t = np.atleast_1d(np.asarray(t, dtype=float))
    x, t = np.broadcast_arrays(x, t)
    if np.any(t <= 0):
        raise DomainError("reference derivatives need t > 0")

    def ratios(xs, ts, n):
        m = _heat_moments(xs, ts, nu, n, orders=(0, 1, 2, 3))
        return np.stack([m[1] / m[0], m[2] / m[0], m[3] / m[0]])

    a, b, c = _converged(ratios, x.ravel(), t.ravel(), tol, n_start, n_max)
    partials = {
        (0, 0): -2.0 * nu * a,
        (1, 0): -2.0 * nu * (b - a * a),
        (2, 0): -2.0 * nu * (c - 3.0 * a * b + 2.0 * a**3),
        (0, 1): -2.0 * nu**2 * (c - a * b),
    }
    return DerivativeJet(partials, ("x", "t"))


def burgers_crank_nicolson(nu=NU, nx=4097, nt=2000, t_end=1.0, snapshots=(1.0,)):
    """Crank-Nicolson finite differences (Newton per step) for the same problem.

    Returns ``(x, {time: u(x, time)})`` for the requested snapshot times, which
    are rounded to the nearest time step.
    """
    x = np.linspace(-1.0, 1.0, nx)
    dx = x[1] - x[0]
    dt = t_end / nt
    u = -np.sin(np.pi * x)
    u[0] = u[-1] = 0.0
    want = {int(round(s / dt)): s for s in snapshots}
    out = {s: u.copy() for k, s in want.items() if k == 0}
    d2 = nu / dx**2

    def flux(v):
        vp = np.concatenate([v[1:], [0.0]])
        vm = np.concatenate([[0.0], v[:-1]])
        return (vp**2 - vm**2) / (4.0 * dx) - d2 * (vp - 2.0 * v + vm)

    for step in range(1, nt + 1):
        old = u[1:-1]
        rhs_old = old - 0.5 * dt * flux(old)
        v = old.copy()
        for _ in range(30):
            g = v + 0.5 * dt * flux(v) - rhs_old
            ab = np.zeros((3, len(v)))
            ab[0, 1:] = 0.5 * dt * (v[1:] / (2.0 * dx) - d2)
            ab[1, :] = 1.0 + 0.5 * dt * 2.0 * d2
            ab[2, :-1] = 0.5 * dt * (-v[:-1] / (2.0 * dx) - d2)
            delta = solve_banded((1, 1), ab, g)
            v -= delta
            if np.max(np.abs(delta)) < 1e-13:
                break
        u[1:-1] = v
        if step in want:
            out[want[step]] = u.copy()
    return x, out


class ReferenceField:
    """Burgers reference exposed through the same ``jet`` interface as a network."""

    labels = ("x", "t")

    def __init__(self, nu=NU):
        self.nu = nu

    def jet(self, points, derivatives, labels=()):
        pts = np.atleast_2d(points)
        needed = {tuple(m) for m in derivatives} - {(0, 0)}
        if not needed:
            return DerivativeJet({(0, 0): burgers_reference(pts[:, 0], pts[:, 1], self.nu, tol=1e-12)},
                                 self.labels)
        return burgers_reference_jet(pts[:, 0], pts[:, 1], self.nu)


class Burgers(Problem):
    name = "burgers"
    labels = ("x", "t")
    bounds = ((-1.0, 1.0), (0.0, 1.0))
    param_name = "nu"
    true_param = NU
    param_init = 0.1
    normalize_inputs = False
    forward_terms = ("PDE", "BC1", "BC2", "IC")

    def regions(self):
        return {
            "PDE": self.interior,
            "BC1": Region(((-1.0, -1.0), (0.0, 1.0))),
            "BC2": Region(((1.0, 1.0), (0.0, 1.0))),
            "IC": Region(((-1.0, 1.0), (0.0, 0.0))),
        }

    def reference(self, points):
        pts = np.atleast_2d(points)
        return burgers_reference(pts[:, 0], pts[:, 1], self.true_param)

    def loss_terms(self, field, batch, mu):
        p = batch.points
        jet = field.jet(p["PDE"], [(1, 0), (0, 1), (2, 0)], self.labels)
        terms = [mse(burgers_residual(jet, mu))]
        if self.inverse:
            return terms + [self.data_term(field, batch)]
        value = [(0, 0)]
        terms.append(mse(field.jet(p["BC1"], value, self.labels).value))
        terms.append(mse(field.jet(p["BC2"], value, self.labels).value))
        u0 = field.jet(p["IC"], value, self.labels).value
        terms.append(mse(u0 + np.sin(np.pi * p["IC"][:, 0])))
        return terms
