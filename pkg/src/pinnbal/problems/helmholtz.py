"""Helmholtz equation on [-1, 1]^2 with homogeneous Dirichlet boundaries.

    u_xx + u_yy + k^2 u = f,   f = (k^2 - 17 pi^2) sin(pi x) sin(4 pi y)

The manufactured solution is ``sin(pi x) sin(4 pi y)``.
"""
from __future__ import annotations

import numpy as np

from .base import Problem, Region, SineProductField, mse

K_TRUE = 1.0


def helmholtz_forcing(x, y, k=K_TRUE):
    return (k**2 - 17.0 * np.pi**2) * np.sin(np.pi * np.asarray(x)) * np.sin(4.0 * np.pi * np.asarray(y))


def helmholtz_residual(jet, k, forcing):
    return jet[2, 0] + jet[0, 2] + k * k * jet.value - forcing


def helmholtz_analytical(x, y):
    return np.sin(np.pi * np.asarray(x)) * np.sin(4.0 * np.pi * np.asarray(y))


def analytical_field() -> SineProductField:
    return SineProductField(1.0, np.pi, 4.0 * np.pi)


class Helmholtz(Problem):
    name = "helmholtz"
    labels = ("x", "y")
    bounds = ((-1.0, 1.0), (-1.0, 1.0))
    param_name = "k"
    true_param = K_TRUE
    param_init = 0.5
    normalize_inputs = False
    forward_terms = ("PDE", "BC_x-1", "BC_x1", "BC_y-1", "BC_y1")

    def regions(self):
        return {
            "PDE": self.interior,
            "BC_x-1": Region(((-1.0, -1.0), (-1.0, 1.0))),
            "BC_x1": Region(((1.0, 1.0), (-1.0, 1.0))),
            "BC_y-1": Region(((-1.0, 1.0), (-1.0, -1.0))),
            "BC_y1": Region(((-1.0, 1.0), (1.0, 1.0))),
        }

    def reference(self, points):
        pts = np.atleast_2d(points)
        return helmholtz_analytical(pts[:, 0], pts[:, 1])

    def loss_terms(self, field, batch, mu):
        p = batch.points
        pts = p["PDE"]
        jet = field.jet(pts, [(2, 0), (0, 2)], self.labels)
        # the source term is known data, generated with the true wave number
        forcing = helmholtz_forcing(pts[:, 0], pts[:, 1], self.true_param)
        terms = [mse(helmholtz_residual(jet, mu, forcing))]
        if self.inverse:
            return terms + [self.data_term(field, batch)]
        for label in self.forward_terms[1:]:
            terms.append(mse(field.jet(p[label], [(0, 0)], self.labels).value))
        return terms
