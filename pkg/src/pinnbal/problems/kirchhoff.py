"""Kirchhoff plate bending under a sinusoidal load, simply supported on all edges.

    u_xxxx + 2 u_xxyy + u_yyyy = p(x, y) / D   on [0, a] x [0, b]
    u = 0 on every edge, m_x = 0 on x in {0, a}, m_y = 0 on y in {0, b}

Quantities are in MN and m. The network sees inputs mapped to [-1, 1].
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import Node
from ..errors import DomainError
from .base import Problem, Region, SineProductField, mse


@dataclass(frozen=True)
class KirchhoffMaterial:
    a: float = 10.0
    b: float = 10.0
    p0: float = 0.015
    E: float = 30_000.0
    h: float = 0.2
    poisson: float = 0.2

    @property
    def D(self) -> float:
        """Flexural stiffness."""
        return self.E * self.h**3 / (12.0 * (1.0 - self.poisson**2))

    @property
    def amplitude(self) -> float:
        return self.p0 / (np.pi**4 * self.D * (1.0 / self.a**2 + 1.0 / self.b**2) ** 2)


def kirchhoff_load(x, y, mat: KirchhoffMaterial):
    return mat.p0 * np.sin(np.pi * np.asarray(x) / mat.a) * np.sin(np.pi * np.asarray(y) / mat.b)


def kirchhoff_residual(jet, D, load):
    if not isinstance(D, Node) and D <= 0:
        raise DomainError("flexural stiffness must be positive")
    return jet[4, 0] + 2.0 * jet[2, 2] + jet[0, 4] - load / D


def kirchhoff_moments(jet, D, poisson):
    uxx, uyy = jet[2, 0], jet[0, 2]
    return -D * (uxx + poisson * uyy), -D * (poisson * uxx + uyy)


def kirchhoff_analytical(x, y, mat: KirchhoffMaterial = KirchhoffMaterial()):
    return mat.amplitude * np.sin(np.pi * np.asarray(x) / mat.a) * np.sin(np.pi * np.asarray(y) / mat.b)


def analytical_field(mat: KirchhoffMaterial = KirchhoffMaterial()) -> SineProductField:
    return SineProductField(mat.amplitude, np.pi / mat.a, np.pi / mat.b)


class Kirchhoff(Problem):
    name = "kirchhoff"
    labels = ("x", "y")
    param_name = "D"
    param_init = 0.5
    normalize_inputs = True
    forward_terms = ("PDE", "BC_u_x0", "BC_u_xa", "BC_u_y0", "BC_u_yb",
                     "BC_mx_x0", "BC_mx_xa", "BC_my_y0", "BC_my_yb")

    def __init__(self, mode="forward", material: KirchhoffMaterial = KirchhoffMaterial()):
        super().__init__(mode)
        self.material = material
        self.bounds = ((0.0, material.a), (0.0, material.b))
        self.true_param = material.D

    def regions(self):
        a, b = self.material.a, self.material.b
        x_edge = {"x0": Region(((0.0, 0.0), (0.0, b))), "xa": Region(((a, a), (0.0, b)))}
        y_edge = {"y0": Region(((0.0, a), (0.0, 0.0))), "yb": Region(((0.0, a), (b, b)))}
        return {
            "PDE": self.interior,
            "BC_u_x0": x_edge["x0"], "BC_u_xa": x_edge["xa"],
            "BC_u_y0": y_edge["y0"], "BC_u_yb": y_edge["yb"],
            "BC_mx_x0": x_edge["x0"], "BC_mx_xa": x_edge["xa"],
            "BC_my_y0": y_edge["y0"], "BC_my_yb": y_edge["yb"],
        }

    def reference(self, points):
        pts = np.atleast_2d(points)
        return kirchhoff_analytical(pts[:, 0], pts[:, 1], self.material)

    def loss_terms(self, field, batch, mu):
        p = batch.points
        mat = self.material
        pts = p["PDE"]
        jet = field.jet(pts, [(4, 0), (2, 2), (0, 4)], self.labels)
        load = kirchhoff_load(pts[:, 0], pts[:, 1], mat)
        terms = [mse(kirchhoff_residual(jet, mu, load))]
        if self.inverse:
            return terms + [self.data_term(field, batch)]
        for label in ("BC_u_x0", "BC_u_xa", "BC_u_y0", "BC_u_yb"):
            terms.append(mse(field.jet(p[label], [(0, 0)], self.labels).value))
        second = [(2, 0), (0, 2)]
        for label in ("BC_mx_x0", "BC_mx_xa"):
            mx, _ = kirchhoff_moments(field.jet(p[label], second, self.labels), mat.D, mat.poisson)
            terms.append(mse(mx))
        for label in ("BC_my_y0", "BC_my_yb"):
            _, my = kirchhoff_moments(field.jet(p[label], second, self.labels), mat.D, mat.poisson)
            terms.append(mse(my))
        return terms
