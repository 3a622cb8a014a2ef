"""Shared machinery for benchmark problems: regions, batches, term losses."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .. import autodiff as ad
from ..autodiff import DerivativeJet
from ..errors import ConfigurationError

DEFAULT_COUNTS = {"interior": 1024, "boundary": 256, "initial": 256, "data": 512}
MEASUREMENT_GRID = 128
VALIDATION_GRID = 256


@dataclass(frozen=True)
class Region:
    """Axis-aligned box; a dimension with ``low == high`` is held exactly fixed."""

    bounds: tuple[tuple[float, float], ...]

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if n < 1:
            raise ConfigurationError("sample counts must be >= 1")
        pts = np.empty((n, len(self.bounds)))
        for i, (lo, hi) in enumerate(self.bounds):
            pts[:, i] = lo if lo == hi else rng.uniform(lo, hi, size=n)
        return pts

    def contains(self, pts) -> bool:
        pts = np.atleast_2d(pts)
        ok = True
        for i, (lo, hi) in enumerate(self.bounds):
            col = pts[:, i]
            ok &= bool(np.all(col == lo)) if lo == hi else bool(np.all((col >= lo) & (col <= hi)))
        return ok


@dataclass
class CollocationBatch:
    points: dict[str, np.ndarray]
    targets: dict[str, np.ndarray] = field(default_factory=dict)

    def count(self, label) -> int:
        return len(self.points[label])


def grid(bounds, n: int) -> np.ndarray:
    """``n``-per-axis uniform grid including the endpoints, as ``(n**d, d)`` points."""
    axes = [np.linspace(lo, hi, n) for lo, hi in bounds]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def sine_derivative(theta, order: int):
    """``d^order/dtheta^order sin(theta)``."""
    return np.sin(theta + 0.5 * math.pi * order)


class SineProductField:
    """Closed-form field ``amp * sin(kx*(x-x0)) * sin(ky*(y-y0))`` with exact jets."""

    def __init__(self, amplitude, kx, ky, labels=("x", "y")):
        self.amplitude, self.kx, self.ky = amplitude, kx, ky
        self.labels = tuple(labels)

    def __call__(self, points):
        pts = np.atleast_2d(points)
        return self.amplitude * np.sin(self.kx * pts[:, 0]) * np.sin(self.ky * pts[:, 1])

    def jet(self, points, derivatives, labels=()) -> DerivativeJet:
        pts = np.atleast_2d(points)
        partials = {}
        for i, j in set(tuple(m) for m in derivatives) | {(0, 0)}:
            partials[(i, j)] = (self.amplitude * self.kx**i * self.ky**j
                                * sine_derivative(self.kx * pts[:, 0], i)
                                * sine_derivative(self.ky * pts[:, 1], j))
        return DerivativeJet(partials, tuple(labels) or self.labels)


class Problem:
    """One benchmark PDE in forward or inverse mode.

    Subclasses define the domain, term list, residual/condition evaluators,
    the reference solution and the PDE parameter.
    """

    name: str = ""
    labels: tuple[str, ...] = ()
    bounds: tuple[tuple[float, float], ...] = ()
    param_name: str = "mu"
    true_param: float = 0.0
    param_init: float = 0.5
    normalize_inputs: bool = False
    forward_terms: tuple[str, ...] = ()

    def __init__(self, mode: str = "forward"):
        if mode not in ("forward", "inverse"):
            raise ConfigurationError(f"mode must be 'forward' or 'inverse', not {mode!r}")
        self.mode = mode

    def __repr__(self):
        return f"{type(self).__name__}(mode={self.mode!r})"

    @property
    def inverse(self) -> bool:
        return self.mode == "inverse"

    @property
    def terms(self) -> tuple[str, ...]:
        return ("PDE", "DATA") if self.inverse else self.forward_terms

    @property
    def interior(self) -> Region:
        return Region(self.bounds)

    def regions(self) -> dict[str, Region]:
        """Sampling region per term (the data term samples the measurement set)."""
        raise NotImplementedError

    def region_kind(self, label) -> str:
        if label == "PDE":
            return "interior"
        if label == "DATA":
            return "data"
        if label.startswith("IC"):
            return "initial"
        return "boundary"

    def default_counts(self) -> dict[str, int]:
        return {t: DEFAULT_COUNTS[self.region_kind(t)] for t in self.terms}

    def reference(self, points) -> np.ndarray:
        raise NotImplementedError

    def loss_terms(self, field, batch: CollocationBatch, mu) -> list:
        """Mean-squared residual per term; entries are recorded nodes when ``field`` is."""
        raise NotImplementedError

    @cached_property
    def measurements(self) -> tuple[np.ndarray, np.ndarray]:
        """Noise-free reference values on a fixed grid (inverse data set)."""
        pts = grid(self.bounds, MEASUREMENT_GRID)
        return pts, self.reference(pts)

    def validation_grid(self, n: int = VALIDATION_GRID) -> np.ndarray:
        return grid(self.bounds, n)

    def data_term(self, field, batch):
        pts = batch.points["DATA"]
        u = field.jet(pts, [(0,) * len(self.labels)], self.labels).value
        return ad.mean(ad.square(u - batch.targets["DATA"]))


def write_field_csv(path, labels, points, values) -> None:
    """Write ``points`` and ``values`` as CSV with columns ``labels..., u``."""
    pts = np.atleast_2d(points)
    with open(path, "w") as fh:
        fh.write(",".join([*labels, "u"]) + "\n")
        for row, v in zip(pts, np.asarray(values).reshape(-1)):
            fh.write(",".join(repr(float(c)) for c in (*row, v)) + "\n")


def export_reference(problem: "Problem", path, n: int = MEASUREMENT_GRID) -> None:
    """Reference solution on an ``n x n`` grid including the domain edges, as CSV."""
    pts = grid(problem.bounds, n)
    write_field_csv(path, problem.labels, pts, problem.reference(pts))


def export_measurements(problem: "Problem", path) -> None:
    """The inverse-mode data set, as CSV."""
    pts, vals = problem.measurements
    write_field_csv(path, problem.labels, pts, vals)


def mse(residual):
    return ad.mean(ad.square(residual))


def sample_collocation(problem: Problem, counts: dict | None, rng: np.random.Generator) -> CollocationBatch:
    """Fresh uniform batch for every term of ``problem``."""
    counts = {**problem.default_counts(), **(counts or {})}
    regions = problem.regions()
    points, targets = {}, {}
    for label in problem.terms:
        n = int(counts[label])
        if n < 1:
            raise ConfigurationError(f"count for {label} must be >= 1")
        if label == "DATA":
            pts, vals = problem.measurements
            idx = rng.choice(len(pts), size=n, replace=n > len(pts))
            points[label], targets[label] = pts[idx], vals[idx]
        else:
            points[label] = regions[label].sample(n, rng)
    return CollocationBatch(points, targets)


def term_losses(problem: Problem, field, batch: CollocationBatch, mu=None) -> list:
    """Per-term losses of ``field`` on ``batch``; ``mu`` defaults to the true parameter."""
    return problem.loss_terms(field, batch, problem.true_param if mu is None else mu)
