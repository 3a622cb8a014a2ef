"""Per-term loss scalings and linear scalarisation.

Five strategies are provided: fixed manual weights, learning-rate annealing
(gradient statistics), GradNorm (trainable scalings), SoftAdapt (softmax of
consecutive loss ratios) and ReLoBRaLo (relative loss balancing with random
lookback). All strategies start from scalings of 1 and are updated once per
optimisation step from the current batch's term losses.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, NumericError
from .optim import AdamState, adam_step

EPS = 1e-12
LAMBDA_MAX = 1e6

METHODS = ("manual", "lr_annealing", "gradnorm", "softadapt", "relobralo")
GRADIENT_METHODS = ("lr_annealing", "gradnorm")


@dataclass(frozen=True)
class LossVector:
    """Labelled per-term losses for one step; the first term is the PDE residual."""

    labels: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if len(values) != len(self.labels):
            raise ConfigurationError("labels and values differ in length")
        if not np.all(np.isfinite(values)):
            raise NumericError("non-finite term loss")
        if np.any(values < 0):
            raise ConfigurationError("term losses must be non-negative")
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "values", values)

    def __len__(self):
        return len(self.labels)

    def __iter__(self):
        return iter(zip(self.labels, self.values))


def _values(losses) -> np.ndarray:
    if isinstance(losses, LossVector):
        return losses.values
    return np.asarray(losses, dtype=float).reshape(-1)


def scalarise(losses, lambdas):
    """``sum_i lambda_i * L_i``. Recorded terms stay recorded; scalings are constants."""
    lambdas = np.asarray(lambdas, dtype=float).reshape(-1)
    if isinstance(losses, LossVector):
        losses = losses.values
    if len(losses) != len(lambdas):
        raise ConfigurationError(f"{len(losses)} losses but {len(lambdas)} scalings")
    total = 0.0
    for lam, term in zip(lambdas, losses):
        total = total + float(lam) * term
    return total


def softmax(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    e = np.exp(x - np.max(x))
    return e / e.sum()


def relative_softmax(current, reference, temperature: float, m: int | None = None) -> np.ndarray:
    """``m * softmax(L_i(t) / (T * L_i(t')))`` with guarded denominators."""
    cur, ref = _values(current), _values(reference)
    if cur.shape != ref.shape:
        raise ConfigurationError("current and reference losses differ in length")
    if temperature <= 0:
        raise ConfigurationError("temperature must be positive")
    m = len(cur) if m is None else m
    return m * softmax(cur / (temperature * np.maximum(ref, EPS)))


def pareto_dominates(a, b) -> bool:
    """True when ``a`` is nowhere worse than ``b`` and strictly better somewhere."""
    a, b = _values(a), _values(b)
    if a.shape != b.shape:
        raise ConfigurationError("loss vectors differ in length")
    return bool(np.all(a <= b) and np.any(a < b))


def gradnorm_objective(grad_norms, rates, alpha: float) -> float:
    """``sum_i |G_i - mean(G) * r_i**alpha|`` (the scaling loss minimised by GradNorm)."""
    g = np.asarray(grad_norms, dtype=float)
    r = np.asarray(rates, dtype=float)
    return float(np.abs(g - g.mean() * r**alpha).sum())


def relobralo_combine(alpha, rho, previous, lookback_hat, recent_hat) -> np.ndarray:
    """Exponential-decay blend of the previous scalings, the lookback and the recent estimate."""
    previous = np.asarray(previous, dtype=float)
    return (alpha * (rho * previous + (1.0 - rho) * np.asarray(lookback_hat))
            + (1.0 - alpha) * np.asarray(recent_hat))


# ---------------------------------------------------------------------------
# Stateful balancers
# ---------------------------------------------------------------------------


@dataclass
class BalancerState:
    method: str
    n_terms: int
    alpha: float = 0.999
    temperature: float = 0.1
    expected_saudade: float = 0.9999
    gradnorm_alpha: float = 0.12
    gradnorm_lr: float = 1e-2
    lr_annealing_alpha: float = 0.9
    weights: Sequence[float] | None = None
    seed: int | None = 0
    lambdas: np.ndarray = field(init=False)
    initial_losses: np.ndarray | None = field(init=False, default=None)
    previous_losses: np.ndarray | None = field(init=False, default=None)
    step: int = field(init=False, default=0)
    last_rho: int | None = field(init=False, default=None)
    rng: np.random.Generator = field(init=False, repr=False)
    lambda_optimizer: AdamState | None = field(init=False, default=None, repr=False)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown balancer {self.method!r}; choose from {METHODS}")
        if self.n_terms < 1:
            raise ConfigurationError("need at least one loss term")
        if not 0.0 <= self.alpha <= 1.0 or not 0.0 <= self.expected_saudade <= 1.0:
            raise ConfigurationError("alpha and expected_saudade must lie in [0, 1]")
        if self.temperature <= 0:
            raise ConfigurationError("temperature must be positive")
        self.lambdas = np.ones(self.n_terms)
        if self.method == "manual" and self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (self.n_terms,) or np.any(w <= 0):
                raise ConfigurationError("manual weights must be positive, one per term")
            self.lambdas = w.copy()
        self.rng = np.random.default_rng(self.seed)
        if self.method == "gradnorm":
            self.lambda_optimizer = AdamState(self.n_terms)

    @property
    def needs_gradients(self) -> bool:
        return self.method in GRADIENT_METHODS

    def _observe_first(self, cur):
        if self.initial_losses is None:
            self.initial_losses = cur.copy()
            self.previous_losses = cur.copy()
            return True
        return False


def relobralo_update(state: BalancerState, current) -> np.ndarray:
    cur = _values(current)
    if state._observe_first(cur):
        state.step += 1
        return state.lambdas.copy()
    m = state.n_terms
    rho = float(state.rng.random() < state.expected_saudade)
    state.last_rho = int(rho)
    lookback = relative_softmax(cur, state.initial_losses, state.temperature, m)
    recent = relative_softmax(cur, state.previous_losses, state.temperature, m)
    state.lambdas = relobralo_combine(state.alpha, rho, state.lambdas, lookback, recent)
    state.previous_losses = cur.copy()
    state.step += 1
    return state.lambdas.copy()


def softadapt_update(state: BalancerState, current) -> np.ndarray:
    cur = _values(current)
    if state._observe_first(cur):
        state.step += 1
        return state.lambdas.copy()
    state.lambdas = softmax(cur / np.maximum(state.previous_losses, EPS))
    state.previous_losses = cur.copy()
    state.step += 1
    return state.lambdas.copy()


def lr_annealing_update(state: BalancerState, grad_pde, grad_terms) -> np.ndarray:
    """Scalings for the non-PDE terms from gradient statistics; the PDE scaling stays 1."""
    if len(grad_terms) != state.n_terms - 1:
        raise ConfigurationError("need one gradient per non-PDE term")
    top = np.max(np.abs(grad_pde))
    a = state.lr_annealing_alpha
    new = state.lambdas.copy()
    new[0] = 1.0
    for i, g in enumerate(grad_terms, start=1):
        avg = np.mean(np.abs(g))
        hat = LAMBDA_MAX if avg <= EPS else min(top / avg, LAMBDA_MAX)
        new[i] = a * state.lambdas[i] + (1.0 - a) * hat
    state.lambdas = new
    state.step += 1
    return new.copy()


def gradnorm_update(state: BalancerState, losses, grad_norms) -> np.ndarray:
    """One Adam step on the scalings, then renormalisation to ``sum = k``.

    ``grad_norms[i]`` is the norm of the gradient of ``lambda_i * L_i``.
    """
    cur = _values(losses)
    g = np.asarray(grad_norms, dtype=float)
    k = state.n_terms
    state._observe_first(cur)
    rel = cur / np.maximum(state.initial_losses, EPS)
    rates = rel / max(rel.mean(), EPS)
    target = g.mean() * rates**state.gradnorm_alpha  # held constant
    unscaled = g / state.lambdas
    grad_lambda = np.sign(g - target) * unscaled
    lam = adam_step(state.lambda_optimizer, state.lambdas, grad_lambda, state.gradnorm_lr)
    lam = np.where(lam <= EPS, EPS, lam)
    state.lambdas = lam * (k / lam.sum())
    state.previous_losses = cur.copy()
    state.step += 1
    return state.lambdas.copy()


def manual_update(state: BalancerState, current) -> np.ndarray:
    state._observe_first(_values(current))
    state.step += 1
    return state.lambdas.copy()


def update(state: BalancerState, losses, grads=None) -> np.ndarray:
    """Dispatch one balancing step.

    ``grads`` is the list of per-term parameter gradients (network weights
    only) and is required by the gradient-based methods.
    """
    if state.method == "relobralo":
        return relobralo_update(state, losses)
    if state.method == "softadapt":
        return softadapt_update(state, losses)
    if state.method == "manual":
        return manual_update(state, losses)
    if grads is None:
        raise ConfigurationError(f"{state.method} needs per-term gradients")
    if state.method == "lr_annealing":
        state._observe_first(_values(losses))
        return lr_annealing_update(state, grads[0], grads[1:])
    norms = np.array([lam * np.linalg.norm(g) for lam, g in zip(state.lambdas, grads)])
    return gradnorm_update(state, losses, norms)


__all__ = [
    "EPS", "LAMBDA_MAX", "METHODS", "LossVector", "BalancerState", "scalarise", "softmax",
    "relative_softmax", "pareto_dominates", "gradnorm_objective", "relobralo_combine",
    "relobralo_update", "softadapt_update", "lr_annealing_update", "gradnorm_update",
    "manual_update", "update",
]
