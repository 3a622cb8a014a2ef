"""Optimisation loop: sampling, term losses, balancing, Adam, schedule and stopping."""
from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import balancing as bal
from .errors import ConfigurationError, NumericError
from .network import NetworkConfig, RecordedNetwork, forward, init_xavier
from .optim import AdamState, adam_step
from .problems import Problem, make_problem, sample_collocation
from .problems.base import VALIDATION_GRID

_REFERENCE_CACHE: dict = {}


@dataclass
class TrainConfig:
    max_steps: int = 100_000
    initial_lr: float = 1e-3
    plateau_patience: int = 3000
    plateau_factor: float = 0.1
    early_stop_patience: int = 9000
    seed: int = 0
    balancer: str = "relobralo"
    alpha: float = 0.999
    temperature: float = 0.1
    expected_saudade: float = 0.9999
    gradnorm_alpha: float = 0.12
    gradnorm_lr: float = 1e-2
    lr_annealing_alpha: float = 0.9
    weights: list | None = None
    hidden_layers: int = 4
    width: int = 256
    activation: str = "tanh"
    counts: dict | None = None
    # None picks the problem's default (on for Kirchhoff, off otherwise)
    separate_mu_optimizer: bool | None = None
    mu_lr: float = 1e-2
    precision: str = "float64"
    thinning: int = 10
    validation_grid: int = VALIDATION_GRID

    def __post_init__(self):
        if not 0.0 < self.plateau_factor < 1.0:
            raise ConfigurationError("plateau_factor must lie in (0, 1)")
        if self.plateau_patience <= 0 or self.early_stop_patience <= 0:
            raise ConfigurationError("patiences must be positive")
        if self.max_steps < 1:
            raise ConfigurationError("max_steps must be >= 1")
        if self.initial_lr <= 0 or self.mu_lr <= 0:
            raise ConfigurationError("learning rates must be positive")
        if self.balancer not in bal.METHODS:
            raise ConfigurationError(f"unknown balancer {self.balancer!r}; choose from {bal.METHODS}")
        if self.precision != "float64":
            raise ConfigurationError("only float64 precision is supported")
        if self.thinning < 1 or self.validation_grid < 2:
            raise ConfigurationError("thinning must be >= 1 and validation_grid >= 2")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)

    def network_config(self, problem: Problem) -> NetworkConfig:
        return NetworkConfig(
            input_dim=len(problem.labels), hidden_layers=self.hidden_layers, width=self.width,
            activation=self.activation,
            input_bounds=problem.bounds if problem.normalize_inputs else None)

    def balancer_state(self, n_terms: int, seed) -> bal.BalancerState:
        return bal.BalancerState(
            self.balancer, n_terms, alpha=self.alpha, temperature=self.temperature,
            expected_saudade=self.expected_saudade, gradnorm_alpha=self.gradnorm_alpha,
            gradnorm_lr=self.gradnorm_lr, lr_annealing_alpha=self.lr_annealing_alpha,
            weights=self.weights, seed=seed)


# ---------------------------------------------------------------------------
# Progress tracking
# ---------------------------------------------------------------------------


@dataclass
class BestTracker:
    """Best training loss seen so far and the step it occurred at."""

    best: float = np.inf
    best_step: int = -1

    def observe(self, step: int, loss: float) -> bool:
        if loss < self.best:
            self.best, self.best_step = float(loss), step
            return True
        return False


@dataclass
class PlateauScheduler:
    """Multiply the learning rate by ``factor`` after ``patience`` steps without a new best."""

    lr: float
    patience: int = 3000
    factor: float = 0.1
    anchor: int = 0

    def update(self, step: int, improved: bool) -> float:
        if improved:
            self.anchor = step
        elif step - self.anchor >= self.patience:
            self.lr *= self.factor
            self.anchor = step
        return self.lr


@dataclass
class EarlyStopper:
    patience: int = 9000
    max_steps: int | None = None
    reason: str | None = None

    def should_stop(self, step: int, tracker: BestTracker) -> bool:
        """``step`` is the index of the step just completed."""
        if step - tracker.best_step >= self.patience:
            self.reason = "no_improvement"
        elif self.max_steps is not None and step + 1 >= self.max_steps:
            self.reason = "budget"
        return self.reason is not None


# ---------------------------------------------------------------------------
# Run records
# ---------------------------------------------------------------------------


@dataclass
class RunRecord:
    problem: str
    mode: str
    labels: tuple[str, ...]
    config: dict
    step: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    lambdas: list = field(default_factory=list)
    scalarised: list = field(default_factory=list)
    mu: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    sweeps: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    theta: np.ndarray | None = field(default=None, repr=False)
    network: NetworkConfig | None = None

    def append(self, step, losses, lambdas, scalarised, mu, lr, sweeps, wall_ms):
        self.step.append(step)
        self.losses.append(np.asarray(losses, dtype=float))
        self.lambdas.append(np.asarray(lambdas, dtype=float))
        self.scalarised.append(float(scalarised))
        self.mu.append(float("nan") if mu is None else float(mu))
        self.lr.append(float(lr))
        self.sweeps.append(int(sweeps))
        self.wall_ms.append(float(wall_ms))

    def __len__(self):
        return len(self.step)

    @property
    def columns(self) -> list[str]:
        return (["step"] + [f"loss_{t}" for t in self.labels] + [f"lambda_{t}" for t in self.labels]
                + ["loss_scalarised", "mu", "lr", "sweeps", "wall_ms"])

    def rows(self, thinning: int = 1):
        n = len(self)
        keep = [i for i in range(n) if i % thinning == 0 or i == n - 1]
        for i in keep:
            yield ([self.step[i], *self.losses[i], *self.lambdas[i], self.scalarised[i],
                    self.mu[i], self.lr[i], self.sweeps[i], self.wall_ms[i]])

    def write_csv(self, path, thinning: int | None = None):
        thinning = thinning or int(self.config.get("thinning", 1))
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns)
            for row in self.rows(thinning):
                w.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])
        return Path(path)

    def summary(self) -> dict:
        return {"problem": self.problem, "mode": self.mode, "labels": list(self.labels),
                "config": self.config, "metrics": self.metrics}

    def write_json(self, path):
        with Path(path).open("w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True, default=_json_default)
        return Path(path)

    @classmethod
    def read(cls, csv_path, json_path=None) -> "RunRecord":
        """Rebuild a (possibly thinned) record from its CSV and JSON summary."""
        meta = {"problem": "", "mode": "", "labels": (), "config": {}, "metrics": {}}
        if json_path is not None:
            meta.update(json.loads(Path(json_path).read_text()))
        with Path(csv_path).open() as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [[float(v) for v in r] for r in reader]
        labels = tuple(h[len("loss_"):] for h in header if h.startswith("loss_") and h != "loss_scalarised")
        k = len(labels)
        rec = cls(meta["problem"], meta["mode"], labels, meta["config"], metrics=meta["metrics"])
        for r in rows:
            rec.append(int(r[0]), r[1:1 + k], r[1 + k:1 + 2 * k], r[1 + 2 * k], r[2 + 2 * k],
                       r[3 + 2 * k], int(r[4 + 2 * k]), r[5 + 2 * k])
        return rec


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def reference_grid(problem: Problem, n: int = VALIDATION_GRID):
    """Fixed validation points and reference values (cached per problem and size)."""
    key = (type(problem).__name__, problem.bounds, problem.true_param, n)
    if key not in _REFERENCE_CACHE:
        pts = problem.validation_grid(n)
        _REFERENCE_CACHE[key] = (pts, problem.reference(pts))
    return _REFERENCE_CACHE[key]


def validate(predict, problem: Problem, n: int = VALIDATION_GRID) -> tuple[float, float]:
    """``(mse, rel_max_err)`` of ``predict(points)`` against the reference on an ``n x n`` grid."""
    pts, ref = reference_grid(problem, n)
    pred = np.concatenate([np.asarray(predict(pts[i:i + 8192]), dtype=float).reshape(-1)
                           for i in range(0, len(pts), 8192)])
    err = pred - ref
    return float(np.mean(err**2)), float(np.max(np.abs(err)) / np.max(np.abs(ref)))


def network_predictor(net_config: NetworkConfig, theta):
    return lambda pts: forward(net_config, theta, pts)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def _gradient_step(problem, config, net_config, theta, mu, batch, state: bal.BalancerState):
    """One recorded forward pass plus the reverse sweep(s) the balancer needs.

    Returns ``(loss values, lambdas, scalarised value, network grad, mu grad, sweeps)``.
    """
    record = ad.Record()
    net = RecordedNetwork(net_config, theta[: net_config.n_params], record)
    mu_leaf = record.variable(np.asarray(mu)) if problem.inverse else None
    terms = problem.loss_terms(net, batch, mu_leaf if problem.inverse else problem.true_param)
    values = bal.LossVector(problem.terms, [ad.value_of(t) for t in terms])
    leaves = net.leaves + ([mu_leaf] if mu_leaf is not None else [])
    n_net = len(net.leaves)

    if state.needs_gradients:
        per_term = [record.gradient(t, leaves) for t in terms]
        net_grads = [ad.concatenate_gradients(g[:n_net]) for g in per_term]
        lambdas = bal.update(state, values, net_grads)
        grad_net = sum(lam * g for lam, g in zip(lambdas, net_grads))
        grad_mu = (sum(lam * float(g[n_net]) for lam, g in zip(lambdas, per_term))
                   if mu_leaf is not None else None)
    else:
        lambdas = bal.update(state, values)
        total = bal.scalarise(terms, lambdas)
        grads = record.gradient(total, leaves)
        grad_net = ad.concatenate_gradients(grads[:n_net])
        grad_mu = float(grads[n_net]) if mu_leaf is not None else None
    scalarised = float(np.dot(lambdas, values.values))
    record.release()
    return values.values, lambdas, scalarised, grad_net, grad_mu, record.sweeps


def train(problem: Problem | str, config: TrainConfig | None = None, mode: str = "forward",
          progress=None) -> RunRecord:
    """Train one network on ``problem`` and return the complete run record.

    A numeric failure ends the run early; the record keeps every completed
    step and ``metrics["failed"]`` is set.
    """
    if isinstance(problem, str):
        problem = make_problem(problem, mode)
    config = config or TrainConfig()
    # overflow is detected explicitly and ends the run, so numpy's warnings are noise
    with np.errstate(over="ignore", invalid="ignore"):
        return _train(problem, config, progress)


def _train(problem: Problem, config: TrainConfig, progress) -> RunRecord:
    if config.weights is not None and len(config.weights) != len(problem.terms):
        raise ConfigurationError(f"{len(problem.terms)} terms but {len(config.weights)} manual weights")
    net_config = config.network_config(problem)
    init_seq, sample_seq, balance_seq = np.random.SeedSequence(config.seed).spawn(3)
    theta = init_xavier(net_config, init_seq)
    mu = float(problem.param_init) if problem.inverse else None
    separate = config.separate_mu_optimizer
    if separate is None:
        separate = problem.name == "kirchhoff"
    sample_rng = np.random.default_rng(sample_seq)
    state = config.balancer_state(len(problem.terms), balance_seq)

    net_opt = AdamState(net_config.n_params + (1 if problem.inverse and not separate else 0))
    mu_opt = AdamState(1) if problem.inverse and separate else None

    tracker = BestTracker()
    scheduler = PlateauScheduler(config.initial_lr, config.plateau_patience, config.plateau_factor)
    stopper = EarlyStopper(config.early_stop_patience, config.max_steps)
    record = RunRecord(problem.name, problem.mode, problem.terms,
                       {**config.to_dict(), "separate_mu_optimizer": separate})
    cumulative_sweeps = 0
    failure = None
    train_seconds = 0.0
    for step in range(config.max_steps):
        t0 = time.perf_counter()
        lr = scheduler.lr
        try:
            batch = sample_collocation(problem, config.counts, sample_rng)
            values, lambdas, scalarised, g_net, g_mu, sweeps = _gradient_step(
                problem, config, net_config, theta, mu, batch, state)
            if mu_opt is not None:
                new_theta = adam_step(net_opt, theta, g_net, lr, step)
                new_mu = float(adam_step(mu_opt, np.array([mu]), np.array([g_mu]),
                                         config.mu_lr * lr / config.initial_lr, step)[0])
            elif mu is not None:
                joint = adam_step(net_opt, np.append(theta, mu), np.append(g_net, g_mu), lr, step)
                new_theta, new_mu = joint[:-1], float(joint[-1])
            else:
                new_theta, new_mu = adam_step(net_opt, theta, g_net, lr, step), None
        except NumericError as exc:
            failure = str(exc) if exc.step is not None else f"{exc} (step {step})"
            break
        elapsed = time.perf_counter() - t0
        train_seconds += elapsed
        cumulative_sweeps += sweeps
        record.append(step, values, lambdas, scalarised, mu, lr, cumulative_sweeps, 1e3 * elapsed)
        theta, mu = new_theta, new_mu
        improved = tracker.observe(step, float(np.sum(values)))
        scheduler.update(step, improved)
        if progress is not None:
            progress(step, record)
        if stopper.should_stop(step, tracker):
            break

    steps_done = len(record)
    val_u, rel = validate(network_predictor(net_config, theta), problem, config.validation_grid)
    metrics = {
        "steps": steps_done,
        "stop_reason": "numeric_failure" if failure else stopper.reason,
        "failed": failure is not None,
        "failure": failure,
        "train_loss": float(np.sum(record.losses[-1])) if steps_done else float("nan"),
        "best_train_loss": float(tracker.best),
        "val_u": val_u,
        "rel_max_err": rel,
        "mu": mu,
        "mu_true": problem.true_param if problem.inverse else None,
        "val_mu": (mu - problem.true_param) ** 2 if problem.inverse else None,
        "total_time": train_seconds,
        "steps_per_second": steps_done / train_seconds if train_seconds > 0 else float("nan"),
        "seconds_per_1000": 1000.0 * train_seconds / steps_done if steps_done else float("nan"),
        "sweeps_per_step": cumulative_sweeps / steps_done if steps_done else float("nan"),
    }
    record.metrics = metrics
    record.theta = theta
    record.network = net_config
    return record


__all__ = [
    "TrainConfig", "RunRecord", "BestTracker", "PlateauScheduler", "EarlyStopper",
    "train", "validate", "reference_grid", "network_predictor",
]
