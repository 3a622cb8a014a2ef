"""Acceptance gate: one test and one printed verdict line per criterion.

Criteria 1 and 6a run by default. The remaining criteria need full training
budgets (hours to days of single-core time per criterion) or long timing
series and run only when
``PINNBAL_FULL_ACCEPTANCE=1``; otherwise they are skipped with the reason
printed. ``PINNBAL_ACCEPTANCE_WORKERS`` sets the process pool size and
``PINNBAL_ABLATION_STEPS`` the reduced budget of the ablation sweeps.
"""
import math
import os

import numpy as np
import pytest

from pinnbal import balancing as bal
from pinnbal.harness import PRESETS, ExperimentConfig, SweepSpec, run_experiment, sweep
from pinnbal.oracles import (jet_vs_high_precision, parameter_gradient_check,
                             reference_term_losses)
from pinnbal.optim import AdamState, adam_step
from pinnbal.problems import make_problem
from pinnbal.problems.kirchhoff import KirchhoffMaterial
from pinnbal.training import BestTracker, EarlyStopper, PlateauScheduler, TrainConfig, train

FULL = os.environ.get("PINNBAL_FULL_ACCEPTANCE") == "1"
WORKERS = int(os.environ.get("PINNBAL_ACCEPTANCE_WORKERS", "1"))
ABLATION_STEPS = int(os.environ.get("PINNBAL_ABLATION_STEPS", "10000"))
SEEDS = [0, 1, 2, 3]
PROBLEMS = ("burgers", "kirchhoff", "helmholtz")


def verdict(emit, number, passed, detail):
    emit(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
    return passed


def gate(emit, number, cost):
    if not FULL:
        emit(f"criterion {number}: SKIP  needs {cost}; set PINNBAL_FULL_ACCEPTANCE=1 to run")
        pytest.skip(f"full training budget ({cost})")


@pytest.fixture(scope="module")
def outdir(tmp_path_factory):
    root = os.environ.get("PINNBAL_OUTPUT_ROOT")
    return tmp_path_factory.mktemp("acceptance") if root is None else root


def experiment(problem, balancer, outdir, mode="forward", **train):
    cfg = ExperimentConfig(problem, mode, balancer, train, SEEDS,
                           str(os.path.join(str(outdir), f"{problem}-{mode}-{balancer}")),
                           workers=WORKERS)
    return run_experiment(cfg)


# --- 1. property suite ------------------------------------------------------------

def test_criterion_1_property_suite(acceptance):
    rng = np.random.default_rng(2024)
    failures = []

    # 100 random derivative instances: 50 input jets, 50 parameter gradients
    jet_err = max(jet_vs_high_precision(seed=100 + i, n_points=1, max_order=1 + i % 4,
                                        activation=("tanh", "sigmoid")[i % 2],
                                        width=int(rng.integers(3, 8)))
                  for i in range(50))
    grad_err = max(parameter_gradient_check(seed=200 + i, order=1 + i % 4) for i in range(50))
    if max(jet_err, grad_err) >= 1e-5:
        failures.append(f"derivatives {jet_err:.1e}/{grad_err:.1e}")

    # softmax normalisation
    norm_err = 0.0
    for _ in range(200):
        m = int(rng.integers(2, 10))
        lam = bal.relative_softmax(rng.uniform(1e-3, 1e3, m), rng.uniform(1e-3, 1e3, m),
                                   10 ** rng.uniform(-2, 2))
        norm_err = max(norm_err, abs(lam.sum() - m))
    if norm_err >= 1e-12:
        failures.append(f"softmax sum {norm_err:.1e}")

    # reductions of the adaptive rule
    seq = rng.uniform(0.1, 3.0, (40, 5))
    s0 = bal.BalancerState("relobralo", 5, alpha=0.0, expected_saudade=0.3, seed=1)
    s1 = bal.BalancerState("relobralo", 5, alpha=1.0, expected_saudade=1.0)
    bal.update(s0, seq[0])
    bal.update(s1, seq[0])
    red_err = 0.0
    for prev, cur in zip(seq, seq[1:]):
        red_err = max(red_err, np.max(np.abs(bal.update(s0, cur) - bal.relative_softmax(cur, prev, 0.1))))
        red_err = max(red_err, np.max(np.abs(bal.update(s1, cur) - 1.0)))
    if red_err != 0.0:
        failures.append(f"reductions {red_err:.1e}")

    # reference solutions zero every term
    worst_ref = {}
    for name in PROBLEMS:
        for mode in ("forward", "inverse"):
            worst_ref[(name, mode)] = reference_term_losses(name, mode, n=100, seed=7)
            tol = 1e-4 if name == "burgers" else 1e-8
            if worst_ref[(name, mode)] >= tol:
                failures.append(f"{name} {mode} reference {worst_ref[(name, mode)]:.1e}")

    # Adam first step
    g = rng.normal(size=20)
    step = adam_step(AdamState(20), np.zeros(20), g, 1e-3)
    if np.max(np.abs(step + 1e-3 * g / (np.abs(g) + 1e-8))) >= 1e-15:
        failures.append("adam first step")

    # plateau and early-stop counters
    tracker, sched, stop = BestTracker(), PlateauScheduler(1e-3), EarlyStopper(9000)
    stopped_at = None
    for k in range(20000):
        improved = tracker.observe(k, 1.0)
        sched.update(k, improved)
        if k == 3000 and not math.isclose(sched.lr, 1e-4):
            failures.append("plateau at 3000")
        if stop.should_stop(k, tracker):
            stopped_at = k
            break
    if stopped_at != 9000:
        failures.append(f"early stop at {stopped_at}")

    verdict(acceptance, 1, not failures,
            f"jet {jet_err:.1e}, grad {grad_err:.1e}, softmax {norm_err:.1e}, reductions {red_err:.1e}, "
            f"reference max {max(worst_ref.values()):.1e}" + (f"; failed: {failures}" if failures else ""))
    assert not failures


# --- 2-5. full-budget training outcomes -----------------------------------------

def test_criterion_2_burgers_forward(acceptance, outdir):
    gate(acceptance, 2, "4 Burgers runs of 1e5 steps")
    res = experiment("burgers", "relobralo", outdir)
    rel = res.summary["aggregate"]["rel_max_err"]["median"]
    assert verdict(acceptance, 2, rel < 0.05, f"median relative max error {rel:.3e} (< 5e-2)")


def test_criterion_3_helmholtz_forward(acceptance, outdir):
    gate(acceptance, 3, "12 Helmholtz runs of 1e5 steps")
    med = {b: experiment("helmholtz", b, outdir, **({"weights": [1.0] * 5} if b == "manual" else {}))
           .summary["aggregate"]["val_u"]["median"] for b in ("relobralo", "softadapt", "manual")}
    ok = med["relobralo"] <= 1e-3 and med["relobralo"] < min(med["softadapt"], med["manual"])
    assert verdict(acceptance, 3, ok, "median val_u " + ", ".join(f"{k} {v:.3e}" for k, v in med.items()))


def test_criterion_4_kirchhoff_forward(acceptance, outdir):
    gate(acceptance, 4, "20 Kirchhoff runs of 1e5 steps")
    med = {b: experiment("kirchhoff", b, outdir).summary["aggregate"]["val_u"]["median"]
           for b in bal.METHODS}
    others = min(v for k, v in med.items() if k != "relobralo")
    ok = med["relobralo"] <= 1e-6 and med["relobralo"] < others
    assert verdict(acceptance, 4, ok, "median val_u " + ", ".join(f"{k} {v:.3e}" for k, v in med.items()))


def test_criterion_5_inverse_parameters(acceptance, outdir):
    gate(acceptance, 5, "12 inverse runs of 1e5 steps")
    mu = {p: experiment(p, "relobralo", outdir, mode="inverse").summary["aggregate"]["mu"]["median"]
          for p in PROBLEMS}
    errs = {"burgers": abs(mu["burgers"] * 100 * math.pi - 1), "kirchhoff": abs(mu["kirchhoff"] - KirchhoffMaterial().D),
            "helmholtz": abs(mu["helmholtz"] - 1)}
    tols = {"burgers": 0.01, "kirchhoff": 0.3, "helmholtz": 0.05}
    ok = all(errs[p] < tols[p] for p in PROBLEMS)
    assert verdict(acceptance, 5, ok, ", ".join(f"{p} {mu[p]:.5g} (err {errs[p]:.2e} < {tols[p]})"
                                                 for p in PROBLEMS))


# --- 6. efficiency accounting ---------------------------------------------------

def per_step_ms(problem, balancer, steps):
    cfg = TrainConfig(**{**PRESETS[problem], "balancer": balancer, "max_steps": steps + 1,
                         "validation_grid": 2})
    return train(problem, cfg).wall_ms[1:]  # the first step pays one-off set-up costs


def interleaved_ms(problem, methods, steps, rounds):
    """Median ms per step (equal to s per 1000 steps) per method, alternating methods each round
    so that drifts in machine load hit all of them alike."""
    samples = {m: [] for m in methods}
    for _ in range(rounds):
        for m in methods:
            samples[m] += per_step_ms(problem, m, steps)
    return {m: float(np.median(v)) for m, v in samples.items()}


def test_criterion_6a_sweeps_and_overhead(acceptance):
    failures = []
    for name in PROBLEMS:
        k = len(make_problem(name).terms)
        for method in bal.METHODS:
            cfg = TrainConfig(hidden_layers=1, width=4, max_steps=2, balancer=method,
                              validation_grid=2, counts={t: 8 for t in make_problem(name).terms})
            got = train(name, cfg).metrics["sweeps_per_step"]
            want = k if method in bal.GRADIENT_METHODS else 1
            if got != want:
                failures.append(f"{name}/{method} sweeps {got} != {want}")

    steps = {"burgers": 6, "helmholtz": 10, "kirchhoff": 4}
    overhead = {}
    for name in PROBLEMS:
        t = interleaved_ms(name, ("manual", "relobralo"), steps[name], rounds=3)
        overhead[name] = t["relobralo"] / t["manual"] - 1.0
        if overhead[name] > 0.25:
            failures.append(f"{name} overhead {overhead[name]:.1%}")
    detail = "sweep counts exact; " + ", ".join(f"{p} overhead {overhead[p]:+.1%}" for p in PROBLEMS)
    verdict(acceptance, "6a", not failures, detail + (f"; failed: {failures}" if failures else ""))
    assert not failures


def test_criterion_6b_kirchhoff_ordering(acceptance):
    gate(acceptance, "6b", "about 15 min of interleaved Kirchhoff timing")
    t = interleaved_ms("kirchhoff", ("relobralo", "gradnorm", "lr_annealing"), steps=10, rounds=6)
    ok = t["gradnorm"] > t["relobralo"] and t["lr_annealing"] > t["relobralo"]
    assert verdict(acceptance, "6b", ok, "kirchhoff s/1000 steps " + ", ".join(f"{m} {v:.0f}" for m, v in t.items()))


# --- 7. ablation ------------------------------------------------------------------

def best_cell(res, axis):
    cells = [c for c in res.cells if np.isfinite(c["median_log_val_u"])]
    return min(cells, key=lambda c: c["median_log_val_u"])[axis]


def test_criterion_7_ablation(acceptance, outdir):
    gate(acceptance, 7, f"about 100 sweep runs of {ABLATION_STEPS} steps")
    train_cfg = {"max_steps": ABLATION_STEPS}

    def run(problem, axes):
        base = ExperimentConfig(problem, "forward", "relobralo", train_cfg, [0, 1, 2],
                                str(os.path.join(str(outdir), "ablation", problem)), workers=WORKERS)
        name = "-".join(axes)
        return sweep(SweepSpec(axes, runs_per_cell=3), base, os.path.join(base.output, name))

    best_t = best_cell(run("helmholtz", {"temperature": [1e-5, 1e-3, 1e-2, 1e-1, 1.0, 10.0]}), "temperature")
    best_rho = best_cell(run("kirchhoff", {"expected_saudade": [0.0, 0.5, 0.9, 0.99, 0.999, 0.9999, 1.0]}),
                         "expected_saudade")
    best_alpha = {p: best_cell(run(p, {"alpha": [0.0, 0.9, 0.99, 0.999, 1.0]}), "alpha") for p in PROBLEMS}
    ok = best_t <= 1e-2 and best_rho >= 0.99 and all(a != 1.0 for a in best_alpha.values())
    assert verdict(acceptance, 7, ok, f"helmholtz best T {best_t:g}, kirchhoff best E[rho] {best_rho:g}, "
                                      f"best alpha {best_alpha}")
