import numpy as np
import pytest

from pinnbal import autodiff as ad
from pinnbal.errors import ConfigurationError, NumericError
from pinnbal.network import RecordedNetwork, forward, init_xavier
from pinnbal.optim import AdamState, adam_step
from pinnbal.problems import Helmholtz, make_problem, sample_collocation
from pinnbal.problems.helmholtz import analytical_field as helmholtz_field
from pinnbal.training import (BestTracker, EarlyStopper, PlateauScheduler, RunRecord, TrainConfig,
                              network_predictor, train, validate)

TINY = dict(hidden_layers=1, width=8, validation_grid=16)
SMALL_COUNTS = {"interior": 32, "boundary": 8, "initial": 8, "data": 16}


def tiny(problem="helmholtz", mode="forward", **kw):
    p = make_problem(problem, mode)
    counts = {t: SMALL_COUNTS[p.region_kind(t)] for t in p.terms}
    return p, TrainConfig(**{**TINY, "counts": counts, **kw})


# --- Adam -----------------------------------------------------------------------

def test_adam_first_step_is_signed_learning_rate():
    g = np.array([3.0, -0.2, 1e-3, -50.0])
    new = adam_step(AdamState(4), np.zeros(4), g, 1e-3)
    np.testing.assert_allclose(new, -1e-3 * np.sign(g), rtol=1e-4)


def test_adam_zero_gradient_keeps_parameters():
    p = np.array([1.0, -2.0])
    np.testing.assert_array_equal(adam_step(AdamState(2), p, np.zeros(2), 0.1), p)


def test_adam_decreases_quadratic():
    from pinnbal.oracles import adam_quadratic_decrease

    assert adam_quadratic_decrease() > 0
    p, s = np.array([2.0, -3.0]), AdamState(2)
    values = []
    for _ in range(200):
        values.append(float(p @ p))
        p = adam_step(s, p, 2 * p, 5e-2)
    assert values[-1] < 0.1 * values[0]


def test_adam_non_finite_gradient_reports_step():
    s = AdamState(2)
    with pytest.raises(NumericError) as exc:
        adam_step(s, np.zeros(2), np.array([np.nan, 0.0]), 1e-3, step_index=17)
    assert exc.value.step == 17 and "step 17" in str(exc.value)
    assert s.step == 0 and not s.m.any()
    with pytest.raises(ConfigurationError):
        adam_step(s, np.zeros(3), np.zeros(3), 1e-3)


# --- schedule and stopping ------------------------------------------------------

def drive(losses, patience=3000, factor=0.1, lr=1e-3):
    tracker, sched = BestTracker(), PlateauScheduler(lr, patience, factor)
    for step, loss in enumerate(losses):
        sched.update(step, tracker.observe(step, loss))
    return sched.lr


def test_plateau_reduces_after_patience():
    assert drive(np.ones(3000)) == 1e-3
    assert drive(np.ones(3001)) == pytest.approx(1e-4)
    assert drive(np.ones(6001)) == pytest.approx(1e-5)
    assert drive(np.linspace(2, 1, 7000)) == 1e-3


def test_equal_loss_is_not_an_improvement():
    tracker = BestTracker()
    assert tracker.observe(0, 1.0)
    assert not tracker.observe(1, 1.0)
    assert tracker.observe(2, 0.999)


def test_early_stopping():
    def run(losses, max_steps=None):
        tracker, stopper = BestTracker(), EarlyStopper(9000, max_steps)
        for step, loss in enumerate(losses):
            tracker.observe(step, loss)
            if stopper.should_stop(step, tracker):
                return step, stopper.reason
        return None, None

    assert run(np.ones(20000)) == (9000, "no_improvement")
    losses = np.ones(20000)
    losses[8999] = 0.5
    assert run(losses) == (17999, "no_improvement")
    assert run(np.linspace(1, 0, 500), max_steps=100) == (99, "budget")


# --- training loop --------------------------------------------------------------

def test_manual_training_is_deterministic():
    p, cfg = tiny(balancer="manual", weights=[1.0] * 5, max_steps=15, seed=3)
    a, b = train(p, cfg), train(p, cfg)
    np.testing.assert_array_equal(a.theta, b.theta)
    np.testing.assert_array_equal(np.array(a.losses), np.array(b.losses))
    assert a.metrics["val_u"] == b.metrics["val_u"]


def test_different_seeds_differ():
    p, cfg = tiny(max_steps=3)
    other = TrainConfig(**{**cfg.to_dict(), "seed": 1})
    assert not np.array_equal(train(p, cfg).theta, train(p, other).theta)


@pytest.mark.parametrize("name", ["burgers", "kirchhoff", "helmholtz"])
@pytest.mark.parametrize("method", ["manual", "softadapt", "relobralo", "lr_annealing", "gradnorm"])
def test_sweeps_per_step(name, method):
    p, cfg = tiny(name, balancer=method, max_steps=3, hidden_layers=1, width=4)
    rec = train(p, cfg)
    k = len(p.terms)
    expected = k if method in ("lr_annealing", "gradnorm") else 1
    assert np.all(np.diff([0] + rec.sweeps) == expected)
    assert rec.metrics["sweeps_per_step"] == expected


@pytest.mark.parametrize("mode", ["forward", "inverse"])
def test_record_consistency(mode):
    p, cfg = tiny(mode=mode, max_steps=12, plateau_patience=2)
    rec = train(p, cfg)
    assert len(rec) == 12 and rec.step == list(range(12))
    assert all(a >= b for a, b in zip(rec.lr, rec.lr[1:]))
    for losses, lambdas, s in zip(rec.losses, rec.lambdas, rec.scalarised):
        assert s == pytest.approx(float(np.dot(lambdas, losses)), rel=1e-12)
        assert np.all(losses >= 0) and np.all(lambdas > 0)
    if mode == "inverse":
        assert rec.mu[0] == p.param_init and rec.metrics["mu"] != p.param_init
    else:
        assert np.all(np.isnan(rec.mu)) and rec.metrics["val_mu"] is None


def test_tiny_learning_rate_barely_moves_parameters():
    p, cfg = tiny(max_steps=100, initial_lr=1e-12)
    rec = train(p, cfg)
    init_seq = np.random.SeedSequence(cfg.seed).spawn(3)[0]
    theta0 = init_xavier(cfg.network_config(p), init_seq)
    assert np.max(np.abs(rec.theta - theta0)) < 1e-8


def test_data_term_does_not_depend_on_parameter():
    p = make_problem("helmholtz", "inverse")
    cfg = TrainConfig(**TINY).network_config(p)
    record = ad.Record()
    net = RecordedNetwork(cfg, init_xavier(cfg, 0), record)
    mu = record.variable(np.asarray(0.5))
    batch = sample_collocation(p, {"PDE": 8, "DATA": 8}, np.random.default_rng(0))
    pde, data = p.loss_terms(net, batch, mu)
    assert float(record.gradient(data, [mu])[0]) == 0.0
    assert float(record.gradient(pde, [mu])[0]) != 0.0


def test_separate_parameter_optimizer_follows_learning_rate():
    p, cfg = tiny(mode="inverse", max_steps=1, separate_mu_optimizer=True, mu_lr=0.05)
    rec = train(p, cfg)
    assert abs(rec.metrics["mu"] - p.param_init) == pytest.approx(0.05, rel=1e-4)
    assert rec.config["separate_mu_optimizer"] is True
    p, cfg = tiny(mode="inverse", max_steps=1)
    rec = train(p, cfg)
    assert abs(rec.metrics["mu"] - p.param_init) == pytest.approx(1e-3, rel=1e-4)


def test_numeric_failure_truncates_record():
    class Exploding(Helmholtz):
        calls = 0

        def loss_terms(self, field, batch, mu):
            Exploding.calls += 1
            terms = super().loss_terms(field, batch, mu)
            if Exploding.calls > 4:
                terms[0] = terms[0] * np.nan
            return terms

    p = Exploding()
    _, cfg = tiny(max_steps=20)
    rec = train(p, cfg)
    assert len(rec) == 4
    assert rec.metrics["failed"] and rec.metrics["stop_reason"] == "numeric_failure"
    assert "step 4" in rec.metrics["failure"]
    assert np.isfinite(rec.metrics["val_u"])


def test_weights_length_must_match_terms():
    p, cfg = tiny(balancer="manual", weights=[1.0, 1.0])
    with pytest.raises(ConfigurationError):
        train(p, cfg)


# --- validation -----------------------------------------------------------------

def test_validate_reference_and_zero():
    p = Helmholtz()
    assert validate(p.reference, p, 32) == (0.0, 0.0)
    mse, rel = validate(lambda pts: np.zeros(len(pts)), p, 256)
    assert mse == pytest.approx(0.248051, abs=1e-6)
    assert rel == 1.0
    assert validate(helmholtz_field(), p, 64) == validate(helmholtz_field(), p, 64)


def test_network_predictor_matches_forward():
    p, cfg = tiny()
    net = cfg.network_config(p)
    theta = init_xavier(net, 0)
    pts = p.validation_grid(4)
    np.testing.assert_array_equal(network_predictor(net, theta)(pts), forward(net, theta, pts))


# --- configuration and records --------------------------------------------------

@pytest.mark.parametrize("bad", [
    {"plateau_factor": 1.0}, {"plateau_patience": 0}, {"max_steps": 0}, {"initial_lr": -1.0},
    {"balancer": "adaptive"}, {"precision": "float32"}, {"thinning": 0},
])
def test_train_config_rejects_invalid_values(bad):
    with pytest.raises(ConfigurationError):
        TrainConfig(**bad)


def test_train_config_round_trip():
    cfg = TrainConfig(balancer="softadapt", counts={"PDE": 10}, seed=4)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigurationError):
        TrainConfig.from_dict({"learning_rate": 1.0})


def test_run_record_round_trip(tmp_path):
    p, cfg = tiny(mode="inverse", max_steps=7, thinning=3)
    rec = train(p, cfg)
    rec.write_csv(tmp_path / "r.csv")
    rec.write_json(tmp_path / "r.json")
    back = RunRecord.read(tmp_path / "r.csv", tmp_path / "r.json")
    assert back.step == [0, 3, 6]
    assert back.labels == rec.labels and back.metrics == rec.metrics
    for i, j in enumerate([0, 3, 6]):
        np.testing.assert_array_equal(back.losses[i], rec.losses[j])
        np.testing.assert_array_equal(back.lambdas[i], rec.lambdas[j])
        assert back.mu[i] == rec.mu[j] and back.sweeps[i] == rec.sweeps[j]
    full = RunRecord.read(rec.write_csv(tmp_path / "f.csv", thinning=1))
    assert full.step == list(range(7))
