import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given
from hypothesis import strategies as st

from pinnbal import autodiff as ad
from pinnbal.errors import ConfigurationError, NumericError
from pinnbal.network import (NetworkConfig, _propagate, forward, init_xavier, input_jet,
                             layer_slices, unflatten)
from pinnbal.oracles import mp_forward, mp_partial
from pinnbal.problems import make_problem, sample_collocation, term_losses


# --- tape ------------------------------------------------------------------

def test_square_gradient_at_three():
    rec = ad.Record()
    theta = rec.variable(3.0)
    (g,) = rec.gradient(ad.square(theta), [theta])
    assert g == 6.0


def test_disconnected_leaf_gets_exact_zero():
    rec = ad.Record()
    a, mu = rec.variable([1.0, 2.0]), rec.variable(0.7)
    ga, gmu = rec.gradient(ad.sum(a * a), [a, mu])
    np.testing.assert_array_equal(ga, [2.0, 4.0])
    assert gmu == 0.0


def test_each_gradient_call_is_one_sweep():
    rec = ad.Record()
    x = rec.variable(np.arange(3.0))
    out = ad.sum(ad.sin(x))
    before = ad.sweep_count()
    for i in range(1, 4):
        rec.gradient(out, [x])
        assert rec.sweeps == i
    assert ad.sweep_count() - before == 3


def test_non_finite_loss_is_rejected():
    rec = ad.Record()
    x = rec.variable(0.0)
    with np.errstate(divide="ignore"):
        out = 1.0 / x
    with pytest.raises(NumericError):
        rec.gradient(out, [x])


def test_non_scalar_output_is_rejected():
    rec = ad.Record()
    x = rec.variable([1.0, 2.0])
    with pytest.raises(ConfigurationError):
        rec.gradient(x * 2.0, [x])


def test_replay_is_bit_identical():
    def build():
        rec = ad.Record()
        x = rec.variable(np.linspace(-1, 1, 7))
        return ad.value_of(ad.mean(ad.exp(ad.sin(x) * x) / (1.0 + x * x)))

    assert build() == build()


@given(st.lists(st.floats(-2, 2), min_size=1, max_size=6))
def test_elementwise_ops_match_differences(xs):
    def f(x):
        return ad.sum(ad.sin(x) * x + ad.exp(x * 0.5) / (2.0 + x * x) - (x ** 3) * 0.1)

    assert ad.finite_difference_check(f, np.array(xs), 1e-6) < 1e-6


def test_take_and_reshape_gradients():
    def f(x):
        y = ad.reshape(x, (2, 3))
        return ad.sum(ad.square(y[1]) + y[0, 2] * ad.sum(y[:, 0])) + ad.sum(ad.take(x, [0, 0, 5]))

    assert ad.finite_difference_check(f, np.arange(6.0) / 5, 1e-6) < 1e-8


def test_finite_difference_check_examples():
    assert ad.finite_difference_check(lambda x: ad.sum(x * x), np.array([1.0]), 1e-5) < 1e-9
    assert ad.finite_difference_check(lambda x: ad.sum(x * 3.0 + 2.0), np.array([0.3, -1.0]), 1e-3) < 1e-12
    with pytest.raises(ConfigurationError):
        ad.finite_difference_check(lambda x: ad.sum(x), np.ones(2), 0.0)


def test_finite_difference_check_helmholtz_loss(rng):
    problem = make_problem("helmholtz")
    cfg = NetworkConfig(hidden_layers=2, width=4)
    layers = unflatten(cfg, init_xavier(cfg, rng))
    batch = sample_collocation(problem, {t: 8 for t in problem.terms}, rng)

    class Field:
        def __init__(self, w0):
            self.layers = [(w0, layers[0][1])] + layers[1:]

        def jet(self, pts, derivatives, labels=()):
            req = [tuple(m) for m in derivatives]
            iset = ad.MultiIndexSet(req, 2)
            return ad.jet_from_coefficients(_propagate(cfg, self.layers, pts, iset), iset, labels, keep=req)

    def f(w0):
        return term_losses(problem, Field(w0), batch)[0]

    assert ad.finite_difference_check(f, layers[0][0].copy(), 1e-6) < 1e-5


# --- activation tables -------------------------------------------------------

@pytest.mark.parametrize("name,expr", [
    ("tanh", lambda z: sp.tanh(z)),
    ("sigmoid", lambda z: 1 / (1 + sp.exp(-z))),
])
def test_activation_tables_match_symbolic_derivatives(name, expr):
    z = sp.Symbol("z")
    f = expr(z)
    pts = np.linspace(-4, 4, 17)
    table = ad.activation_derivatives(name, pts, 5)
    for k in range(6):
        exact = sp.lambdify(z, sp.diff(f, z, k), "numpy")(pts)
        np.testing.assert_allclose(table[k], exact, rtol=1e-12, atol=1e-14)


def test_activation_order_limit_and_unknown_name():
    with pytest.raises(ConfigurationError):
        ad.activation_derivatives("tanh", 0.0, 6)
    with pytest.raises(ConfigurationError):
        ad.activation_derivatives("relu", 0.0, 1)


def test_sigmoid_table_is_finite_far_out():
    vals = ad.activation_derivatives("sigmoid", np.array([-800.0, 800.0]), 5)
    assert all(np.all(np.isfinite(v)) for v in vals)


# --- jets --------------------------------------------------------------------

def test_single_tanh_unit_series():
    cfg = NetworkConfig(input_dim=1, hidden_layers=1, width=1)
    theta = np.array([1.0, 0.0, 1.0, 0.0])
    jet = input_jet(cfg, theta, [[0.0]], max_order=4)
    assert [float(jet[(k,)][0]) for k in range(5)] == [0.0, 1.0, 0.0, -2.0, 0.0]


def test_zero_last_layer_gives_constant_jet(rng):
    cfg = NetworkConfig(hidden_layers=2, width=5)
    theta = init_xavier(cfg, rng)
    w, _, b = layer_slices(cfg)[-1]
    theta[w] = 0.0
    theta[b] = 2.5
    jet = input_jet(cfg, theta, rng.uniform(-1, 1, (4, 2)), max_order=1)
    np.testing.assert_array_equal(jet.value, 2.5)
    np.testing.assert_array_equal(jet[1, 0], 0.0)
    np.testing.assert_array_equal(jet[0, 1], 0.0)


def test_low_order_jet_matches_float64_differences(rng):
    cfg = NetworkConfig(hidden_layers=2, width=8)
    theta = init_xavier(cfg, rng)
    p = rng.uniform(-1, 1, 2)
    h = 1e-4
    f = lambda q: forward(cfg, theta, np.atleast_2d(q))[0]
    jet = input_jet(cfg, theta, p[None], max_order=2)
    e = np.eye(2)
    for i in range(2):
        d1 = (f(p + h * e[i]) - f(p - h * e[i])) / (2 * h)
        d2 = (f(p + h * e[i]) - 2 * f(p) + f(p - h * e[i])) / h**2
        mi1, mi2 = tuple(e[i].astype(int)), tuple(2 * e[i].astype(int))
        assert abs(jet[mi1][0] - d1) / max(1, abs(d1)) < 1e-5
        assert abs(jet[mi2][0] - d2) / max(1, abs(d2)) < 1e-5
    dxy = (f(p + h * (e[0] + e[1])) - f(p + h * (e[0] - e[1])) - f(p - h * (e[0] - e[1]))
           + f(p - h * (e[0] + e[1]))) / (4 * h * h)
    assert abs(jet[1, 1][0] - dxy) / max(1, abs(dxy)) < 1e-5


@pytest.mark.parametrize("activation", ["tanh", "sigmoid"])
def test_order_four_jet_matches_extended_precision_differences(activation, rng):
    cfg = NetworkConfig(hidden_layers=2, width=8, activation=activation)
    theta = init_xavier(cfg, rng)
    p = rng.uniform(-1, 1, 2)
    jet = input_jet(cfg, theta, p[None], max_order=4)
    for mi in ad.MultiIndexSet.full(2, 4).indices:
        ref = mp_partial(lambda q: mp_forward(cfg, theta, q), p, mi, h="1e-4", dps=60)
        assert abs(jet[mi][0] - ref) / max(1.0, abs(ref)) < 1e-5, mi


def test_normalised_inputs_report_physical_derivatives(rng):
    bounds = ((0.0, 10.0), (0.0, 10.0))
    cfg = NetworkConfig(hidden_layers=2, width=6, input_bounds=bounds)
    theta = init_xavier(cfg, rng)
    p = rng.uniform(0, 10, 2)
    jet = input_jet(cfg, theta, p[None], derivatives=[(4, 0), (2, 2), (0, 4)])
    for mi in [(4, 0), (2, 2), (0, 4)]:
        ref = mp_partial(lambda q: mp_forward(cfg, theta, q), p, mi)
        assert abs(jet[mi][0] - ref) < 1e-12 * max(1.0, abs(ref))


def test_restricted_set_matches_full_set(rng):
    cfg = NetworkConfig(hidden_layers=3, width=7)
    theta = init_xavier(cfg, rng)
    pts = rng.uniform(-1, 1, (5, 2))
    full = input_jet(cfg, theta, pts, max_order=4)
    part = input_jet(cfg, theta, pts, derivatives=[(4, 0), (2, 2), (0, 4)])
    for mi in [(4, 0), (2, 2), (0, 4), (0, 0)]:
        np.testing.assert_allclose(part[mi], full[mi], rtol=1e-12, atol=1e-14)


def test_jet_symmetry_and_request_order(rng):
    cfg = NetworkConfig(hidden_layers=2, width=6)
    theta = init_xavier(cfg, rng)
    jet = input_jet(cfg, theta, rng.uniform(-1, 1, (3, 2)), max_order=3, labels=("x", "y"))
    np.testing.assert_array_equal(jet.d("x", "x", "y"), jet.d("y", "x", "x"))
    np.testing.assert_array_equal(jet.d("x", "y", "x"), jet[2, 1])
    np.testing.assert_array_equal(jet.d(0, 1), jet.d("y", "x"))


@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**31))
def test_jet_is_linear_in_output_layer(a, b, seed):
    rng = np.random.default_rng(seed)
    cfg = NetworkConfig(hidden_layers=2, width=4)
    t1 = init_xavier(cfg, rng)
    t2 = t1.copy()
    w, _, bias = layer_slices(cfg)[-1]
    t2[w] = rng.normal(size=t2[w].size)
    t2[bias] = rng.normal()
    combo = t1.copy()
    combo[w] = a * t1[w] + b * t2[w]
    combo[bias] = a * t1[bias] + b * t2[bias]
    pts = rng.uniform(-1, 1, (3, 2))
    j1, j2, jc = (input_jet(cfg, t, pts, max_order=4) for t in (t1, t2, combo))
    for mi in ad.MultiIndexSet.full(2, 4).indices:
        expect = a * j1[mi] + b * j2[mi]
        np.testing.assert_allclose(jc[mi], expect, rtol=1e-12, atol=1e-12 * (1 + np.abs(expect).max()))


def test_missing_jet_entry_is_configuration_error(rng):
    cfg = NetworkConfig(hidden_layers=1, width=3)
    jet = input_jet(cfg, init_xavier(cfg, rng), [[0.1, 0.2]], derivatives=[(1, 0)])
    with pytest.raises(ConfigurationError):
        jet[0, 2]


def test_order_above_four_is_rejected():
    with pytest.raises(ConfigurationError):
        ad.MultiIndexSet([(5, 0)], 2)
    with pytest.raises(ConfigurationError):
        ad.MultiIndexSet([(1, 0, 0)], 2)


def test_multi_index_closure_and_ordering():
    s = ad.MultiIndexSet([(2, 1)], 2)
    assert set(s.indices) == {(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (2, 1)}
    assert list(s.degree) == sorted(s.degree)
    assert s.indices[0] == (0, 0)


def test_non_finite_parameters_rejected():
    cfg = NetworkConfig(hidden_layers=1, width=2)
    theta = np.full(cfg.n_params, np.nan)
    with pytest.raises(NumericError):
        input_jet(cfg, theta, [[0.0, 0.0]], max_order=1)


# --- gradients through jets --------------------------------------------------

def test_burgers_residual_gradient_matches_differences(rng):
    problem = make_problem("burgers")
    cfg = NetworkConfig(hidden_layers=2, width=4)
    layers = unflatten(cfg, init_xavier(cfg, rng))
    pts = rng.uniform([-1, 0], [1, 1], (16, 2))
    req = [(1, 0), (0, 1), (2, 0)]
    iset = ad.MultiIndexSet(req, 2)
    from pinnbal.problems.burgers import burgers_residual

    for k in range(len(layers)):
        def f(leaf, k=k):
            ls = [(leaf if i == k else w, b) for i, (w, b) in enumerate(layers)]
            jet = ad.jet_from_coefficients(_propagate(cfg, ls, pts, iset), iset, keep=req)
            return ad.mean(ad.square(burgers_residual(jet, problem.true_param)))

        assert ad.finite_difference_check(f, layers[k][0].copy(), 1e-6) < 1e-5


def test_order_four_loss_gradient_matches_differences():
    from pinnbal.oracles import parameter_gradient_check

    assert parameter_gradient_check(seed=3) < 1e-5
