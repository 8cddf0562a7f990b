from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from romtopo.optimizer import (GeneralForm, InteriorPoint, IpmSettings, IpmState, kkt_norm,
                               kkt_parts, stacked_size, to_general_form, update_omega)


def quad_problem(a=(0.8, 0.7), bound=1.0):
    """min |x - a|^2 s.t. x1 + x2 <= bound, 0 <= x <= 1."""
    a = np.asarray(a, float)

    def evaluate(x, gradients=True):
        return SimpleNamespace(f=float(np.sum((x - a) ** 2)), g=np.array([x.sum() - bound]),
                               df_dx=2 * (x - a), dg_dx=np.ones((1, 2)))

    return evaluate


def test_stacked_size():
    # two design variables, two constraint rows: y = [x (2), q (2), w (2)]
    assert stacked_size(2, 2) == 6
    st_ = IpmState(np.full(2, 0.5), np.ones(2), np.ones(2), np.ones(2), np.ones(2), np.ones(2), 0.1)
    assert st_.y.size == stacked_size(2, 2)


def test_general_form_reproduces_constraints():
    ev = quad_problem()(np.array([0.2, 0.3]))
    gf = to_general_form(ev)
    st_ = IpmState(np.array([0.2, 0.3]), np.zeros(1), np.ones(2), np.ones(2), np.ones(1), np.ones(1), 0.1)
    np.testing.assert_array_equal(gf.c(st_), ev.g)


def qp_solution():
    x = np.array([0.55, 0.45])
    return x, np.array([0.5])


def test_constructed_kkt_point():
    x, lam = qp_solution()
    gf = to_general_form(quad_problem()(x))
    tiny = np.full(2, 1e-14)
    s = IpmState(x, np.array([0.0]), tiny, tiny, np.array([0.5]), lam, 0.0)
    # q = 0 with z_slack = lam satisfies complementarity exactly
    assert kkt_norm(s, gf) < 1e-10


def test_scaling_examples():
    n = 3
    gf = GeneralForm(0.0, np.zeros(1), np.zeros(n), np.zeros((1, n)))
    small = IpmState(np.full(n, 0.5), np.ones(1), np.ones(n), np.ones(n), np.ones(1), np.ones(1), 0.0)
    p = kkt_parts(small, gf)
    assert p.s_d == 1.0 and p.s_c == 1.0
    n_y = 2 * n + 1
    big = 200.0 * n_y / (2 * n + 1)  # every bound dual equal so that ||z||_1 = 200 N_y
    s = IpmState(np.full(n, 0.5), np.ones(1), np.full(n, big), np.full(n, big), np.array([big]),
                 np.zeros(1), 0.0)
    assert np.sum(np.abs(s.z)) == pytest.approx(200.0 * n_y)
    assert kkt_parts(s, gf).s_c == pytest.approx(2.0, rel=1e-14)


def test_omega_examples():
    assert update_omega(0.1, 1e-6) == pytest.approx(0.02, rel=1e-15)
    assert update_omega(1e-4, 1e-5) == pytest.approx(1e-6, rel=1e-12)
    assert update_omega(1e-6, 1e-4) == 1e-5  # floor eps_tol / 10


def test_omega_schedule_reaches_small_values():
    omega, rounds = 1.0, 0
    while omega >= 1e-6:
        omega = update_omega(omega, 1e-8)
        rounds += 1
    assert rounds <= 15


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_kkt_norm_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    n, m1 = 5, 3
    gf = GeneralForm(1.0, rng.standard_normal(m1), rng.standard_normal(n), rng.standard_normal((m1, n)))
    s = IpmState(rng.uniform(0.1, 0.9, n), rng.uniform(0.1, 1, m1), rng.uniform(0, 300, n),
                 rng.uniform(0, 300, n), rng.uniform(0, 300, m1), rng.standard_normal(m1), 0.0)
    perm = rng.permutation(m1)
    gf2 = GeneralForm(gf.f, gf.g[perm], gf.grad_f, gf.jac_g[perm])
    s2 = IpmState(s.x, s.q[perm], s.z_lower, s.z_upper, s.z_slack[perm], s.lam[perm], 0.0)
    # equal up to the summation order of the matrix-vector product
    assert kkt_norm(s, gf) == pytest.approx(kkt_norm(s2, gf2), rel=1e-14)


def test_fixed_barrier_iteration_converges_to_closed_form():
    # min x on 0 <= x <= 1 with the barrier weight frozen: stationarity of
    # x - w ln x - w ln(1 - x) gives x^2 - (1 + 2w) x + w = 0
    w = 0.1
    x_star = ((1 + 2 * w) - np.sqrt((1 + 2 * w) ** 2 - 4 * w)) / 2

    def evaluate(x, gradients=True):
        return SimpleNamespace(f=float(x[0]), g=np.zeros(0), df_dx=np.ones(1), dg_dx=np.zeros((0, 1)))

    ipm = InteriorPoint(evaluate, lambda ev: ev, 1, 0, IpmSettings(omega0=w, hessian="bb"))
    ipm._x0 = np.array([0.5])
    ev = evaluate(ipm._x0)
    s = ipm._initial_state(ev)
    gf = to_general_form(ev)
    merits = [ipm._merit(ev, s.x, s.q, w)]
    for _ in range(20):
        s, ev, gf, _ = ipm._step(s, ev, gf)
        merits.append(ipm._merit(ev, s.x, s.q, w))
        if abs(s.x[0] - x_star) < 1e-8:
            break
    assert abs(s.x[0] - x_star) < 1e-8
    assert all(b <= a + 1e-14 for a, b in zip(merits, merits[1:]))


@pytest.mark.parametrize("hessian", ["lbfgs", "bb"])
def test_two_variable_qp(hessian):
    evaluate = quad_problem()
    ipm = InteriorPoint(evaluate, lambda ev: ev, 2, 1, IpmSettings(eps_tol=1e-9, hessian=hessian))
    checked = []
    step = ipm._step

    def checked_step(s, ev, gf):
        out = step(s, ev, gf)
        s1 = out[0]
        assert np.min(s1.y) > 0 and np.min(s1.z) > 0  # strict interiority
        checked.append(1)
        return out

    ipm._step = checked_step
    res = ipm.minimize(np.array([0.3, 0.3]))
    assert res.converged
    x, lam = qp_solution()
    assert np.linalg.norm(res.state.x - x) < 1e-6
    assert abs(res.state.lam[0] - lam[0]) < 1e-6
    assert checked
    # convergence certificate holds component-wise
    gf = to_general_form(res.evaluation)
    parts = kkt_parts(res.state, gf)
    assert parts.complementarity <= parts.s_c * 1e-9
    assert parts.feasibility <= 1e-9


def test_inactive_constraint_qp():
    ipm = InteriorPoint(quad_problem(a=(0.2, 0.3), bound=1.5), lambda ev: ev, 2, 1,
                        IpmSettings(eps_tol=1e-8))
    res = ipm.minimize(np.array([0.5, 0.5]))
    assert res.converged
    np.testing.assert_allclose(res.state.x, [0.2, 0.3], atol=1e-6)
    assert res.state.lam[0] < 1e-6


def test_kkt_deterministic_on_frozen_state():
    ev = quad_problem()(np.array([0.4, 0.4]))
    s = IpmState(np.array([0.4, 0.4]), np.array([0.2]), np.ones(2), np.ones(2), np.ones(1), np.ones(1), 0.0)
    assert kkt_norm(s, to_general_form(ev)) == kkt_norm(s.copy(), to_general_form(ev))


def test_settings_validation():
    with pytest.raises(ValueError):
        IpmSettings(hessian="newton")
    with pytest.raises(ValueError):
        IpmSettings(eps_tol=0.0)


def test_refine_hook_retries_after_failed_line_search():
    calls = {"n": 0}
    noisy = {"on": True}
    rng = np.random.default_rng(0)

    def evaluate(x, gradients=True):
        f = float(np.sum((x - 0.3) ** 2))
        if noisy["on"]:
            f += 10.0 * rng.random()  # values too noisy for any Armijo decrease
        return SimpleNamespace(f=f, g=np.zeros(0), df_dx=2 * (x - 0.3), dg_dx=np.zeros((0, 2)))

    def refine():
        calls["n"] += 1
        noisy["on"] = False
        return calls["n"] <= 1

    ipm = InteriorPoint(evaluate, lambda ev: ev, 2, 0, IpmSettings(eps_tol=1e-8), refine_hook=refine)
    res = ipm.minimize(np.array([0.9, 0.9]))
    assert res.converged
    np.testing.assert_allclose(res.state.x, 0.3, atol=1e-6)
