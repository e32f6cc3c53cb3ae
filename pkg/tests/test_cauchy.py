import json

import numpy as np
import pytest

from maxreg_lab.cauchy import (WeakSolutionError, bump, candidate, continuity_bound_check,
                               continuity_constant, duhamel_operator, duhamel_v, exact_average,
                               ivp_report, maxreg_identity_check, recover_trace,
                               residual_battery, solve_ivp, strong_residual, sup_condition,
                               sup_profile, tent, test_battery, weak_residual)
from maxreg_lab.maxreg import assemble_Mplus, weighted_opnorm
from maxreg_lab.operator_core import OperatorError, make_operator, random_accretive
from maxreg_lab.semigroup import propagator, semigroup_bound
from maxreg_lab.timegrid import GridFunction, grid_from_edges, log_grid, log_panels, refine

ONE = make_operator([[1.0]])


def homogeneous(A, grid, h):
    return GridFunction(grid, np.einsum("iab,b->ia", propagator(A).exp(grid.nodes), h))


# --- Duhamel -------------------------------------------------------------------------

def test_duhamel_zero_forcing():
    g = log_grid(1e-3, 10, 30)
    assert not np.any(duhamel_v(random_accretive(2, 0.1, 0), GridFunction.zeros(g, 2)).values)


def test_duhamel_scalar_closed_form():
    # edges from 0 so that f = 1 on all of (0, t)
    g = grid_from_edges(np.concatenate([[0.0], np.geomspace(1e-4, 20, 120)]))
    v = duhamel_v(ONE, GridFunction.constant(g, [1.0]))
    np.testing.assert_allclose(v.values[:, 0], -np.expm1(-g.nodes), rtol=1e-12, atol=1e-15)


def test_duhamel_zero_operator_integrates():
    g = grid_from_edges(np.linspace(0.0, 5.0, 41))
    c = np.array([2.0, -1j])
    v = duhamel_v(make_operator(np.zeros((2, 2))), GridFunction.constant(g, c))
    np.testing.assert_allclose(v.values, g.nodes[:, None] * c, rtol=1e-13)


def test_duhamel_matches_operator_matrix(rng):
    A = random_accretive(2, 0.1, 3)
    g = log_grid(1e-2, 10, 40)
    f = GridFunction(g, rng.standard_normal((40, 2)) + 0j)
    np.testing.assert_allclose(duhamel_operator(A, g) @ f.flat, duhamel_v(A, f).flat,
                               rtol=1e-12, atol=1e-14)


def test_duhamel_gate():
    with pytest.raises(OperatorError):
        duhamel_v(make_operator([[0.0, 1.0], [-1.0, 0.0]]),
                  GridFunction.zeros(log_grid(0.1, 1, 4), 2))


# --- continuity estimate ---------------------------------------------------------------

def test_continuity_examples():
    g = log_grid(1e-4, 1e2, 400)
    assert continuity_bound_check(ONE, GridFunction.zeros(g, 1), 0.0) == 0.0
    r = continuity_bound_check(ONE, GridFunction.constant(g, [1.0]), 0.0)
    assert 0 < r <= 1.0
    with pytest.raises(ValueError):
        continuity_bound_check(ONE, GridFunction.constant(g, [1.0]), 1.0)


@pytest.mark.parametrize("seed", range(4))
def test_continuity_bump_bounded_by_semigroup_constant(seed):
    A = random_accretive(1 + seed % 3, 0.1, seed)
    g = log_grid(1e-4, 1e2, 400)
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(A.dim) + 1j * rng.standard_normal(A.dim)
    phi = bump(g, 0.3, 3.0, w)
    f = GridFunction(g, phi(g.nodes))
    M2 = semigroup_bound(A, g) ** 2
    assert continuity_bound_check(A, f, -0.5) <= M2 * (1 + 1e-6)
    assert continuity_constant(A, g, -0.5) == pytest.approx(M2 / 1.5)


# --- weak residuals ----------------------------------------------------------------------

def test_weak_residual_zero_data():
    g = log_grid(1e-2, 10, 50)
    z = GridFunction.zeros(g, 1)
    assert weak_residual(z, z, ONE, tent(g, 1, 3, [1.0])) == 0


def test_weak_residual_support_must_be_interior():
    g = log_grid(1e-2, 10, 50)
    with pytest.raises(ValueError):
        tent(g, 1, 20, [1.0])


def test_weak_residual_tent_first_order():
    res = []
    for pd in (50, 100, 200):
        g = log_panels(1e-3, 10, pd, breakpoints=[1, 2, 3])
        f = GridFunction.constant(g, [1.0])
        u = GridFunction.from_callable(g, lambda t: [1 - np.exp(-t)])
        phi = tent(g, 1, 3, [1.0])
        res.append(abs(weak_residual(u, f, ONE, phi)) / phi.l2_norm())
    assert res[-1] <= 1e-4
    assert res[0] / res[1] >= 1.9 and res[1] / res[2] >= 1.9


def test_homogeneous_perturbation_is_residual_free():
    A = random_accretive(2, 0.1, 5)
    g = log_grid(1e-3, 10, 300)
    f = GridFunction.indicator(g, 0.5, 2.0, [1.0, 1j])
    v = duhamel_v(A, f)
    u = v + homogeneous(A, g, np.array([1.0, -2.0]))
    for phi in (tent(g, 1, 3, [1.0, 0.5j]), bump(g, 0.2, 4.0, [0.3, 1.0])):
        r0 = weak_residual(v, f, A, phi, "exponential")
        r1 = weak_residual(u, f, A, phi, "exponential")
        assert abs(r1 - r0) <= 1e-10 * phi.l2_norm()


def test_battery_residuals_first_order():
    A = random_accretive(2, 0.1, 1)
    worst = []
    for N in (200, 400, 800):
        g = log_grid(1e-2, 1e1, N)
        f = GridFunction.from_callable(g, lambda t: np.exp(-t) * np.array([1.0, np.sin(t)]))
        v = duhamel_v(A, f)
        bat = test_battery(g, 2, per_decade=5, seed=0)
        assert len(bat) == 2 * 14      # centres 10^(k/5), k = -9..4
        worst.append(max(r for _, r in residual_battery(v, f, A, bat)))
    assert worst[0] / worst[1] >= 1.9 and worst[1] / worst[2] >= 1.9
    # exact reconstruction leaves only round-off
    exact = residual_battery(v, f, A, bat, "exponential")
    assert max(r for _, r in exact) <= 1e-10


def test_test_function_derivative_is_exact():
    g = log_grid(1e-2, 10, 50)
    for phi in (tent(g, 0.5, 2.0, [1.0]), bump(g, 0.5, 2.0, [1.0])):
        s, w = phi.pieces(8)
        # int phi' over the support vanishes, and int s phi' = -int phi
        assert abs(np.sum(w * phi.profile(s, 1))) <= 1e-13
        assert np.sum(w * s * phi.profile(s, 1)) == pytest.approx(-np.sum(w * phi.profile(s)),
                                                                  rel=1e-12)
        assert phi.phi.values[(g.nodes < 0.5) | (g.nodes > 2.0)].size
        assert not np.any(phi.phi.values[(g.nodes < 0.5) | (g.nodes > 2.0)])


def test_strong_residual_first_order():
    out = []
    for N in (200, 400, 800):
        g = log_grid(1e-4, 1e2, N)
        f = GridFunction.from_callable(g, lambda t: [np.sin(t) * np.exp(-t)])
        out.append(strong_residual(ONE, duhamel_v(ONE, f), f))
    assert out[0] / out[1] >= 1.9 and out[1] / out[2] >= 1.9


# --- sup condition ------------------------------------------------------------------------

def test_sup_profile_examples():
    g = log_grid(1e-4, 1e2, 400)
    assert sup_profile(GridFunction.zeros(g, 1)).value == 0.0
    bounded = GridFunction.from_callable(g, lambda t: [np.cos(t), 0.5j])
    B = np.max(bounded.pointwise_norms())
    p = sup_profile(bounded)
    assert p.value <= B * (1 + 1e-12) and p.trend == "bounded"
    assert sup_condition(bounded) == p.value
    blow = GridFunction.from_callable(g, lambda t: [t ** -0.25])
    q = sup_profile(blow)
    assert q.trend == "unbounded trend"
    assert q.value == pytest.approx(q.averages[0])
    # the value at the smallest tau grows as t_min drops
    deeper = sup_profile(GridFunction.from_callable(log_grid(1e-6, 1e2, 400),
                                                    lambda t: [t ** -0.25]))
    assert deeper.value > q.value * 3.0


# --- trace recovery -------------------------------------------------------------------------

@pytest.mark.parametrize("seed", range(3))
def test_recover_trace_round_trip(seed):
    A = random_accretive(1 + seed, 0.1, seed)
    g = log_grid(1e-4, 1e2, 400)
    rng = np.random.default_rng(seed)
    f = GridFunction.indicator(g, 1, 2, rng.standard_normal(A.dim))
    v = duhamel_v(A, f)
    assert np.linalg.norm(recover_trace(A, v, f)) <= 1e-6
    h0 = rng.standard_normal(A.dim) + 1j * rng.standard_normal(A.dim)
    h = recover_trace(A, v + homogeneous(A, g, h0), f)
    assert np.linalg.norm(h - h0) <= 1e-5 * np.linalg.norm(h0)


def test_recover_trace_rejects_power_law():
    g = log_grid(1e-4, 1e2, 400)
    u = GridFunction.from_callable(g, lambda t: [t ** -0.25])
    with pytest.raises(WeakSolutionError, match="not a weak solution"):
        recover_trace(ONE, u, GridFunction.zeros(g, 1))


def test_exact_average_of_homogeneous_solution():
    g = log_grid(1e-4, 1e2, 200)
    u = homogeneous(ONE, g, np.array([1.0]))
    z = GridFunction.zeros(g, 1)
    eps = 0.01
    want = (np.exp(-eps) - np.exp(-2 * eps)) / eps
    assert exact_average(ONE, u, z, eps)[0] == pytest.approx(want, rel=1e-12)


def test_homogeneous_uniqueness():
    A = random_accretive(3, 0.1, 2)
    g = log_grid(1e-4, 1e2, 300)
    f = GridFunction.indicator(g, 0.1, 1.0, [1.0, 0.0, 1j])
    w = np.array([1.0, 2.0, -1.0])
    u1, u2 = solve_ivp(A, w, f), solve_ivp(A, w.copy(), f)
    np.testing.assert_array_equal(u1.values, u2.values)
    h1, h2 = recover_trace(A, u1, f), recover_trace(A, u2, f)
    assert np.linalg.norm(h1 - h2) <= 1e-10


# --- initial value problem -----------------------------------------------------------------

def test_solve_ivp_examples():
    A = random_accretive(2, 0.1, 7)
    g = log_grid(1e-4, 1e2, 300)
    w = np.array([1.0, 1j])
    u = solve_ivp(A, w, GridFunction.zeros(g, 2))
    want = homogeneous(A, g, w).values
    assert np.max(np.abs(u.values - want)) <= 1e-9
    f = GridFunction.indicator(g, 0.5, 2.0, [1.0, -1.0])
    np.testing.assert_array_equal(solve_ivp(A, [0, 0], f).values, duhamel_v(A, f).values)
    with pytest.raises(ValueError):
        solve_ivp(A, [1.0], f)


def test_stationary_scalar_solution():
    g = grid_from_edges(np.concatenate([[0.0], np.geomspace(1e-4, 50, 150)]))
    u = solve_ivp(ONE, [1.0], GridFunction.constant(g, [1.0]))
    np.testing.assert_allclose(u.values[:, 0], 1.0, atol=1e-12)


def test_ivp_report():
    A = random_accretive(2, 0.1, 8)
    g = log_grid(1e-4, 1e2, 300)
    f = GridFunction.indicator(g, 0.5, 2.0, [1.0, 1.0])
    rep = ivp_report(A, [1.0, -0.5], f)
    assert rep.max_residual <= 1e-10 and rep.trace_error <= 1e-5
    d = json.loads(rep.to_json())
    assert set(d) == {"u0", "cesaro_limit", "max_residual", "trace_error"}
    cand = candidate(A, solve_ivp(A, [1.0, -0.5], f), f)
    assert np.isfinite(cand.sup_indicator) and max(r for _, r in cand.residuals) <= 1e-10


# --- maximal regularity identity -----------------------------------------------------------

def test_identity_examples():
    g = log_panels(1e-3, 100, 64, breakpoints=[1, 2])
    z = maxreg_identity_check(ONE, GridFunction.zeros(g, 1), 0.0)
    assert z.av_matches_Mplus == 0.0 and z.estimate_ratio == 0.0
    rep = maxreg_identity_check(ONE, GridFunction.indicator(g, 1, 2, [1.0]), 0.0)
    assert rep.av_matches_Mplus <= 1e-10
    assert rep.estimate_ratio <= 2 * weighted_opnorm(assemble_Mplus(ONE, g)) + 1


@pytest.mark.parametrize("seed", range(3))
def test_identity_random(seed):
    A = random_accretive(1 + seed, 0.1, seed)
    g = log_grid(1e-3, 1e2, 200)
    f = GridFunction.indicator(g, 0.2, 3.0, np.ones(A.dim))
    assert maxreg_identity_check(A, f, -0.5).av_matches_Mplus <= 1e-8


def test_identity_ratio_stable_at_beta_09():
    ratios = []
    g = log_grid(1e-4, 1e2, 200)
    for _ in range(3):
        ratios.append(maxreg_identity_check(ONE, GridFunction.indicator(g, 1, 2, [1.0]),
                                            0.9).estimate_ratio)
        g = refine(g)
    assert max(ratios) / min(ratios) <= 1.05
