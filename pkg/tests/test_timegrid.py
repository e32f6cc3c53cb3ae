import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from maxreg_lab.operator_core import make_operator, random_accretive
from maxreg_lab.timegrid import (GridError, GridFunction, TimeGrid, cesaro_weights, gauss_nodes,
                                 grid_from_edges, kernel_profile_U, log_grid, log_panels,
                                 panel_weights, refine, schur_bound, uniform_grid, weighted_norm)


def test_log_grid_examples():
    np.testing.assert_allclose(log_grid(1, 4, 3).nodes, [1, 2, 4], rtol=1e-15)
    g = log_grid(1e-4, 1e4, 513)
    np.testing.assert_allclose(g.nodes[1:] / g.nodes[:-1], 10 ** (8 / 512), rtol=1e-12)
    assert g.t_min == 1e-4 and g.t_max == 1e4
    for bad in ((0.0, 1.0, 4), (-1.0, 1.0, 4), (2.0, 1.0, 4)):
        with pytest.raises(GridError):
            log_grid(*bad)


def test_grid_json_round_trip():
    for g in (log_grid(1e-3, 10, 17), uniform_grid(0.5, 2.0, 9)):
        h = TimeGrid.from_json(g.to_json())
        np.testing.assert_array_equal(g.edges, h.edges)
        np.testing.assert_array_equal(g.nodes, h.nodes)


def test_log_panels_breakpoints_and_refine():
    g = log_panels(1e-3, 10, 8, breakpoints=[1, 2])
    assert np.any(g.edges == 1.0) and np.any(g.edges == 2.0)
    r = refine(g, 2)
    assert r.N == 2 * g.N
    assert set(g.edges).issubset(set(r.edges))
    z = refine(grid_from_edges([0.0, 1.0, 2.0]), 4)
    assert z.edges[0] == 0.0 and z.N == 8


def test_panel_weights_closed_form():
    e = np.array([1.0, 2.0, 3.0])
    np.testing.assert_allclose(panel_weights(e, 0.0), [1, 1])
    np.testing.assert_allclose(panel_weights(e, -1.0), np.log([2, 1.5]))
    np.testing.assert_allclose(panel_weights(e, 2.0), [7 / 3, 19 / 3])
    np.testing.assert_allclose(panel_weights(np.array([0.0, 1.0]), -0.5), [2.0])
    assert np.isinf(panel_weights(np.array([0.0, 1.0]), -1.0)[0])


def test_weighted_norm_examples():
    g = log_panels(1e-2, 10, 16, breakpoints=[1, 2])
    assert weighted_norm(GridFunction.zeros(g, 2), 0.5) == 0.0
    f = GridFunction.indicator(g, 1.0, 2.0, [1.0])
    assert weighted_norm(f, 0.0) == pytest.approx(1.0, rel=1e-14)
    assert weighted_norm(f, 2.0) == pytest.approx(np.sqrt(7 / 3), rel=1e-14)
    assert np.sqrt(7 / 3) == pytest.approx(1.52753, abs=1e-5)


def test_weighted_norm_is_panel_exact(rng):
    g = log_grid(1e-3, 1e3, 64)
    v = rng.standard_normal((64, 2)) + 1j * rng.standard_normal((64, 2))
    f = GridFunction(g, v)
    expected = np.sqrt(np.sum(np.abs(v) ** 2 * g.widths[:, None]))
    assert weighted_norm(f, 0.0) == pytest.approx(expected, rel=1e-13)


def test_weighted_norm_refinement_smooth():
    fn = lambda t: np.exp(-t) * np.array([1.0, 1j * np.sin(t)])
    g = log_grid(1e-4, 1e4, 512)
    n0 = weighted_norm(GridFunction.from_callable(g, fn))
    n2 = weighted_norm(GridFunction.from_callable(refine(refine(g)), fn))
    assert abs(n2 - n0) <= 1e-4 * n0


@given(st.floats(-0.49, 0.49), st.integers(0, 2**31 - 1))
def test_triple_bar_identity(alpha, seed):
    rng = np.random.default_rng(seed)
    g = log_grid(1e-3, 1e3, 40)
    f = GridFunction(g, rng.standard_normal((40, 2)) + 1j * rng.standard_normal((40, 2)))
    lhs = weighted_norm(f, -1.0, power=0.5 + alpha)
    assert lhs == pytest.approx(weighted_norm(f, 2 * alpha), rel=1e-13)


def test_grid_function_csv_round_trip(tmp_path):
    g = log_grid(0.1, 10, 7)
    f = GridFunction.from_callable(g, lambda t: [t, 1j / t])
    f.to_csv(tmp_path / "f.csv")
    header = (tmp_path / "f.csv").read_text().splitlines()[0]
    assert header == "t,re1,re2,im1,im2"
    h = GridFunction.from_csv(tmp_path / "f.csv", g)
    np.testing.assert_allclose(h.values, f.values, rtol=1e-11)


def test_indicator_partial_panel():
    g = grid_from_edges([0.0, 1.0, 2.0, 3.0])
    f = GridFunction.indicator(g, 0.5, 2.0, [2.0])
    np.testing.assert_allclose(f.values[:, 0], [1.0, 2.0, 0.0])


def test_cesaro_weights():
    g = log_grid(1e-4, 1e2, 300)
    for tau in (1e-3, 0.02, 1.0):
        w = cesaro_weights(g, tau)
        assert w.sum() == pytest.approx(1.0, rel=1e-12)
        # g(t) = t averages to 3 tau / 2 when t is integrated exactly per panel
        exact = np.sum(w * 0.5 * (np.clip(g.upper, tau, 2 * tau) + np.clip(g.lower, tau, 2 * tau)))
        assert exact == pytest.approx(1.5 * tau, rel=1e-12)
    with pytest.raises(GridError):
        cesaro_weights(g, 60.0)


def test_gauss_nodes_exact_for_polynomials():
    s, w = gauss_nodes([0.0, 1.0], [1.0, 3.0], order=8)
    assert s.shape == (2, 8)
    np.testing.assert_allclose(np.sum(w * s ** 9, axis=1), [0.1, (3 ** 10 - 1) / 10], rtol=1e-13)


@pytest.mark.parametrize("alpha", [0.1, 0.25, 0.4])
def test_schur_bound_two_over_alpha(alpha):
    u = np.geomspace(1e-8, 1e8, 4001)
    b = schur_bound(u, np.minimum(u ** alpha, u ** -alpha))
    assert not b.divergent
    assert b.value == pytest.approx(2 / alpha, rel=1e-2)


def test_schur_bound_trivial_cases():
    u = np.geomspace(1e-4, 1e4, 101)
    assert schur_bound(u, np.zeros_like(u)).value == 0.0
    assert schur_bound(u, np.ones_like(u)).divergent


def test_kernel_profile_slopes():
    A = make_operator([[1.0]])
    x = np.geomspace(1e-12, 1.0, 241)
    p = kernel_profile_U(A, 0.25, x)
    assert p.slope == pytest.approx(0.25, abs=0.05)
    assert np.isfinite(p.norms[-1]) and p.norms[-1] == 0.0
    assert kernel_profile_U(A, -0.25, x).slope == pytest.approx(0.5, abs=0.05)
    B = random_accretive(3, 0.2, 1)
    assert np.all(np.isfinite(kernel_profile_U(B, 0.3, x).norms))
    with pytest.raises(ValueError):
        kernel_profile_U(A, 0.0, x)
