import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from maxreg_lab.operator_core import (Operator, OperatorError, adjoint, make_operator,
                                      operator_norm, random_accretive, random_hermitian_positive,
                                      range_projector, require_analytic_generator, spectral_info)

seeds = st.integers(min_value=0, max_value=2**31 - 1)
dims = st.integers(min_value=1, max_value=4)


def test_construction_examples():
    z = make_operator([[0]])
    assert z.dim == 1 and np.all(z.entries == 0)
    j = make_operator([[1, 1], [0, 1]])
    assert j.dim == 2
    np.testing.assert_array_equal(j.entries, [[1, 1], [0, 1]])
    with pytest.raises(OperatorError):
        make_operator([[1.0, np.nan], [0.0, 1.0]])
    with pytest.raises(OperatorError):
        make_operator([[1.0, 2.0]])


def test_entries_are_immutable():
    A = make_operator([[1.0]])
    with pytest.raises(ValueError):
        A.entries[0, 0] = 2.0


def test_adjoint_examples():
    np.testing.assert_array_equal(adjoint(make_operator([[1j]])).entries, [[-1j]])
    H = random_hermitian_positive(3, seed=2)
    np.testing.assert_array_equal(H.adjoint().entries, H.entries)
    np.testing.assert_array_equal(make_operator([[1, 1], [0, 1]]).adjoint().entries,
                                  [[1, 0], [1, 1]])


@given(dims, seeds)
def test_adjoint_involution_and_norm(d, seed):
    A = random_accretive(d, 0.0, seed)
    np.testing.assert_array_equal(A.adjoint().adjoint().entries, A.entries)
    assert abs(operator_norm(A) - operator_norm(A.adjoint())) <= 1e-12 * max(1, operator_norm(A))


def test_spectral_info_examples():
    info = spectral_info(make_operator(np.eye(2)))
    np.testing.assert_allclose(info.eigenvalues, [1, 1])
    assert info.accretivity_margin == pytest.approx(1.0)
    assert info.sector_angle == pytest.approx(0.0, abs=1e-8)

    info = spectral_info(make_operator([[1, 1], [0, 1]]))
    # lambda_min of [[1, .5], [.5, 1]] is 1 - 0.5
    assert info.accretivity_margin == pytest.approx(0.5, abs=1e-12)

    skew = make_operator([[0, 1], [-1, 0]])
    info = spectral_info(skew)
    assert info.accretivity_margin == pytest.approx(0.0, abs=1e-12)
    assert info.sector_angle == pytest.approx(np.pi / 2, abs=1e-8)
    assert not info.is_analytic_generator
    with pytest.raises(OperatorError):
        require_analytic_generator(skew)


def test_sector_angle_of_rotated_scalar():
    # numerical range of e^{i phi} is the single point at angle phi
    for phi in (0.1, 0.7, 1.3):
        info = spectral_info(make_operator([[np.exp(1j * phi)]]))
        assert info.sector_angle == pytest.approx(phi, abs=1e-7)


def test_random_accretive_examples():
    for seed in range(5):
        a = random_accretive(1, 1.0, seed).entries[0, 0]
        assert a.real >= 1.0
    np.testing.assert_array_equal(random_accretive(3, 0.2, 9).entries,
                                  random_accretive(3, 0.2, 9).entries)
    assert spectral_info(random_accretive(4, 0.0, 7)).accretivity_margin >= -1e-10
    with pytest.raises(OperatorError):
        random_accretive(2, -1.0, 0)


@given(dims, st.floats(min_value=0.0, max_value=3.0), seeds)
def test_random_accretive_margin(d, m, seed):
    A = random_accretive(d, m, seed)
    assert spectral_info(A).accretivity_margin >= m - 1e-10
    assert A.metadata["seed"] == seed


@given(dims, seeds)
def test_sector_angle_rotation_property(d, seed):
    A = random_accretive(d, 0.05, seed)
    info = spectral_info(A)
    delta = np.pi / 2 - info.sector_angle
    assert delta > 0
    for theta in np.linspace(-delta, delta, 21):
        h = np.exp(1j * theta) * A.entries
        h = 0.5 * (h + h.conj().T)
        assert np.linalg.eigvalsh(h)[0] >= -1e-7


def test_operator_norm_examples():
    assert operator_norm(make_operator(np.eye(3))) == pytest.approx(1.0)
    assert operator_norm(make_operator(np.diag([3.0, -2.0]))) == pytest.approx(3.0)
    assert operator_norm(make_operator([[0, 2], [0, 0]])) == pytest.approx(2.0)


# With one dominant singular value, a random unit vector of C^4 reaches 1/1.01 of it
# with probability ~ 0.0197^3 per draw, so 10^4 draws usually fall short in dim 4.
_DIM4 = pytest.mark.xfail(reason="random search in C^4 rarely gets within 1%", strict=False)


@pytest.mark.parametrize("d,seed", [(d, s) for d in (2, 3) for s in range(3)]
                         + [pytest.param(4, s, marks=_DIM4) for s in range(3)])
def test_operator_norm_against_random_search(d, seed):
    rng = np.random.default_rng(seed)
    A = random_accretive(d, 0.1, seed)
    x = rng.standard_normal((10_000, d)) + 1j * rng.standard_normal((10_000, d))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    brute = np.max(np.linalg.norm(x @ A.entries.T, axis=1))
    norm = operator_norm(A)
    assert brute <= norm * (1 + 1e-12)
    assert norm <= brute * (1 + 1e-2)


def test_json_round_trip():
    A = random_accretive(3, 0.1, 4)
    d = json.loads(A.to_json())
    assert d["dim"] == 3 and len(d["re"]) == 3 and len(d["im"][0]) == 3
    assert d["metadata"]["seed"] == 4
    B = Operator.from_json(A.to_json())
    np.testing.assert_array_equal(A.entries, B.entries)
    with pytest.raises(OperatorError):
        Operator.from_dict({"dim": 3, "re": [[1.0]]})


def test_range_projector_column_space():
    A = make_operator([[1.0, 0.0], [0.0, 0.0]])
    np.testing.assert_allclose(range_projector(A), np.diag([1, 0]), atol=1e-14)
    assert not spectral_info(A).is_injective
