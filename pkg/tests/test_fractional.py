import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from maxreg_lab.fractional import (FractionalPowerError, balakrishnan_power, frac_power,
                                   kato_audit, kato_bound, kato_ratio, similarity_norm,
                                   write_kato_csv)
from maxreg_lab.operator_core import make_operator, random_accretive, random_hermitian_positive

JORDAN = make_operator([[1.0, 1.0], [0.0, 1.0]])


def rel(a, b):
    return np.linalg.norm(a - b, 2) / np.linalg.norm(b, 2)


def test_power_examples():
    np.testing.assert_allclose(frac_power(make_operator(np.eye(3)), 0.5).entries, np.eye(3),
                               atol=1e-14)
    np.testing.assert_allclose(frac_power(make_operator(np.diag([4.0, 9.0])), 0.5).entries,
                               np.diag([2.0, 3.0]), atol=1e-13)
    r = frac_power(JORDAN, 0.5).entries
    np.testing.assert_allclose(r @ r, JORDAN.entries, atol=1e-8)


def test_endpoint_powers():
    A = random_accretive(3, 0.1, 3)
    assert rel(frac_power(A, 1).entries, A.entries) <= 1e-9
    assert rel(frac_power(A, -1).entries, np.linalg.inv(A.entries)) <= 1e-9
    with pytest.raises(FractionalPowerError):
        frac_power(A, 1.5)


@given(st.integers(0, 10**6), st.integers(1, 4),
       st.floats(-0.45, 0.45), st.floats(-0.45, 0.45))
def test_group_law(seed, d, a, b):
    A = random_accretive(d, 0.1, seed)
    lhs = frac_power(A, a).entries @ frac_power(A, b).entries
    assert rel(lhs, frac_power(A, a + b).entries) <= 1e-7


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("alpha", [0.1, 0.25, 0.5, 0.8])
def test_eig_and_balakrishnan_agree(seed, alpha):
    A = random_accretive(1 + seed % 4, 0.2, seed)
    eig = frac_power(A, alpha, method="eig").entries
    assert rel(balakrishnan_power(A.entries, alpha), eig) <= 1e-6


def test_balakrishnan_scalar_oracle():
    # principal branch of a complex scalar
    lam = 2.0 * np.exp(0.6j)
    got = balakrishnan_power(np.array([[lam]]), 0.3)[0, 0]
    assert abs(got - 2.0 ** 0.3 * np.exp(0.18j)) <= 1e-7


def test_kato_bound_values():
    assert kato_bound(0.0) == pytest.approx(1.0)
    assert kato_bound(0.25) == pytest.approx(2.41421356, rel=1e-8)
    assert kato_bound(0.49) == pytest.approx(63.657, rel=1e-4)


def test_kato_ratio_hermitian_is_one(rng):
    H = random_hermitian_positive(3, 5)
    for _ in range(20):
        f = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        assert kato_ratio(H, 0.3, f) == pytest.approx(1.0, abs=1e-12)


def test_kato_ratio_example(rng):
    A = random_accretive(3, 0.1, 42)
    for _ in range(100):
        f = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        assert kato_ratio(A, 0.25, f) <= np.tan(3 * np.pi / 8) * (1 + 1e-8)


def test_kato_audit_gates():
    H = random_hermitian_positive(2, 1)
    for r in kato_audit(H, [0.1, 0.4], samples=200):
        assert r.worst_ratio == pytest.approx(1.0, abs=1e-9) and r.passed
    with pytest.raises(FractionalPowerError):
        kato_audit(make_operator(np.diag([-1.0, 1.0])), [0.2])
    with pytest.raises(FractionalPowerError):
        kato_audit(H, [0.6])


@given(st.integers(0, 10**6), st.integers(2, 4))
def test_kato_inequality_both_sides(seed, d):
    A = random_accretive(d, 0.0, seed, skew_scale=4.0)
    for mirrored in (False, True):
        for r in kato_audit(A, [0.1, 0.3, 0.49], samples=100, seed=seed, mirrored=mirrored):
            assert r.passed
            # sampled ratios never exceed the exact supremum
            assert r.worst_ratio <= r.sup_ratio * (1 + 1e-10)
            assert r.sup_ratio <= r.bound * (1 + 1e-8)


def test_kato_audit_is_seeded():
    A = random_accretive(3, 0.0, 2)
    a = kato_audit(A, [0.2], samples=50, seed=4)[0]
    b = kato_audit(A, [0.2], samples=50, seed=4)[0]
    assert a.worst_ratio == b.worst_ratio


def test_similarity_norm():
    A = random_accretive(2, 0.1, 1)
    assert similarity_norm(A, 0.0) == 1.0
    assert similarity_norm(random_hermitian_positive(3, 0), 0.3) == pytest.approx(1.0, abs=1e-12)
    for a in (0.3, -0.3):
        s = similarity_norm(A, a)
        # the product has determinant of modulus one, so its top singular value is >= 1
        assert np.isfinite(s) and s >= 1 - 1e-12
    with pytest.raises(FractionalPowerError):
        similarity_norm(A, 0.5)


def test_kato_csv(tmp_path):
    reports = kato_audit(random_accretive(2, 0.0, 0), [0.1, 0.2], samples=10)
    path = tmp_path / "k.csv"
    write_kato_csv(reports, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "alpha,bound,worst_ratio,num_samples,pass"
    assert lines[1].startswith("0.1,") and lines[1].endswith(",10,1")
