import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bilinear_control import (
    BasisTruncation,
    DegenerateFamilyError,
    DomainError,
    InvalidIndexError,
    ValidationError,
    WaveFunction,
    basis_sample,
    eigenvalue,
    gram_schmidt,
    sobolev_norm,
)

PI2 = np.pi**2


class TestEigenvalue:
    def test_first_values(self):
        assert eigenvalue(1) == pytest.approx(PI2, rel=1e-15)
        assert eigenvalue(1) == pytest.approx(9.8696, abs=1e-4)
        assert eigenvalue(3) == pytest.approx(88.8264, abs=1e-4)

    def test_resonant_pairs(self):
        d1 = eigenvalue(7) - eigenvalue(1)
        d2 = eigenvalue(8) - eigenvalue(4)
        assert d1 == pytest.approx(48 * PI2, rel=1e-15)
        assert d1 == d2

    @pytest.mark.parametrize("k", [0, -1, -7])
    def test_invalid_index(self, k):
        with pytest.raises(InvalidIndexError):
            eigenvalue(k)

    @given(st.integers(1, 500))
    def test_gap_formula(self, k):
        gap = eigenvalue(k + 1) - eigenvalue(k)
        assert gap == pytest.approx((2 * k + 1) * PI2, rel=1e-12)
        assert eigenvalue(k + 2) - eigenvalue(k + 1) > gap


class TestBasisSample:
    def test_values(self):
        assert basis_sample(1, 0.0) == 0.0
        assert basis_sample(1, 1.0) == 0.0
        assert basis_sample(1, 0.5) == pytest.approx(np.sqrt(2))
        assert basis_sample(2, 0.5) == pytest.approx(0.0, abs=1e-15)

    def test_domain(self):
        with pytest.raises(DomainError):
            basis_sample(1, 1.5)
        with pytest.raises(DomainError):
            basis_sample(1, -0.1)

    def test_orthonormality_by_quadrature(self):
        x, w = np.polynomial.legendre.leggauss(64)
        x, w = 0.5 * (x + 1), 0.5 * w
        G = np.array([[np.sum(w * basis_sample(j, x) * basis_sample(k, x)) for k in range(1, 6)] for j in range(1, 6)])
        np.testing.assert_allclose(G, np.eye(5), atol=1e-13)


class TestTruncation:
    def test_min_size(self):
        with pytest.raises(ValidationError):
            BasisTruncation(1)

    def test_increasing(self):
        assert np.all(np.diff(BasisTruncation(20).eigenvalues) > 0)

    def test_wavefunction_length(self):
        with pytest.raises(ValidationError):
            WaveFunction(np.ones(3), BasisTruncation(4))

    def test_evaluate_matches_basis(self):
        psi = BasisTruncation(5).mode(3)
        x = np.linspace(0, 1, 7)
        np.testing.assert_allclose(psi.evaluate(x).real, basis_sample(3, x), atol=1e-14)


class TestSobolevNorm:
    def test_examples(self):
        e1 = np.zeros(8)
        e1[0] = 1
        e2 = np.zeros(8)
        e2[1] = 1
        assert sobolev_norm(e1, 3) == 1.0
        assert sobolev_norm(e2, 3) == 8.0
        assert sobolev_norm((e1 + e2) / np.sqrt(2), 0) == pytest.approx(1.0, rel=1e-15)

    @given(st.lists(st.complex_numbers(max_magnitude=1e3, allow_nan=False, allow_infinity=False), min_size=2, max_size=30))
    def test_s0_is_euclidean(self, c):
        c = np.array(c)
        assert sobolev_norm(c, 0) == pytest.approx(np.linalg.norm(c), rel=1e-12, abs=1e-300)

    @given(
        st.lists(st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False), min_size=1, max_size=20),
        st.floats(0, 3),
        st.floats(0, 3),
    )
    def test_monotone_in_s(self, tail, s1, s2):
        c = np.array([1.0] + list(tail))
        lo, hi = sorted((s1, s2))
        assert sobolev_norm(c, lo) <= sobolev_norm(c, hi) * (1 + 1e-12)


class TestGramSchmidt:
    def test_elimination(self):
        tr = BasisTruncation(4)
        p1, p2 = tr.mode(1), tr.mode(2)
        out = gram_schmidt([p1, WaveFunction(p1.coeffs + p2.coeffs)])
        np.testing.assert_allclose(out[0].coeffs, p1.coeffs, atol=1e-15)
        np.testing.assert_allclose(out[1].coeffs, p2.coeffs, atol=1e-15)

    def test_idempotent(self, rng):
        Z = rng.standard_normal((6, 3)) + 1j * rng.standard_normal((6, 3))
        Q = gram_schmidt(Z)
        np.testing.assert_allclose(gram_schmidt(Q), Q, atol=1e-13)

    def test_degenerate_index(self):
        Z = np.array([[1, 0, 1], [0, 1, 1], [0, 0, 0], [0, 0, 0]], dtype=complex)
        with pytest.raises(DegenerateFamilyError) as exc:
            gram_schmidt(Z)
        assert exc.value.witness["index"] == 2

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 5))
    def test_orthonormal_and_nested(self, seed, n):
        r = np.random.default_rng(seed)
        Z = r.standard_normal((8, n)) + 1j * r.standard_normal((8, n))
        Q = gram_schmidt(Z)
        np.testing.assert_allclose(Q.conj().T @ Q, np.eye(n), atol=1e-12)
        for j in range(n):
            # column j lies in the span of the first j+1 inputs
            P = Z[:, : j + 1]
            coef = np.linalg.lstsq(P, Q[:, j], rcond=None)[0]
            assert np.linalg.norm(P @ coef - Q[:, j]) < 1e-10
            lead = Q[np.flatnonzero(np.abs(Q[:, j]) > 1e-12)[0], j]
            assert abs(lead.imag) < 1e-14 and lead.real > 0
