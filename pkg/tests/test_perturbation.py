import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bilinear_control import (
    ControlOperator,
    GapCollapseError,
    admissible_u0,
    build_x_squared,
    check_coupling_decay,
    coupling_persistence,
    decomposition_residual,
    eigenbranch_sweep,
    eigenvalue,
    eta_decay_fit,
    find_coupling_zero,
    gap_certificate,
    norm_equivalence,
    perturbed_spectrum,
    resolvent_margin,
)

PI2 = np.pi**2


@pytest.fixture(scope="module")
def B64():
    return build_x_squared(64)


class TestSpectrum:
    def test_zero_offset(self, B64):
        s = perturbed_spectrum(B64, 0.0)
        np.testing.assert_allclose(s.eigenvalues, eigenvalue(np.arange(1, 65)), rtol=1e-15)
        np.testing.assert_allclose(s.eigenvectors, np.eye(64), atol=1e-15)
        assert np.all(s.a == 1) and np.all(s.eta_norms == 0)

    def test_identity_shift(self):
        s = perturbed_spectrum(ControlOperator.identity(10), 0.37)
        np.testing.assert_allclose(s.eigenvalues, eigenvalue(np.arange(1, 11)) + 0.37, rtol=1e-14)
        assert np.max(s.eta_norms) < 1e-14

    def test_first_order_slope(self, B64):
        h = 1e-4
        lp = perturbed_spectrum(B64, h).eigenvalues
        lm = perturbed_spectrum(B64, -h).eigenvalues
        slope = (lp - lm) / (2 * h)
        j = np.arange(1, 65)
        np.testing.assert_allclose(slope, 1 / 3 - 1 / (2 * j**2 * PI2), atol=1e-4)

    def test_invariants(self, B64):
        s = perturbed_spectrum(B64, 0.2)
        V = s.eigenvectors
        assert np.max(np.abs(V.conj().T @ V - np.eye(64))) < 1e-10
        np.testing.assert_allclose(s.a**2 + s.eta_norms**2, 1.0, atol=1e-10)
        assert np.all(s.a > 0)
        H = np.diag(eigenvalue(np.arange(1, 65))) + 0.2 * B64.matrix
        assert np.max(np.abs((V * s.eigenvalues) @ V.conj().T - H)) < 1e-10

    def test_comparability(self, B64):
        u0 = 0.2
        s = perturbed_spectrum(B64, u0)
        lam = eigenvalue(np.arange(1, 65))
        assert np.max(np.abs(s.eigenvalues / lam - 1)) <= B64.norm * u0 / lam[0] + 1e-12

    def test_analytic_branches(self, B64):
        grid = np.linspace(-0.1, 0.1, 21)
        L = np.array([perturbed_spectrum(B64, u).eigenvalues for u in grid])
        for j in range(64):
            c = np.polyfit(grid, L[:, j], 4)
            assert np.max(np.abs(np.polyval(c, grid) - L[:, j])) < 1e-8

    @settings(max_examples=20, deadline=None)
    @given(st.floats(-0.2, 0.2))
    def test_real_phase_convention(self, u0):
        s = perturbed_spectrum(build_x_squared(16), u0)
        assert np.all(s.a > 0)
        assert np.max(np.abs(np.imag(s.eigenvectors))) == 0.0
        assert np.all(np.diff(s.eigenvalues) > 0)


class TestDecomposition:
    def test_zero(self, B64):
        r = decomposition_residual(perturbed_spectrum(B64, 0.0), B64)
        assert r["max_scalar"] == 0.0 and r["max_vector"] == 0.0

    @pytest.mark.parametrize("u0", [0.1, 0.2])
    def test_identities(self, B64, u0):
        r = decomposition_residual(perturbed_spectrum(B64, u0), B64)
        assert np.all(r["scalar"] < 1e-8)
        assert r["max_vector"] < 1e-10

    def test_eta_decay(self, B64):
        fit = eta_decay_fit(perturbed_spectrum(B64, 0.1))
        # ||eta_j|| ~ C / j: slope -1, j ||eta_j|| nearly constant over the window
        assert fit["slope"] == pytest.approx(-1.0, abs=0.05)
        assert fit["spread"] < 1.5
        assert fit["constant"] == pytest.approx(0.0146 * 0.1, rel=0.1)


class TestResolvent:
    def test_unperturbed(self, B64):
        r = resolvent_margin(B64, 0.0)
        j = np.arange(1, 64)
        np.testing.assert_allclose(r["inverse_norms"], 2 / ((2 * j + 1) * PI2), rtol=1e-13)

    def test_bounded(self, B64):
        r = resolvent_margin(B64, 0.1)
        assert np.all(np.isfinite(r["inverse_norms"]))
        assert r["r"] < 2 * 2 / (3 * PI2)

    def test_collapse(self, B64):
        with pytest.raises(GapCollapseError):
            resolvent_margin(B64, 1e3)


class TestGap:
    def test_resonant_at_zero(self, B64):
        c = gap_certificate(perturbed_spectrum(B64, 0.0), 4)
        assert not c.ok
        assert c.min_gap_combination == pytest.approx(0.0, abs=1e-9)
        j, k, n, m = c.argmin
        assert j * j - k * k - n * n + m * m == 0  # an exact integer resonance

    def test_example_quadruple_zero(self, B64):
        lam = perturbed_spectrum(B64, 0.0).eigenvalues
        assert abs(lam[6] - lam[0] - lam[7] + lam[3]) < 1e-12

    def test_lifted(self, B64):
        assert gap_certificate(perturbed_spectrum(B64, 0.05), 4).ok

    def test_frozen_value(self, B64):
        c = gap_certificate(perturbed_spectrum(B64, 0.2), 4, B=B64)
        assert c.ok
        assert c.argmin == (7, 1, 8, 4)
        assert c.min_gap_combination == pytest.approx(0.0095, abs=2e-4)
        fo = c.first_order
        assert fo["predicted"] == pytest.approx(fo["actual"], rel=0.05)

    def test_large_epsilon(self, B64):
        assert not gap_certificate(perturbed_spectrum(B64, 0.05), 4, epsilon=1.01 * PI2).ok


class TestNormEquivalence:
    def test_unperturbed_single_modes(self, B64):
        s = perturbed_spectrum(B64, 0.0)
        lam = s.eigenvalues
        for j in (1, 5, 20):
            e = np.zeros(64)
            e[j - 1] = 1
            ratio = np.sqrt(lam[j - 1] ** 3) / j**3
            assert ratio == pytest.approx(np.pi**3, rel=1e-13)
        r = norm_equivalence(s, trials=20, rng=0)
        assert r["c_low"] == pytest.approx(np.pi**3, rel=1e-12)
        assert r["c_high"] == pytest.approx(np.pi**3, rel=1e-12)

    def test_perturbed(self, B64):
        r = norm_equivalence(perturbed_spectrum(B64, 0.1), trials=100, rng=0)
        assert 0 < r["c_low"] <= r["c_high"] < np.inf
        assert r["c_high"] / r["c_low"] < 2


class TestCoupling:
    def test_reduces_to_unperturbed(self, B64):
        a = coupling_persistence(perturbed_spectrum(B64, 0.0), B64, 3).C_tilde_N
        assert a == pytest.approx(check_coupling_decay(B64, 3).C_N, rel=1e-14)

    def test_persistence(self):
        B = build_x_squared(48)
        c0 = check_coupling_decay(B, 3).C_N
        c = coupling_persistence(perturbed_spectrum(B, 0.05), B, 3)
        assert c.ok and abs(c.C_tilde_N - c0) <= 0.5 * c0

    def test_zero_found_and_flagged(self):
        Bm = build_x_squared(16).matrix.copy()
        Bm[0, 1] = Bm[1, 0] = 1e-5
        B = ControlOperator(Bm, "synthetic")
        found = find_coupling_zero(B, 2, np.linspace(-0.2, 0.2, 9))
        assert found is not None
        u, (k, j) = found
        assert (k, j) == (1, 2) and u == pytest.approx(-0.03925, abs=1e-4)
        cert = coupling_persistence(perturbed_spectrum(B, u), B, 2)
        assert not cert.ok and cert.argmin == (1, 2)

    def test_x2_has_no_zero_in_range(self):
        assert find_coupling_zero(build_x_squared(16), 2, np.linspace(-0.2, 0.2, 9)) is None


def test_admissible_u0(B64):
    u, certs = admissible_u0(B64, 4)
    assert u == pytest.approx(0.2)
    assert certs["gap"].ok and certs["coupling"].ok


def test_sweep_rows():
    rows = eigenbranch_sweep(build_x_squared(8), [0.0, 0.1])
    assert len(rows) == 16
    assert rows[0] == (0.0, 1, pytest.approx(PI2), 1.0, 0.0)
