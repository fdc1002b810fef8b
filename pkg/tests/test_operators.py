import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from bilinear_control import (
    ControlOperator,
    EvaluationError,
    ValidationError,
    build_multiplication,
    build_x_squared,
    check_assumption_A,
    check_coupling_decay,
    check_resonance_condition,
    index_pairs,
    integer_relations,
    range_regularity_diagnostic,
    resonance_quadruples,
)

PI2 = np.pi**2


def quad_entry(mu, k, j):
    f = lambda x: 2 * mu(x) * np.sin(k * np.pi * x) * np.sin(j * np.pi * x)
    return integrate.quad(f, 0, 1, limit=400, epsabs=1e-13, epsrel=1e-12)[0]


class TestXSquared:
    def test_diagonal(self):
        B = build_x_squared(8)
        k = np.arange(1, 9)
        np.testing.assert_allclose(B.diagonal, 1 / 3 - 1 / (2 * k**2 * PI2), atol=1e-15)
        assert B.matrix[1, 1] == pytest.approx(0.320668, abs=1e-6)

    def test_b12_magnitude(self):
        # the printed magnitude 8/(9 pi^2) is half the integral (see the decisions ledger)
        B = build_x_squared(4)
        printed = abs(1 / PI2 - 1 / (9 * PI2))
        assert printed == pytest.approx(0.090064, abs=1e-6)
        assert abs(B.matrix[0, 1]) == pytest.approx(2 * printed, rel=1e-14)
        assert B.matrix[0, 1] == pytest.approx(quad_entry(lambda x: x**2, 1, 2), abs=1e-12)

    def test_quadrature_oracle_subset(self):
        B = build_x_squared(64)
        for k, j in [(1, 1), (1, 2), (3, 7), (10, 11), (5, 40), (63, 64), (64, 64)]:
            assert B.matrix[k - 1, j - 1] == pytest.approx(quad_entry(lambda x: x**2, k, j), abs=1e-10)

    def test_real_symmetric(self):
        B = build_x_squared(32)
        assert B.is_real
        assert np.max(np.abs(B.matrix - B.matrix.T)) == 0.0


class TestMultiplication:
    def test_constant_one(self):
        np.testing.assert_allclose(build_multiplication(lambda x: np.ones_like(x), 12).matrix, np.eye(12), atol=1e-13)

    def test_zero(self):
        assert np.all(build_multiplication(lambda x: 0.0 * x, 6).matrix == 0)

    def test_matches_closed_form(self):
        a = build_multiplication(lambda x: x**2, 32).matrix
        np.testing.assert_allclose(a, build_x_squared(32).matrix, atol=1e-8)

    def test_quadrature_oracle(self):
        mu = lambda x: np.exp(x) * np.cos(3 * x)
        B = build_multiplication(mu, 10)
        for k, j in [(1, 1), (2, 5), (9, 10)]:
            assert B.matrix[k - 1, j - 1] == pytest.approx(quad_entry(mu, k, j), abs=1e-10)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite(self):
        with pytest.raises(EvaluationError):
            build_multiplication(lambda x: 1.0 / (x - x), 4)

    def test_too_few_points(self):
        with pytest.raises(ValidationError):
            build_multiplication(lambda x: x, 8, quadrature_points=16)

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.floats(-5, 5), min_size=1, max_size=4), st.integers(4, 20))
    def test_hermitian(self, coeffs, M):
        B = build_multiplication(lambda x: np.polyval(coeffs, x), M)
        assert np.max(np.abs(B.matrix - B.matrix.conj().T)) <= 1e-12


class TestOperatorType:
    def test_rejects_non_hermitian(self):
        with pytest.raises(ValidationError):
            ControlOperator(np.array([[0, 1], [0, 0]]))


class TestCouplingDecay:
    def test_x2(self):
        cert = check_coupling_decay(build_x_squared(32), 2)
        assert cert.ok and cert.C_N > 0

    def test_zero_and_diagonal(self):
        assert not check_coupling_decay(ControlOperator.zero(8), 2).ok
        assert check_coupling_decay(ControlOperator.zero(8), 2).C_N == 0
        assert not check_coupling_decay(ControlOperator(np.diag(np.arange(1.0, 9.0))), 2).ok

    def test_monotone_in_M(self):
        vals = [check_coupling_decay(build_x_squared(M), 3).C_N for M in (8, 16, 32, 64)]
        assert all(b <= a + 1e-15 for a, b in zip(vals, vals[1:]))


class TestResonance:
    def test_example_quadruple(self):
        quads = [q.astuple() for q in resonance_quadruples(4, 8)]
        assert (7, 1, 8, 4) in quads

    def test_x2_value(self):
        cert = check_resonance_condition(build_x_squared(8), 4, 8)
        d = dict(zip(cert.quadruples, cert.witness_values))[(7, 1, 8, 4)]
        expected = (1 / (2 * PI2)) * (-1 / 49 + 1 + 1 / 64 - 1 / 16)
        assert d == pytest.approx(expected, rel=1e-12)
        assert cert.ok

    def test_identity_fails_everywhere(self):
        cert = check_resonance_condition(ControlOperator.identity(8), 4, 8)
        assert not cert.ok and len(cert.failures) == len(cert.quadruples) > 0

    @pytest.mark.parametrize("N,jmax", [(1, 6), (2, 9), (4, 8), (3, 12)])
    def test_exhaustive(self, N, jmax):
        pairs = [(j, k) for j in range(1, jmax + 1) for k in range(1, N + 1) if j != k]
        brute = {
            frozenset([(j, k), (l, m)])
            for (j, k), (l, m) in itertools.product(pairs, pairs)
            if (j, k) != (l, m) and j * j - k * k - l * l + m * m == 0
        }
        found = [q.astuple() for q in resonance_quadruples(N, jmax)]
        got = {frozenset([q[:2], q[2:]]) for q in found}
        assert len(got) == len(found)  # each unordered couple listed once
        assert got == brute

    def test_index_pairs(self):
        ps = index_pairs(2, 3)
        assert all(j != k and k <= 2 for j, k in ps)
        assert len(ps) == 2 * 3 - 2

    def test_jmax_bound(self):
        with pytest.raises(ValidationError):
            check_resonance_condition(build_x_squared(8), 2, 9)


class TestAssumptionA:
    def test_relation_4_minus_1(self):
        cert = check_assumption_A(build_x_squared(16), 2)
        entry = next(e for e in cert.relations_found if e["r"] == [0, 4, -1])
        assert entry["diagonal_sum"] == pytest.approx(1 - (15 / 8) / PI2, rel=1e-12)
        assert entry["diagonal_sum"] == pytest.approx(0.810, abs=1e-3)
        assert cert.ok

    def test_identity_relation_passes(self):
        cert = check_assumption_A(ControlOperator.identity(8), 2)
        entry = next(e for e in cert.relations_found if e["r"] == [0, 4, -1])
        assert entry["diagonal_sum"] == pytest.approx(3.0) and entry["ok"]

    def test_series_rescue(self):
        # (0, 1, -7, 7, 0, 0, -1): sum r_j j^2 = 0 and sum r_j B_jj vanishes for x^2
        B = build_x_squared(64)
        cert = check_assumption_A(B, 6, height=7)
        entry = next(e for e in cert.relations_found if e["r"] == [0, 1, -7, 7, 0, 0, -1])
        assert abs(entry["diagonal_sum"]) < 1e-12
        assert entry["ok"] and "series" in entry
        assert cert.ok

    @given(st.integers(1, 4), st.integers(1, 5))
    @settings(deadline=None, max_examples=20)
    def test_relations_are_valid(self, N, h):
        rels = integer_relations(N, h)
        j2 = np.arange(1, N + 1) ** 2
        for r in rels:
            assert r @ j2 == 0 and np.max(np.abs(r)) <= h
            assert np.gcd.reduce(np.abs(r)) == 1


def test_range_diagnostic_not_certified():
    d = range_regularity_diagnostic(build_x_squared(64), 2)
    assert d["certified"] is False and len(d["slopes"]) == 2
