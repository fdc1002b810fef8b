import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bilinear_control import (
    ControlSignal,
    DivergenceError,
    LostPhaseError,
    ProjectionTarget,
    ValidationError,
    assemble_frequencies,
    build_x_squared,
    linearized_map_gamma,
    neighborhood_distance,
    overlap_alpha,
    perturbed_spectrum,
    perturbed_targets,
    phase_normalize,
    steer_local_newton,
    steer_local_states,
)

N = 2


@pytest.fixture(scope="module")
def setup():
    B = build_x_squared(24)
    spec = perturbed_spectrum(B, 0.2)
    T = 2 * assemble_frequencies(spec, N).base_horizon
    return B, spec, T


def frechet_errors(spec, B, v, T, eps_list):
    a0 = overlap_alpha(spec, B, ControlSignal.from_arrays(0.0, v.durations, 0 * v.values), N, T)
    g = linearized_map_gamma(spec, B, v, N, T).entries
    errs = []
    for e in eps_list:
        ae = overlap_alpha(spec, B, ControlSignal.from_arrays(0.0, v.durations, e * v.values), N, T)
        errs.append(np.max(np.abs(ae - a0 - e * g)))
    return np.array(errs)


class TestPhaseNormalize:
    def test_identity(self):
        a, th = phase_normalize(np.eye(2, 5))
        np.testing.assert_array_equal(a, np.eye(2, 5))
        np.testing.assert_array_equal(th, 0.0)

    def test_pure_phase(self):
        a, th = phase_normalize(np.exp(0.7j) * np.eye(3))
        np.testing.assert_allclose(a, np.eye(3), atol=1e-15)
        np.testing.assert_allclose(th, -0.7, atol=1e-15)

    def test_lost_phase(self):
        with pytest.raises(LostPhaseError):
            phase_normalize(np.array([[0.0, 1.0], [1.0, 0.0]]))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000))
    def test_random_near_identity(self, seed):
        r = np.random.default_rng(seed)
        x = np.eye(3, 7) + 0.1 * (r.standard_normal((3, 7)) + 1j * r.standard_normal((3, 7)))
        x[:, :3] *= np.exp(1j * r.uniform(-3, 3, 3))[None, :]
        a, _ = phase_normalize(x, 3)
        d = np.diag(a)
        assert np.max(np.abs(d.imag)) < 1e-12 and np.all(d.real > 0)
        np.testing.assert_array_equal(a[:, 3:], x[:, 3:])
        np.testing.assert_allclose(np.abs(a), np.abs(x), atol=1e-15)


class TestProjectionTarget:
    def test_tags(self):
        g = ProjectionTarget(2, [[0, 1j, 3], [1j, 0, 2]], "G")
        assert g.structure_defect() == 0
        assert ProjectionTarget(2, [[0, 1, 3], [1, 0, 2]], "G").structure_defect() == 2
        assert ProjectionTarget(2, [[1j, 0], [0, 1]], "Q").structure_defect() == 1
        with pytest.raises(ValidationError):
            ProjectionTarget(3, np.eye(2))
        with pytest.raises(ValidationError):
            ProjectionTarget(2, np.eye(2), "X")

    def test_weighted_norm(self):
        p = ProjectionTarget(1, [[1, 0, 1]])
        assert p.row_weighted_norms()[0] == pytest.approx(np.sqrt(1 + 27**2))


class TestGamma:
    def test_zero(self, setup):
        B, spec, T = setup
        v = ControlSignal.uniform(0.0, T, np.zeros(64))
        assert np.all(linearized_map_gamma(spec, B, v, N, T).entries == 0)

    def test_offset_rejected(self, setup):
        B, spec, T = setup
        with pytest.raises(ValidationError):
            linearized_map_gamma(spec, B, ControlSignal.constant(0.1, T), N, T)

    def test_structure(self, setup, rng):
        B, spec, T = setup
        g = linearized_map_gamma(spec, B, ControlSignal.uniform(0.0, T, rng.standard_normal(256)), N, T)
        assert g.space_tag == "G" and g.structure_defect() < 1e-15

    def test_single_frequency(self, setup):
        B, spec, T = setup
        lam = spec.eigenvalues
        k, j = 1, 2  # one-based
        w = lam[j - 1] - lam[k - 1]
        n = 2**15
        t = (np.arange(n) + 0.5) * T / n
        g = linearized_map_gamma(spec, B, ControlSignal.uniform(0.0, T, np.cos(w * t)), N, T).entries
        Bu = spec.coupling(B)
        assert g[k - 1, j - 1] == pytest.approx(-1j * T / 2 * Bu[k - 1, j - 1], rel=1e-3)
        # other couplings see a non-resonant frequency: suppressed relative to T/2
        others = np.abs(g / np.where(Bu[:N] == 0, 1, Bu[:N]))
        others[k - 1, j - 1] = others[j - 1, k - 1] = 0  # cos resonates with +-w
        assert others.max() < 0.5 * (T / 2)

    def test_frechet_order(self, setup):
        B, spec, T = setup
        r = np.random.default_rng(11)
        v = ControlSignal.uniform(0.0, T, r.standard_normal(128))
        err = frechet_errors(spec, B, v, T, [1e-2, 1e-3, 1e-4])
        order = np.diff(np.log10(err)) / np.diff(np.log10([1e-2, 1e-3, 1e-4]))
        assert np.all(order >= 1.9), (err, order)


class TestNewton:
    def test_identity_targets(self, setup):
        B, spec, T = setup
        targets = spec.eigenvectors * spec.frame_phases(T)[None, :]
        res = steer_local_newton(spec, B, targets, N, T)
        assert res.iterations == 0
        assert np.all(res.control.values == 0)
        np.testing.assert_allclose(np.mod(res.phases + np.pi, 2 * np.pi) - np.pi, 0, atol=1e-10)

    def test_phase_only(self, setup):
        B, spec, T = setup
        theta = np.array([0.4, -1.1])
        targets = spec.eigenvectors * spec.frame_phases(T)[None, :]
        targets[:, :N] *= np.exp(1j * theta)[None, :]
        res = steer_local_newton(spec, B, targets, N, T)
        assert np.max(np.abs(res.control.values)) < 1e-10
        np.testing.assert_allclose(np.angle(np.exp(1j * (res.phases - theta))), 0, atol=1e-10)

    def test_perturbed_targets(self, setup):
        from bilinear_control import propagator_matrix

        B, spec, T = setup
        Psi = perturbed_targets(spec, N, T, distance=1e-2, rng=3)
        assert neighborhood_distance(spec, Psi, T) == pytest.approx(1e-2, rel=1e-9)
        res = steer_local_newton(spec, B, Psi, N, T)
        assert res.converged and res.defect < 1e-8 and res.iterations <= 10
        # <phi_k, e^{i theta_j} Gamma phi_j> = <phi_k, psi_j> for k <= N
        G = propagator_matrix(B, res.control)
        V = spec.eigenvectors
        lhs = V[:, :N].conj().T @ G @ V * np.exp(1j * np.concatenate([res.phases, np.zeros(spec.M - N)]))[None, :]
        rhs = V[:, :N].conj().T @ Psi
        assert np.max(np.abs(lhs[:, :N] - rhs[:, :N])) < 1e-8

    def test_divergence_report(self, setup):
        B, spec, T = setup
        Psi = perturbed_targets(spec, N, T, distance=1e-2, rng=3)
        with pytest.raises(DivergenceError) as exc:
            steer_local_newton(spec, B, Psi, N, T, tol=1e-30, max_iter=2)
        assert len(exc.value.witness["history"]) == 3

    def test_outside_neighbourhood(self, setup):
        B, spec, T = setup
        Psi = perturbed_targets(spec, N, T, distance=0.2, rng=3)
        with pytest.raises(ValidationError):
            steer_local_newton(spec, B, Psi, N, T)

    def test_states_layout(self, setup):
        from bilinear_control import propagator_matrix

        B, spec, T = setup
        chi = perturbed_targets(spec, N, 0.0, distance=5e-3, rng=4, layout="states")
        psi = perturbed_targets(spec, N, T, distance=5e-3, rng=5, layout="states")
        res = steer_local_states(spec, B, chi, psi, T)
        out = propagator_matrix(B, res.control) @ chi * np.exp(1j * res.phases)[None, :]
        assert np.max(np.abs(out - psi)) < 1e-8
