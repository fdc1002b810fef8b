"""Local exact steering in projection around the perturbed eigenbasis.

Write ``u = u0 + u1`` and let ``phi_j^u0(T) = exp(-i lambda_j^u0 T) phi_j^u0``
be the free evolution of the perturbed eigenstates.  The overlap map

    alpha_hat[k, j](u1) = <phi_k^u0(T), Gamma_T^u phi_j^u0>,   k <= N,

equals the identity block at ``u1 = 0``.  After removing the phase of each of
the first ``N`` columns (``phase_normalize``) its derivative at ``u1 = 0`` is
the moment map

    gamma[k, j](v) = -i B^u0[k, j] int_0^T v(s) exp(-i (lambda_j^u0 - lambda_k^u0) s) ds,

which is onto the skew/zero-diagonal structure whenever the transition
frequencies are distinct and the couplings nonzero.  ``steer_local_newton``
inverts the nonlinear map by Newton iteration.

Two layouts share the same machinery:

* ``"projection"`` -- the ``N x M`` block above: every state ``phi_j^u0``
  (``j <= M``) is steered in projection onto the first ``N`` modes;
* ``"states"`` -- the transposed ``M x N`` block: ``N`` given states are
  steered exactly (all ``M`` coordinates) to ``N`` targets, both close to the
  first ``N`` perturbed eigenstates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import DivergenceError, IllPosedError, LostPhaseError, ValidationError
from .moment_solver import DEFAULT_SEGMENTS, MomentSystem, assemble_frequencies, solve_real_moment
from .perturbation import coupling_persistence, gap_certificate
from .propagator import ControlSignal, exp_segment_integrals
from .spectral_core import WaveFunction, as_coefficient_matrix, eigenvalue, sobolev_norm

__all__ = [
    "ProjectionTarget",
    "LocalSteeringResult",
    "phase_normalize",
    "linearized_map_gamma",
    "overlap_alpha",
    "steer_local_newton",
    "steer_local_states",
    "neighborhood_distance",
    "perturbed_targets",
    "DEFAULT_EPSILON",
]

#: radius of the local neighbourhood in H^3 distance (no value is given by the theory)
DEFAULT_EPSILON = 0.05
LOST_PHASE_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class ProjectionTarget:
    """Block of overlaps ``x[k, j]`` (``k <= N``) tagged by its structure.

    ``space_tag = "Q"``: targets, with real diagonal ``x[k, k]``.
    ``space_tag = "G"``: tangent vectors, skew on the ``N x N`` block with
    zero diagonal.
    """

    N: int
    entries: np.ndarray
    space_tag: str = "Q"

    def __post_init__(self):
        x = np.array(self.entries, dtype=complex)
        if x.ndim != 2 or x.shape[0] != self.N or x.shape[1] < self.N:
            raise ValidationError("entries must be an N x M block with M >= N", module="local_control", shape=x.shape)
        if self.space_tag not in ("Q", "G"):
            raise ValidationError("space_tag must be 'Q' or 'G'", module="local_control", tag=self.space_tag)
        object.__setattr__(self, "entries", x)

    @property
    def M(self):
        return self.entries.shape[1]

    def structure_defect(self):
        """Violation of the tag's structural constraints (0 when satisfied)."""
        blk = self.entries[:, : self.N]
        if self.space_tag == "Q":
            return float(np.max(np.abs(np.diag(blk).imag)))
        return float(max(np.max(np.abs(blk + blk.conj().T)), np.max(np.abs(np.diag(blk)))))

    def row_weighted_norms(self):
        """``(sum_j |j^3 x[k, j]|^2)^(1/2)`` for each row ``k``."""
        return sobolev_norm(self.entries.T, 3)


@dataclass
class LocalSteeringResult:
    """Control, phases and convergence history of a local steering run."""

    control: ControlSignal
    phases: np.ndarray
    history: list
    defect: float
    converged: bool
    layout: str = "projection"
    diagnostics: dict = field(default_factory=dict)

    @property
    def u1(self):
        return self.control.with_offset(0.0)

    @property
    def iterations(self):
        return len(self.history) - 1

    def to_dict(self):
        return {
            "control": self.control.to_dict(),
            "phases": [float(p) for p in self.phases],
            "defect_history": [h["defect"] for h in self.history],
            "history": self.history,
            "defect": self.defect,
            "converged": self.converged,
            "layout": self.layout,
            "diagnostics": self.diagnostics,
        }


def phase_normalize(alpha_hat, N=None):
    """Rotate the first ``N`` columns so their diagonal entries are real positive.

    Parameters
    ----------
    alpha_hat : ndarray
        ``N x M`` (projection layout) or ``M x N`` (states layout) block.
    N : int, optional
        Number of columns to normalize; defaults to the smaller dimension.

    Returns
    -------
    alpha : ndarray
    phases : ndarray
        ``theta_j = -arg(alpha_hat[j, j])``, so that column ``j`` was
        multiplied by ``exp(i theta_j)``.

    Raises
    ------
    LostPhaseError
        If a diagonal entry (nearly) vanishes.
    """
    a = np.asarray(alpha_hat, dtype=complex)
    N = min(a.shape) if N is None else N
    d = np.diag(a)[:N]
    small = np.flatnonzero(np.abs(d) < LOST_PHASE_TOL)
    if len(small):
        j = int(small[0])
        raise LostPhaseError(
            f"diagonal overlap {j + 1} vanished; the state left the local neighbourhood",
            j=j + 1,
            value=float(abs(d[j])),
        )
    p = np.conj(d) / np.abs(d)
    out = a.copy()
    out[:, :N] *= p[None, :]
    return out, -np.angle(d)


def linearized_map_gamma(spec, B, v, N, T=None):
    """Derivative of the phase-normalized overlap map in direction ``v``.

    Parameters
    ----------
    spec : PerturbedSpectrum
    B : ControlOperator
    v : ControlSignal
        Variation of ``u1`` (offset must be 0).
    N : int
    T : float, optional
        Horizon; defaults to ``v.total_time``.

    Returns
    -------
    ProjectionTarget
        G-tagged ``N x M`` block, computed with exact segment integrals.
    """
    if v.u0 != 0.0:
        raise ValidationError("the variation must have zero offset", module="local_control", u0=v.u0)
    T = v.total_time if T is None else T
    lam = spec.eigenvalues
    M = spec.M
    omega = lam[None, :] - lam[:N, None]  # (N, M): lambda_j - lambda_k
    mom = v.moments(omega.ravel()).reshape(N, M)
    Bu = spec.coupling(B)[:N, :]
    g = -1j * mom * Bu
    g[np.arange(N), np.arange(N)] = 0.0
    return ProjectionTarget(N, g, "G")


# ---------------------------------------------------------------------------
# Newton core


class _Problem:
    """``W(u1) = L Gamma(u0 + u1) R`` and its projected residual.

    Row and column indices of ``W`` are labelled by perturbed modes; the
    leading ``N x N`` block carries the phase normalization.
    """

    def __init__(self, spec, B, T, N, layout, initial=None, n_segments=DEFAULT_SEGMENTS):
        self.spec, self.B, self.T, self.N, self.layout = spec, B, float(T), N, layout
        self.S = int(n_segments)
        self.dt = self.T / self.S
        M = spec.M
        V = spec.eigenvectors
        Econj = np.conj(spec.frame_phases(self.T))
        if layout == "projection":
            self.L = Econj[:N, None] * V[:, :N].conj().T
            self.R = V.astype(complex)
        elif layout == "states":
            self.L = Econj[:, None] * V.conj().T
            self.R = as_coefficient_matrix(initial, M)
            if self.R.shape[1] != N:
                raise ValidationError("need exactly N initial states", module="local_control")
        else:
            raise ValidationError("layout must be 'projection' or 'states'", module="local_control", layout=layout)
        r, c = self.L.shape[0], self.R.shape[1]
        ku, ju = np.triu_indices(N, 1)
        self.skew = (ku, ju)
        if layout == "projection":
            kf, jf = np.meshgrid(np.arange(N), np.arange(N, c), indexing="ij")
        else:
            kf, jf = np.meshgrid(np.arange(N, r), np.arange(N), indexing="ij")
        self.free = (kf.ravel(), jf.ravel())
        self.n_eq = 2 * len(ku) + 2 * len(kf.ravel()) + 1
        self.lam0 = eigenvalue(np.arange(1, M + 1))

    # -- residual structure -------------------------------------------------
    def project(self, D):
        """Real vector of controlled components of a complex block ``D``."""
        ku, ju = self.skew
        s = 0.5 * (D[..., ku, ju] - np.conj(D[..., ju, ku]))
        f = D[..., self.free[0], self.free[1]]
        return np.concatenate([s.real, s.imag, f.real, f.imag], axis=-1)

    def entry_list(self):
        """(row, col) of every controlled complex entry, skew pairs first."""
        ku, ju = self.skew
        return list(zip(ku, ju)) + list(zip(*self.free))

    # -- forward map ----------------------------------------------------------
    def segment_factors(self, values):
        lam = self.lam0
        H = np.diag(lam)[None] + (self.spec.u0 + values)[:, None, None] * self.B.matrix[None]
        e, V = np.linalg.eigh(H)
        return e, V

    def unitaries(self, e, V):
        ph = np.exp(-1j * self.dt * e)
        return (V * ph[:, None, :]) @ np.conj(np.swapaxes(V, 1, 2))

    def evaluate(self, values, jacobian=False):
        e, V = self.segment_factors(values)
        U = self.unitaries(e, V)
        S = self.S
        if not jacobian:
            X = self.R
            for s in range(S):
                X = U[s] @ X
            return self.L @ X, None
        M = self.spec.M
        f = np.empty((S, M, self.R.shape[1]), dtype=complex)
        X = self.R
        for s in range(S):
            f[s] = X
            X = U[s] @ X
        W = self.L @ X
        g = np.empty((S, self.L.shape[0], M), dtype=complex)
        Y = self.L
        for s in range(S - 1, -1, -1):
            g[s] = Y
            Y = Y @ U[s]
        # derivative of exp(-i dt H) along B, in the eigenbasis of H
        d = e[:, :, None] - e[:, None, :]
        m = 0.5 * (e[:, :, None] + e[:, None, :])
        F = -1j * self.dt * np.exp(-1j * self.dt * m) * np.sinc(self.dt * d / (2 * np.pi))
        Vh = np.conj(np.swapaxes(V, 1, 2))
        Bt = Vh @ self.B.matrix[None] @ V
        dW = (g @ V) @ (F * Bt) @ (Vh @ f)
        return W, dW

    # -- phase-normalized quantities ------------------------------------------
    def normalized(self, W):
        return phase_normalize(W, self.N)

    def jacobian(self, W, dW):
        N = self.N
        d = np.diag(W)[:N]
        p = np.conj(d) / np.abs(d)
        ddiag = dW[:, np.arange(N), np.arange(N)]  # (S, N)
        dphase = np.imag(ddiag / d[None, :])  # d arg(W_jj)
        dA = dW.copy()
        dA[:, :, :N] = p[None, None, :] * (dW[:, :, :N] - 1j * W[None, :, :N] * dphase[:, None, :])
        J = self.project(dA).T  # (n_eq - 1, S)
        return np.vstack([J, np.full((1, self.S), self.dt)])


def _as_target_block(problem, targets):
    """Target block ``X`` in the layout of ``problem``, phase-normalized."""
    spec, T, N = problem.spec, problem.T, problem.N
    V = spec.eigenvectors
    Econj = np.conj(spec.frame_phases(T))
    if isinstance(targets, ProjectionTarget):
        X = targets.entries
    else:
        Psi = as_coefficient_matrix(targets, spec.M)
        if problem.layout == "projection":
            if Psi.shape[1] != spec.M:
                raise ValidationError(
                    "projection steering needs one target per mode (M targets)",
                    module="local_control",
                    count=Psi.shape[1],
                    M=spec.M,
                )
            X = Econj[:N, None] * (V[:, :N].conj().T @ Psi)
        else:
            X = Econj[:, None] * (V.conj().T @ Psi)
    Xn, theta_target = phase_normalize(X, N)
    return X, Xn, theta_target


def neighborhood_distance(spec, targets, T, N=None):
    """``sup_j min_theta ||exp(-i theta) psi_j - phi_j^u0(T)||_(3)``.

    The phase of each target is removed before measuring, since steering is
    only defined up to those phases.
    """
    Psi = as_coefficient_matrix(targets, spec.M)
    n = Psi.shape[1]
    ref = spec.eigenvectors[:, :n] * spec.frame_phases(T)[None, :n]
    ip = np.sum(np.conj(ref) * Psi, axis=0)
    ph = np.where(np.abs(ip) > 0, ip / np.maximum(np.abs(ip), 1e-300), 1.0)
    return float(np.max(sobolev_norm(Psi * np.conj(ph)[None, :] - ref, 3)))


def _check_preconditions(spec, B, N, T, targets_matrix, epsilon):
    if targets_matrix is not None:
        G = targets_matrix.conj().T @ targets_matrix
        orth = float(np.max(np.abs(G - np.eye(G.shape[0]))))
        if orth > 1e-10:
            raise ValidationError("targets are not orthonormal", module="local_control", defect=orth)
        dist = neighborhood_distance(spec, targets_matrix, T)
        if dist >= epsilon:
            raise ValidationError(
                f"targets lie outside the local neighbourhood (H3 distance {dist:.3g} >= {epsilon})",
                module="local_control",
                distance=dist,
                epsilon=epsilon,
            )
    gap = gap_certificate(spec, N)
    if not gap.ok:
        raise ValidationError("gap certificate failed", module="local_control", certificate=gap.to_dict())
    coup = coupling_persistence(spec, B, N)
    if not coup.ok:
        raise ValidationError("coupling persistence failed", module="local_control", certificate=coup.to_dict())
    system = assemble_frequencies(spec, N)
    if T <= system.base_horizon:
        raise IllPosedError(
            f"horizon T={T:.6g} must exceed 2*pi/min_gap={system.base_horizon:.6g}",
            T=T,
            base_horizon=system.base_horizon,
        )
    return system


def _chord_step(problem, delta_vec):
    """Moment-problem step: invert the linearization at ``u1 = 0``."""
    spec, N = problem.spec, problem.N
    entries = problem.entry_list()
    n = len(entries)
    half_s = len(problem.skew[0])
    re = delta_vec[: 2 * half_s].reshape(2, -1)
    fr = delta_vec[2 * half_s : -1].reshape(2, -1)
    dz = np.concatenate([re[0] + 1j * re[1], fr[0] + 1j * fr[1]])
    lam = spec.eigenvalues
    Bu = spec.coupling(problem.B)
    omega, targets, labels = [0.0], [delta_vec[-1]], [(1, 1)]
    for (k, j), z in zip(entries, dz):
        omega.append(lam[j] - lam[k])
        targets.append(1j * z / Bu[k, j])
        labels.append((j + 1, k + 1))
    system = MomentSystem(problem.T, omega, targets, labels)
    sol = solve_real_moment(system, problem.S, check_horizon=False)
    assert n == len(labels) - 1
    return sol.control.values


def _newton_step(problem, J, delta_vec):
    """Minimum weighted-norm solution of ``J dv = delta``."""
    scale = np.linalg.norm(J, axis=1)
    scale[scale == 0] = 1.0
    Js = J / scale[:, None]
    rhs = delta_vec / scale
    Gm = (Js @ Js.T) / problem.dt
    c = linalg.solve(Gm, rhs, assume_a="pos")
    return (Js.T @ c) / problem.dt


def _run_newton(problem, X, Xn, tol, max_iter, method, initial_values=None):
    S, dt = problem.S, problem.dt
    values = np.zeros(S) if initial_values is None else np.array(initial_values, dtype=float)
    target_vec = problem.project(Xn)
    history = []
    for it in range(max_iter + 1):
        need_jac = method == "newton"
        W, dW = problem.evaluate(values, jacobian=need_jac)
        A, phases = problem.normalized(W)
        dvec = np.concatenate([target_vec - problem.project(A), [-dt * values.sum()]])
        defect = float(np.max(np.abs(dvec)))
        full = float(np.max(np.abs(Xn - A)))
        rec = {"iteration": it, "defect": defect, "block_defect": full}
        history.append(rec)
        if defect < tol:
            return values, A, W, history, True
        if it == max_iter:
            break
        if method == "newton":
            step = _newton_step(problem, problem.jacobian(W, dW), dvec)
        else:
            step = _chord_step(problem, dvec)
        l2 = float(np.sqrt(dt * np.sum(step**2)))
        damp = 1.0
        if defect >= 1e-2 and l2 > 0.1:
            damp = 0.1 / l2
        rec["step_l2"] = l2
        rec["damping"] = damp
        values = values + damp * step
    return values, A, W, history, False


def perturbed_targets(spec, N, T, distance=1e-2, rng=None, layout="projection", decay=3.0):
    """Random targets at a prescribed ``H^3`` distance from ``phi_j^u0(T)``.

    A random skew-Hermitian ``Y`` with entries ``~ 1/(k j)^decay`` generates
    ``Psi = V E(T) expm(s Y)``; the scale ``s`` is tuned (by secant steps) so
    that the phase-insensitive sup-distance equals ``distance``.

    Returns
    -------
    ndarray
        ``(M, M)`` for the projection layout, ``(M, N)`` for the states layout.
    """
    rng = np.random.default_rng(rng)
    M = spec.M
    k = np.arange(1, M + 1, dtype=float)
    Z = rng.standard_normal((M, M)) + 1j * rng.standard_normal((M, M))
    Z /= np.outer(k, k) ** decay
    Y = 0.5 * (Z - Z.conj().T)
    base = spec.eigenvectors * spec.frame_phases(T)[None, :]
    ncol = M if layout == "projection" else N

    def make(s):
        return base @ linalg.expm(s * Y)[:, :ncol]

    def dist(s):
        return neighborhood_distance(spec, make(s), T)

    s = distance / max(dist(1.0), 1e-300)
    for _ in range(20):
        d = dist(s)
        if abs(d - distance) <= 1e-12 * distance:
            break
        s *= distance / d
    return make(s)


def _finish(problem, X, values, A, W, history, converged, max_iter):
    N = problem.N
    d = np.diag(W)[:N]
    # e^{i theta_j} Gamma phi_j matches psi_j on the first N modes
    phases = np.mod(np.angle(np.diag(X)[:N]) - np.angle(d), 2 * np.pi)
    ctrl = ControlSignal.from_arrays(problem.spec.u0, np.full(problem.S, problem.dt), values)
    if not converged:
        raise DivergenceError(
            f"local Newton iteration did not reach tolerance in {max_iter} iterations",
            history=[h["defect"] for h in history],
        )
    return LocalSteeringResult(ctrl, phases, history, history[-1]["defect"], True, problem.layout)


def steer_local_newton(spec, B, targets, N, T, tol=1e-10, max_iter=10, epsilon=DEFAULT_EPSILON,
                       method="chord", n_segments=DEFAULT_SEGMENTS, check=True):
    """Steer every ``phi_j^u0`` onto ``psi_j`` in projection onto the first ``N`` modes.

    Solves ``alpha(u1) = x`` where ``x[k, j] = <phi_k^u0(T), psi_j>`` (phase
    normalized) with ``k <= N`` and ``j <= M``.  The first ``N`` columns
    match up to phases; the returned ``phases`` satisfy
    ``<phi_k^u0, exp(i theta_j) Gamma_T^u phi_j^u0> = <phi_k^u0, psi_j>``.

    Parameters
    ----------
    spec : PerturbedSpectrum
    B : ControlOperator
    targets : list of WaveFunction, ndarray (M, M) or ProjectionTarget
        The target family ``psi_j``, ``j <= M`` (or directly its Q block).
    N : int
    T : float
        Horizon; must exceed ``2 pi / min_gap``.
    tol : float
        Stop when the maximal projected defect falls below ``tol``.
    max_iter : int
    epsilon : float
        Neighbourhood radius in ``H^3`` distance.
    method : {"newton", "chord"}
        ``"newton"`` uses the exact Jacobian of the discretized map;
        ``"chord"`` reuses the linearization at ``u1 = 0`` through the moment
        solver.
    n_segments : int
    check : bool
        Verify the preconditions.

    Returns
    -------
    LocalSteeringResult

    Raises
    ------
    DivergenceError
        No convergence within ``max_iter`` iterations.
    """
    problem = _Problem(spec, B, T, N, "projection", n_segments=n_segments)
    if check:
        tm = None if isinstance(targets, ProjectionTarget) else as_coefficient_matrix(targets, spec.M)
        _check_preconditions(spec, B, N, T, tm, epsilon)
    X, Xn, _ = _as_target_block(problem, targets)
    values, A, W, history, ok = _run_newton(problem, X, Xn, tol, max_iter, method)
    return _finish(problem, X, values, A, W, history, ok, max_iter)


def steer_local_states(spec, B, initial, targets, T, tol=1e-10, max_iter=10, epsilon=DEFAULT_EPSILON,
                       method="chord", n_segments=DEFAULT_SEGMENTS, check=True):
    """Steer ``N`` states exactly (up to phases) onto ``N`` targets.

    Both families must be close (up to phases) to the first ``N`` perturbed
    eigenstates.  On return ``exp(i theta_j) Gamma_T^u chi_j = psi_j`` for
    every ``j <= N`` in all ``M`` coordinates.

    Parameters
    ----------
    spec : PerturbedSpectrum
    B : ControlOperator
    initial, targets : list of WaveFunction or ndarray (M, N)
    T : float

    Returns
    -------
    LocalSteeringResult
    """
    chi = as_coefficient_matrix(initial, spec.M)
    psi = as_coefficient_matrix(targets, spec.M)
    N = chi.shape[1]
    if psi.shape[1] != N:
        raise ValidationError("initial and target families differ in size", module="local_control")
    problem = _Problem(spec, B, T, N, "states", initial=chi, n_segments=n_segments)
    if check:
        _check_preconditions(spec, B, N, T, None, epsilon)
        for fam, name in ((chi, "initial"), (psi, "target")):
            G = fam.conj().T @ fam
            if np.max(np.abs(G - np.eye(N))) > 1e-10:
                raise ValidationError(f"{name} states are not orthonormal", module="local_control")
        d0 = neighborhood_distance(spec, psi, T)
        if d0 >= epsilon:
            raise ValidationError(
                f"targets lie outside the local neighbourhood (H3 distance {d0:.3g})",
                module="local_control",
                distance=d0,
            )
    X, Xn, _ = _as_target_block(problem, psi)
    values, A, W, history, ok = _run_newton(problem, X, Xn, tol, max_iter, method)
    return _finish(problem, X, values, A, W, history, ok, max_iter)


def overlap_alpha(spec, B, u1, N, T=None):
    """Phase-normalized overlap block ``alpha(u1)`` (projection layout)."""
    from .propagator import overlap_matrix, propagator_matrix

    T = u1.total_time if T is None else T
    G = propagator_matrix(B, u1.with_offset(spec.u0))
    return phase_normalize(overlap_matrix(G, spec, N, T), N)[0]
