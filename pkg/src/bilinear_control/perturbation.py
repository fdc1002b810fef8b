"""Spectrum of ``A + u0 B`` at finite truncation and its certificates.

A constant offset ``u0`` in the control shifts the Hamiltonian to
``A + u0 B``.  Its eigenpairs ``(lambda_j^u0, phi_j^u0)`` are the working
frame of the local construction: for generic ``u0`` they remove the exact
resonances of the Laplacian spectrum (e.g. ``lambda_7 - lambda_1 = lambda_8 -
lambda_4``) while keeping the couplings ``<phi_k^u0, B phi_j^u0>`` away from
zero.  Every routine here works at a fixed truncation ``M`` and says so in
its output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .certificates import Certificate
from .errors import BranchTrackingError, GapCollapseError, ValidationError
from .operators import ControlOperator, index_pairs
from .spectral_core import eigenvalue, sobolev_norm

__all__ = [
    "PerturbedSpectrum",
    "perturbed_spectrum",
    "decomposition_residual",
    "eta_decay_fit",
    "resolvent_margin",
    "gap_certificate",
    "transition_frequencies",
    "norm_equivalence",
    "coupling_persistence",
    "find_coupling_zero",
    "admissible_u0",
    "eigenbranch_sweep",
    "DEFAULT_U_MAX",
]

#: upper end of the admissible-offset grid scan (no value is given by the theory)
DEFAULT_U_MAX = 0.2


@dataclass(frozen=True, eq=False)
class PerturbedSpectrum:
    """Eigen-decomposition of ``diag(lambda) + u0 B`` labelled by unperturbed modes.

    Attributes
    ----------
    u0 : float
    eigenvalues : ndarray, shape (M,)
        ``eigenvalues[j-1]`` is the branch emanating from ``lambda_j``.
    eigenvectors : ndarray, shape (M, M)
        Column ``j-1`` is ``phi_j^u0`` in the sine basis.
    a : ndarray, shape (M,)
        ``a_j = <phi_j, phi_j^u0> > 0``.
    eta_norms : ndarray, shape (M,)
        Norms of ``eta_j = phi_j^u0 - a_j phi_j``.
    operator : ControlOperator
    """

    u0: float
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    a: np.ndarray
    eta_norms: np.ndarray
    operator: ControlOperator = field(repr=False)

    @property
    def M(self):
        return self.eigenvalues.size

    @property
    def base_eigenvalues(self):
        return eigenvalue(np.arange(1, self.M + 1))

    @property
    def eta(self):
        """Matrix whose column ``j-1`` is ``eta_j``."""
        return self.eigenvectors - np.diag(self.a)

    def coupling(self, B=None):
        """``B^u0 = V* B V``, entries ``<phi_k^u0, B phi_j^u0>``."""
        Bm = (B or self.operator).matrix
        V = self.eigenvectors
        return V.conj().T @ Bm @ V

    def frame_phases(self, T):
        """Diagonal of ``exp(-i diag(lambda^u0) T)``."""
        return np.exp(-1j * self.eigenvalues * T)

    def free_evolution(self, T):
        """Free propagator ``exp(-i (A + u0 B) T)`` in the sine basis."""
        V = self.eigenvectors
        return (V * self.frame_phases(T)) @ V.conj().T

    def state(self, j):
        """``phi_j^u0`` as a coefficient vector."""
        return self.eigenvectors[:, j - 1].copy()


def perturbed_spectrum(B, u0):
    """Diagonalize ``diag(lambda) + u0 B`` and label branches by overlap.

    Each eigenvector is assigned to the unperturbed mode it overlaps most;
    the assignment must be a permutation.  Columns are rephased so that
    ``a_j`` is real positive (for real ``B`` the eigenvectors stay real).

    Parameters
    ----------
    B : ControlOperator
    u0 : float
        Offset; should satisfy ``|u0| ||B|| < (lambda_2 - lambda_1)/2``.

    Raises
    ------
    BranchTrackingError
        If two eigenvectors claim the same unperturbed mode.
    """
    u0 = float(u0)
    M = B.M
    lam = eigenvalue(np.arange(1, M + 1))
    if u0 == 0.0:
        V = np.eye(M, dtype=B.matrix.dtype)
        return PerturbedSpectrum(0.0, lam.copy(), V, np.ones(M), np.zeros(M), B)
    w, V = np.linalg.eigh(np.diag(lam) + u0 * B.matrix)
    overlap = np.abs(V) ** 2
    label = np.argmax(overlap, axis=0)
    if len(np.unique(label)) != M:
        counts = np.bincount(label, minlength=M)
        mode = int(np.argmax(counts))
        raise BranchTrackingError(
            f"two perturbed eigenvectors are dominated by mode {mode + 1}; try a smaller |u0|",
            u0=u0,
            mode=mode + 1,
        )
    order = np.argsort(label)
    w, V = w[order], V[:, order]
    diag = np.diag(V)
    V = V * (np.conj(diag) / np.abs(diag))[None, :]
    if np.isrealobj(B.matrix):
        V = V.real
    a = np.abs(np.diag(V))
    eta = V - np.diag(np.diag(V))
    return PerturbedSpectrum(u0, w, V, a, np.linalg.norm(eta, axis=0), B)


def decomposition_residual(spec, B=None):
    """Residuals of the two exact identities satisfied by ``a_j`` and ``eta_j``.

    * scalar: ``lambda_j^u0 = a_j^2 lambda_j + u0 a_j^2 B_jj + lambda_j^u0
      ||eta_j||^2 + u0 a_j <P B phi_j, eta_j>``;
    * vector: ``eta_j = -a_j u0 (A + u0 P B - lambda_j^u0)^{-1} P B phi_j``
      with the inverse taken on the orthogonal complement of ``phi_j``
      (``P`` is the projector onto that complement).

    Returns
    -------
    dict with per-mode arrays ``scalar`` and ``vector`` and their maxima.
    """
    B = B or spec.operator
    M = spec.M
    lam = spec.base_eigenvalues
    Bm = B.matrix
    u0 = spec.u0
    eta = spec.eta
    a = spec.a
    lu = spec.eigenvalues
    scalar = np.empty(M)
    vector = np.empty(M)
    idx = np.arange(M)
    for j in range(M):
        pb = Bm[:, j].astype(complex).copy()
        pb[j] = 0.0
        rhs = a[j] ** 2 * lam[j] + u0 * a[j] ** 2 * Bm[j, j].real
        rhs += lu[j] * spec.eta_norms[j] ** 2 + u0 * a[j] * np.vdot(pb, eta[:, j])
        scalar[j] = abs(lu[j] - rhs)
        if u0 == 0.0:
            vector[j] = np.linalg.norm(eta[:, j])
            continue
        keep = idx != j
        Hperp = np.diag(lam[keep]) + u0 * Bm[np.ix_(keep, keep)] - lu[j] * np.eye(M - 1)
        eta_pred = -a[j] * u0 * np.linalg.solve(Hperp, pb[keep])
        vector[j] = np.linalg.norm(eta[keep, j] - eta_pred)
    return {
        "u0": u0,
        "M": M,
        "scalar": scalar,
        "vector": vector,
        "max_scalar": float(scalar.max()),
        "max_vector": float(vector.max()),
    }


def _interior_window(M):
    lo = max(2, M // 4)
    hi = min(3 * M // 4, M - M // 8)
    return np.arange(lo, hi + 1)


def eta_decay_fit(spec, window=None):
    """Fit the decay of ``||eta_j||`` over an interior window of modes.

    The default window is ``[M/4, 3M/4]``, which also keeps clear of the
    last ``M/8`` modes where the truncated rows of ``B`` are incomplete.

    Returns
    -------
    dict
        ``slope`` of ``log ||eta_j||`` versus ``log j``, ``constant`` =
        ``max j ||eta_j||`` on the window, ``spread`` = max/min ratio of
        ``j ||eta_j||`` and the window itself.
    """
    j = _interior_window(spec.M) if window is None else np.asarray(window)
    e = spec.eta_norms[j - 1]
    prod = j * e
    if np.any(e <= 0):
        return {"slope": float("nan"), "constant": float(prod.max()), "spread": float("nan"), "window": j.tolist()}
    slope = float(np.polyfit(np.log(j), np.log(e), 1)[0])
    return {
        "slope": slope,
        "constant": float(prod.max()),
        "spread": float(prod.max() / prod.min()),
        "window": [int(j[0]), int(j[-1])],
    }


def resolvent_margin(B, u0):
    """Inverse norms of ``A + u0 B - mu_j`` at the gap midpoints.

    ``mu_j = (lambda_j + lambda_{j+1})/2`` for ``j < M``.  For Hermitian
    matrices the inverse norm is ``1/min_i |lambda_i^u0 - mu_j|``.  The gap is
    considered collapsed when the number of perturbed eigenvalues below
    ``mu_j`` differs from ``j``, i.e. a branch has crossed the midpoint, or
    when the matrix is numerically singular there.

    Returns
    -------
    dict with ``mu``, ``inverse_norms`` and their maximum ``r``.

    Raises
    ------
    GapCollapseError
    """
    M = B.M
    lam = eigenvalue(np.arange(1, M + 1))
    w = np.linalg.eigvalsh(np.diag(lam) + u0 * B.matrix)
    mu = 0.5 * (lam[:-1] + lam[1:])
    dist = np.min(np.abs(w[:, None] - mu[None, :]), axis=0)
    below = np.searchsorted(w, mu)
    bad = np.flatnonzero((below != np.arange(1, M)) | (dist <= 1e-12 * np.abs(mu)))
    if len(bad):
        j = int(bad[0]) + 1
        raise GapCollapseError(
            f"spectral gap {j} collapsed at u0={u0:g}: {int(below[j - 1])} eigenvalues below mu_{j}",
            u0=float(u0),
            j=j,
            mu=float(mu[j - 1]),
            count_below=int(below[j - 1]),
        )
    inv = 1.0 / dist
    return {"u0": float(u0), "M": M, "mu": mu, "inverse_norms": inv, "r": float(inv.max())}


def transition_frequencies(spec, N, jmax=None):
    """Frequencies ``lambda_j^u0 - lambda_k^u0`` over pairs ``(j, k)``, ``k <= N``.

    Returns
    -------
    pairs : list of (j, k)
    omega : ndarray
    """
    jmax = spec.M if jmax is None else jmax
    pairs = list(index_pairs(N, jmax))
    lu = spec.eigenvalues
    omega = np.array([lu[j - 1] - lu[k - 1] for j, k in pairs])
    return pairs, omega


def gap_certificate(spec, N, epsilon=None, B=None):
    """Minimal gap combination ``|lambda_j - lambda_k - lambda_n + lambda_m|``.

    Scans all couples of distinct pairs ``(j, k) != (n, m)`` in ``I^N`` with
    rows up to ``M``.  The minimum over couples is the smallest separation of
    the sorted transition frequencies, so the scan is exact and ``O(n log n)``.

    Parameters
    ----------
    spec : PerturbedSpectrum
    N : int
    epsilon : float, optional
        Margin; defaults to the collision tolerance ``1e-9 max|omega|``.
    B : ControlOperator, optional
        If given, the first-order prediction ``u0 (a_j^2 B_jj - a_k^2 B_kk -
        a_n^2 B_nn + a_m^2 B_mm)`` of the minimizing combination is reported.
    """
    if not 1 <= N <= spec.M:
        raise ValidationError("need 1 <= N <= M", module="perturbation", N=N, M=spec.M)
    pairs, omega = transition_frequencies(spec, N)
    if epsilon is None:
        epsilon = 1e-9 * float(np.max(np.abs(omega)))
    order = np.argsort(omega, kind="stable")
    diffs = np.diff(omega[order])
    i = int(np.argmin(diffs))
    p, q = pairs[order[i]], pairs[order[i + 1]]
    quad = tuple(sorted([p, q]))
    min_gap = float(diffs[i])
    data = {
        "min_gap_combination": min_gap,
        "argmin": (quad[0][0], quad[0][1], quad[1][0], quad[1][1]),
        "epsilon": float(epsilon),
        "u0": spec.u0,
        "frequencies_distinct": bool(min_gap > epsilon),
    }
    if B is not None:
        (j, k), (n, m) = quad
        a2 = spec.a**2
        d = B.diagonal
        pred = spec.u0 * (a2[j - 1] * d[j - 1] - a2[k - 1] * d[k - 1] - a2[n - 1] * d[n - 1] + a2[m - 1] * d[m - 1])
        lu = spec.eigenvalues
        actual = lu[j - 1] - lu[k - 1] - lu[n - 1] + lu[m - 1]
        data["first_order"] = {"predicted": float(pred), "actual": float(actual)}
    return Certificate("gap", N, spec.M, min_gap > epsilon, [min_gap], data)


def norm_equivalence(spec, trials=100, rng=None, decay=5.0):
    """Empirical constants between the perturbed and plain ``H^3`` norms.

    For random states with coefficients ``~ g_k / k^decay`` (``g_k``
    complex Gaussian) the ratio ``(sum_j |lambda_j^u0|^{3/2} |<phi_j^u0,
    psi>|^2)^{1/2} / ||psi||_(3)`` is sampled.  At ``u0 = 0`` the ratio is
    exactly ``pi^3``.

    Returns
    -------
    dict with ``c_low``, ``c_high`` and the ``ratios``.
    """
    if trials < 1:
        raise ValidationError("trials must be >= 1", module="perturbation", trials=trials)
    rng = np.random.default_rng(rng)
    M = spec.M
    k = np.arange(1, M + 1)
    G = (rng.standard_normal((M, trials)) + 1j * rng.standard_normal((M, trials))) / k[:, None] ** decay
    G /= np.linalg.norm(G, axis=0)
    proj = spec.eigenvectors.conj().T @ G
    num = np.linalg.norm(np.abs(spec.eigenvalues)[:, None] ** 1.5 * proj, axis=0)
    ratios = num / sobolev_norm(G, 3)
    return {"c_low": float(ratios.min()), "c_high": float(ratios.max()), "ratios": ratios}


def coupling_persistence(spec, B=None, N=1, threshold=1e-12):
    """Lower bound ``min_{j<=N, k<=M} k^3 |<phi_k^u0, B phi_j^u0>|``."""
    B = B or spec.operator
    M = spec.M
    if not 1 <= N <= M:
        raise ValidationError("need 1 <= N <= M", module="perturbation", N=N, M=M)
    Bu = spec.coupling(B)
    prod = np.arange(1, M + 1, dtype=float)[:, None] ** 3 * np.abs(Bu[:, :N])
    C = float(prod.min())
    kk, jj = np.unravel_index(int(np.argmin(prod)), prod.shape)
    return Certificate(
        "coupling_persistence",
        N,
        M,
        C > threshold,
        [C],
        {"C_tilde_N": C, "argmin": (int(kk) + 1, int(jj) + 1), "u0": spec.u0, "threshold": threshold},
    )


def find_coupling_zero(B, N, u_grid, xtol=1e-13):
    """Locate an offset where some perturbed coupling ``B^u_kj`` (``j <= N``) vanishes.

    Sign changes of the (real) couplings along ``u_grid`` are refined by
    bisection.  Returns ``(u, (k, j))`` for the zero closest to the start of
    the grid, or ``None`` when no sign change occurs.  Requires real ``B``.
    """
    if not B.is_real:
        raise ValidationError("coupling zero search needs a real operator", module="perturbation")
    grid = np.asarray(u_grid, dtype=float)

    def couplings(u):
        return perturbed_spectrum(B, u).coupling(B)[:, :N].real

    prev = couplings(grid[0])
    for u_lo, u_hi in zip(grid[:-1], grid[1:]):
        cur = couplings(u_hi)
        flips = np.argwhere(np.sign(prev) * np.sign(cur) < 0)
        if len(flips):
            k, j = (int(x) for x in flips[0])
            lo, hi = u_lo, u_hi
            f_lo = prev[k, j]
            while hi - lo > xtol:
                mid = 0.5 * (lo + hi)
                f_mid = couplings(mid)[k, j]
                if np.sign(f_mid) == np.sign(f_lo):
                    lo, f_lo = mid, f_mid
                else:
                    hi = mid
            return 0.5 * (lo + hi), (k + 1, j + 1)
        prev = cur
    return None


def admissible_u0(B, N, u_max=DEFAULT_U_MAX, n_grid=20, epsilon=None):
    """Largest grid offset in ``(0, u_max]`` that passes every certificate.

    The grid is ``u_max * i / n_grid`` for ``i = n_grid, ..., 1``.  A value is
    accepted when branch tracking succeeds, no gap collapses, the gap
    certificate for ``N`` passes and the perturbed couplings of the first
    ``N`` columns stay bounded away from zero.

    Returns
    -------
    u0 : float
    certificates : dict of Certificate
    """
    last = None
    for i in range(n_grid, 0, -1):
        u = u_max * i / n_grid
        try:
            spec = perturbed_spectrum(B, u)
            resolvent_margin(B, u)
        except (BranchTrackingError, GapCollapseError) as exc:
            last = exc
            continue
        gap = gap_certificate(spec, N, epsilon)
        coup = coupling_persistence(spec, B, N)
        if gap.ok and coup.ok:
            return u, {"gap": gap, "coupling": coup}
        last = (gap, coup)
    raise ValidationError(
        "no admissible offset on the scan grid", module="perturbation", u_max=u_max, last=str(last)
    )


def eigenbranch_sweep(B, u_grid):
    """Rows ``(u0, j, lambda_j^u0, a_j, ||eta_j||)`` over a grid of offsets."""
    rows = []
    for u in np.asarray(u_grid, dtype=float):
        s = perturbed_spectrum(B, u)
        for j in range(s.M):
            rows.append((float(u), j + 1, float(s.eigenvalues[j]), float(s.a[j]), float(s.eta_norms[j])))
    return rows
