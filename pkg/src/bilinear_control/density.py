"""Density matrices: ensembles, unitary evolution and projected equality.

A mixed state is ``rho = sum_j l_j |psi_j><psi_j|`` with ``l_j >= 0`` summing
to one.  Under the closed dynamics it evolves as ``U rho U^*``, so steering
each eigenvector ``psi_j`` of ``rho`` onto an eigenvector of a unitarily
equivalent ``rho2`` (phases are irrelevant for rank-one projectors) steers
``rho`` onto ``rho2``.
"""

from __future__ import annotations

import csv
import json

import numpy as np

from .errors import ValidationError
from .spectral_core import as_coefficient_matrix, gram_schmidt

__all__ = [
    "DensityState",
    "Projector",
    "from_ensemble",
    "evolve",
    "projected_equality",
    "von_neumann_rhs",
    "eigen_clusters",
    "steer_density",
    "DensitySteeringResult",
]

TRACE_TOL = 1e-12
PSD_TOL = 1e-12
CLUSTER_TOL = 1e-9


def _check_orthonormal(X, what):
    n = X.shape[1]
    d = float(np.max(np.abs(X.conj().T @ X - np.eye(n)))) if n else 0.0
    if d > 1e-10:
        raise ValidationError(f"{what} are not orthonormal", module="density", defect=d)


class DensityState:
    """Hermitian, positive semidefinite, trace-one ``M x M`` matrix.

    Eigenvalues in ``[-1e-12, 0)`` are treated as round-off: they are
    clamped to zero and the matrix is renormalized.  Larger negativity, a
    trace away from one or a non-Hermitian matrix are errors.
    """

    def __init__(self, matrix):
        R = np.array(matrix, dtype=complex)
        if R.ndim != 2 or R.shape[0] != R.shape[1]:
            raise ValidationError("density matrix must be square", module="density", shape=R.shape)
        herm = float(np.max(np.abs(R - R.conj().T)))
        if herm > 1e-10:
            raise ValidationError("density matrix is not Hermitian", module="density", defect=herm)
        R = 0.5 * (R + R.conj().T)
        tr = float(np.trace(R).real)
        if abs(tr - 1.0) > TRACE_TOL * max(1, R.shape[0]):
            raise ValidationError("density matrix trace is not 1", module="density", trace=tr)
        w, V = np.linalg.eigh(R)
        if w.min() < -PSD_TOL:
            raise ValidationError("density matrix is not positive semidefinite", module="density",
                                  min_eigenvalue=float(w.min()))
        if w.min() < 0:
            w = np.clip(w, 0.0, None)
            w = w / w.sum()
            R = (V * w) @ V.conj().T
        self._matrix = R
        self._matrix.setflags(write=False)
        self._eig = None

    @property
    def matrix(self):
        return self._matrix

    @property
    def M(self):
        return self._matrix.shape[0]

    @property
    def trace(self):
        return float(np.trace(self._matrix).real)

    def eigen(self):
        """Weights ``l_j`` (descending) and eigenvectors as columns.

        Eigenvectors of a degenerate cluster are re-orthonormalized with the
        ``gram_schmidt`` phase convention so the decomposition is
        reproducible.
        """
        if self._eig is None:
            w, V = np.linalg.eigh(self._matrix)
            order = np.argsort(-w, kind="stable")
            w, V = np.clip(w[order], 0.0, None), V[:, order]
            for idx in eigen_clusters(w):
                V[:, idx] = gram_schmidt(V[:, idx])
            self._eig = (w, V)
        return self._eig

    @property
    def weights(self):
        return self.eigen()[0]

    @property
    def rank(self):
        return int(np.sum(self.weights > PSD_TOL))

    @property
    def is_pure(self):
        return bool(abs(self.weights[0] - 1.0) < 1e-12)

    def purity(self):
        return float(np.real(np.trace(self._matrix @ self._matrix)))

    # -- serialization ----------------------------------------------------
    def to_dict(self):
        """``{weights, state_coefficients}`` of the nonzero part; complex as ``[re, im]``."""
        w, V = self.eigen()
        r = self.rank
        return {
            "M": self.M,
            "weights": [float(x) for x in w[:r]],
            "state_coefficients": [[[float(z.real), float(z.imag)] for z in V[:, j]] for j in range(r)],
        }

    @classmethod
    def from_dict(cls, d):
        states = np.array([[complex(a, b) for a, b in col] for col in d["state_coefficients"]]).T
        return from_ensemble(d["weights"], states)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    def to_csv(self, path):
        """Raw matrix, one row per line: ``re_1,im_1,...,re_M,im_M``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"{p}_{k}" for k in range(1, self.M + 1) for p in ("re", "im")])
            for row in self._matrix:
                w.writerow([f"{x:.17g}" for z in row for x in (z.real, z.imag)])

    @classmethod
    def from_csv(cls, path):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0::2] + 1j * data[:, 1::2])

    def __repr__(self):
        return f"DensityState(M={self.M}, rank={self.rank})"


def eigen_clusters(weights, tol=CLUSTER_TOL):
    """Index groups of (numerically) equal, descending weights."""
    groups, start = [], 0
    for i in range(1, len(weights) + 1):
        if i == len(weights) or abs(weights[i] - weights[start]) > tol:
            groups.append(np.arange(start, i))
            start = i
    return groups


class Projector:
    """Orthogonal projector onto the span of an orthonormal family."""

    def __init__(self, frame):
        F = np.array(as_coefficient_matrix(frame), dtype=complex)
        _check_orthonormal(F, "projector frame")
        self.frame = F
        self.frame.setflags(write=False)

    @classmethod
    def modes(cls, N, M):
        """Projector onto the first ``N`` basis modes."""
        return cls(np.eye(M, N, dtype=complex))

    @property
    def N(self):
        return self.frame.shape[1]

    @property
    def matrix(self):
        return self.frame @ self.frame.conj().T

    def apply(self, X):
        P = self.matrix
        return P @ X @ P


def from_ensemble(weights, states):
    """``rho = sum_j l_j |psi_j><psi_j|``.

    Parameters
    ----------
    weights : sequence of float
        Nonnegative, summing to one within ``1e-12``.
    states : list of WaveFunction or ndarray (M, n)
        Orthonormal.
    """
    l = np.asarray(weights, dtype=float).ravel()
    X = as_coefficient_matrix(states)
    if X.shape[1] != l.size:
        raise ValidationError("one weight per state required", module="density", n_weights=l.size, n_states=X.shape[1])
    if np.any(l < 0) or abs(l.sum() - 1.0) > TRACE_TOL:
        raise ValidationError("weights must be nonnegative and sum to 1", module="density",
                              weights=l.tolist(), total=float(l.sum()))
    _check_orthonormal(X, "ensemble states")
    return DensityState((X * l) @ X.conj().T)


def evolve(rho, unitary):
    """``U rho U^*``."""
    U = np.asarray(unitary, dtype=complex)
    if U.shape != (rho.M, rho.M):
        raise ValidationError("unitary does not match the truncation", module="density",
                              shape=U.shape, M=rho.M)
    R = U @ rho.matrix @ U.conj().T
    return DensityState(0.5 * (R + R.conj().T) / np.trace(R).real)


def projected_equality(rho1_evolved, rho2, projector):
    """Operator-norm defect ``||P rho1 P - P rho2 P||``."""
    D = projector.apply(rho1_evolved.matrix - rho2.matrix)
    return float(np.linalg.norm(D, 2))


def von_neumann_rhs(B, u, rho):
    """``-i [A + u B, rho]`` for a constant control value ``u``."""
    R = rho.matrix if isinstance(rho, DensityState) else np.asarray(rho)
    H = B.hamiltonian(u)
    return -1j * (H @ R - R @ H)


class DensitySteeringResult:
    """Control steering ``rho1`` onto ``rho2`` with its verification."""

    def __init__(self, control, defect, full_defect, steering, projector):
        self.control = control
        self.defect = defect
        self.full_defect = full_defect
        self.steering = steering
        self.projector = projector

    def to_dict(self):
        return {
            "control": self.control.to_dict(),
            "projected_defect": self.defect,
            "full_defect": self.full_defect,
            "state_steering": self.steering.to_dict(),
        }


def steer_density(spec, B, rho1, rho2, projector=None, **kwargs):
    """Steer ``rho1`` onto a unitarily equivalent ``rho2``.

    The eigenvectors of ``rho1`` with nonzero weight are steered onto those
    of ``rho2``, cluster by cluster, with ``steer_exact``; any orthonormal
    basis of a degenerate cluster is a valid target, the ``gram_schmidt``
    convention fixes one.  ``kwargs`` are passed to ``steer_exact``.

    Returns
    -------
    DensitySteeringResult
        ``defect`` is ``projected_equality`` for ``projector`` (default: the
        range of ``rho2``).
    """
    from .global_control import steer_exact
    from .propagator import propagator_matrix

    w1, V1 = rho1.eigen()
    w2, V2 = rho2.eigen()
    r = rho1.rank
    if r != rho2.rank or np.max(np.abs(w1 - w2)) > 1e-10:
        raise ValidationError("density states are not unitarily equivalent", module="density",
                              weights1=w1[:r].tolist(), weights2=w2[: rho2.rank].tolist())
    res = steer_exact(spec, B, V1[:, :r], V2[:, :r], **kwargs)
    projector = Projector(V2[:, :r]) if projector is None else projector
    out = evolve(rho1, propagator_matrix(B, res.control))
    defect = projected_equality(out, rho2, projector)
    full = float(np.linalg.norm(out.matrix - rho2.matrix, 2))
    return DensitySteeringResult(res.control, defect, full, res, projector)
