"""The truncated Hilbert space of the Dirichlet Laplacian on (0, 1).

States are represented by their coefficients ``c_k = <phi_k, psi>`` in the
sine eigenbasis ``phi_k(x) = sqrt(2) sin(k pi x)``, ``k = 1..M``, whose
eigenvalues are ``lambda_k = k^2 pi^2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateFamilyError, DomainError, InvalidIndexError, ValidationError

__all__ = [
    "BasisTruncation",
    "WaveFunction",
    "eigenvalue",
    "basis_sample",
    "sobolev_norm",
    "sobolev_weights",
    "gram_schmidt",
    "as_coefficient_matrix",
]


def eigenvalue(k):
    """Return the Dirichlet eigenvalue ``k^2 pi^2``.

    Parameters
    ----------
    k : int or array_like of int
        Mode index (or indices), starting at 1.

    Returns
    -------
    float or ndarray
    """
    k_arr = np.asarray(k)
    if not np.issubdtype(k_arr.dtype, np.integer):
        if not np.all(np.equal(np.mod(k_arr, 1), 0)):
            raise InvalidIndexError("mode index must be an integer", k=np.asarray(k).tolist())
        k_arr = k_arr.astype(np.int64)
    if np.any(k_arr < 1):
        raise InvalidIndexError("mode index must be >= 1", k=k_arr.tolist())
    out = k_arr.astype(float) ** 2 * np.pi**2
    return float(out) if out.ndim == 0 else out


def basis_sample(k, x):
    """Evaluate the eigenfunction ``sqrt(2) sin(k pi x)``.

    Parameters
    ----------
    k : int
        Mode index, ``k >= 1``.
    x : float or array_like
        Points in the closed interval [0, 1].
    """
    if int(k) != k or k < 1:
        raise InvalidIndexError("mode index must be a positive integer", k=k)
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr < 0.0) or np.any(x_arr > 1.0) or not np.all(np.isfinite(x_arr)):
        raise DomainError("sample point outside [0, 1]", x=x_arr.tolist())
    out = np.sqrt(2.0) * np.sin(k * np.pi * x_arr)
    # sin(k pi) is only ~1e-16 in floating point; the boundary values are exact zeros
    out = np.where((x_arr == 0.0) | (x_arr == 1.0), 0.0, out)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class BasisTruncation:
    """First ``M`` eigenmodes of the Dirichlet Laplacian on (0, 1)."""

    M: int = 64

    def __post_init__(self):
        if int(self.M) != self.M or self.M < 2:
            raise ValidationError("truncation needs M >= 2", module="spectral_core", M=self.M)
        object.__setattr__(self, "M", int(self.M))

    @property
    def modes(self):
        return np.arange(1, self.M + 1)

    @property
    def eigenvalues(self):
        return eigenvalue(self.modes)

    def mode(self, k):
        """The basis vector ``phi_k`` as a :class:`WaveFunction`."""
        if not 1 <= k <= self.M:
            raise InvalidIndexError(f"mode {k} outside 1..{self.M}", k=k, M=self.M)
        c = np.zeros(self.M, dtype=complex)
        c[k - 1] = 1.0
        return WaveFunction(c, self)


@dataclass(frozen=True, eq=False)
class WaveFunction:
    """A state given by its coefficients in the sine basis.

    Parameters
    ----------
    coeffs : array_like of complex, shape (M,)
        ``coeffs[k-1] = <phi_k, psi>``.
    truncation : BasisTruncation, optional
        Defaults to ``BasisTruncation(len(coeffs))``.
    """

    coeffs: np.ndarray
    truncation: BasisTruncation = field(default=None)

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex).reshape(-1)
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        if self.truncation is None:
            object.__setattr__(self, "truncation", BasisTruncation(c.size))
        elif self.truncation.M != c.size:
            raise ValidationError(
                "coefficient length does not match truncation",
                module="spectral_core",
                length=c.size,
                M=self.truncation.M,
            )

    @property
    def M(self):
        return self.truncation.M

    def norm(self, s=0.0):
        return sobolev_norm(self, s)

    def inner(self, other):
        """``<self, other>``, conjugate-linear in ``self``."""
        return complex(np.vdot(self.coeffs, _coeffs(other)))

    def evaluate(self, x):
        """Evaluate ``psi(x)`` on points of [0, 1]."""
        x_arr = np.asarray(x, dtype=float)
        if np.any(x_arr < 0.0) or np.any(x_arr > 1.0):
            raise DomainError("sample point outside [0, 1]", x=x_arr.tolist())
        k = self.truncation.modes
        return np.sqrt(2.0) * np.sin(np.pi * np.multiply.outer(x_arr, k)) @ self.coeffs

    def __eq__(self, other):
        if not isinstance(other, WaveFunction):
            return NotImplemented
        return self.truncation == other.truncation and np.array_equal(self.coeffs, other.coeffs)

    __hash__ = None


def _coeffs(psi):
    if isinstance(psi, WaveFunction):
        return psi.coeffs
    return np.asarray(psi, dtype=complex)


def as_coefficient_matrix(states, M=None):
    """Stack states into an ``(M, n)`` complex matrix (one column per state).

    Accepts a list of :class:`WaveFunction`, a list of coefficient vectors or a
    2-D array that is already column-stacked.
    """
    if isinstance(states, np.ndarray) and states.ndim == 2:
        out = np.asarray(states, dtype=complex)
    elif isinstance(states, WaveFunction):
        out = states.coeffs[:, None].astype(complex)
    else:
        cols = [_coeffs(s) for s in states]
        if not cols:
            return np.zeros((M or 0, 0), dtype=complex)
        out = np.column_stack(cols).astype(complex)
    if M is not None and out.shape[0] != M:
        raise ValidationError(
            "states do not share the truncation", module="spectral_core", length=out.shape[0], M=M
        )
    return out


def sobolev_weights(M, s):
    """Weights ``k^s`` for ``k = 1..M``."""
    if not np.isfinite(s) or s < 0:
        raise ValidationError("Sobolev exponent must be >= 0", module="spectral_core", s=s)
    return np.arange(1, M + 1, dtype=float) ** s


def sobolev_norm(psi, s=3.0):
    """Weighted norm ``(sum_k |k^s c_k|^2)^(1/2)``.

    Parameters
    ----------
    psi : WaveFunction or array_like
        A state, or an ``(M, n)`` array of column states (in which case the
        norm of every column is returned).
    s : float
        Nonnegative exponent; ``s = 0`` is the plain Euclidean norm.
    """
    c = _coeffs(psi)
    w = sobolev_weights(c.shape[0], s)
    if c.ndim == 1:
        return float(np.linalg.norm(w * c))
    return np.linalg.norm(w[:, None] * c, axis=0)


def gram_schmidt(family, tol=1e-10):
    """Orthonormalize a family of states.

    The ``j``-th output lies in the span of the first ``j`` inputs, and its
    first non-negligible coefficient is real positive.  Orthogonalization is
    done twice (classical Gram-Schmidt with re-orthogonalization), which keeps
    the output Gram matrix at the identity to ~1e-15 for well-conditioned
    input.

    Parameters
    ----------
    family : sequence of WaveFunction or ndarray of shape (M, n)
    tol : float
        Linear-independence tolerance relative to the largest singular value.

    Returns
    -------
    list of WaveFunction (or ndarray if an array was passed)

    Raises
    ------
    DegenerateFamilyError
        If member ``index`` (0-based) is dependent on the previous ones.
    """
    as_array = isinstance(family, np.ndarray)
    truncation = None
    if not as_array and len(family) and isinstance(family[0], WaveFunction):
        truncation = family[0].truncation
    X = as_coefficient_matrix(family)
    M, n = X.shape
    if n == 0:
        return X.copy() if as_array else []
    smax = np.linalg.norm(X, 2)
    if smax == 0.0:
        raise DegenerateFamilyError("family is identically zero", index=0)
    Q = np.zeros_like(X)
    for j in range(n):
        v = X[:, j].copy()
        for _ in range(2):
            v -= Q[:, :j] @ (Q[:, :j].conj().T @ v)
        r = np.linalg.norm(v)
        if r <= tol * smax:
            raise DegenerateFamilyError(
                f"member {j} is linearly dependent on the previous ones",
                index=j,
                residual=float(r),
                scale=float(smax),
            )
        v /= r
        Q[:, j] = v * _leading_phase(v)
    if as_array:
        return Q
    return [WaveFunction(Q[:, j], truncation) for j in range(n)]


def _leading_phase(v, rel=1e-12):
    """Unit factor making the first non-negligible entry of ``v`` real positive."""
    mags = np.abs(v)
    idx = np.flatnonzero(mags > rel * mags.max())[0]
    return np.conj(v[idx]) / mags[idx]
