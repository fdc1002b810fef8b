"""Control operators in the sine eigenbasis and checks of their structure.

The matrix of ``B`` has entries ``B[k-1, j-1] = <phi_k, B phi_j>``.  Besides
the closed form for multiplication by ``x^2`` and a quadrature builder for
general multiplication operators, the module certifies (at finite truncation)
the coupling-decay, non-resonance and rational-relation conditions under which
the control constructions of the package apply.
"""

from __future__ import annotations

import itertools
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .certificates import Certificate
from .errors import EvaluationError, ValidationError
from .spectral_core import BasisTruncation, eigenvalue

__all__ = [
    "ControlOperator",
    "IndexPairSet",
    "ResonanceQuadruple",
    "build_x_squared",
    "build_multiplication",
    "index_pairs",
    "resonance_quadruples",
    "check_coupling_decay",
    "check_resonance_condition",
    "check_assumption_A",
    "integer_relations",
    "range_regularity_diagnostic",
]

HERMITIAN_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class ControlOperator:
    """Hermitian matrix of the control operator in the sine basis."""

    matrix: np.ndarray
    label: str = "B"

    def __post_init__(self):
        B = np.array(self.matrix, dtype=complex)
        if B.ndim != 2 or B.shape[0] != B.shape[1]:
            raise ValidationError("operator matrix must be square", module="operators", shape=B.shape)
        if not np.all(np.isfinite(B)):
            raise EvaluationError("operator matrix has non-finite entries")
        herm = float(np.max(np.abs(B - B.conj().T), initial=0.0))
        if herm > HERMITIAN_TOL * max(1.0, float(np.max(np.abs(B), initial=0.0))):
            raise ValidationError("operator matrix is not Hermitian", module="operators", defect=herm)
        if np.all(B.imag == 0.0):
            B = B.real.copy()
        B.setflags(write=False)
        object.__setattr__(self, "matrix", B)

    @property
    def M(self):
        return self.matrix.shape[0]

    @property
    def truncation(self):
        return BasisTruncation(self.M)

    @property
    def is_real(self):
        return not np.iscomplexobj(self.matrix)

    @property
    def norm(self):
        """Spectral norm of the truncated matrix."""
        return float(np.linalg.norm(self.matrix, 2))

    @property
    def diagonal(self):
        return np.real(np.diag(self.matrix)).copy()

    def hamiltonian(self, u):
        """``diag(lambda) + u B`` for a constant control value ``u``."""
        return np.diag(eigenvalue(np.arange(1, self.M + 1))) + u * self.matrix

    def restricted(self, M):
        """The operator truncated to the first ``M`` modes."""
        return ControlOperator(self.matrix[:M, :M], self.label)

    @classmethod
    def identity(cls, M):
        return cls(np.eye(M), "identity")

    @classmethod
    def zero(cls, M):
        return cls(np.zeros((M, M)), "zero")


def _as_truncation(truncation):
    if isinstance(truncation, BasisTruncation):
        return truncation
    return BasisTruncation(int(truncation))


def build_x_squared(truncation=64):
    """Closed-form matrix of multiplication by ``x^2``.

    ``B_kk = 1/3 - 1/(2 k^2 pi^2)`` and, for ``j != k``,
    ``B_kj = (-1)^(j+k) 8 j k / (pi^2 (j^2 - k^2)^2)``.  The off-diagonal
    expression equals ``2 ((-1)^(j-k)/((j-k)^2 pi^2) - (-1)^(j+k)/((j+k)^2 pi^2))``
    and has been checked entrywise against adaptive quadrature.

    Parameters
    ----------
    truncation : BasisTruncation or int
    """
    M = _as_truncation(truncation).M
    k = np.arange(1, M + 1, dtype=float)
    K, J = np.meshgrid(k, k, indexing="ij")
    sign = np.where((K + J) % 2 == 0, 1.0, -1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        B = sign * 8.0 * K * J / (np.pi**2 * (J**2 - K**2) ** 2)
    B[np.diag_indices(M)] = 1.0 / 3.0 - 1.0 / (2.0 * k**2 * np.pi**2)
    return ControlOperator(B, "x^2")


def _gauss_panels(n_points, order=8):
    n_panels = max(1, -(-n_points // order))
    xg, wg = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0.0, 1.0, n_panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    x = (mid[:, None] + half[:, None] * xg[None, :]).ravel()
    w = (half[:, None] * wg[None, :]).ravel()
    return x, w


def build_multiplication(mu, truncation=64, quadrature_points=None, label=None):
    """Matrix of the multiplication operator ``psi -> mu(x) psi``.

    Entries ``int_0^1 mu(x) 2 sin(k pi x) sin(j pi x) dx`` are computed with
    composite 8-point Gauss-Legendre quadrature.

    Parameters
    ----------
    mu : callable
        Real function, vectorized over numpy arrays.
    truncation : BasisTruncation or int
    quadrature_points : int, optional
        Total number of nodes, at least ``4 M``.  Defaults to ``16 M``.
    label : str, optional
    """
    M = _as_truncation(truncation).M
    if quadrature_points is None:
        quadrature_points = 16 * M
    if quadrature_points < 4 * M:
        raise ValidationError(
            "need at least 4*M quadrature points", module="operators", points=quadrature_points, M=M
        )
    x, w = _gauss_panels(int(quadrature_points))
    vals = np.asarray(mu(x), dtype=float)
    if vals.shape == ():
        vals = np.full_like(x, float(vals))
    if not np.all(np.isfinite(vals)):
        bad = x[~np.isfinite(vals)]
        raise EvaluationError("mu is not finite on the quadrature grid", x=bad[:5].tolist())
    S = np.sqrt(2.0) * np.sin(np.pi * np.outer(np.arange(1, M + 1), x))
    B = (S * (w * vals)) @ S.T
    B = 0.5 * (B + B.T)
    return ControlOperator(B, label or getattr(mu, "__name__", "mu"))


# ---------------------------------------------------------------------------
# index sets


@dataclass(frozen=True)
class IndexPairSet:
    """Pairs ``(j, k)`` with ``k <= N`` and ``j != k`` (rows up to ``jmax``)."""

    N: int
    jmax: int
    pairs: tuple = field(default=())

    def __iter__(self):
        return iter(self.pairs)

    def __len__(self):
        return len(self.pairs)

    def __contains__(self, item):
        return tuple(item) in self.pairs


@dataclass(frozen=True, order=True)
class ResonanceQuadruple:
    """Two distinct pairs with equal integer frequency ``j^2 - k^2 = l^2 - m^2``."""

    j: int
    k: int
    l: int  # noqa: E741 - matches the usual naming of the quadruple
    m: int

    def __post_init__(self):
        if self.j**2 - self.k**2 - self.l**2 + self.m**2 != 0:
            raise ValidationError("not a resonance quadruple", module="operators", quadruple=self.astuple())

    def astuple(self):
        return (self.j, self.k, self.l, self.m)

    def combination(self, values):
        """``v_j - v_k - v_l + v_m`` for a 1-based sequence given as 0-based array."""
        v = np.asarray(values)
        return v[self.j - 1] - v[self.k - 1] - v[self.l - 1] + v[self.m - 1]


def index_pairs(N, jmax):
    """The set ``{(j, k): 1 <= j <= jmax, 1 <= k <= N, j != k}``."""
    pairs = tuple((j, k) for j in range(1, jmax + 1) for k in range(1, N + 1) if j != k)
    return IndexPairSet(N, jmax, pairs)


def resonance_quadruples(N, jmax):
    """All resonance quadruples between pairs of ``index_pairs(N, jmax)``.

    Each unordered couple of pairs is reported once, smaller pair first.
    """
    groups = defaultdict(list)
    for j, k in index_pairs(N, jmax):
        groups[j * j - k * k].append((j, k))
    quads = []
    for members in groups.values():
        for p, q in itertools.combinations(sorted(members), 2):
            quads.append(ResonanceQuadruple(p[0], p[1], q[0], q[1]))
    return sorted(quads)


# ---------------------------------------------------------------------------
# certificates


def check_coupling_decay(B, N, threshold=1e-12):
    """Lower bound ``C_N = min_{j<=N, k<=M} k^3 |B_kj|``.

    Returns a :class:`Certificate` with ``C_N``, the minimizing ``argmin``
    pair ``(k, j)`` and ``violations``, the pairs whose product is at or
    below ``threshold``.
    """
    M = B.M
    if not 1 <= N <= M:
        raise ValidationError("need 1 <= N <= M", module="operators", N=N, M=M)
    k3 = np.arange(1, M + 1, dtype=float) ** 3
    prod = k3[:, None] * np.abs(B.matrix[:, :N])
    C_N = float(prod.min())
    kk, jj = np.unravel_index(int(np.argmin(prod)), prod.shape)
    bad = np.argwhere(prod <= threshold)
    violations = [(int(k) + 1, int(j) + 1) for k, j in bad]
    return Certificate(
        "coupling_decay",
        N,
        M,
        C_N > threshold,
        [C_N],
        {"C_N": C_N, "argmin": (int(kk) + 1, int(jj) + 1), "violations": violations, "threshold": threshold},
    )


def check_resonance_condition(B, N, jmax=None, tol=1e-10):
    """Check ``B_jj - B_kk - B_ll + B_mm != 0`` on every resonance quadruple.

    Parameters
    ----------
    B : ControlOperator
    N : int
        Projection size (second index bound).
    jmax : int, optional
        Scan bound for the first indices, ``<= M``; defaults to ``M``.
    tol : float
        Quadruples with ``|D| <= tol`` are failures.
    """
    M = B.M
    jmax = M if jmax is None else jmax
    if jmax > M:
        raise ValidationError("jmax exceeds the truncation", module="operators", jmax=jmax, M=M)
    d = B.diagonal
    quads = resonance_quadruples(N, jmax)
    values = [float(q.combination(d)) for q in quads]
    failures = [q.astuple() for q, v in zip(quads, values) if abs(v) <= tol]
    return Certificate(
        "resonance_condition",
        N,
        M,
        not failures,
        values,
        {"quadruples": [q.astuple() for q in quads], "failures": failures, "jmax": jmax, "tol": tol},
    )


def _box(dim, height):
    if dim == 0:
        return np.zeros((1, 0), dtype=np.int64)
    axis = np.arange(-height, height + 1, dtype=np.int64)
    grids = np.meshgrid(*([axis] * dim), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def integer_relations(N, height):
    """Primitive integer vectors ``r`` with ``sum_j r_j j^2 = 0``.

    Entries are bounded by ``height`` in absolute value; each relation is
    listed once, normalized so its first nonzero entry is positive.  Uses a
    meet-in-the-middle join on the partial sums.
    """
    if N < 1 or height < 1:
        return np.zeros((0, max(N, 0)), dtype=np.int64)
    w = np.arange(1, N + 1, dtype=np.int64) ** 2
    h = N // 2
    left, right = _box(h, height), _box(N - h, height)
    sl, sr = left @ w[:h], right @ w[h:]
    order = np.argsort(sr, kind="stable")
    sr_sorted = sr[order]
    lo = np.searchsorted(sr_sorted, -sl, side="left")
    hi = np.searchsorted(sr_sorted, -sl, side="right")
    counts = hi - lo
    li = np.repeat(np.arange(len(sl)), counts)
    starts = np.repeat(lo, counts)
    offsets = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    ri = order[starts + offsets]
    R = np.concatenate([left[li], right[ri]], axis=1)
    nonzero = np.any(R != 0, axis=1)
    R = R[nonzero]
    if len(R) == 0:
        return R
    first = R[np.arange(len(R)), np.argmax(R != 0, axis=1)]
    R = R[first > 0]
    R = R[np.gcd.reduce(np.abs(R), axis=1) == 1]
    return R[np.lexsort(R.T[::-1])]


def series_coefficients(B, j, m_max):
    """``<phi_j, Btilde(m, j) phi_j>`` for ``m = 0..m_max``.

    ``Btilde(m, j) = B R (R P B)^m P B`` with ``P`` the projector off
    ``phi_j`` and ``R = diag(1/(lambda_j - lambda_k))`` on the complement.
    """
    M = B.M
    lam = eigenvalue(np.arange(1, M + 1))
    Bm = B.matrix
    r = np.zeros(M)
    mask = np.arange(M) != j - 1
    r[mask] = 1.0 / (lam[j - 1] - lam[mask])
    v = r * Bm[:, j - 1]  # R P B phi_j  (R already vanishes on phi_j)
    out = []
    for _ in range(m_max + 1):
        out.append(complex(np.vdot(Bm[:, j - 1], v)))  # <phi_j, B v> with B Hermitian
        v = r * (Bm @ v)
    return np.array(out)


def check_assumption_A(B, N, height=10, M_terms=3, tol=1e-10):
    """Bounded certification of the rational-relation condition.

    Because ``lambda_j = j^2 pi^2`` with ``pi^2`` irrational, a rational
    relation ``r_0 + sum r_j lambda_j = 0`` forces ``r_0 = 0`` and
    ``sum r_j j^2 = 0``.  All primitive such relations with ``|r_j| <= height``
    are enumerated.  A relation passes if ``sum r_j B_jj`` is nonzero, or
    failing that if some series coefficient ``sum r_j <phi_j, Btilde(m, j)
    phi_j>`` is nonzero for ``m = 0..M_terms``.

    Returns
    -------
    Certificate
        ``data["relations_found"]`` lists every relation (leading ``r_0 = 0``
        included) with its diagonal sum and, where needed, series values.
    """
    M = B.M
    if not 1 <= N <= M or height < 1:
        raise ValidationError("need 1 <= N <= M and height >= 1", module="operators", N=N, height=height)
    rels = integer_relations(N, height)
    d = B.diagonal[:N]
    sums = rels @ d if len(rels) else np.zeros(0)
    needs_series = np.flatnonzero(np.abs(sums) <= tol)
    series = {}
    if len(needs_series):
        coeffs = np.array([series_coefficients(B, j, M_terms) for j in range(1, N + 1)])
        for i in needs_series:
            series[int(i)] = rels[i] @ coeffs
    found, failing = [], []
    for i, r in enumerate(rels):
        entry = {"r": [0] + [int(x) for x in r], "diagonal_sum": float(sums[i])}
        passed = bool(abs(sums[i]) > tol)
        if int(i) in series:
            vals = series[int(i)]
            entry["series"] = [[float(v.real), float(v.imag)] for v in vals]
            passed = bool(np.any(np.abs(vals) > tol))
        entry["ok"] = passed
        found.append(entry)
        if not passed:
            failing.append(entry["r"])
    witness = [float(np.min(np.abs(sums)))] if len(sums) else []
    return Certificate(
        "assumption_A",
        N,
        M,
        not failing,
        witness,
        {"relations_found": found, "failing": failing, "height": height, "M_terms": M_terms, "tol": tol},
    )


def range_regularity_diagnostic(B, N, skip_fraction=0.125):
    """Decay diagnostic for the rows of ``B`` (no certification claimed).

    Fits ``log(k^3 |B_kj|)`` against ``log k`` over the interior rows for each
    column ``j <= N`` and reports the slopes.  A slope near zero means
    ``|B_kj| ~ k^-3``, the decay compatible with the range condition.
    """
    M = B.M
    k = np.arange(1, M + 1)
    keep = (k > N) & (k <= M - int(skip_fraction * M))
    slopes = []
    for j in range(N):
        y = k[keep] ** 3 * np.abs(B.matrix[keep, j])
        ok = y > 0
        if ok.sum() < 2:
            slopes.append(float("nan"))
            continue
        slopes.append(float(np.polyfit(np.log(k[keep][ok]), np.log(y[ok]), 1)[0]))
    return {"N": N, "M": M, "slopes": slopes, "certified": False}
