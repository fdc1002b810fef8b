"""Trigonometric moment problems with real-valued solutions.

Given distinct frequencies ``omega_a`` and complex targets ``x_a`` we seek a
real control ``u`` on ``[0, T]`` with ``int_0^T u(s) exp(-i omega_a s) ds =
x_a``.  A real ``u`` automatically satisfies the conjugate constraints at
``-omega_a``, so the family is symmetrized first: negative frequencies are
folded onto positive ones (target conjugated), genuine conjugate duplicates
are merged, and the mirrored constraints are appended.  The minimum-norm
solution lies in the span of the exponentials and is Hermitian-symmetric,
hence real.

The solution is computed on the propagation grid itself: with ``K[a, s] =
int_seg_s exp(-i omega_a t) dt`` (exact), the minimum weighted-L2 piecewise
constant ``u`` is ``u = K^* c / dt`` with ``(K K^* / dt) c = x``.  Its
moments therefore match the targets up to solver precision, with no
sampling error.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg

from .errors import IllPosedError, ResonanceError, ValidationError
from .perturbation import transition_frequencies
from .propagator import ControlSignal, exp_segment_integrals

__all__ = [
    "MomentSystem",
    "MomentSolution",
    "assemble_frequencies",
    "solve_real_moment",
    "frame_condition",
    "collision_tolerance",
    "DEFAULT_SEGMENTS",
]

DEFAULT_SEGMENTS = 2048
REGULARIZATION = 1e-12
MAX_CONDITION = 1e10


def collision_tolerance(omega):
    """Frequencies closer than ``1e-9 max|omega|`` count as colliding."""
    omega = np.asarray(omega, dtype=float)
    scale = float(np.max(np.abs(omega))) if omega.size else 0.0
    return 1e-9 * scale if scale > 0 else 1e-12


@dataclass(frozen=True, eq=False)
class MomentSystem:
    """Frequencies, targets and horizon of a moment problem.

    Attributes
    ----------
    T : float or None
        Horizon; may be left unset in a skeleton.
    frequencies : ndarray of float
    targets : ndarray of complex
        Same length as ``frequencies`` (zeros in a skeleton).
    labels : list, optional
        Index pair ``(j, k)`` of each frequency ``lambda_j - lambda_k``.
    """

    T: float | None
    frequencies: np.ndarray
    targets: np.ndarray = None
    labels: list = field(default=None)

    def __post_init__(self):
        w = np.array(self.frequencies, dtype=float).reshape(-1)
        if not np.all(np.isfinite(w)):
            raise ValidationError("non-finite frequency", module="moment_solver")
        x = np.zeros(w.size, dtype=complex) if self.targets is None else np.array(self.targets, dtype=complex).reshape(-1)
        if x.size != w.size:
            raise ValidationError("targets and frequencies differ in length", module="moment_solver")
        if not np.all(np.isfinite(x)):
            raise ValidationError("non-finite target", module="moment_solver")
        labels = list(self.labels) if self.labels is not None else [(a,) for a in range(w.size)]
        if len(labels) != w.size:
            raise ValidationError("labels and frequencies differ in length", module="moment_solver")
        object.__setattr__(self, "frequencies", w)
        object.__setattr__(self, "targets", x)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.frequencies.size

    @property
    def min_gap(self):
        """Smallest separation within the symmetrized family ``{+-omega}``."""
        fam = _symmetrize(self, strict=False)[0]
        if fam.size < 2:
            return float("inf")
        return float(np.min(np.diff(np.sort(fam))))

    @property
    def base_horizon(self):
        """``2 pi / min_gap``; solvability needs ``T`` above it."""
        return 2 * np.pi / self.min_gap

    def with_targets(self, targets):
        return replace(self, targets=np.asarray(targets, dtype=complex))

    def with_horizon(self, T):
        return replace(self, T=float(T))

    def to_dict(self):
        return {
            "T": self.T,
            "frequencies": self.frequencies.tolist(),
            "targets": [[float(z.real), float(z.imag)] for z in self.targets],
            "labels": [list(l) for l in self.labels],
        }


@dataclass
class MomentSolution:
    """Real control solving a moment system, with diagnostics."""

    control: ControlSignal
    residuals: np.ndarray
    max_imag: float
    condition: float
    system: MomentSystem

    @property
    def max_residual(self):
        return float(np.max(self.residuals)) if self.residuals.size else 0.0

    def to_dict(self):
        return {
            "control": self.control.to_dict(),
            "residuals": self.residuals.tolist(),
            "max_imag": self.max_imag,
            "condition": self.condition,
        }


def assemble_frequencies(spec, N, jmax=None, T=None, tol=None):
    """Frequencies ``lambda_j^u0 - lambda_k^u0`` for ``k <= N``, ``j <= jmax``.

    Together with the single zero frequency (labelled ``(1, 1)``) these are
    the ``N jmax - N + 1`` moment constraints of the linearized steering
    problem.  Labels ``(j, k)`` follow the pair convention of
    :func:`~bilinear_control.operators.index_pairs`.

    Raises
    ------
    ResonanceError
        If two distinct labels share a frequency; every colliding couple is
        listed in ``collisions``.
    """
    jmax = spec.M if jmax is None else int(jmax)
    if jmax > spec.M or N > jmax:
        raise ValidationError("need N <= jmax <= M", module="moment_solver", N=N, jmax=jmax, M=spec.M)
    pairs, omega = transition_frequencies(spec, N, jmax)
    labels = [(1, 1)] + pairs
    omega = np.concatenate([[0.0], omega])
    tol = collision_tolerance(omega) if tol is None else tol
    order = np.argsort(omega, kind="stable")
    close = np.flatnonzero(np.diff(omega[order]) <= tol)
    if len(close):
        collisions = [tuple(sorted((labels[order[i]], labels[order[i + 1]]))) for i in close]
        a, b = collisions[0]
        raise ResonanceError(
            f"transition frequencies of pairs {a} and {b} coincide (resonance)",
            collisions=collisions,
            omega=float(omega[order[close[0]]]),
            u0=spec.u0,
        )
    return MomentSystem(T, omega, np.zeros(omega.size, dtype=complex), labels)


def _symmetrize(system, strict=True):
    """Fold onto ``omega >= 0``, merge conjugate duplicates, mirror.

    Returns the symmetric family, its targets, and the positive canonical
    frequencies with their targets.
    """
    w, x, labels = system.frequencies, system.targets, system.labels
    tol = collision_tolerance(w)
    flip = w < -tol
    cw = np.where(flip, -w, w)
    cx = np.where(flip, np.conj(x), x)
    zero = np.abs(w) <= tol
    cw[zero] = 0.0
    if strict:
        bad = zero & (np.abs(x.imag) > 1e-12 * np.maximum(1.0, np.abs(x)))
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise ValidationError(
                "target at zero frequency must be real", module="moment_solver", label=labels[i], target=[x[i].real, x[i].imag]
            )
    order = np.argsort(cw, kind="stable")
    groups = [[order[0]]] if len(order) else []
    for a, b in zip(order[:-1], order[1:]):
        if cw[b] - cw[a] <= tol:
            groups[-1].append(b)
        else:
            groups.append([b])
    keep_w, keep_x, collisions = [], [], []
    for g in groups:
        head = g[0]
        for other in g[1:]:
            conj_pair = flip[head] != flip[other] or zero[head]
            same = abs(cx[other] - cx[head]) <= 1e-9 * max(1.0, abs(cx[head]))
            if not (conj_pair and same):
                collisions.append(tuple(sorted((tuple(labels[head]), tuple(labels[other])))))
        keep_w.append(cw[head])
        keep_x.append(cx[head].real if zero[head] else cx[head])
    if collisions and strict:
        a, b = collisions[0]
        raise ResonanceError(
            f"moment constraints {a} and {b} share a frequency with incompatible targets",
            collisions=collisions,
        )
    keep_w = np.array(keep_w, dtype=float)
    keep_x = np.array(keep_x, dtype=complex)
    pos = keep_w > 0
    fam = np.concatenate([keep_w, -keep_w[pos]])
    tx = np.concatenate([keep_x, np.conj(keep_x[pos])])
    return fam, tx, keep_w, keep_x


def solve_real_moment(system, n_segments=DEFAULT_SEGMENTS, regularization=REGULARIZATION,
                      max_condition=MAX_CONDITION, check_horizon=True, refine=2):
    """Minimum-norm real piecewise-constant solution of a moment system.

    Parameters
    ----------
    system : MomentSystem
        Needs a horizon ``T``.
    n_segments : int
        Uniform grid size for the returned control (default 2048).
    regularization : float
        Tikhonov factor; ``regularization * trace(G)`` is added to the Gram
        diagonal, and ``refine`` steps of iterative refinement remove the
        bias it introduces.
    max_condition : float
        Gram condition numbers above this raise :class:`IllPosedError`.
    check_horizon : bool
        Enforce ``T > 2 pi / min_gap``.

    Returns
    -------
    MomentSolution
        ``control`` has offset 0 (it is the ``u1`` part).
    """
    T = system.T
    if T is None or not T > 0:
        raise ValidationError("moment system needs a positive horizon", module="moment_solver", T=T)
    fam, tx, _, _ = _symmetrize(system, strict=True)
    gap = float(np.min(np.diff(np.sort(fam)))) if fam.size > 1 else float("inf")
    if check_horizon and T <= 2 * np.pi / gap:
        raise IllPosedError(
            f"horizon T={T:.6g} is below 2*pi/min_gap={2 * np.pi / gap:.6g}; use a longer T",
            T=T,
            min_gap=gap,
        )
    dt = T / n_segments
    edges = np.linspace(0.0, T, n_segments + 1)
    K = exp_segment_integrals(fam, edges)
    G = (K @ K.conj().T) / dt
    G = 0.5 * (G + G.conj().T)
    ev = np.linalg.eigvalsh(G)
    cond = float(ev[-1] / ev[0]) if ev[0] > 0 else float("inf")
    if cond > max_condition:
        raise IllPosedError(
            f"moment Gram matrix is ill-conditioned (cond={cond:.3g}); use a longer horizon T",
            condition=cond,
            T=T,
            min_gap=gap,
        )
    Greg = G + regularization * np.trace(G).real * np.eye(G.shape[0])
    cho = linalg.cho_factor(Greg)
    c = linalg.cho_solve(cho, tx)
    for _ in range(refine):
        c = c + linalg.cho_solve(cho, tx - G @ c)
    u = (K.conj().T @ c) / dt
    max_imag = float(np.max(np.abs(u.imag))) if u.size else 0.0
    ctrl = ControlSignal.from_arrays(0.0, np.full(n_segments, dt), u.real)
    got = exp_segment_integrals(system.frequencies, edges) @ u.real
    residuals = np.abs(got - system.targets)
    return MomentSolution(ctrl, residuals, max_imag, cond, system)


def frame_condition(system, T=None):
    """Empirical Riesz constants of the symmetrized exponential family.

    Uses the continuous Gram matrix ``G_ab = (1/T) int_0^T exp(i (omega_a -
    omega_b) s) ds``; its extreme eigenvalues are the frame constants and
    their ratio the condition number.  Colliding frequencies are not an error
    here; they drive the lower constant to zero.
    """
    T = system.T if T is None else T
    if T is None or not T > 0:
        raise ValidationError("frame_condition needs a positive horizon", module="moment_solver")
    fam = _symmetrize(system, strict=False)[0]
    d = fam[:, None] - fam[None, :]
    G = np.exp(0.5j * d * T) * np.sinc(d * T / (2 * np.pi))
    ev = np.linalg.eigvalsh(0.5 * (G + G.conj().T))
    lower, upper = float(max(ev[0], 0.0)), float(ev[-1])
    return {
        "condition_number": upper / lower if lower > 0 else float("inf"),
        "riesz_lower": lower,
        "riesz_upper": upper,
        "T": float(T),
        "size": int(fam.size),
    }
