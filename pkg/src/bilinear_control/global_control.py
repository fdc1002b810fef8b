"""Global approximate steering by resonant pulses, and the exact pipeline.

A small control oscillating at a transition frequency ``|lambda_j^u0 -
lambda_k^u0|`` acts, in the interaction picture of ``A + u0 B`` and in the
limit of small amplitude and long duration, as a planar rotation
``exp(alpha E^theta_{jk})`` with

    E^theta_{jk}[j, k] = exp(i theta),   E^theta_{jk}[k, j] = -exp(-i theta).

When the coupled, non-degenerate transitions connect the first ``N1``
modes, these rotations generate ``SU(N1)``: any special unitary target is a
finite product of them (``su_decompose``), and each factor is realized by a
pulse (``periodic_pulse``).  ``steer_global`` chains the two; the result is
approximate, with error ``O(1/n)`` in the pulse index ``n``.
``steer_exact`` then finishes with the local Newton stage, going through the
perturbed eigenbasis in both directions, to obtain exact steering up to
phases.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components, minimum_spanning_tree

from .errors import BudgetError, NoChainError, ValidationError
from .local_control import DEFAULT_EPSILON, steer_local_states
from .moment_solver import assemble_frequencies
from .perturbation import PerturbedSpectrum, perturbed_spectrum
from .propagator import ControlSignal, propagator_matrix
from .spectral_core import as_coefficient_matrix, gram_schmidt, sobolev_norm

__all__ = [
    "AdmissibleTransitions",
    "PlanarRotation",
    "Pulse",
    "GlobalSteeringResult",
    "ExactSteeringResult",
    "planar_generator",
    "admissible_transitions",
    "lie_closure",
    "su_decompose",
    "compose",
    "periodic_pulse",
    "pulse_error",
    "steer_global",
    "steer_exact",
    "default_amplitude",
]

COUPLING_TOL = 1e-12


def default_amplitude(B):
    """Base pulse amplitude ``A0 = 0.3 / ||B||``."""
    return 0.3 / B.norm


def planar_generator(N1, j, k, theta):
    """``E^theta_{jk}`` as an ``N1 x N1`` matrix (1-based ``j != k``)."""
    if j == k or not (1 <= j <= N1 and 1 <= k <= N1):
        raise ValidationError("invalid planar pair", module="global_control", pair=(j, k), N1=N1)
    E = np.zeros((N1, N1), dtype=complex)
    E[j - 1, k - 1] = np.exp(1j * theta)
    E[k - 1, j - 1] = -np.exp(-1j * theta)
    return E


@dataclass(frozen=True)
class PlanarRotation:
    """The unitary ``exp(angle E^phase_{pair})``.

    Pairs are stored with ``j < k``; since ``E^theta_{kj} = E^{pi - theta}_{jk}``
    any orientation can be normalized.
    """

    pair: tuple
    angle: float
    phase: float

    @classmethod
    def make(cls, j, k, angle, phase):
        if angle < 0:
            angle, phase = -angle, phase + np.pi
        if j > k:
            j, k, phase = k, j, np.pi - phase
        return cls((int(j), int(k)), float(angle), float(np.mod(phase, 2 * np.pi)))

    def generator(self, N1):
        return planar_generator(N1, *self.pair, self.phase)

    def matrix(self, N1):
        j, k = self.pair[0] - 1, self.pair[1] - 1
        c, s = np.cos(self.angle), np.sin(self.angle)
        R = np.eye(N1, dtype=complex)
        R[j, j] = R[k, k] = c
        R[j, k] = np.exp(1j * self.phase) * s
        R[k, j] = -np.exp(-1j * self.phase) * s
        return R

    def inverse(self):
        return PlanarRotation.make(*self.pair, self.angle, self.phase + np.pi)

    def to_dict(self):
        return {"pair": list(self.pair), "angle": self.angle, "phase": self.phase}


def compose(rotations, N1):
    """Product ``R_1 R_2 ... R_p`` of planar rotations (``R_p`` acts first)."""
    out = np.eye(N1, dtype=complex)
    for r in rotations:
        out = out @ r.matrix(N1)
    return out


@dataclass
class AdmissibleTransitions:
    """Coupled, non-degenerate transitions among the first ``N1`` modes."""

    N1: int
    pairs: list
    frequencies: dict
    couplings: dict
    rejected: dict = field(default_factory=dict)

    @property
    def adjacency(self):
        A = np.zeros((self.N1, self.N1), dtype=bool)
        for j, k in self.pairs:
            A[j - 1, k - 1] = A[k - 1, j - 1] = True
        return A

    @property
    def connected(self):
        if self.N1 == 1:
            return True
        n, _ = connected_components(csr_matrix(self.adjacency), directed=False)
        return n == 1

    def spanning_tree(self):
        """Edges of a maximum-coupling spanning tree (requires connectivity)."""
        if not self.connected:
            raise NoChainError("transition graph is disconnected", N1=self.N1, pairs=self.pairs)
        W = np.zeros((self.N1, self.N1))
        for (j, k) in self.pairs:
            W[j - 1, k - 1] = 1.0 / abs(self.couplings[(j, k)])
        T = minimum_spanning_tree(csr_matrix(W)).tocoo()
        return sorted(tuple(sorted((int(a) + 1, int(b) + 1))) for a, b in zip(T.row, T.col))

    def to_dict(self):
        return {
            "N1": self.N1,
            "pairs": [list(p) for p in self.pairs],
            "frequencies": [self.frequencies[p] for p in self.pairs],
            "couplings": [[float(np.real(self.couplings[p])), float(np.imag(self.couplings[p]))] for p in self.pairs],
            "connected": self.connected,
        }


def _spectrum(spec, B):
    return spec if isinstance(spec, PerturbedSpectrum) else perturbed_spectrum(B, 0.0)


def admissible_transitions(spec, B, N1, require_connected=True, tol=None):
    """Transitions ``(j, k)``, ``j < k <= N1``, usable as independent pulses.

    A pair qualifies when its perturbed coupling is nonzero and no other
    coupled pair ``(m, l)`` with ``l, m <= M`` shares its frequency.

    Parameters
    ----------
    spec : PerturbedSpectrum or None
        ``None`` uses the unperturbed spectrum.
    B : ControlOperator
    N1 : int
    require_connected : bool
        Raise :class:`NoChainError` when the resulting graph is disconnected.
    tol : float, optional
        Frequency coincidence tolerance (default ``1e-9 max|omega|``).
    """
    spec = _spectrum(spec, B)
    M = spec.M
    if not 1 <= N1 <= M:
        raise ValidationError("need 1 <= N1 <= M", module="global_control", N1=N1, M=M)
    lam = spec.eigenvalues
    Bu = spec.coupling(B)
    jj, kk = np.triu_indices(M, 1)
    freq = np.abs(lam[kk] - lam[jj])
    coupled = np.abs(Bu[jj, kk]) > COUPLING_TOL
    tol = 1e-9 * float(freq.max()) if tol is None else tol
    pairs, freqs, coups, rejected = [], {}, {}, {}
    for j in range(1, N1 + 1):
        for k in range(j + 1, N1 + 1):
            b = Bu[j - 1, k - 1]
            if abs(b) <= COUPLING_TOL:
                rejected[(j, k)] = "uncoupled"
                continue
            w = abs(lam[k - 1] - lam[j - 1])
            clash = coupled & (np.abs(freq - w) <= tol) & ~((jj == j - 1) & (kk == k - 1))
            if np.any(clash):
                i = int(np.flatnonzero(clash)[0])
                rejected[(j, k)] = f"degenerate with {(int(jj[i]) + 1, int(kk[i]) + 1)}"
                continue
            pairs.append((j, k))
            freqs[(j, k)] = float(w)
            coups[(j, k)] = complex(b)
    tr = AdmissibleTransitions(N1, pairs, freqs, coups, rejected)
    if require_connected and not tr.connected:
        raise NoChainError(
            f"admissible transitions do not connect modes 1..{N1}",
            N1=N1,
            pairs=[list(p) for p in pairs],
        )
    return tr


def _skew_vec(X):
    return np.concatenate([X.real.ravel(), X.imag.ravel()])


def lie_closure(transitions, theta_samples=(0.0, np.pi / 2), tol=1e-10, max_rounds=50):
    """Dimension of the real Lie algebra generated by the planar generators.

    Seeds with ``E^theta_{jk}`` for every admissible pair and sampled
    ``theta``, then adjoins commutators until the span stops growing.

    Returns
    -------
    dict with ``dimension`` and an orthonormal ``basis`` (list of matrices).
    """
    N1 = transitions.N1
    if isinstance(theta_samples, int):
        theta_samples = np.linspace(0, np.pi, theta_samples, endpoint=False)
    basis, vecs = [], []

    def add(X):
        v = _skew_vec(X)
        for b in vecs:
            v = v - (b @ v) * b
        for b in vecs:  # second pass for stability
            v = v - (b @ v) * b
        n = np.linalg.norm(v)
        if n <= tol:
            return False
        v = v / n
        vecs.append(v)
        basis.append((v[: N1 * N1] + 1j * v[N1 * N1 :]).reshape(N1, N1))
        return True

    for j, k in transitions.pairs:
        for th in theta_samples:
            add(planar_generator(N1, j, k, th))
    done = 0
    for _ in range(max_rounds):
        n_before = len(basis)
        for a in range(len(basis)):
            for b in range(max(a + 1, done), len(basis)):
                add(basis[a] @ basis[b] - basis[b] @ basis[a])
        done = n_before
        if len(basis) == n_before:
            break
    return {"dimension": len(basis), "basis": basis, "target": N1 * N1 - 1}


def _tree_children(edges, nodes, root):
    adj = {n: [] for n in nodes}
    for a, b in edges:
        if a in adj and b in adj:
            adj[a].append(b)
            adj[b].append(a)
    parent, depth, order = {root: None}, {root: 0}, [root]
    for n in order:
        for m in sorted(adj[n]):
            if m not in parent:
                parent[m], depth[m] = n, depth[n] + 1
                order.append(m)
    return parent, depth


def _givens(yp, yv):
    """Angle and phase of ``exp(a E^t_{pv})`` sending ``(yp, yv)`` to ``(*, 0)``."""
    if abs(yv) == 0:
        return 0.0, 0.0
    if abs(yp) == 0:
        return np.pi / 2, -np.angle(yv)
    return float(np.arctan2(abs(yv), abs(yp))), float(np.angle(yp) - np.angle(yv))


def su_decompose(R, transitions, up_to_phases=False, tol=1e-14):
    """Factor a special unitary into admissible planar rotations.

    Columns are eliminated leaf by leaf along a spanning tree of the
    transition graph: each entry is rotated into its tree parent, deepest
    nodes first.  What remains is a diagonal ``D`` of determinant 1; it is
    split into pair phases ``diag(e^{i b}, e^{-i b})`` along tree edges, each
    realized by three rotations, ``exp(pi/4 E^{pi/2}) exp(b E^pi) exp(pi/4
    E^{3pi/2})``.

    Parameters
    ----------
    R : ndarray (N1, N1)
        Special unitary (any unitary if ``up_to_phases``).
    transitions : AdmissibleTransitions
    up_to_phases : bool or {"right", "left"}
        Skip the diagonal part: the product then equals ``R`` up to a
        diagonal unitary on the right (``True`` or ``"right"``) or on the
        left (``"left"``, obtained by factoring ``R^H``).

    Returns
    -------
    list of PlanarRotation
        ``compose(factors) == R`` (up to the dropped diagonal if
        ``up_to_phases``).
    """
    R = np.asarray(R, dtype=complex)
    if up_to_phases == "left":
        return [f.inverse() for f in reversed(su_decompose(R.conj().T, transitions, "right", tol))]
    N1 = transitions.N1
    if R.shape != (N1, N1):
        raise ValidationError("R does not match N1", module="global_control", shape=R.shape, N1=N1)
    udef = float(np.max(np.abs(R.conj().T @ R - np.eye(N1))))
    if udef > 1e-10:
        raise ValidationError("R is not unitary", module="global_control", defect=udef)
    if not up_to_phases and abs(np.linalg.det(R) - 1) > 1e-10:
        raise ValidationError("R is not special unitary", module="global_control", det=complex(np.linalg.det(R)))
    edges = transitions.spanning_tree()
    Y = R.copy()
    applied = []  # rotations G applied on the left, in order
    remaining = set(range(1, N1 + 1))
    while len(remaining) > 1:
        sub = [e for e in edges if e[0] in remaining and e[1] in remaining]
        deg = {n: 0 for n in remaining}
        for a, b in sub:
            deg[a] += 1
            deg[b] += 1
        c = max(n for n in remaining if deg[n] == 1)
        parent, depth = _tree_children(sub, remaining, c)
        for v in sorted(remaining - {c}, key=lambda n: (-depth[n], n)):
            p = parent[v]
            a, t = _givens(Y[p - 1, c - 1], Y[v - 1, c - 1])
            if a <= tol:
                continue
            G = PlanarRotation((p, v), a, t) if p < v else PlanarRotation.make(p, v, a, t)
            Y = G.matrix(N1) @ Y
            applied.append(G)
        remaining.discard(c)
    factors = [G.inverse() for G in applied]
    if up_to_phases:
        return factors
    phi = np.angle(np.diag(Y))
    phi[0] -= phi.sum()  # det D = 1 makes the sum a multiple of 2 pi
    root = 1
    parent, depth = _tree_children(edges, set(range(1, N1 + 1)), root)
    for v in sorted(range(2, N1 + 1), key=lambda n: (-depth[n], n)):
        p = parent[v]
        beta = -phi[v - 1]  # diag(e^{i beta}) at p, e^{-i beta} at v
        phi[p - 1] += phi[v - 1]
        phi[v - 1] = 0.0
        if abs(beta) <= tol:
            continue
        factors += _pair_phase(p, v, beta)
    return factors


def _pair_phase(p, v, beta):
    """Three rotations whose product is ``e^{i beta}`` at ``p`` and ``e^{-i beta}`` at ``v``."""
    q = np.pi / 4
    return [
        PlanarRotation.make(p, v, q, np.pi / 2),
        PlanarRotation.make(p, v, -beta, 0.0),
        PlanarRotation.make(p, v, q, 3 * np.pi / 2),
    ]


# ---------------------------------------------------------------------------
# pulses


@dataclass
class Pulse:
    """A sampled resonant pulse and its bounds."""

    signal: ControlSignal
    rotation: PlanarRotation
    n: int
    amplitude: float
    frequency: float
    control_phase: float
    t0: float

    @property
    def duration(self):
        return self.signal.total_time

    @property
    def linf(self):
        return self.signal.linf()

    @property
    def bv(self):
        return self.signal.bv_norm()

    @property
    def t_linf(self):
        return self.duration * self.linf

    def bounds(self):
        return {
            "n": self.n,
            "duration": self.duration,
            "linf": self.linf,
            "bv": self.bv,
            "total_variation": self.signal.total_variation(),
            "t_linf": self.t_linf,
            "amplitude": self.amplitude,
        }


def _pair_ok(spec, B, j, k):
    tr = admissible_transitions(spec, B, max(j, k), require_connected=False)
    return (min(j, k), max(j, k)) in tr.pairs


def periodic_pulse(pair, angle, phase, n, spec, B, A0=None, t0=0.0, samples_per_period=32,
                   envelope="sine2", levels=None, check=True):
    """Resonant pulse realizing ``exp(angle E^phase_{pair})`` in the interaction picture.

    The control is ``u1(t) = a s(t) cos(omega t + c)`` with ``a = A0 / n``,
    ``omega = |lambda_j^u0 - lambda_k^u0|`` and duration ``T_n = 2 angle n /
    (A0 |B^u0_jk|)``; ``t`` is global time so the pulse may start at ``t0``.
    The phase ``c`` is fixed by the phase of ``B^u0_jk``.

    The envelope ``s`` has unit mean, so the rotation angle does not depend
    on it.  ``"flat"`` is ``s = 1``; ``"sine2"`` (default) is ``2 sin^2(pi t /
    T_n)``, held constant over runs of whole carrier periods (at most
    ``levels`` distinct values, default ``max(64, 4 n)``, each the exact mean of ``s`` over its run).
    Smooth switching suppresses the off-resonant transients a sudden
    on/off leaves behind, so the error decays steadily like ``1/n``; the
    flat pulse's error oscillates with ``n``.

    The carrier is sampled at segment midpoints, ``samples_per_period`` per
    period, with the amplitude divided by ``sinc(omega dt / 2)`` so that the
    resonant Fourier component of each period is exact.

    Returns
    -------
    Pulse
    """
    spec = _spectrum(spec, B)
    j, k = int(pair[0]), int(pair[1])
    rot = PlanarRotation.make(j, k, angle, phase)
    j, k = rot.pair
    if check and not _pair_ok(spec, B, j, k):
        raise ValidationError("pair is not an admissible transition", module="global_control", pair=(j, k))
    if n < 1:
        raise ValidationError("pulse index n must be >= 1", module="global_control", n=n)
    if envelope not in ("flat", "sine2"):
        raise ValidationError("unknown envelope", module="global_control", envelope=envelope)
    A0 = default_amplitude(B) if A0 is None else A0
    lam = spec.eigenvalues
    b = spec.coupling(B)[j - 1, k - 1]
    theta = rot.phase
    if lam[j - 1] > lam[k - 1]:
        # swap roles so that the lower level comes first
        b, theta = np.conj(b), np.pi - theta
    omega = abs(lam[k - 1] - lam[j - 1])
    a = A0 / n
    c = theta - np.angle(b) + np.pi / 2
    if rot.angle == 0.0:
        return Pulse(ControlSignal(spec.u0), rot, n, a, omega, c, t0)
    T = 2.0 * rot.angle / (a * abs(b))
    K = int(samples_per_period)
    period = 2 * np.pi / omega
    dt = period / K
    amp = a / np.sinc(1.0 / K)
    n_per = int(np.floor(T / period))
    rest = T - n_per * period
    n_full = int(np.floor(rest / dt))
    part = rest - n_full * dt

    def env_mean(t1, t2):
        if envelope == "flat":
            return 1.0
        # mean of 2 sin^2(pi t / T) over [t1, t2]
        return 1.0 - (np.sin(2 * np.pi * t2 / T) - np.sin(2 * np.pi * t1 / T)) * T / (2 * np.pi * (t2 - t1))

    carrier = amp * np.cos(omega * (t0 + (np.arange(K) + 0.5) * dt) + c)
    blocks = []
    if n_per:
        lv = max(64, 4 * n) if levels is None else int(levels)
        n_lev = 1 if envelope == "flat" else min(lv, n_per)
        cuts = np.unique(np.round(np.linspace(0, n_per, n_lev + 1)).astype(int))
        for p0, p1 in zip(cuts[:-1], cuts[1:]):
            s = env_mean(p0 * period, p1 * period)
            blocks.append((np.full(K, dt), s * carrier, int(p1 - p0)))
    tail_loc = n_per * period + (np.arange(n_full) + 0.5) * dt
    d_tail = list(np.full(n_full, dt))
    v_tail = [amp * env_mean(x - dt / 2, x + dt / 2) * np.cos(omega * (t0 + x) + c) for x in tail_loc]
    if part > 1e-12 * period:
        x = T - 0.5 * part
        d_tail.append(part)
        v_tail.append(amp * env_mean(T - part, T) * np.cos(omega * (t0 + x) + c))
    if d_tail:
        blocks.append((np.array(d_tail), np.array(v_tail), 1))
    return Pulse(ControlSignal(spec.u0, blocks=blocks), rot, n, a, omega, c, t0)


def _interaction_unitary(spec, B, signal, t0=0.0):
    """``exp(i H0 (t0 + T)) Gamma exp(-i H0 t0)`` in the perturbed basis."""
    V = spec.eigenvectors
    G = V.conj().T @ propagator_matrix(B, signal) @ V
    T = signal.total_time
    lam = spec.eigenvalues
    return np.exp(1j * lam * (t0 + T))[:, None] * G * np.exp(-1j * lam * t0)[None, :]


def pulse_error(pulse, spec, B, N1=None):
    """``sup_{k <= N1} ||U_I phi_k^u0 - R phi_k^u0||_(3)`` for one pulse.

    ``U_I`` is the interaction-picture propagator and ``R`` the intended
    rotation (identity outside its plane).
    """
    spec = _spectrum(spec, B)
    N1 = max(pulse.rotation.pair) if N1 is None else N1
    M = spec.M
    U = _interaction_unitary(spec, B, pulse.signal, pulse.t0)
    Rf = np.eye(M, dtype=complex)
    Rf[:N1, :N1] = pulse.rotation.matrix(N1)
    diff = spec.eigenvectors @ (U[:, :N1] - Rf[:, :N1])
    return float(np.max(sobolev_norm(diff, 3)))


# ---------------------------------------------------------------------------
# global steering


@dataclass
class GlobalSteeringResult:
    """Approximate global control and its bookkeeping."""

    control: ControlSignal
    achieved_errors: np.ndarray
    rotations: list
    manifest: list
    N1: int
    n: int
    factor_errors: list = field(default_factory=list)
    history: list = field(default_factory=list)

    @property
    def u(self):
        return self.control

    @property
    def error(self):
        return float(np.max(self.achieved_errors)) if len(self.achieved_errors) else 0.0

    def to_dict(self):
        return {
            "control": self.control.to_dict(),
            "achieved_errors": [float(e) for e in self.achieved_errors],
            "rotations": [r.to_dict() for r in self.rotations],
            "manifest": self.manifest,
            "N1": self.N1,
            "n": self.n,
            "factor_errors": list(self.factor_errors),
            "history": self.history,
        }


def _complete_unitary(cols, N1):
    """Orthonormal basis of ``C^N1`` whose leading columns span ``cols`` (Gram-Schmidt)."""
    fam = [cols[:, i] for i in range(cols.shape[1])]
    Q = gram_schmidt(np.column_stack(fam))
    for m in range(N1):
        if Q.shape[1] == N1:
            break
        e = np.zeros(N1, dtype=complex)
        e[m] = 1.0
        r = e - Q @ (Q.conj().T @ e)
        if np.linalg.norm(r) > 1e-6:
            Q = np.column_stack([Q, r / np.linalg.norm(r)])
            Q = gram_schmidt(Q)
    # gram_schmidt fixes its own phase convention; restore the input phases
    k = cols.shape[1]
    Q[:, :k] *= _phase_match(Q[:, :k], cols)[None, :]
    return Q


def _phase_match(fam_a, fam_b):
    """Column phases ``p`` minimizing ``||fam_a p - fam_b||`` columnwise."""
    ip = np.sum(np.conj(fam_a) * fam_b, axis=0)
    return np.where(np.abs(ip) > 0, ip / np.maximum(np.abs(ip), 1e-300), 1.0)


def _h3_errors(final, targets, up_to_phases):
    if up_to_phases:
        final = final * _phase_match(final, targets)[None, :]
    return sobolev_norm(final - targets, 3)


def _choose_N1(spec, B, chi, psi, epsilon, N):
    V = spec.eigenvectors
    for N1 in range(N + 1, spec.M + 1):
        P = V[:, :N1]
        tail = max(
            float(np.max(sobolev_norm(chi - P @ (P.conj().T @ chi), 3))),
            float(np.max(sobolev_norm(psi - P @ (P.conj().T @ psi), 3))),
        )
        if tail >= epsilon / 4:
            continue
        try:
            return N1, admissible_transitions(spec, B, N1)
        except NoChainError:
            continue
    raise NoChainError("no enlarged dimension N1 with small tails and a connected chain", M=spec.M)


def _target_unitary(chi_c, psi_c, N, up_to_phases):
    """``Gt`` in ``SU(N1)`` with ``Gt (orth chi_c) = orth psi_c`` on the first ``N`` columns.

    Gram-Schmidt of the projected families, completed to bases; the
    determinant is fixed on a completion column.
    """
    N1 = chi_c.shape[0]
    Qc = _complete_unitary(chi_c, N1)
    Qp = _complete_unitary(psi_c, N1)
    Gt = Qp @ Qc.conj().T
    if not up_to_phases:
        det = np.linalg.det(Gt)
        Qp[:, N] *= np.conj(det) / abs(det)
        Gt = Qp @ Qc.conj().T
    return Gt


def _is_eigenfamily(coords, tol=1e-12):
    """True when the columns are ``e_j`` up to phases, ``j = 1..N`` in order."""
    N = coords.shape[1]
    return bool(np.max(np.abs(np.abs(coords) - np.eye(coords.shape[0], N))) < tol)


def _plan(spec, B, transitions, chi, psi, N, T_g, up_to_phases):
    V1 = spec.eigenvectors[:, : transitions.N1]
    lam = spec.eigenvalues[: transitions.N1]
    chi_c = V1.conj().T @ chi
    psi_c = np.exp(1j * lam * T_g)[:, None] * (V1.conj().T @ psi)
    # a dropped diagonal is harmless only next to an eigenfamily
    side = False
    if up_to_phases and _is_eigenfamily(chi_c):
        side = "right"
    elif up_to_phases and _is_eigenfamily(psi_c):
        side = "left"
    Gt = _target_unitary(chi_c, psi_c, N, bool(side))
    return su_decompose(Gt, transitions, up_to_phases=side)


def _durations(rotations, transitions, n, A0):
    return [2.0 * r.angle * n / (A0 * abs(transitions.couplings[r.pair])) for r in rotations]


def steer_global(spec, B, targets, epsilon=DEFAULT_EPSILON, n_budget=(2, 4, 8, 16, 32, 64, 128),
                 N1=None, initial=None, up_to_phases=False, A0=None, samples_per_period=32):
    """Approximately steer ``N`` states onto ``N`` targets.

    Pipeline: choose ``N1``; build ``Gt`` in ``SU(N1)`` mapping the projected
    initial states to the projected (drift-compensated) targets;
    ``su_decompose`` it; realize each factor by a pulse with index ``n``
    escalating through ``n_budget`` until every factor's simulated error is
    below ``epsilon / (2 p)``; concatenate; pad with free evolution up to the
    planned horizon ``T_g``; and verify the sup ``H^3`` error.

    The drift is handled by decomposing ``exp(i H0 T_g) Gt`` for a horizon
    ``T_g`` fixed in advance (pulses are referenced to global time), so the
    lab-frame propagator approximates ``Gt`` at ``T_g``.

    Parameters
    ----------
    spec : PerturbedSpectrum
    B : ControlOperator
    targets : list of WaveFunction or ndarray (M, N)
    epsilon : float
    n_budget : sequence of int
    N1 : int, optional
        Enlarged dimension (``>= N + 1``); chosen automatically if omitted.
    initial : list of WaveFunction or ndarray (M, N), optional
        Initial states; default ``phi_j^u0``, ``j <= N``.
    up_to_phases : bool
        Only reach each target up to a phase.  The diagonal factors are
        skipped when the initial or the target family is the perturbed
        eigenbasis; otherwise the full decomposition is used.
    A0 : float, optional
        Base amplitude, default ``0.3 / ||B||``.

    Returns
    -------
    GlobalSteeringResult

    Raises
    ------
    BudgetError
        If no ``n`` in the budget reaches ``epsilon``.
    """
    M = spec.M
    psi = as_coefficient_matrix(targets, M)
    N = psi.shape[1]
    chi = spec.eigenvectors[:, :N].astype(complex) if initial is None else as_coefficient_matrix(initial, M)
    if chi.shape[1] != N:
        raise ValidationError("initial and target families differ in size", module="global_control")
    for fam, name in ((chi, "initial"), (psi, "target")):
        if np.max(np.abs(fam.conj().T @ fam - np.eye(N))) > 1e-10:
            raise ValidationError(f"{name} states are not orthonormal", module="global_control")
    A0 = default_amplitude(B) if A0 is None else A0
    if N1 is None:
        N1, transitions = _choose_N1(spec, B, chi, psi, epsilon, N)
    else:
        if N1 < N + 1:
            raise ValidationError("need N1 >= N + 1", module="global_control", N1=N1, N=N)
        transitions = admissible_transitions(spec, B, N1)
    history, best = [], np.inf
    for n in n_budget:
        # fixed point for the horizon: decompose with T_g, check the pulses fit in T_g
        T_g = 0.0
        rots = _plan(spec, B, transitions, chi, psi, N, T_g, up_to_phases)
        for _ in range(30):
            need = float(np.sum(_durations(rots, transitions, n, A0)))
            if need <= T_g:
                break
            T_g = 1.1 * need if T_g == 0.0 else max(1.1 * need, 1.5 * T_g)
            rots = _plan(spec, B, transitions, chi, psi, N, T_g, up_to_phases)
        else:
            raise BudgetError("could not fit the pulse train in a fixed horizon", best_error=float(best))
        p = max(len(rots), 1)
        pulses, t, manifest, ferr = [], 0.0, [], []
        seg = 0
        for r in reversed(rots):  # the last factor acts first
            pl = periodic_pulse(r.pair, r.angle, r.phase, n, spec, B, A0, t0=t,
                                samples_per_period=samples_per_period, check=False)
            ferr.append(pulse_error(pl, spec, B, N1))
            manifest.append({
                "factor": r.to_dict(),
                "n": n,
                "t_start": t,
                "t_end": t + pl.duration,
                "segment_start": seg,
                "segment_end": seg + pl.signal.n_segments,
                "bounds": pl.bounds(),
            })
            seg += pl.signal.n_segments
            t += pl.duration
            pulses.append(pl)
        factor_ok = all(e < epsilon / (2 * p) for e in ferr)
        ctrl = ControlSignal(spec.u0).concatenate(*[pl.signal for pl in pulses])
        if T_g - t > 0:
            ctrl = ctrl.concatenate(ControlSignal.constant(spec.u0, T_g - t))
        final = propagator_matrix(B, ctrl) @ chi
        errs = _h3_errors(final, psi, up_to_phases)
        history.append({"n": n, "error": float(errs.max()), "max_factor_error": float(max(ferr, default=0.0)),
                        "factors": len(rots), "T": ctrl.total_time})
        best = min(best, float(errs.max()))
        if factor_ok and errs.max() < epsilon:
            return GlobalSteeringResult(ctrl, errs, rots, manifest, N1, n, ferr, history)
    raise BudgetError(f"pulse budget exhausted; best sup H3 error {best:.3g} >= {epsilon}",
                      best_error=float(best), history=history)


# ---------------------------------------------------------------------------
# exact steering: global + local, forward and reversed


@dataclass
class ExactSteeringResult:
    """Control steering ``psi1_j`` onto ``exp(-i theta_j) psi2_j`` exactly."""

    control: ControlSignal
    phases: np.ndarray
    defect: float
    h3_defect: float
    projected_defect: float
    stages: list
    manifest: list

    def to_dict(self):
        return {
            "control": self.control.to_dict(),
            "phases": [float(p) for p in self.phases],
            "defect": self.defect,
            "h3_defect": self.h3_defect,
            "projected_defect": self.projected_defect,
            "stages": self.stages,
            "manifest": self.manifest,
        }


def _to_eigenbasis(spec, B, chi, T_local, epsilon, n_budget, tol, max_iter, method):
    """Global then local: drive ``chi`` exactly onto ``phi_j^u0`` up to phases."""
    N = chi.shape[1]
    eig = spec.eigenvectors[:, :N].astype(complex)
    g = steer_global(spec, B, eig, epsilon=epsilon, n_budget=n_budget, initial=chi, up_to_phases=True)
    chi1 = propagator_matrix(B, g.control) @ chi
    # long pulse trains (~1e6 segments) lose orthonormality at the 1e-10 level
    # through round-off; the closest orthonormal family (polar factor) is used
    # as the local start, the final defect is measured on the true propagator
    w, Vg = np.linalg.eigh(chi1.conj().T @ chi1)
    chi1 = chi1 @ (Vg / np.sqrt(w)[None, :]) @ Vg.conj().T
    loc =steer_local_states(spec, B, chi1, eig, T_local, tol=tol, max_iter=max_iter,
                             epsilon=max(epsilon, 2 * g.error), method=method)
    ctrl = g.control.concatenate(loc.control)
    info = {
        "global_error": g.error,
        "global_n": g.n,
        "global_T": g.control.total_time,
        "N1": g.N1,
        "factors": len(g.rotations),
        "local_defect_history": [h["defect"] for h in loc.history],
        "local_T": T_local,
    }
    return ctrl, info


def steer_exact(spec, B, initial, targets, T_local=None, epsilon=DEFAULT_EPSILON, n_budget=(2, 4, 8, 16, 32, 64),
                tol=1e-10, max_iter=10, method="chord"):
    """Exact simultaneous steering of ``N`` states, up to phases.

    Stage 1 drives the initial states to the perturbed eigenstates
    ``phi_j^u0`` (global pulses, then local Newton).  Stage 2 does the same
    for the complex conjugates of the targets; because ``A`` and ``B`` are
    real, the conjugate dynamics is the reversed dynamics, so playing the
    stage-2 control backwards in time maps ``phi_j^u0`` onto the targets.

    Parameters
    ----------
    spec : PerturbedSpectrum
    B : ControlOperator
        Must be real symmetric.
    initial, targets : list of WaveFunction or ndarray (M, N)
    T_local : float, optional
        Horizon of each local stage; default twice ``2 pi / min_gap``.

    Returns
    -------
    ExactSteeringResult
        ``exp(i theta_j) Gamma_T^u psi1_j = psi2_j``.
    """
    if not B.is_real:
        raise ValidationError("exact steering uses time reversal by conjugation; B must be real",
                              module="global_control")
    M = spec.M
    chi = as_coefficient_matrix(initial, M)
    psi = as_coefficient_matrix(targets, M)
    N = chi.shape[1]
    if T_local is None:
        T_local = 2.0 * assemble_frequencies(spec, N).base_horizon
    c1, info1 = _to_eigenbasis(spec, B, chi, T_local, epsilon, n_budget, tol, max_iter, method)
    c2, info2 = _to_eigenbasis(spec, B, np.conj(psi), T_local, epsilon, n_budget, tol, max_iter, method)
    ctrl = c1.concatenate(c2.reversed())
    final = propagator_matrix(B, ctrl) @ chi
    ph = _phase_match(final, psi)
    aligned = final * ph[None, :]
    defect = float(np.max(np.linalg.norm(aligned - psi, axis=0)))
    h3 = float(np.max(sobolev_norm(aligned - psi, 3)))
    proj = float(np.max(np.abs(psi.conj().T @ aligned - np.eye(N))))
    manifest = [
        {"stage": "to_eigenbasis", "t_start": 0.0, "t_end": c1.total_time, "segments": c1.n_segments},
        {"stage": "from_eigenbasis (reversed)", "t_start": c1.total_time, "t_end": ctrl.total_time,
         "segments": c2.n_segments},
    ]
    return ExactSteeringResult(ctrl, np.mod(np.angle(ph), 2 * np.pi), defect, h3, proj, [info1, info2], manifest)
