"""Exact propagation under piecewise-constant controls.

On a segment where the control equals ``u`` the Galerkin Hamiltonian
``H(u) = diag(lambda) + u B`` is constant, so the segment propagator
``exp(-i dt H(u))`` is computed exactly from a Hermitian eigendecomposition.
No ODE solver is involved; the only errors are floating point.

Signals are stored as blocks ``(durations, values, repeat)``: a block is a
run of segments, repeated ``repeat`` times.  Periodic pulses become one
period repeated many times, which keeps long global controls cheap.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidSignalError, NumericError, ValidationError
from .spectral_core import WaveFunction, as_coefficient_matrix, eigenvalue, sobolev_weights

__all__ = [
    "ControlSignal",
    "PropagationResult",
    "hamiltonian",
    "segment_unitaries",
    "step_constant",
    "propagate",
    "propagator_matrix",
    "reverse_check",
    "overlap_matrix",
    "transposition_defect",
]


class ControlSignal:
    """Real piecewise-constant control ``u(t) = u0 + u1(t)`` on ``[0, T]``.

    Parameters
    ----------
    u0 : float
        Constant offset.
    segments : iterable of (dt, value), optional
        Consecutive segments of ``u1``.
    blocks : iterable of (durations, values, repeat), optional
        Alternative block form; appended after ``segments``.
    """

    def __init__(self, u0=0.0, segments=(), blocks=()):
        self.u0 = float(u0)
        if not np.isfinite(self.u0):
            raise InvalidSignalError("offset u0 is not finite", u0=u0)
        out = []
        segments = list(segments)
        if segments:
            arr = np.asarray(segments, dtype=float).reshape(-1, 2)
            out.append(self._check_block(arr[:, 0], arr[:, 1], 1))
        for blk in blocks:
            out.append(self._check_block(*blk))
        self._blocks = tuple(b for b in out if b[0].size and b[2] > 0)

    @staticmethod
    def _check_block(durations, values, repeat):
        d = np.array(durations, dtype=float).reshape(-1)
        v = np.array(values, dtype=float).reshape(-1)
        if d.shape != v.shape:
            raise InvalidSignalError("durations and values differ in length", n_dt=d.size, n_values=v.size)
        if not np.all(np.isfinite(d)) or np.any(d <= 0.0):
            bad = int(np.flatnonzero(~(np.isfinite(d) & (d > 0.0)))[0])
            raise InvalidSignalError("segment with non-positive duration", segment=bad, dt=float(d[bad]))
        if not np.all(np.isfinite(v)):
            raise InvalidSignalError("non-finite control value", segment=int(np.flatnonzero(~np.isfinite(v))[0]))
        if int(repeat) != repeat or repeat < 0:
            raise InvalidSignalError("block repeat count must be a nonnegative integer", repeat=repeat)
        d.setflags(write=False)
        v.setflags(write=False)
        return (d, v, int(repeat))

    # -- constructors -----------------------------------------------------
    @classmethod
    def from_arrays(cls, u0, durations, values, repeat=1):
        return cls(u0, blocks=[(durations, values, repeat)])

    @classmethod
    def uniform(cls, u0, T, values):
        """Equal-length segments covering ``[0, T]``."""
        values = np.asarray(values, dtype=float)
        return cls.from_arrays(u0, np.full(values.size, T / values.size), values)

    @classmethod
    def constant(cls, u0, T, value=0.0):
        """A single segment of length ``T`` (empty signal when ``T == 0``)."""
        if T == 0:
            return cls(u0)
        return cls(u0, [(T, value)])

    @classmethod
    def from_dict(cls, data):
        segs = [(s["dt"], s["value"]) for s in data.get("segments", [])]
        blocks = [(b["durations"], b["values"], b["repeat"]) for b in data.get("blocks", [])]
        return cls(data.get("u0", 0.0), segs, blocks)

    # -- structure --------------------------------------------------------
    @property
    def blocks(self):
        return self._blocks

    @property
    def total_time(self):
        return float(sum(d.sum() * r for d, _, r in self._blocks))

    T = total_time

    @property
    def n_segments(self):
        return int(sum(d.size * r for d, _, r in self._blocks))

    @property
    def durations(self):
        parts = [np.tile(d, r) for d, _, r in self._blocks]
        return np.concatenate(parts) if parts else np.zeros(0)

    @property
    def values(self):
        """Values of ``u1`` per segment (offset excluded)."""
        parts = [np.tile(v, r) for _, v, r in self._blocks]
        return np.concatenate(parts) if parts else np.zeros(0)

    @property
    def breakpoints(self):
        return np.concatenate([[0.0], np.cumsum(self.durations)])

    def is_empty(self):
        return not self._blocks

    def __len__(self):
        return self.n_segments

    def __repr__(self):
        return f"ControlSignal(u0={self.u0!r}, segments={self.n_segments}, T={self.total_time:.6g})"

    # -- algebra ----------------------------------------------------------
    def concatenate(self, *others):
        """This signal followed by ``others`` (all must share ``u0``)."""
        blocks = list(self._blocks)
        for o in others:
            if o.u0 != self.u0 and not o.is_empty():
                raise InvalidSignalError("cannot concatenate signals with different offsets", u0=[self.u0, o.u0])
            blocks.extend(o.blocks)
        return ControlSignal(self.u0, blocks=blocks)

    def reversed(self):
        """``u(T - t)``: blocks and segments in reverse order."""
        return ControlSignal(self.u0, blocks=[(d[::-1], v[::-1], r) for d, v, r in self._blocks[::-1]])

    def with_offset(self, u0):
        return ControlSignal(u0, blocks=self._blocks)

    def scaled(self, factor):
        """Same segments with ``u1`` multiplied by ``factor``."""
        return ControlSignal(self.u0, blocks=[(d, factor * v, r) for d, v, r in self._blocks])

    def __add__(self, other):
        """Pointwise sum of ``u1`` for two signals on the same segment grid."""
        if not np.allclose(self.durations, other.durations, rtol=0, atol=1e-15):
            raise InvalidSignalError("signals live on different grids")
        return ControlSignal.from_arrays(self.u0, self.durations, self.values + other.values)

    def value_at(self, t):
        """Effective control ``u0 + u1(t)`` (right-continuous)."""
        t = np.asarray(t, dtype=float)
        bp = self.breakpoints
        idx = np.clip(np.searchsorted(bp, t, side="right") - 1, 0, max(self.n_segments - 1, 0))
        return self.u0 + self.values[idx]

    # -- functionals ------------------------------------------------------
    def moments(self, omega, t0=0.0):
        """Exact ``int u1(t) exp(-i omega t) dt`` for every frequency in ``omega``."""
        omega = np.atleast_1d(np.asarray(omega, dtype=float))
        edges = t0 + self.breakpoints
        K = exp_segment_integrals(omega, edges)
        return K @ self.values

    def linf(self):
        v = self.values
        return float(np.max(np.abs(v))) if v.size else 0.0

    def l2(self):
        return float(np.sqrt(np.sum(self.durations * self.values**2)))

    def l1(self):
        return float(np.sum(self.durations * np.abs(self.values)))

    def total_variation(self):
        """Jumps of ``u1`` between consecutive segments, including from and to 0 at the ends."""
        tv = 0.0
        prev = 0.0
        for d, v, r in self._blocks:
            inner = float(np.sum(np.abs(np.diff(v))))
            tv += abs(v[0] - prev) + r * inner + (r - 1) * abs(v[0] - v[-1])
            prev = v[-1]
        return tv + abs(prev)

    def bv_norm(self):
        """``||u1||_BV = ||u1||_L1 + TV(u1)``."""
        return self.l1() + self.total_variation()

    def to_dict(self):
        """Segment list, or the compact block form when any block repeats."""
        if any(r > 1 for _, _, r in self._blocks):
            return {
                "u0": self.u0,
                "blocks": [
                    {"durations": [float(x) for x in d], "values": [float(x) for x in v], "repeat": int(r)}
                    for d, v, r in self._blocks
                ],
            }
        return {
            "u0": self.u0,
            "segments": [{"dt": float(d), "value": float(v)} for d, v in zip(self.durations, self.values)],
        }


def exp_segment_integrals(omega, edges):
    """Matrix ``K[a, s] = int_{edges[s]}^{edges[s+1]} exp(-i omega_a t) dt`` in closed form."""
    omega = np.asarray(omega, dtype=float)[:, None]
    t0, t1 = edges[None, :-1], edges[None, 1:]
    dt = t1 - t0
    x = 0.5 * omega * dt
    # exp(-i w tm) * dt * sinc(w dt / 2): stable for w -> 0
    tm = 0.5 * (t0 + t1)
    return np.exp(-1j * omega * tm) * dt * np.sinc(x / np.pi)


@dataclass
class PropagationResult:
    """Outcome of :func:`propagate`.

    ``times`` holds the record instants (segment ends, or repetition ends for
    periodic blocks); ``norm_history`` and ``h3_history`` have one row per
    record instant and one column per initial state.
    """

    final_states: list
    unitary: np.ndarray
    times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    norm_history: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    h3_history: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    @property
    def final_matrix(self):
        return as_coefficient_matrix(self.final_states)

    def max_norm_deviation(self):
        if self.norm_history.size == 0:
            return 0.0
        return float(np.max(np.abs(self.norm_history - self.norm_history[0])))

    def unitarity_defect(self):
        U = self.unitary
        return float(np.max(np.abs(U @ U.conj().T - np.eye(U.shape[0]))))

    def csv_header(self):
        n = self.norm_history.shape[1] if self.norm_history.ndim == 2 else 0
        cols = ["t"]
        for i in range(n):
            cols += [f"norm_{i}", f"h3norm_{i}"]
        return cols

    def to_csv(self, path):
        """Write the time series ``t, norm_0, h3norm_0, norm_1, ...``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.csv_header())
            for i, t in enumerate(self.times):
                row = ["%.17g" % t]
                for n, h in zip(self.norm_history[i], self.h3_history[i]):
                    row += ["%.17g" % n, "%.17g" % h]
                w.writerow(row)


def hamiltonian(B, u):
    return np.diag(eigenvalue(np.arange(1, B.M + 1))) + u * B.matrix


def segment_unitaries(B, u_values, dts, sign=1.0):
    """Stack of ``exp(-i sign dt (diag(lambda) + u B))`` for paired ``(u, dt)``.

    Identical ``(u, dt)`` pairs are diagonalized once.
    """
    u_values = np.asarray(u_values, dtype=float).reshape(-1)
    dts = np.broadcast_to(np.asarray(dts, dtype=float), u_values.shape)
    if not (np.all(np.isfinite(u_values)) and np.all(np.isfinite(dts))):
        raise NumericError("non-finite control value or duration")
    keys = np.stack([u_values, dts], axis=1)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    lam = eigenvalue(np.arange(1, B.M + 1))
    H = np.diag(lam)[None, :, :] + uniq[:, 0, None, None] * B.matrix[None, :, :]
    w, V = np.linalg.eigh(H)
    phase = np.exp(-1j * sign * uniq[:, 1, None] * w)
    U = (V * phase[:, None, :]) @ np.conj(np.swapaxes(V, 1, 2))
    return U[np.asarray(inverse).reshape(-1)]


def step_constant(B, u_value, dt, states):
    """Advance states over one segment with constant control ``u_value``.

    Parameters
    ----------
    B : ControlOperator
    u_value : float
        Full control value (offset included).
    dt : float
        Positive duration.
    states : list of WaveFunction or ndarray (M,) / (M, n)

    Returns
    -------
    Same container type as ``states``.
    """
    if not np.isfinite(dt) or not np.isfinite(u_value):
        raise NumericError("non-finite input to step_constant", u=float(u_value), dt=float(dt))
    if dt <= 0:
        raise InvalidSignalError("segment with non-positive duration", dt=float(dt))
    U = segment_unitaries(B, [u_value], [dt])[0]
    if isinstance(states, np.ndarray):
        if not np.all(np.isfinite(states)):
            raise NumericError("non-finite state coefficients")
        return U @ states
    X = as_coefficient_matrix(states, B.M)
    if not np.all(np.isfinite(X)):
        raise NumericError("non-finite state coefficients")
    Y = U @ X
    return [WaveFunction(Y[:, i], s.truncation if isinstance(s, WaveFunction) else None) for i, s in enumerate(states)]


def _block_unitaries(B, signal, sign):
    for d, v, r in signal.blocks:
        yield d, segment_unitaries(B, signal.u0 + v, d, sign), r


def propagator_matrix(B, signal, reverse=False):
    """``Gamma_T^u`` (or the reversed propagator) without any recording."""
    return propagate(B, signal, None, reverse=reverse, record=False).unitary


def propagate(B, signal, initial=None, reverse=False, record=True):
    """Propagate states (and the full propagator) under a control signal.

    Parameters
    ----------
    B : ControlOperator
    signal : ControlSignal
    initial : list of WaveFunction or ndarray (M, n), optional
        Initial states; if omitted only the propagator is computed.
    reverse : bool
        If True, propagate the reversed dynamics ``i d/dt psi = -(A + u~(t) B) psi``
        with ``u~(t) = u(T - t)``.  Its propagator is the inverse of the forward one.
    record : bool
        Record norm and ``H^3`` histories of the states.

    Returns
    -------
    PropagationResult
    """
    M = B.M
    sig = signal.reversed() if reverse else signal
    sign = -1.0 if reverse else 1.0
    X0 = None
    if initial is not None:
        X0 = as_coefficient_matrix(initial, M)
        if not np.all(np.isfinite(X0)):
            raise NumericError("non-finite initial state")
    G = np.eye(M, dtype=complex)
    w3 = sobolev_weights(M, 3)
    times, norms, h3s = [], [], []
    t = 0.0

    def snap():
        X = G @ X0
        times.append(t)
        norms.append(np.linalg.norm(X, axis=0))
        h3s.append(np.linalg.norm(w3[:, None] * X, axis=0))

    track = record and X0 is not None
    if track:
        snap()
    for d, U, r in _block_unitaries(B, sig, sign):
        if r == 1:
            for i in range(len(d)):
                G = U[i] @ G
                if track:
                    t += d[i]
                    snap()
            continue
        P = np.eye(M, dtype=complex)
        for i in range(len(d)):
            P = U[i] @ P
        period = float(d.sum())
        for _ in range(r):
            G = P @ G
            if track:
                t += period
                snap()
    final = []
    if X0 is not None:
        Y = G @ X0
        if isinstance(initial, np.ndarray):
            final = [Y[:, i] for i in range(Y.shape[1])]
        else:
            final = [WaveFunction(Y[:, i]) for i in range(Y.shape[1])]
    result = PropagationResult(final, G)
    if track:
        result.times = np.array(times)
        result.norm_history = np.array(norms)
        result.h3_history = np.array(h3s)
    return result


def reverse_check(B, signal, psi):
    """``||Gamma~ Gamma psi - psi||`` with ``Gamma~`` the reversed-dynamics propagator."""
    x = as_coefficient_matrix([psi], B.M)[:, 0]
    fwd = propagator_matrix(B, signal)
    bwd = propagator_matrix(B, signal, reverse=True)
    return float(np.linalg.norm(bwd @ (fwd @ x) - x))


def overlap_matrix(result, spec, N, T=None):
    """``alpha_hat[k-1, j-1] = <phi_k^u0(T), Gamma phi_j^u0>`` for ``k <= N``, all ``j``.

    Parameters
    ----------
    result : PropagationResult or ndarray
        Propagation result or propagator matrix in the sine basis.
    spec : PerturbedSpectrum
    N : int
    T : float
        Horizon used for the free-evolution phases ``exp(-i lambda_k^u0 T)``.
    """
    if T is None:
        raise ValidationError("overlap_matrix needs the horizon T", module="propagator")
    G = result.unitary if isinstance(result, PropagationResult) else np.asarray(result)
    if G.shape[0] != spec.M:
        raise ValidationError("truncation mismatch", module="propagator", M=G.shape[0], spec_M=spec.M)
    V = spec.eigenvectors
    W = V[:, :N].conj().T @ G @ V
    return np.conj(spec.frame_phases(T)[:N])[:, None] * W


def transposition_defect(B, signal, spec, N):
    """Max deviation in ``conj(alpha_hat_kj) = e^{-i(lambda_k+lambda_j)T} <phi_j^u0(T), Gamma~ phi_k^u0>``.

    The right-hand side uses the reversed dynamics driven by ``u(T - t)``; the
    phases are those of the forward frame, so the identity holds for every
    control.
    """
    T = signal.total_time
    alpha = overlap_matrix(propagator_matrix(B, signal), spec, N, T)
    Gr = propagator_matrix(B, signal, reverse=True)
    V = spec.eigenvectors
    E = spec.frame_phases(T)
    # <phi_j(T), Gr phi_k> = e^{i lambda_j T} (V* Gr V)_{jk}
    inner = np.conj(E)[:, None] * (V.conj().T @ Gr @ V[:, :N])  # (M, N): rows j, cols k
    lam = spec.eigenvalues
    rhs = np.exp(-1j * (lam[None, :N] + lam[:, None]) * T) * inner
    return float(np.max(np.abs(np.conj(alpha) - rhs.T)))
