"""Command-line scenario runner.

    steer <mode> --config file.json [--out dir] [--seed n] [--format json|csv]

Modes: ``certify``, ``steer-local``, ``steer-global``, ``steer-density``,
``moment-solve``, ``spectrum-sweep``.  One JSON config describes the run;
the report (JSON, or a plot-ready CSV table) is written to ``--out``.
Reports contain no timings, so a fixed seed gives byte-identical output.
``STEER_THREADS`` caps the BLAS thread pool.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .errors import ControlError, ResonanceError, ValidationError

__all__ = ["MODES", "Scenario", "run_scenario", "emit_report", "to_plain", "dumps", "main"]

MODES = ("certify", "steer-local", "steer-global", "steer-density", "moment-solve", "spectrum-sweep")


# ---------------------------------------------------------------------------
# scenario


@dataclass
class Scenario:
    """Validated run description.

    ``operator`` is ``"x2"`` or ``{"mu_samples": [...]}`` (values of ``mu`` on
    a uniform grid of ``[0, 1]``, linearly interpolated).  ``u0`` is a number
    or ``"auto-scan"``.  ``options`` holds the mode-specific fields
    (targets, tolerances, grids, ...).
    """

    mode: str
    M: int
    N: int = 2
    operator: object = "x2"
    u0: object = "auto-scan"
    T: float | None = None
    seed: int = 0
    options: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d, mode=None, seed=None):
        d = dict(d)
        mode = mode or d.pop("mode", None)
        d.pop("mode", None)
        if mode not in MODES:
            raise ValidationError(f"unknown mode {mode!r}", module="cli", modes=list(MODES))
        if "M" not in d:
            raise ValidationError("config needs the truncation M", module="cli")
        known = {"M", "N", "operator", "u0", "T", "seed"}
        opts = {k: v for k, v in d.items() if k not in known}
        sc = cls(
            mode=mode,
            M=int(d["M"]),
            N=int(d.get("N", 2)),
            operator=d.get("operator", "x2"),
            u0=d.get("u0", "auto-scan"),
            T=None if d.get("T") is None else float(d["T"]),
            seed=int(d.get("seed", 0) if seed is None else seed),
            options=opts,
        )
        sc.validate()
        return sc

    def validate(self):
        if self.N < 1:
            raise ValidationError("N must be >= 1", module="cli", N=self.N)
        need = max(4 * self.N, 16)
        if self.M < need:
            raise ValidationError(f"M must be at least max(4N, 16) = {need}", module="cli", M=self.M, N=self.N)
        if not (self.u0 == "auto-scan" or isinstance(self.u0, (int, float))):
            raise ValidationError("u0 must be a number or 'auto-scan'", module="cli", u0=self.u0)
        if self.mode == "moment-solve" and self.T is None:
            raise ValidationError("moment-solve needs T", module="cli")
        if self.mode == "steer-density" and "weights" not in self.options:
            raise ValidationError("steer-density needs weights", module="cli")

    def to_dict(self):
        return {
            "mode": self.mode,
            "M": self.M,
            "N": self.N,
            "operator": self.operator,
            "u0": self.u0,
            "T": self.T,
            "seed": self.seed,
            **self.options,
        }


def _operator(sc):
    from .operators import build_multiplication, build_x_squared

    op = sc.operator
    if op in ("x2", "x^2", "x_squared") or op == {"name": "x2"}:
        return build_x_squared(sc.M)
    if isinstance(op, dict) and "mu_samples" in op:
        y = np.asarray(op["mu_samples"], dtype=float)
        if y.ndim != 1 or y.size < 2:
            raise ValidationError("mu_samples needs at least two values", module="cli")
        x = np.linspace(0.0, 1.0, y.size)
        return build_multiplication(lambda t: np.interp(t, x, y), sc.M, label="sampled")
    raise ValidationError("unknown operator", module="cli", operator=op)


def _offset(sc, B):
    from .perturbation import DEFAULT_U_MAX, admissible_u0

    if sc.u0 == "auto-scan":
        u, _ = admissible_u0(B, sc.N, u_max=float(sc.options.get("u_max", DEFAULT_U_MAX)))
        return u, "auto-scan"
    return float(sc.u0), "given"


def _states(payload, M):
    """``[[re, im], ...]`` per state (or plain reals) -> ``(M, n)`` array."""
    cols = []
    for col in payload:
        a = np.asarray(col, dtype=float)
        v = a[:, 0] + 1j * a[:, 1] if a.ndim == 2 else a.astype(complex)
        if v.size > M:
            raise ValidationError("state longer than the truncation", module="cli", length=v.size, M=M)
        cols.append(np.pad(v, (0, M - v.size)))
    return np.column_stack(cols)


def _random_unitary_block(rng, n):
    Z = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    Q, R = np.linalg.qr(Z)
    Q = Q * (np.diag(R) / np.abs(np.diag(R)))[None, :]
    return Q / np.linalg.det(Q) ** (1.0 / n)


def _signal_table(ctrl):
    t = np.concatenate([[0.0], np.cumsum(ctrl.durations)])[:-1]
    return {
        "columns": ["t_start", "dt", "u"],
        "rows": [[float(a), float(b), float(c) + ctrl.u0] for a, b, c in zip(t, ctrl.durations, ctrl.values)],
    }


# ---------------------------------------------------------------------------
# modes


def _certify(sc, B, rng):
    from .moment_solver import assemble_frequencies
    from .operators import check_assumption_A, check_coupling_decay, check_resonance_condition, resonance_quadruples
    from .perturbation import (
        coupling_persistence,
        decomposition_residual,
        eta_decay_fit,
        gap_certificate,
        norm_equivalence,
        perturbed_spectrum,
    )

    N, M = sc.N, sc.M
    jmax = int(sc.options.get("jmax", M))
    out = {
        "coupling_decay": check_coupling_decay(B, N).to_dict(),
        "assumption_I": check_resonance_condition(B, N, jmax).to_dict(),
        "assumption_A": check_assumption_A(B, N, height=int(sc.options.get("height", 10))).to_dict(),
    }
    quads = [q.astuple() for q in resonance_quadruples(N, jmax)]
    unpert = {"u0": 0.0, "resonance_quadruples": quads}
    try:
        assemble_frequencies(perturbed_spectrum(B, 0.0), N, jmax)
        unpert["collisions"] = []
    except ResonanceError as exc:
        unpert["collisions"] = exc.witness.get("collisions", [])
    out["unperturbed"] = unpert
    u0, how = _offset(sc, B)
    spec = perturbed_spectrum(B, u0)
    res = decomposition_residual(spec, B)
    out["perturbed"] = {
        "u0": u0,
        "u0_source": how,
        "gap": gap_certificate(spec, N, B=B).to_dict(),
        "coupling_persistence": coupling_persistence(spec, B, N).to_dict(),
        "decomposition_residual": res,
        "eta_decay": eta_decay_fit(spec),
        "norm_equivalence": {k: v for k, v in norm_equivalence(spec, rng=rng).items() if k != "ratios"},
        "eigenvalues": spec.eigenvalues[: max(N, 8)],
    }
    flat = []
    for name in ("coupling_decay", "assumption_I", "assumption_A"):
        flat.append([name, bool(out[name]["ok"])])
    flat.append(["gap", bool(out["perturbed"]["gap"]["ok"])])
    flat.append(["coupling_persistence", bool(out["perturbed"]["coupling_persistence"]["ok"])])
    flat.append(["unperturbed_collisions", len(unpert["collisions"])])
    return out, {"columns": ["check", "value"], "rows": flat}, u0


def _spectrum_sweep(sc, B, rng):
    from .perturbation import DEFAULT_U_MAX, eigenbranch_sweep

    if "u_grid" in sc.options:
        grid = np.asarray(sc.options["u_grid"], dtype=float)
    else:
        grid = np.linspace(float(sc.options.get("u_min", 0.0)), float(sc.options.get("u_max", DEFAULT_U_MAX)),
                           int(sc.options.get("n_grid", 21)))
    rows = eigenbranch_sweep(B, grid)
    cols = ["u0", "j", "lambda", "a", "eta_norm"]
    return {"u_grid": grid, "rows": rows}, {"columns": cols, "rows": rows}, None


def _horizon(sc, spec):
    from .moment_solver import assemble_frequencies

    if sc.T is not None:
        return sc.T
    return float(sc.options.get("horizon_factor", 2.0)) * assemble_frequencies(spec, sc.N).base_horizon


def _steer_local(sc, B, rng):
    from .local_control import perturbed_targets, steer_local_newton
    from .perturbation import perturbed_spectrum

    u0, _ = _offset(sc, B)
    spec = perturbed_spectrum(B, u0)
    T = _horizon(sc, spec)
    tg = sc.options.get("targets", "identity")
    if tg == "identity":
        psi = spec.eigenvectors * spec.frame_phases(T)[None, :]
    elif isinstance(tg, dict) and "distance" in tg:
        psi = perturbed_targets(spec, sc.N, T, float(tg["distance"]), rng)
    else:
        psi = _states(tg, sc.M)
    tol = sc.options.get("tolerances", {})
    res = steer_local_newton(spec, B, psi, sc.N, T, tol=float(tol.get("newton", 1e-10)),
                             max_iter=int(tol.get("max_iter", 10)),
                             epsilon=float(tol.get("epsilon", 0.05)),
                             method=sc.options.get("method", "chord"))
    out = res.to_dict()
    out["T"] = T
    return out, _signal_table(res.control), u0


def _steer_global(sc, B, rng):
    from .global_control import steer_global
    from .perturbation import perturbed_spectrum

    u0, _ = _offset(sc, B)
    spec = perturbed_spectrum(B, u0)
    V = spec.eigenvectors
    tg = sc.options.get("targets", {"random_unitary": sc.N + 1})
    if isinstance(tg, dict) and "random_unitary" in tg:
        n1 = int(tg["random_unitary"])
        psi = V[:, :n1] @ _random_unitary_block(rng, n1)[:, : sc.N]
    elif tg == "identity":
        psi = V[:, : sc.N].astype(complex)
    else:
        psi = _states(tg, sc.M)
    tol = sc.options.get("tolerances", {})
    res = steer_global(spec, B, psi, epsilon=float(tol.get("epsilon", 0.05)),
                       n_budget=tuple(sc.options.get("n_budget", (2, 4, 8, 16, 32, 64, 128))),
                       N1=sc.options.get("N1"))
    return res.to_dict(), _signal_table(res.control), u0


def _steer_density(sc, B, rng):
    from .density import evolve, from_ensemble, steer_density
    from .perturbation import perturbed_spectrum

    u0, _ = _offset(sc, B)
    spec = perturbed_spectrum(B, u0)
    w = np.asarray(sc.options["weights"], dtype=float)
    r = w.size
    if "states" in sc.options:
        X = _states(sc.options["states"], sc.M)
    else:
        X = np.eye(sc.M, r, dtype=complex)
    rho1 = from_ensemble(w, X)
    if "target_weights_states" in sc.options:
        rho2 = from_ensemble(w, _states(sc.options["target_weights_states"], sc.M))
    else:
        n = int(sc.options.get("target_modes", r + 1))
        U = np.eye(sc.M, dtype=complex)
        U[:n, :n] = _random_unitary_block(rng, n)
        rho2 = evolve(rho1, U)
    res = steer_density(spec, B, rho1, rho2)
    out = res.to_dict()
    out["rho1"] = rho1.to_dict()
    out["rho2"] = rho2.to_dict()
    return out, _signal_table(res.control), u0


def _moment_solve(sc, B, rng):
    from .moment_solver import MomentSystem, assemble_frequencies, solve_real_moment
    from .perturbation import perturbed_spectrum

    u0 = None
    if "frequencies" in sc.options:
        w = np.asarray(sc.options["frequencies"], dtype=float)
        t = _states([sc.options["targets"]], len(w))[:, 0] if "targets" in sc.options else np.zeros(len(w))
        system = MomentSystem(sc.T, w, t)
    else:
        u0, _ = _offset(sc, B)
        spec = perturbed_spectrum(B, u0)
        skel = assemble_frequencies(spec, sc.N, T=sc.T)
        # a real control has conjugate moments at -omega: one draw per unordered pair
        draws, t = {}, []
        for lab, w in zip(skel.labels, skel.frequencies):
            key = tuple(sorted(lab))
            if key not in draws:
                draws[key] = 1e-3 * complex(rng.standard_normal(), rng.standard_normal() if w != 0 else 0.0)
            t.append(draws[key] if tuple(lab) == key else np.conj(draws[key]))
        system = skel.with_targets(np.array(t))
    sol = solve_real_moment(system, n_segments=int(sc.options.get("n_segments", 2048)))
    out = sol.to_dict()
    out["system"] = system.to_dict()
    out["max_residual"] = sol.max_residual
    return out, _signal_table(sol.control), u0


_RUNNERS = {
    "certify": _certify,
    "spectrum-sweep": _spectrum_sweep,
    "steer-local": _steer_local,
    "steer-global": _steer_global,
    "steer-density": _steer_density,
    "moment-solve": _moment_solve,
}


def run_scenario(scenario):
    """Run a scenario; returns ``{"report": dict, "table": {columns, rows}}``.

    The report embeds the truncation ``M``, the offset ``u0`` actually used
    and the seed.
    """
    sc = scenario if isinstance(scenario, Scenario) else Scenario.from_dict(scenario)
    rng = np.random.default_rng(sc.seed)
    B = _operator(sc)
    results, table, u0 = _RUNNERS[sc.mode](sc, B, rng)
    report = {
        "mode": sc.mode,
        "provenance": {
            "M": sc.M,
            "N": sc.N,
            "u0": u0 if u0 is not None else sc.u0,
            "seed": sc.seed,
            "operator": sc.operator if isinstance(sc.operator, str) else "sampled",
            "version": __version__,
            "scenario": sc.to_dict(),
        },
        "results": results,
    }
    return {"report": report, "table": table}


# ---------------------------------------------------------------------------
# serialization


def to_plain(obj):
    """Recursively convert numpy / complex / tuple values to JSON-ready data.

    Complex numbers become ``[re, im]``; tuples become lists; dict keys
    become strings.
    """
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_plain(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return [float(obj.real), float(obj.imag)]
    if obj is None or isinstance(obj, str):
        return obj
    if hasattr(obj, "to_dict"):
        return to_plain(obj.to_dict())
    return str(obj)


def _fmt_float(x):
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return "%.17g" % x


def _write(obj, out, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            out.write("{}")
            return
        out.write("{\n")
        for i, k in enumerate(sorted(obj)):
            out.write(pad + json.dumps(k) + ": ")
            _write(obj[k], out, indent, level + 1)
            out.write(",\n" if i < len(obj) - 1 else "\n")
        out.write(end + "}")
    elif isinstance(obj, list):
        if not obj:
            out.write("[]")
            return
        if all(not isinstance(v, (dict, list)) for v in obj):
            out.write("[" + ", ".join(_scalar(v) for v in obj) + "]")
            return
        out.write("[\n")
        for i, v in enumerate(obj):
            out.write(pad)
            _write(v, out, indent, level + 1)
            out.write(",\n" if i < len(obj) - 1 else "\n")
        out.write(end + "]")
    else:
        out.write(_scalar(obj))


def _scalar(v):
    if isinstance(v, bool) or v is None:
        return json.dumps(v)
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return _fmt_float(v)
    return json.dumps(v)


def dumps(obj, indent=1):
    """Bit-stable JSON: sorted keys, floats as ``%.17g``, complex as ``[re, im]``."""
    buf = io.StringIO()
    _write(to_plain(obj), buf, indent, 0)
    buf.write("\n")
    return buf.getvalue()


def _csv_cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return _fmt_float(float(v))
    return str(v)


def emit_report(report, format="json", path=None):
    """Serialize a ``run_scenario`` result.

    ``json`` writes the report; ``csv`` writes its table (header row =
    ``table["columns"]``).  Returns the text; also writes it to ``path``
    when given.  I/O errors propagate unchanged.
    """
    if format == "json":
        text = dumps(report["report"] if "report" in report else report)
    elif format == "csv":
        table = report["table"]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(table["columns"])
        for row in table["rows"]:
            w.writerow([_csv_cell(v) for v in row])
        text = buf.getvalue()
    else:
        raise ValidationError("format must be json or csv", module="cli", format=format)
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


# ---------------------------------------------------------------------------
# entry point


def _parser():
    p = argparse.ArgumentParser(prog="steer", description="Bilinear Schroedinger steering scenarios.")
    p.add_argument("mode", choices=MODES)
    p.add_argument("--config", required=True, help="JSON scenario file")
    p.add_argument("--out", default=".", help="output directory (default: current)")
    p.add_argument("--seed", type=int, default=None, help="random seed (default: config seed or 0)")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    return p


def _thread_limit():
    val = os.environ.get("STEER_THREADS")
    if not val:
        return None
    try:
        n = int(val)
    except ValueError:
        raise ValidationError("STEER_THREADS must be a positive integer", module="cli", value=val)
    if n < 1:
        raise ValidationError("STEER_THREADS must be a positive integer", module="cli", value=val)
    return n


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        with open(args.config) as fh:
            config = json.load(fh)
        sc = Scenario.from_dict(config, mode=args.mode, seed=args.seed)
        n_threads = _thread_limit()
        if n_threads is not None:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=n_threads):
                result = run_scenario(sc)
        else:
            result = run_scenario(sc)
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, f"{sc.mode}.{args.format}")
        emit_report(result, args.format, path)
        print(path)
        return 0
    except ControlError as exc:
        sys.stderr.write(dumps(exc.to_dict()))
        return 1
    except (OSError, json.JSONDecodeError) as exc:
        sys.stderr.write(f"{type(exc).__name__}: {exc}\n")
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
