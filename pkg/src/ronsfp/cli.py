"""``rons-fp`` command line: run configurations, compare moment tables, validate configs.

Exit codes: 0 success, 1 solver error, 2 configuration or input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import benchmarks as B
from . import outputs as O
from .assembler import RegularizationError
from .config import (ConfigError, RunConfig, build_drift, build_initial, build_space,
                     build_time_grid, load_config, problem_dim, schema)
from .integrator import ConservationError, StiffnessError, Trajectory, integrate
from .mixture import MixtureState, ProjectionError, WidthCollapseError
from .operator import UnsupportedModelError
from .oracle import (Ensemble, EnsembleSpec, empirical_moments, mixture_moments,
                     simulate_sde)

log = logging.getLogger("ronsfp")

EXIT_OK, EXIT_SOLVER, EXIT_INPUT = 0, 1, 2
SOLVER_ERRORS = (StiffnessError, ConservationError, WidthCollapseError, RegularizationError,
                 ProjectionError, UnsupportedModelError)


@dataclass
class RunResult:
    config: RunConfig
    trajectory: Trajectory
    report: dict
    timing: dict
    ensemble: Optional[Ensemble] = None
    files: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# error reports per problem


def _error_report(cfg: RunConfig, traj: Trajectory) -> dict:
    p = cfg.problem
    final = traj.final
    if p.kind == "ou":
        return {"parameter_error_max": B.ou_parameter_error(traj, p.gamma, p.sigma)}
    if p.kind == "bistable":
        ref = B.bistable_equilibrium(p.sigma)
        return {"equilibrium_l2_error": B.l2_relative_error(final, ref)}
    if p.kind == "duffing":
        ref = B.duffing_equilibrium(p.a1, p.a2, p.a3, p.sigma)
        return {"equilibrium_l2_error": B.l2_relative_error(final, ref)}
    if p.kind == "harmonic-trap":
        f = p.forcing
        forcing = B.Sinusoidal(f.amplitude, f.omega, f.offset, f.phase)
        e = B.trap_moment_errors(traj, p.gamma, p.nu, forcing, p.initial_variance,
                                 p.initial_mean)
        return {"mean_error_max": e["mean_max"], "cov_error_max": e["cov_max"],
                "mean_error_final": e["mean"][-1] if e["mean"] else 0.0,
                "cov_error_final": e["cov"][-1] if e["cov"] else 0.0,
                "_reference": e}
    return {}


def _state_dict(theta: MixtureState) -> dict:
    return {"amps": theta.amps.tolist(), "widths": theta.widths.tolist(),
            "centers": theta.centers.tolist()}


# ---------------------------------------------------------------------------
# run


def execute_run(cfg: RunConfig, out_dir=None, threads: int = 1) -> RunResult:
    """Integrate ``cfg`` (and its Monte Carlo ensemble, if any) and write outputs.

    With ``out_dir=None`` nothing is written. Everything except ``timing.json``
    is a deterministic function of the configuration and seed.
    """
    rng = np.random.default_rng(cfg.seed)
    drift = build_drift(cfg)
    theta0 = build_initial(cfg)
    space = build_space(cfg, theta0, rng)
    grid = build_time_grid(cfg)
    eq = cfg.equilibrium
    traj = integrate(drift, theta0, space, cfg.alpha, grid,
                     equilibrium_window=eq.window if eq else None,
                     equilibrium_threshold=eq.threshold if eq else 1e-6)

    errors = _error_report(cfg, traj)
    reference = errors.pop("_reference", None)
    report = {
        "name": cfg.name,
        "problem": cfg.problem.kind,
        "dim": traj.dim,
        "terms": theta0.terms,
        "hilbert_mode": space.mode.value,
        "alpha": cfg.alpha,
        "seed": cfg.seed,
        "t_start": traj.times[0],
        "t_final": traj.times[-1],
        "steps": traj.n_steps,
        "rejected_steps": traj.n_rejected,
        "rhs_evaluations": traj.n_rhs,
        "renormalizations": traj.renormalizations,
        "clamped_points": traj.clamped_points,
        "conservation_max": traj.max_conservation_error(),
        "equilibrium_time": traj.equilibrium_time,
        "errors": errors,
        "final_state": _state_dict(traj.final),
    }
    timing = {"rons": {"assembly_seconds": traj.assembly_seconds,
                       "solve_seconds": traj.solve_seconds,
                       "wall_seconds": traj.wall_seconds}}

    ens = None
    if cfg.ensemble is not None:
        spec = EnsembleSpec(cfg.ensemble.particles, cfg.ensemble.h_sde, seed=cfg.seed,
                            scheme=cfg.ensemble.scheme, initial=theta0)
        ens = simulate_sde(drift, spec, traj.times[-1], snapshot_times=traj.times,
                           t0=traj.times[0], threads=threads)
        report["ensemble"] = {"particles": spec.particles, "h_sde": spec.h_sde,
                              "scheme": spec.scheme, "escaped": ens.escaped}
        timing["monte_carlo"] = {"wall_seconds": ens.wall_seconds}
        timing["speedup"] = ens.wall_seconds / max(traj.wall_seconds, 1e-12)

    result = RunResult(cfg, traj, report, timing, ens)
    if out_dir is not None:
        _write_outputs(result, Path(out_dir), reference)
    return result


def _write_outputs(res: RunResult, out: Path, reference) -> None:
    cfg, traj = res.config, res.trajectory
    d = traj.dim
    theta0 = traj.state(0)
    files = []

    def put(name):
        files.append(name)
        return out / name

    O.write_csv(put("trajectory.csv"), ["t", "total_probability"] + O.parameter_header(theta0),
                ([t, p] + list(th) for t, th, p in zip(traj.times, traj.thetas, traj.probability)))
    O.write_csv(put("conservation.csv"), ["t", "total_probability", "deviation"],
                ([t, p, p - 1.0] for t, p in zip(traj.times, traj.probability)))
    O.write_csv(put("moments.csv"), O.moment_header(d),
                (O.moment_row(t, mixture_moments(traj.state(i)))
                 for i, t in enumerate(traj.times)))
    if reference is not None:
        rows = []
        for t, m, c in zip(traj.times, reference["ref_means"], reference["ref_covs"]):
            rows.append([t] + list(m) + [c[i, j] + m[i] * m[j] for i in range(d)
                                         for j in range(i, d)])
        O.write_csv(put("reference_moments.csv"), O.moment_header(d), rows)
    if res.ensemble is not None:
        O.write_csv(put("mc_moments.csv"), O.moment_header(d, with_se=True),
                    (O.moment_row(t, empirical_moments(X), with_se=True)
                     for t, X in zip(res.ensemble.times, res.ensemble.snapshots)))

    sl = cfg.slices
    lo = np.broadcast_to(np.asarray(sl.lo, dtype=float), (d,))
    hi = np.broadcast_to(np.asarray(sl.hi, dtype=float), (d,))
    rows, masses = [], []
    for i in range(0, len(traj.times), sl.every):
        th, t = traj.state(i), traj.times[i]
        for axes in sl.axes:
            grids = O.slice_grid(lo[axes], hi[axes], sl.points)
            pts, vals, trap = O.slice_values(th, axes, grids)
            label = "-".join(str(a) for a in axes)
            for x, v in zip(pts, vals):
                rows.append([t, label, x[0], x[1] if len(axes) == 2 else "", v])
            masses.append({"t": t, "axes": list(axes),
                           "marginal_mass": O.box_mass(th, axes, lo[axes], hi[axes]),
                           "trapezoid_mass": trap})
    O.write_csv(put("slices.csv"), ["t", "axes", "x", "y", "density"], rows)
    res.report["slices"] = masses

    res.report["files"] = sorted(files + ["report.json", "timing.json"])
    O.write_json(put("report.json"), res.report)
    O.write_json(put("timing.json"), res.timing)
    res.files = files


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.model_copy(update={"seed": args.seed})
    out = Path(args.out or cfg.output_dir or Path("runs") / cfg.name)
    res = execute_run(cfg, out, threads=args.threads)
    summary = {"output_dir": str(out), "conservation_max": res.report["conservation_max"],
               **res.report["errors"]}
    if "speedup" in res.timing:
        summary["speedup"] = res.timing["speedup"]
    print(json.dumps(summary, indent=2, default=O._jsonable))
    return EXIT_OK


# ---------------------------------------------------------------------------
# compare


def _moment_table(path: Path) -> dict:
    if path.is_dir():
        path = path / "moments.csv"
    if not path.is_file():
        raise FileNotFoundError(f"no moment table at {path}")
    return O.read_moments(path)


def compare_moments(a: dict, b: dict, time_tol: float = 1e-9) -> dict:
    """Per-checkpoint differences between two moment tables on the same time grid.

    ``z`` scores divide by the combined standard errors where either table has
    them; relative errors take ``b`` as the reference.
    """
    ta, tb = a["t"], b["t"]
    if ta.shape != tb.shape or np.any(np.abs(ta - tb) > time_tol * np.maximum(1, np.abs(tb))):
        raise ValueError(f"time grids differ: {ta.tolist()} vs {tb.tolist()}")
    if a["mean"].shape[1] != b["mean"].shape[1]:
        raise ValueError("moment tables have different dimensions")
    rows = []
    for k, t in enumerate(ta):
        dm = a["mean"][k] - b["mean"][k]
        ds = a["second"][k] - b["second"][k]
        se_m = np.hypot(a["se_mean"][k], b["se_mean"][k])
        se_s = np.hypot(a["se_second"][k], b["se_second"][k])
        cov_a = a["second"][k] - np.outer(a["mean"][k], a["mean"][k])
        cov_b = b["second"][k] - np.outer(b["mean"][k], b["mean"][k])
        nm, nc = np.linalg.norm(b["mean"][k]), np.linalg.norm(cov_b)
        row = {"t": float(t),
               "max_abs_mean_diff": float(np.max(np.abs(dm))),
               "max_abs_second_diff": float(np.max(np.abs(ds))),
               "mean_rel_error": float(np.linalg.norm(dm) / nm) if nm > 0 else None,
               "cov_rel_error": float(np.linalg.norm(cov_a - cov_b) / nc) if nc > 0 else None}
        if np.any(se_m > 0) or np.any(se_s > 0):
            with np.errstate(divide="ignore", invalid="ignore"):
                z = np.concatenate([np.abs(dm) / se_m, (np.abs(ds) / se_s).ravel()])
            z = z[np.isfinite(z)]
            row["max_z"] = float(z.max()) if z.size else 0.0
        rows.append(row)
    zs = [r["max_z"] for r in rows if "max_z" in r]
    return {"checkpoints": rows,
            "max_z": max(zs) if zs else None,
            "within_3se": all(z <= 3 for z in zs) if zs else None}


def _cmd_compare(args) -> int:
    a, b = _moment_table(Path(args.a)), _moment_table(Path(args.b))
    report = compare_moments(a, b)
    text = json.dumps(report, indent=2)
    if args.out:
        O.atomic_write(args.out, text + "\n")
    print(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# validate / schema


def _cmd_validate(args) -> int:
    cfg = load_config(args.config)
    print(f"{args.config}: ok ({cfg.problem.kind}, d={problem_dim(cfg.problem)}, "
          f"r={cfg.ansatz.terms}, {cfg.space.mode.value})")
    return EXIT_OK


def _cmd_schema(args) -> int:
    print(json.dumps(schema(), indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rons-fp", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="integrate a configuration and write outputs")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (default: config output_dir or runs/<name>)")
    r.add_argument("--seed", type=int, help="override the configured seed")
    r.add_argument("--threads", type=int, default=1, help="Monte Carlo worker threads")
    r.set_defaults(func=_cmd_run)

    c = sub.add_parser("compare", help="compare two moment tables (files or run directories)")
    c.add_argument("a")
    c.add_argument("b")
    c.add_argument("--out", help="also write the JSON report here")
    c.set_defaults(func=_cmd_compare)

    v = sub.add_parser("validate", help="check a configuration without running it")
    v.add_argument("config")
    v.set_defaults(func=_cmd_validate)

    s = sub.add_parser("schema", help="print the configuration JSON schema")
    s.set_defaults(func=_cmd_schema)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (FileNotFoundError, ValueError) as exc:
        if isinstance(exc, SOLVER_ERRORS):
            print(f"solver error: {type(exc).__name__}: {exc}", file=sys.stderr)
            return EXIT_SOLVER
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (RuntimeError, UnsupportedModelError) as exc:
        print(f"solver error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
