"""Command line entry point: ``stab {run,example,simulate,verify,synth}``.

Exit status: 0 when every requested check passes, 1 when any check fails or
is inconclusive, 2 for configuration errors.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Callable

import numpy as np

from .config import (
    BUILTIN_NAMES,
    ConfigError,
    RunConfig,
    apply_overrides,
    builtin_document,
    load_document,
    validate,
)
from .flow import Trajectory, integrate
from .symexpr import DomainFault
from .synth import NotInMrk, PerturbedField, drift_field, perturbed_field, synthesize
from .verify import (
    CheckRecord,
    InsufficientSamples,
    Status,
    VerificationReport,
    convergence_check,
    decay_law_check,
    invariance_check,
    isolated_point_check,
    lie_identity_check,
)

log = logging.getLogger("stab")

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def trajectory_csv(trajectory: Trajectory, n: int | None = None, p: int | None = None) -> str:
    if trajectory.samples:
        n = trajectory.samples[0].state.size
        p = trajectory.samples[0].residuals.size
    if n is None or p is None:
        raise ValueError("n and p are required for an empty trajectory")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", *(f"x{i + 1}" for i in range(n)), "F", *(f"res{i + 1}" for i in range(p))])
    for s in trajectory.samples:
        w.writerow([_fmt(s.t), *map(_fmt, s.state), _fmt(s.F), *map(_fmt, s.residuals)])
    return buf.getvalue()


def emit_trajectory_csv(trajectory: Trajectory, path, n: int | None = None, p: int | None = None) -> None:
    with open(path, "w", encoding="ascii", newline="") as fh:
        fh.write(trajectory_csv(trajectory, n, p))


def synth_table(cfg: RunConfig, grid=None) -> str:
    """Control values on a grid: ``x1..xn, in_mrk, gram_det, u1..un``; blanks off the max-rank set."""
    spec = cfg.spec
    grid = grid or cfg.synth_grid or [[-2.0, 2.0, 21]] * spec.n
    axes = [np.linspace(lo, hi, int(num)) for lo, hi, num in grid]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([*(f"x{i + 1}" for i in range(spec.n)), "in_mrk", "gram_det",
                *(f"u{i + 1}" for i in range(spec.n))])
    for pt in np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, spec.n):
        try:
            s = synthesize(spec, pt, cfg.control_path)
        except DomainFault:
            w.writerow([*map(_fmt, pt), 0, "", *[""] * spec.n])
            continue
        u = [_fmt(v) for v in s.control] if s.in_mrk else [""] * spec.n
        w.writerow([*map(_fmt, pt), int(s.in_mrk), _fmt(s.gram_det), *u])
    return buf.getvalue()


def _uniform(rng: np.random.Generator, box, count: int) -> np.ndarray:
    lo = np.array([b[0] for b in box], dtype=float)
    hi = np.array([b[1] for b in box], dtype=float)
    return rng.uniform(lo, hi, (count, lo.size))


def execute(cfg: RunConfig, field_hook: Callable[[PerturbedField], Callable] | None = None,
            write: bool = True) -> tuple[int, VerificationReport, dict]:
    """Run simulations and checks for ``cfg``.

    ``field_hook`` wraps the controlled field used for simulation; it exists
    so tests can inject faults.  Returns ``(exit_code, report, artifacts)``
    where ``artifacts`` maps file names to their text content.
    """
    spec = cfg.spec
    fld = perturbed_field(spec, cfg.control_path)
    if field_hook is not None:
        fld = field_hook(fld)
    report = VerificationReport()
    artifacts: dict[str, str] = {}
    rng = np.random.default_rng(cfg.seed)
    errors = []

    trajectories: list[Trajectory | None] = []
    for i, x0 in enumerate(cfg.initial_states):
        try:
            traj = integrate(fld, x0, cfg.integrator)
        except (NotInMrk, DomainFault) as exc:
            errors.append({"stage": "simulate", "index": i, "error": str(exc)})
            trajectories.append(None)
            continue
        trajectories.append(traj)
        if "csv" in cfg.formats:
            artifacts[f"trajectory_{i:03d}.csv"] = trajectory_csv(traj)

    if cfg.synth_grid is not None and "csv" in cfg.formats:
        artifacts["synth.csv"] = synth_table(cfg)

    checks = set(cfg.checks)
    if "decay_law" in checks:
        for i, traj in enumerate(trajectories):
            if traj is None:
                report.add(CheckRecord("decay_law", Status.FAIL, None, -2 * spec.lam, None,
                                       reason="simulation failed", index=i))
                continue
            try:
                rec = decay_law_check(spec, traj, f_floor=cfg.integrator.f_floor)
            except InsufficientSamples as exc:
                rec = CheckRecord("decay_law", Status.INCONCLUSIVE, None, -2 * spec.lam, None, reason=str(exc))
            rec.index = i
            rec.details["termination"] = str(traj.termination)
            report.add(rec)

    box = cfg.sampling_box()
    seeds = _uniform(rng, box, cfg.surface_seeds)
    if "invariance_X" in checks:
        report.add(invariance_check(drift_field(spec), spec, seeds, name="invariance_X"))
    if "invariance_perturbed" in checks:
        report.add(invariance_check(perturbed_field(spec, cfg.control_path), spec, seeds,
                                    name="invariance_perturbed"))
    lie_pts = _uniform(rng, box, cfg.lie_points)
    if "lie_identity" in checks:
        report.add(lie_identity_check(spec, lie_pts, cfg.control_path))
    if "convergence" in checks:
        t_end = cfg.convergence_t_end or max(cfg.integrator.t_end, 40.0 / spec.lam)
        opts = replace(cfg.integrator, t_end=t_end, max_step=None)
        try:
            report.add(convergence_check(spec, cfg.initial_states, opts, cfg.control_path))
        except (NotInMrk, DomainFault) as exc:
            report.add(CheckRecord("convergence", Status.FAIL, None, 0.0, None, reason=str(exc)))
    if "isolated_point_stability" in checks:
        for j, item in enumerate(cfg.isolated_points):
            try:
                rec = isolated_point_check(spec, item.point, item.radius, path=cfg.control_path,
                                           seed=cfg.seed + j)
            except (ValueError, DomainFault) as exc:
                rec = CheckRecord("isolated_point_stability", Status.FAIL, None, 0.0, None, reason=str(exc))
            rec.index = j
            rec.details["point"] = item.point
            report.add(rec)

    doc = report.to_dict()
    doc["name"] = cfg.name
    doc["errors"] = errors
    doc["failures"] = [{"name": r.name, "index": r.index, "status": r.status.value, "reason": r.reason}
                       for r in report.failures()]
    if "json" in cfg.formats:
        artifacts["report.json"] = json.dumps(doc, indent=2, allow_nan=False) + "\n"

    if write:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for fname, text in artifacts.items():
            with open(out / fname, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)

    failed = bool(errors) or (bool(report.records) and not report.passed)
    return (EXIT_FAILED if failed else EXIT_OK), report, artifacts


def _source_document(source: str) -> dict:
    if source in BUILTIN_NAMES:
        return builtin_document(source)
    return load_document(source)


def _overrides(args) -> dict:
    return dict(lam=args.lam, control_path=args.control_path, seed=args.seed,
                t_end=args.t_end, out=args.out)


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--lambda", dest="lam", type=float, help="override the gain")
    p.add_argument("--control-path", choices=["hodge", "gram"], help="control evaluation path")
    p.add_argument("--seed", type=int, help="seed for random sampling")
    p.add_argument("--t-end", dest="t_end", type=float, help="integration horizon")
    p.add_argument("--out", help="output directory")


def _parse_point(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad point {text!r}; expected comma-separated numbers") from None


def _parse_range(text: str) -> list[float]:
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"bad range {text!r}; expected lo:hi:count")
    return [float(parts[0]), float(parts[1]), int(parts[2])]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stab", description="Stabilize a level set of a vector field and verify it.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a JSON configuration")
    p.add_argument("config")
    _add_common(p)

    p = sub.add_parser("example", help="run a built-in example")
    p.add_argument("name", choices=BUILTIN_NAMES)
    p.add_argument("--print-config", action="store_true", help="print the configuration and exit")
    _add_common(p)

    p = sub.add_parser("simulate", help="integrate the controlled system and write CSV trajectories")
    p.add_argument("source", help="config path or built-in example name")
    p.add_argument("--x0", type=_parse_point, action="append", help="initial state, e.g. 1,0 (repeatable)")
    _add_common(p)

    p = sub.add_parser("verify", help="run the checks and write report.json")
    p.add_argument("source", help="config path or built-in example name")
    p.add_argument("--checks", help="comma-separated subset of checks")
    _add_common(p)

    p = sub.add_parser("synth", help="print control values on a grid as CSV")
    p.add_argument("source", help="config path or built-in example name")
    p.add_argument("--grid", type=_parse_range, action="append", help="lo:hi:count per variable")
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--control-path", choices=["hodge", "gram"])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "synth":
            doc = apply_overrides(_source_document(args.source), lam=args.lam, control_path=args.control_path)
            cfg = validate(doc)
            sys.stdout.write(synth_table(cfg, args.grid))
            return EXIT_OK

        source = args.config if args.command == "run" else getattr(args, "name", None) or args.source
        doc = apply_overrides(_source_document(source), **_overrides(args))
        if args.command == "example" and args.print_config:
            sys.stdout.write(json.dumps(doc, indent=2) + "\n")
            return EXIT_OK
        if args.command == "simulate":
            doc["checks"] = []
            if args.x0:
                doc["initial_states"] = args.x0
        elif args.command == "verify" and args.checks:
            doc["checks"] = [c.strip() for c in args.checks.split(",") if c.strip()]
        cfg = validate(doc)
    except (ConfigError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    code, report, artifacts = execute(cfg)
    for r in report.ordered():
        log.info("%-26s #%d %-12s measured=%s", r.name, r.index, r.status.value, r.measured)
    print(json.dumps({"passed": code == EXIT_OK, "out": cfg.out_dir,
                      "failures": [{"name": r.name, "index": r.index, "status": r.status.value,
                                    "reason": r.reason} for r in report.failures()]}))
    return code


if __name__ == "__main__":
    sys.exit(main())
