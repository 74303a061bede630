"""Command-line front end.

Every subcommand writes CSV or JSON to ``--out`` (stdout by default).  Exit
codes: 2 for configuration errors, 1 when ``report`` has a failing criterion,
0 otherwise.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import acceptance as acc
from . import fields as F
from . import fracop as fo
from . import group as G
from . import quadrature as qd
from . import sobolev as sb
from .errors import (ConfigError, DomainError, GaugeGroupMismatch, HomfracError,
                     SymmetryViolation, UnsupportedStep)
from .gauge import check_gauge_properties, default_gauge, parse_gauge

CONFIG_ERRORS = (ConfigError, DomainError, GaugeGroupMismatch, UnsupportedStep)


# ---------------------------------------------------------------------------
# parsing helpers


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from exc


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("HOMFRAC_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"HOMFRAC_THREADS must be an integer, got {env!r}") from exc
    return os.cpu_count() or 1


def _cfg(args) -> qd.QuadratureConfig:
    return qd.QuadratureConfig(n_samples=args.samples, seed=args.seed, workers=_threads(args))


def _group(args) -> G.GroupSpec:
    spec = G.parse_group(args.group)
    report = G.validate_spec(spec)
    if not report.ok:
        raise ConfigError("invalid group spec: " + "; ".join(report.diagnostics()))
    return spec


def _gauge(args, spec):
    return default_gauge(spec) if args.gauge is None else parse_gauge(args.gauge, spec)


def _points(args, spec) -> np.ndarray:
    rows = []
    if getattr(args, "points", None):
        try:
            with open(args.points, newline="") as fh:
                for row in csv.reader(fh):
                    vals = [x for x in row if x.strip()]
                    if not vals or not _is_number(vals[0]):
                        continue
                    rows.append([float(x) for x in vals])
        except OSError as exc:
            raise ConfigError(f"cannot read points file: {exc}") from exc
    for p in getattr(args, "point", None) or []:
        rows.append(_floats(p))
    if not rows:
        rows = [[0.0] * spec.n]
    pts = np.asarray(rows, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != spec.n:
        raise ConfigError(f"points must have {spec.n} coordinates")
    return pts


def _is_number(x: str) -> bool:
    try:
        float(x)
    except ValueError:
        return False
    return True


def _emit(args, payload) -> None:
    """JSON for dicts, CSV for lists of flat dicts."""
    if isinstance(payload, list):
        buf = io.StringIO()
        if payload:
            writer = csv.DictWriter(buf, fieldnames=list(payload[0]), lineterminator="\n")
            writer.writeheader()
            writer.writerows(payload)
        text = buf.getvalue()
    else:
        text = json.dumps(acc._jsonable(payload), indent=2) + "\n"
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)


def _est_cols(prefix: str, e: qd.Estimate) -> dict:
    p = f"{prefix}_" if prefix else ""
    return {f"{p}value": e.value, f"{p}std_err": e.std_err, f"{p}tail_bound": e.tail_bound}


def _pt(p) -> str:
    return " ".join(f"{x:.12g}" for x in p)


# ---------------------------------------------------------------------------
# subcommands


def cmd_validate(args):
    spec = G.parse_group(args.group)
    report = G.validate_spec(spec)
    _emit(args, {"group": spec.name, **report.to_dict()})
    if not report.ok:
        for line in report.diagnostics():
            print(line, file=sys.stderr)
        return 2
    return 0


def cmd_gauge_check(args):
    spec = _group(args)
    gauge = _gauge(args, spec)
    _emit(args, check_gauge_properties(gauge, args.samples, args.seed).to_dict())
    return 0


def cmd_constants(args):
    spec = _group(args)
    gauge = _gauge(args, spec)
    cfg = _cfg(args)
    consts = qd.gauge_constants(gauge, cfg)
    out = {"group": spec.name, "gauge": gauge.label, "Q": spec.Q, "m": spec.m,
           "vol_B1": consts.vol, "sigma_Q": consts.sigma, "tau_m": None,
           "cross_checks": {"sigma_Q_exterior": qd.sigma_Q_exterior(gauge, 0.5, cfg)}}
    try:
        tau = qd.tau_m(gauge, cfg)
        out["tau_m"] = tau
        out["cross_checks"]["tau_m_from_moments"] = acc._tau_from_moments(gauge, 0.5, cfg)
    except (SymmetryViolation, DomainError) as exc:
        out["tau_m_unavailable"] = str(exc)
    _emit(args, out)
    return 0


def cmd_fracop(args):
    spec = _group(args)
    gauge = _gauge(args, spec)
    u = F.parse_field(args.field, spec)
    cfg = _cfg(args)
    rows = [{"point": _pt(p), **_est_cols("", fo.eval_Ls(gauge, args.s, u, p, cfg))}
            for p in _points(args, spec)]
    _emit(args, rows)
    return 0


def cmd_limits(args):
    spec = _group(args)
    gauge = _gauge(args, spec)
    u = F.parse_field(args.field, spec)
    rows = fo.limit_probe(gauge, u, _points(args, spec), _floats(args.s_grid), _cfg(args),
                          seminorms=not args.no_seminorm)
    out = []
    for r in rows:
        d = r.to_dict()
        d["point"] = "" if r.point is None else _pt(r.point)
        out.append(d)
    _emit(args, out)
    return 0


def cmd_seminorm(args):
    spec = _group(args)
    gauge = _gauge(args, spec)
    u = F.parse_field(args.field, spec)
    cfg = _cfg(args)
    sq = fo.seminorm_sq(gauge, args.s, u, cfg)
    _emit(args, {"group": spec.name, "gauge": gauge.label, "field": u.name, "s": args.s,
                 "seminorm_sq": sq, "seminorm": fo.sqrt_estimate(sq)})
    return 0


def cmd_dirichlet(args):
    spec = _group(args)
    gauge = _gauge(args, spec)
    u = F.parse_field(args.field, spec)
    v = F.parse_field(args.field2, spec)
    sym = fo.form_symmetry_check(gauge, args.s, u, v, _cfg(args))
    _emit(args, {"group": spec.name, "gauge": gauge.label, "u": u.name, "v": v.name,
                 "s": args.s, **sym.to_dict()})
    return 0


def cmd_decay(args):
    spec = _group(args)
    gauge = _gauge(args, spec)
    u = F.parse_field(args.field, spec)
    R = fo._radius(gauge, u)
    radii = _floats(args.radii) if args.radii else [2 * R, 4 * R, 8 * R]
    rows = fo.decay_profile(gauge, args.s, u, radii, _cfg(args))
    _emit(args, [{"radius": r.radius, **_est_cols("", r.value), "scaled": r.scaled,
                  "scaled_halfwidth": r.scaled_halfwidth, "bound": r.bound,
                  **_est_cols("direct", r.direct), "within_bound": r.within_bound,
                  "matches_direct": r.matches_direct} for r in rows])
    return 0


def cmd_transdiff(args):
    spec = _group(args)
    gauge = _gauge(args, spec)
    u = F.parse_field(args.field, spec)
    rows, semi = fo.translation_sweep(gauge, args.s, u, _floats(args.h), _cfg(args))
    consts = fo.translation_constants(spec.Q, args.s, qd.sigma_Q(gauge, _cfg(args)).value)
    _emit(args, [{"h_norm": r.h_norm, **_est_cols("diff", r.diff), **_est_cols("ratio", r.ratio),
                  "seminorm": semi.value, "constant": consts["corrected"],
                  "constant_as_printed": consts["as_printed"]} for r in rows])
    return 0


def cmd_sobolev_opt(args):
    spec = _group(args)
    gauge = _gauge(args, spec)
    init = (sb.radial_bump(gauge, args.box / 2) if args.field is None
            else F.parse_field(args.field, spec))
    grid = sb.GridField.sample(gauge, init, L=args.box, n=args.grid)
    res = sb.optimize_quotient(gauge, args.s, grid, iters=args.iters, seed=args.seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "trace.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(res.trace[0].to_dict()), lineterminator="\n")
        writer.writeheader()
        writer.writerows(t.to_dict() for t in res.trace)
    res.field.dump(out_dir / "field.hfg")
    _emit(args, {"group": spec.name, "gauge": gauge.label, "s": args.s, "grid": args.grid,
                 "box": args.box, "iterations": res.trace[-1].iteration,
                 "initial_quotient": res.trace[0].quotient, "final_quotient": res.trace[-1].quotient,
                 "euler_lagrange_residual": res.residual, "multiplier": res.multiplier,
                 "stagnated": res.stagnated, "trace": str(out_dir / "trace.csv"),
                 "field": str(out_dir / "field.hfg")})
    return 0


def cmd_hedberg(args):
    Q, s = args.Q, args.s
    out = {"Q": Q, "s": s, "critical_exponent": sb.critical_exponent(Q, s),
           "bracket": sb.hedberg_bracket(Q, s),
           "bracket_corrected": sb.hedberg_bracket(Q, s, corrected=True)}
    if args.sigma is not None:
        out.update(sigma_Q=args.sigma,
                   hedberg_constant=sb.hedberg_constant(Q, s, args.sigma),
                   embedding_constant=sb.embedding_constant(Q, s, args.sigma),
                   embedding_constant_corrected=sb.embedding_constant(Q, s, args.sigma,
                                                                      corrected=True))
    _emit(args, out)
    return 0


def cmd_mollify_check(args):
    spec = _group(args)
    gauge = _gauge(args, spec)
    u = F.parse_field(args.field, spec)
    cfg = _cfg(args)
    rho = sb.unit_mass_bump(gauge, 1.0)
    base = fo.seminorm(gauge, args.s, u, cfg)
    rows = []
    for eps in _floats(args.eps):
        ue = sb.mollify(gauge, rho, eps, u)
        rows.append({"eps": eps, "seminorm": fo.seminorm(gauge, args.s, ue, cfg),
                     "difference": fo.seminorm(gauge, args.s, F.difference(ue, u), cfg)})
    diffs = [r["difference"].value for r in rows]
    _emit(args, {"group": spec.name, "gauge": gauge.label, "field": u.name, "s": args.s,
                 "seminorm": base, "rows": rows,
                 "contraction": all(r["seminorm"].value <= 1.03 * base.value for r in rows),
                 "difference_decreasing": all(b < a for a, b in zip(diffs, diffs[1:]))})
    return 0


def cmd_rellich(args):
    spec = _group(args)
    gauge = _gauge(args, spec)
    u = F.parse_field(args.field, spec)
    deltas = _floats(args.deltas)
    rows = sb.rellich_sweep(gauge, u, gauge.box(args.omega), deltas, _cfg(args),
                            points_per_ball=args.points_per_ball)
    _emit(args, {"group": spec.name, "gauge": gauge.label, "field": u.name,
                 "rows": [r.to_dict() for r in rows],
                 "slope": sb.loglog_slope(deltas, [r.defect.value for r in rows])})
    return 0


def cmd_counterexample(args):
    rows = sb.counterexample_sweep(_floats(args.k), _floats(args.eta))
    _emit(args, [r.to_dict() for r in rows])
    return 0


def cmd_report(args):
    only = {int(x) for x in _floats(args.only)} if args.only else None
    profile = acc.Profile(quick=args.quick, seed=args.seed, workers=_threads(args))
    echo = (lambda r: print(r.line(), file=sys.stderr, flush=True)) if args.verbose else None
    results = acc.run_all(profile, only, echo)
    doc = acc.report(results, profile)
    _emit(args, doc)
    return 0 if doc["passed"] else 1


# ---------------------------------------------------------------------------
# argument parser


def _common(p, samples=200_000, group=True, field=True, s=True):
    if group:
        p.add_argument("--group", default="heisenberg:1",
                       help="heisenberg:N, euclidean:N[:w1,w2,..], parabolic_r2 or a JSON file")
        p.add_argument("--gauge", default=None, help="koranyi, parabolic, euclidean_power, ball_gauge[:r]")
    if field:
        p.add_argument("--field", default="gaussian", help="e.g. gaussian:scale=2, compact_bump:R=1")
    if s:
        p.add_argument("--s", type=float, default=0.5)
    p.add_argument("--samples", type=int, default=samples)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out", default=None, help="output file (default stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="homfrac",
                                     description="Fractional operators on homogeneous groups.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a group spec")
    p.add_argument("--group", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("gauge-check", help="sampled gauge axioms")
    _common(p, samples=100_000, field=False, s=False)
    p.set_defaults(func=cmd_gauge_check)

    p = sub.add_parser("constants", help="|B_1|, sigma_Q, tau_m with cross-checks")
    _common(p, field=False, s=False)
    p.set_defaults(func=cmd_constants)

    p = sub.add_parser("fracop", help="L_s u at points")
    _common(p)
    p.add_argument("--points", default=None, help="CSV file, one point per row")
    p.add_argument("--point", action="append", help="comma-separated point (repeatable)")
    p.set_defaults(func=cmd_fracop)

    p = sub.add_parser("limits", help="s -> 0+ and s -> 1- probes")
    _common(p, samples=50_000, s=False)
    p.add_argument("--s-grid", default="0.02,0.05,0.5,0.95,0.98")
    p.add_argument("--points", default=None)
    p.add_argument("--point", action="append")
    p.add_argument("--no-seminorm", action="store_true")
    p.set_defaults(func=cmd_limits)

    p = sub.add_parser("seminorm", help="[u]_{s,2}")
    _common(p, samples=20_000)
    p.set_defaults(func=cmd_seminorm)

    p = sub.add_parser("dirichlet", help="D_s(u, v) and both integrals v L_s u")
    _common(p, samples=20_000)
    p.add_argument("--field2", default="gaussian:scale=0.7")
    p.set_defaults(func=cmd_dirichlet)

    p = sub.add_parser("decay", help="far-field decay of L_s u")
    _common(p, samples=100_000)
    p.add_argument("--radii", default=None, help="default 2R,4R,8R")
    p.set_defaults(func=cmd_decay)

    p = sub.add_parser("transdiff", help="translation-difference ratios")
    _common(p, samples=20_000)
    p.add_argument("--h", default="1,0.5,0.25,0.125,0.0625,0.03125")
    p.set_defaults(func=cmd_transdiff)

    p = sub.add_parser("sobolev-opt", help="minimize the discrete Sobolev quotient")
    _common(p, field=False)
    p.add_argument("--field", default=None, help="start (default radial bump of radius box/2)")
    p.add_argument("--grid", type=int, default=16)
    p.add_argument("--box", type=float, default=6.0)
    p.add_argument("--iters", type=int, default=200)
    p.add_argument("--out-dir", default="sobolev_opt")
    p.set_defaults(func=cmd_sobolev_opt)

    p = sub.add_parser("hedberg", help="embedding constants")
    p.add_argument("--Q", type=float, required=True)
    p.add_argument("--s", type=float, required=True)
    p.add_argument("--sigma", type=float, default=None, help="sigma_Q, to include C_{Q,s}")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_hedberg)

    p = sub.add_parser("mollify-check", help="mollifier contraction and convergence")
    _common(p, samples=20_000, field=False)
    p.add_argument("--field", default="compact_bump:R=1")
    p.add_argument("--eps", default="0.5,0.25,0.125")
    p.set_defaults(func=cmd_mollify_check)

    p = sub.add_parser("rellich", help="projection defect over ball packings")
    _common(p, samples=100_000, s=False, field=False)
    p.add_argument("--field", default="compact_bump:R=1")
    p.add_argument("--deltas", default="0.4,0.2,0.1")
    p.add_argument("--omega", type=float, default=1.0, help="region is the box of B_omega")
    p.add_argument("--points-per-ball", type=int, default=640)
    p.set_defaults(func=cmd_rellich)

    p = sub.add_parser("counterexample", help="translation ratios on the parabolic plane")
    p.add_argument("--k", default="1,4,16,64,256")
    p.add_argument("--eta", default="0.1,0.01,0.001")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_counterexample)

    p = sub.add_parser("report", help="run the acceptance suite")
    p.add_argument("--quick", action="store_true", help="1/10 budgets, tolerances x2")
    p.add_argument("--only", default=None, help="comma-separated criterion ids")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("-v", "--verbose", action="store_true", help="progress lines on stderr")
    p.set_defaults(func=cmd_report)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except CONFIG_ERRORS as exc:
        print(f"homfrac: config error: {exc}", file=sys.stderr)
        return 2
    except HomfracError as exc:
        print(f"homfrac: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
