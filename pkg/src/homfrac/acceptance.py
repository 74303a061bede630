"""The acceptance suite: one function per criterion, each returning a
CriterionResult with its values, error bars, seed and wall-clock time.

A ``Profile`` carries the sample-budget factor and the tolerance factor; the
quick profile uses 1/10 of every budget and doubles every tolerance.
"""

from __future__ import annotations

import math
import time
import traceback
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate, stats

from . import fields as F
from . import fracop as fo
from . import group as G
from . import quadrature as qd
from . import sobolev as sb
from .gauge import KINDS, check_gauge_properties, default_gauge, make_gauge
from .quadrature import Estimate, QuadratureConfig


@dataclass(frozen=True)
class Profile:
    quick: bool = False
    seed: int = 0
    workers: int = 1

    @property
    def budget(self) -> float:
        return 0.1 if self.quick else 1.0

    @property
    def tol(self) -> float:
        return 2.0 if self.quick else 1.0

    @property
    def k(self) -> float:
        """Multiple of the standard error used for 'within 2 sigma'."""
        return 2.0 * self.tol

    def family(self, n: int) -> float:
        """k for each of n comparisons so the criterion as a whole keeps the
        coverage of one k-sigma test."""
        return family_k(self.k, n)

    def cfg(self, n: int, **kw) -> QuadratureConfig:
        return QuadratureConfig(n_samples=max(100, int(n * self.budget)), seed=self.seed,
                                workers=self.workers, **kw)

    def count(self, n: int, floor: int = 1) -> int:
        return max(floor, int(n * self.budget))


@dataclass
class CriterionResult:
    id: int
    name: str
    passed: bool
    values: dict
    seed: int
    seconds: float
    budget_seconds: float
    error: str | None = None

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f"  [{self.error}]" if self.error else ""
        return f"{status} {self.id:2d} {self.name:<28s} {self.seconds:7.1f}s{extra}"

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "passed": self.passed,
            "values": self.values,
            "seed": self.seed,
            "wall_clock_s": self.seconds,
            "budget_s": self.budget_seconds,
            "error": self.error,
        }


def _builtin_groups(with_line: bool = False) -> list[G.GroupSpec]:
    out = [G.euclidean(2, (1, 1)), G.parabolic_r2(), G.heisenberg(1), G.heisenberg(2)]
    return ([G.euclidean(1, (1,))] + out) if with_line else out


def _gauges(spec: G.GroupSpec):
    for kind in KINDS:
        try:
            yield make_gauge(kind, spec)
        except Exception:
            continue


def _ok(passed: bool, **values) -> tuple[bool, dict]:
    return bool(passed), values


# ---------------------------------------------------------------------------
# 1-4: algebra, gauges, polar formula, constants


def c01_group_algebra(p: Profile):
    reports = [G.check_algebra(spec, 1000, p.seed) for spec in _builtin_groups()]
    worst = max(r.max_err for r in reports)
    return _ok(worst <= 1e-10 * p.tol, max_err=worst, groups=[r.to_dict() for r in reports])


def c02_gauge_axioms(p: Profile):
    rows = []
    for spec in _builtin_groups(with_line=True):
        for gauge in _gauges(spec):
            rows.append(check_gauge_properties(gauge, 100_000, p.seed).to_dict())
    bad = [r for r in rows if not r["ok"]]
    return _ok(not bad, n_pairs=len(rows), samples_per_pair=100_000, reports=rows)


def c03_polar_identity(p: Profile):
    cfg = p.cfg(200_000)
    rows = []
    passed = True
    k = p.family(4 * len(_builtin_groups()) + 1)
    for spec in _builtin_groups():
        gauge = default_gauge(spec)
        Q = spec.Q
        sigma = qd.sigma_Q(gauge, cfg)
        for gamma in (0.0, Q / 2, Q, Q + 1):
            est = qd.annulus_power_integral(gauge, gamma, 0.5, 2.0, cfg)
            unit = qd.polar_closed_form(Q, 1.0, gamma, 0.5, 2.0)
            target = sigma * unit
            ok = est.agrees(target, k)
            passed &= ok
            rows.append({"group": spec.name, "gauge": gauge.label, "gamma": gamma,
                         "estimate": est.to_dict(), "closed_form": target.to_dict(), "ok": ok})
    gauge = default_gauge(G.euclidean(2, (1, 1)))
    exact = qd.annulus_power_integral(gauge, 3.0, 0.5, 1.0, cfg)
    exact_ok = exact.contains(2 * math.pi, k)
    return _ok(passed and exact_ok, k_sigma=k, rows=rows,
               exact={"estimate": exact.to_dict(), "target": 2 * math.pi, "ok": exact_ok})


def family_k(k: float, n: int) -> float:
    """Per-entry multiple of sigma giving a family of n two-sided tests the same
    coverage as a single k-sigma test (Sidak)."""
    if n <= 1:
        return k
    alpha = 2 * stats.norm.sf(k)
    return float(stats.norm.isf((1 - (1 - alpha) ** (1 / n)) / 2))


def _tau_from_moments(gauge, s, cfg) -> Estimate:
    m = gauge.spec.m
    total = sum((qd.moment_integral(gauge, i, i, s, cfg) for i in range(m)), Estimate(0.0))
    return total * (2.0 - 2.0 * s)


def c04_constants(p: Profile):
    cfg = p.cfg(500_000)
    rows = []
    passed = True
    groups = _builtin_groups(with_line=True)
    k = p.family(sum(2 + 3 * spec.m * (spec.m - 1) // 2 for spec in groups))
    for spec in groups:
        gauge = default_gauge(spec)
        m = spec.m
        sigma = qd.sigma_Q(gauge, cfg)
        sigma_ext = qd.sigma_Q_exterior(gauge, 0.5, cfg)
        tau = qd.tau_m(gauge, cfg)
        tau_mom = _tau_from_moments(gauge, 0.5, cfg)
        dual_ok = sigma.agrees(sigma_ext, k) and tau.agrees(tau_mom, k)
        moments = []
        mom_ok = True
        for s in (0.25, 0.5, 0.75):
            diag_target = tau.value / (2 * m * (1 - s))
            for i in range(m):
                for j in range(i, m):
                    e = qd.moment_integral(gauge, i, j, s, cfg)
                    row = {"s": s, "i": i + 1, "j": j + 1, "value": e.to_dict()}
                    if i == j:
                        ok = abs(e.value - diag_target) <= 0.02 * p.tol * diag_target
                        row["target"] = diag_target
                    else:
                        z = abs(e.value) - e.tail_bound
                        ok = z <= k * e.std_err
                        row["target"] = 0.0
                    mom_ok &= ok
                    moments.append({**row, "ok": ok})
        row = {"group": spec.name, "gauge": gauge.label, "sigma_Q": sigma.to_dict(),
               "sigma_Q_exterior": sigma_ext.to_dict(), "tau_m": tau.to_dict(),
               "tau_m_from_moments": tau_mom.to_dict(), "dual_ok": dual_ok,
               "moments_ok": mom_ok, "moments": moments}
        if spec.name.startswith("euclidean(2"):
            exact_ok = (abs(sigma.value / (2 * math.pi) - 1) <= 0.01 * p.tol
                        and abs(tau.value / (2 * math.pi) - 1) <= 0.01 * p.tol)
            row["exact_2pi_ok"] = exact_ok
            passed &= exact_ok
        passed &= dual_ok and mom_ok
        rows.append(row)
    return _ok(passed, k_sigma=k, rows=rows)


# ---------------------------------------------------------------------------
# 5-10: the operator


def _probe_points(spec, n, seed, scale=0.5):
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x9B0]))
    return G.random_points(spec, rng, n, scale)


def c05_operator_equivalence(p: Profile):
    spec = G.heisenberg(1)
    gauge = default_gauge(spec)
    u = F.gaussian(spec)
    cfg = p.cfg(100_000)
    s = 0.25
    eps = [2.0**-k for k in range(9)]
    rows = []
    passed = True
    for g in _probe_points(spec, 5, p.seed):
        pv = fo.eval_Ls_pv(gauge, s, u, g, eps, cfg)[-1]
        sd = fo.eval_Ls(gauge, s, u, g, cfg)
        ok = pv.agrees(sd, p.family(5))
        passed &= ok
        rows.append({"point": g.tolist(), "pv": pv.to_dict(), "second_difference": sd.to_dict(),
                     "ok": ok})
    return _ok(passed, s=s, eps=eps[-1], k_sigma=p.family(5), rows=rows)


def symbol_constant(s: float) -> float:
    """a_s = int_R (1 - cos z) |z|^(-1-2s) dz, so L_s has symbol 2 a_s |xi|^(2s) in 1D."""
    near, _ = integrate.quad(lambda z: (1 - math.cos(z)) * z ** (-1 - 2 * s), 0, 1, limit=200)
    far_cos, _ = integrate.quad(lambda z: z ** (-1 - 2 * s), 1, math.inf, weight="cos", wvar=1.0)
    return 2.0 * (near + 1.0 / (2 * s) - far_cos)


def fourier_oracle_1d(s: float, x: float) -> float:
    """L_s exp(-x^2) on the line through its Fourier multiplier."""
    def f(xi):
        return xi ** (2 * s) * math.sqrt(math.pi) * math.exp(-xi * xi / 4)

    if x == 0:
        val, _ = integrate.quad(f, 0, math.inf)
    else:
        val, _ = integrate.quad(f, 0, math.inf, weight="cos", wvar=abs(x))
    return 2.0 * symbol_constant(s) * val / math.pi


def c06_euclidean_oracle(p: Profile):
    spec = G.euclidean(1, (1,))
    gauge = default_gauge(spec)
    u = F.gaussian(spec)
    cfg = p.cfg(200_000)
    rows = []
    passed = True
    for s in (0.25, 0.5, 0.75):
        for x in (0.0, 0.5, 1.5):
            est = fo.eval_Ls(gauge, s, u, [x], cfg)
            target = fourier_oracle_1d(s, x)
            rel = abs(est.value - target) / abs(target)
            ok = rel <= 0.02 * p.tol
            passed &= ok
            rows.append({"s": s, "x": x, "estimate": est.to_dict(), "oracle": target,
                         "rel_err": rel, "ok": ok})
    return _ok(passed, rows=rows)


def c07_limits(p: Profile):
    cfg = p.cfg(200_000)
    cases = [
        (G.euclidean(2, (1, 1)), "euclidean_power", F.gaussian, [[0.0, 0.0]]),
        (G.heisenberg(1), "koranyi", F.gaussian, [[0.0, 0.0, 0.0], [0.3, -0.2, 0.1]]),
    ]
    rows = []
    passed = True
    for spec, kind, make, pts in cases:
        gauge = make_gauge(kind, spec)
        for r in fo.limit_probe(gauge, make(spec), pts, (0.02, 0.98), cfg):
            ok = r.rel_err <= 0.10 * p.tol
            passed &= ok
            rows.append({"group": spec.name, "gauge": gauge.label, **r.to_dict(), "ok": ok})
    return _ok(passed, rows=rows)


def c08_invariances(p: Profile):
    spec = G.heisenberg(1)
    gauge = default_gauge(spec)
    u = F.compact_bump(spec, 1.0)
    s = 0.5
    cfg = p.cfg(100_000)
    pts = _probe_points(spec, 3, p.seed, 0.4)
    g0 = np.array([0.3, -0.2, 0.25])
    lam = 2.0
    ut = F.translate(spec, u, g0)
    ud = F.compose_dilation(spec, u, lam)
    rows = []
    passed = True
    k = p.family(2 * len(pts) + 1)
    for g in pts:
        a = fo.eval_Ls(gauge, s, ut, g, cfg)
        b = fo.eval_Ls(gauge, s, u, G.multiply(spec, g0, g), cfg)
        c = fo.eval_Ls(gauge, s, ud, g / lam ** spec.w(), cfg)
        d = fo.eval_Ls(gauge, s, u, g, cfg) * lam ** (2 * s)
        ok_t, ok_d = a.agrees(b, k), c.agrees(d, k)
        passed &= ok_t and ok_d
        rows.append({"point": g.tolist(), "translated": a.to_dict(), "at_g0g": b.to_dict(),
                     "dilated": c.to_dict(), "scaled": d.to_dict(),
                     "translation_ok": ok_t, "dilation_ok": ok_d})
    cfg2 = p.cfg(20_000)
    semi = fo.seminorm(gauge, s, u, cfg2)
    mu = 1.7
    us = F.compose_dilation(spec, u, mu, amp=mu ** ((spec.Q - 2 * s) / 2))
    semi_s = fo.seminorm(gauge, s, us, cfg2)
    ok_s = semi.agrees(semi_s, k)
    return _ok(passed and ok_s, s=s, k_sigma=k, g0=g0.tolist(), lam=lam, rows=rows,
               seminorm=semi.to_dict(), seminorm_scaled=semi_s.to_dict(), scaling_lambda=mu,
               scaling_ok=ok_s)


def c09_form_symmetry(p: Profile):
    spec = G.heisenberg(1)
    gauge = default_gauge(spec)
    u, v = F.compact_bump(spec, 1.0), F.gaussian(spec, 0.7)
    s = 0.5
    sym = fo.form_symmetry_check(gauge, s, u, v, p.cfg(100_000))
    res = [sym.dirichlet - sym.v_Lu, sym.dirichlet - sym.u_Lv]
    k = p.family(len(res) + 3)
    sym_ok = all(r.contains(0.0, k) for r in res)
    cfg = p.cfg(50_000)
    prods = []
    prod_ok = True
    for g in _probe_points(spec, 3, p.seed, 0.4):
        r = fo.product_rule_check(gauge, s, u, v, g, cfg)
        ok = r.contains(0.0, k)
        prod_ok &= ok
        prods.append({"point": g.tolist(), "residual": r.to_dict(), "ok": ok})
    return _ok(sym_ok and prod_ok, s=s, k_sigma=k, form=sym.to_dict(),
               residual_u_Lv=res[1].to_dict(), symmetry_ok=sym_ok, product_rule=prods)


def c10_decay(p: Profile):
    spec = G.heisenberg(1)
    gauge = default_gauge(spec)
    u = F.compact_bump(spec, 1.0)
    R = fo._radius(gauge, u)
    rows = fo.decay_profile(gauge, 0.5, u, [2 * R, 4 * R, 8 * R], p.cfg(100_000))
    k = p.family(len(rows))
    ok = all(r.within_bound and r.value.agrees(r.direct, k) for r in rows)
    return _ok(ok, R=R, k_sigma=k, rows=[r.to_dict() for r in rows])


# ---------------------------------------------------------------------------
# 11-16: embedding, extremals, approximation, compactness, counterexample


def _sobolev_fields(spec):
    out = [F.gaussian(spec), F.compact_bump(spec, 1.0), F.poly_bump(spec, 1.0)]
    if spec.n == 2:
        out.append(F.product_field(spec))
    return out


def c11_sobolev(p: Profile):
    cfg = p.cfg(20_000)
    s = 0.5
    rows = []
    for spec in _builtin_groups():
        for gauge in _gauges(spec):
            for u in _sobolev_fields(spec):
                rows.append(sb.sobolev_inequality_check(gauge, s, u, cfg))
    slack = 1.0 + 0.05 * p.tol
    ineq_ok = all(r.holds(slack) for r in rows)
    bracket = sb.hedberg_bracket(4, 0.5)
    bracket_ok = abs(bracket - 1.7548) <= 1e-3
    return _ok(ineq_ok and bracket_ok, s=s, n_triples=len(rows),
               max_ratio_printed=max(r.ratio_printed for r in rows),
               max_ratio_corrected=max(r.ratio_corrected for r in rows),
               hedberg_bracket=bracket, rows=[r.to_dict() for r in rows])


def c12_extremal(p: Profile):
    spec = G.heisenberg(1)
    gauge = default_gauge(spec)
    s = 0.5
    init = sb.GridField.sample(gauge, sb.radial_bump(gauge, 3.0), L=6.0, n=16)
    iters = p.count(200, 20)
    res = sb.optimize_quotient(gauge, s, init, iters=iters, seed=p.seed)
    q_final = res.trace[-1].quotient
    pexp = sb.critical_exponent(spec.Q, s)
    q_dil = {lam: sb.sobolev_quotient(gauge, s, res.field.dilated(spec, lam, pexp), p.seed)
             for lam in (0.5, 2.0)}
    dev = max(abs(q / q_final - 1) for q in q_dil.values())
    mono = sb.quotient_trace_monotone(res.trace)
    ok = mono and res.residual <= 0.05 * p.tol and dev <= 0.03 * p.tol
    return _ok(ok, s=s, grid=16, iterations=res.trace[-1].iteration, initial=res.trace[0].quotient,
               final=q_final, residual=res.residual, multiplier=res.multiplier,
               stagnated=res.stagnated, trace_monotone=mono,
               dilated={str(k): v for k, v in q_dil.items()}, rescaling_dev=dev)


def c13_mollify_truncate(p: Profile):
    spec = G.heisenberg(1)
    gauge = default_gauge(spec)
    s = 0.5
    cfg = p.cfg(20_000)
    u = F.compact_bump(spec, 1.0)
    rho = sb.unit_mass_bump(gauge, 1.0)
    base = fo.seminorm(gauge, s, u, cfg)
    moll = []
    for eps in (0.5, 0.25, 0.125):
        ue = sb.mollify(gauge, rho, eps, u)
        moll.append({"eps": eps, "seminorm": fo.seminorm(gauge, s, ue, cfg),
                     "diff": fo.seminorm(gauge, s, F.difference(ue, u), cfg)})
    contract = all(r["seminorm"].value <= (1 + 0.03 * p.tol) * base.value for r in moll)
    diffs = [r["diff"].value for r in moll]
    shrink = all(b < a for a, b in zip(diffs, diffs[1:]))
    v = F.gaussian(spec, 4.0)
    trunc = []
    for R in (4.0, 8.0, 16.0):
        trunc.append({"R": R, "seminorm": fo.seminorm(
            gauge, s, F.product(sb.truncation_field(gauge, R), v), cfg)})
    tv = [r["seminorm"].value for r in trunc]
    decay = all(b < a for a, b in zip(tv, tv[1:]))
    out = lambda rows: [{k: (x.to_dict() if isinstance(x, Estimate) else x)  # noqa: E731
                         for k, x in r.items()} for r in rows]
    return _ok(contract and shrink and decay, s=s, base=base.to_dict(), mollified=out(moll),
               contraction_ok=contract, difference_decreasing=shrink,
               truncated=out(trunc), truncation_decreasing=decay)


def c14_translation(p: Profile):
    spec = G.heisenberg(1)
    gauge = default_gauge(spec)
    s = 0.5
    cfg = p.cfg(20_000)
    u = F.compact_bump(spec, 1.0)
    rows, semi = fo.translation_sweep(gauge, s, u, [2.0**-k for k in range(6)], cfg)
    sigma = qd.sigma_Q(gauge, cfg).value
    consts = fo.translation_constants(spec.Q, s, sigma)
    C = consts["corrected"]
    k = p.family(len(rows))
    worst = max(r.ratio.value + k * r.ratio.std_err + r.ratio.tail_bound for r in rows)
    return _ok(worst <= C, s=s, k_sigma=k, constant=C, constant_as_printed=consts["as_printed"],
               max_ratio_upper=worst, seminorm=semi.to_dict(),
               rows=[r.to_dict() for r in rows])


def c15_rellich(p: Profile):
    spec = G.heisenberg(1)
    gauge = default_gauge(spec)
    s = 0.5
    u = F.compact_bump(spec, 1.0)
    deltas = [0.4, 0.2, 0.1]
    rows = sb.rellich_sweep(gauge, u, gauge.box(1.0), deltas, p.cfg(100_000),
                            points_per_ball=p.count(640, 32))
    slope = sb.loglog_slope(deltas, [r.defect.value for r in rows])
    threshold = 2 * s - 0.2 * p.tol
    return _ok(slope >= threshold, s=s, slope=slope, threshold=threshold,
               rows=[r.to_dict() for r in rows])


def c16_counterexample(p: Profile):
    rows = sb.counterexample_sweep([1, 4, 16, 64, 256], [0.1, 0.01, 0.001])
    sat = [r for r in rows if r.saturated]
    sat_ok = bool(sat) and all(r.r >= 0.9 * math.sqrt(2) / math.sqrt(r.eta) for r in sat)
    at_001 = max(r.r for r in rows if r.eta == 0.01)
    base = next(r.r for r in rows if r.k == 1 and r.eta == 0.1)
    top = max(r.r for r in rows)
    ok = sat_ok and at_001 > 12 and top > 10 * base
    return _ok(ok, r_at_eta_0_01=at_001, closed_form=math.sqrt(2 / 0.01), r_k1_eta_0_1=base,
               max_r=top, rows=[r.to_dict() for r in rows])


@dataclass(frozen=True)
class Criterion:
    id: int
    name: str
    run: Callable[[Profile], tuple[bool, dict]]
    budget_seconds: float


CRITERIA = [
    Criterion(1, "group algebra", c01_group_algebra, 1),
    Criterion(2, "gauge axioms", c02_gauge_axioms, 10),
    Criterion(3, "polar identity", c03_polar_identity, 30),
    Criterion(4, "constants", c04_constants, 60),
    Criterion(5, "operator equivalence", c05_operator_equivalence, 60),
    Criterion(6, "euclidean cross-check", c06_euclidean_oracle, 30),
    Criterion(7, "s-limits", c07_limits, 300),
    Criterion(8, "invariances", c08_invariances, 60),
    Criterion(9, "form symmetry/product rule", c09_form_symmetry, 120),
    Criterion(10, "decay", c10_decay, 60),
    Criterion(11, "sobolev inequality", c11_sobolev, 120),
    Criterion(12, "extremal search", c12_extremal, 600),
    Criterion(13, "mollifier/truncation", c13_mollify_truncate, 300),
    Criterion(14, "translation difference", c14_translation, 120),
    Criterion(15, "rellich defect", c15_rellich, 120),
    Criterion(16, "counterexample", c16_counterexample, 10),
]


def run_criterion(c: Criterion, profile: Profile) -> CriterionResult:
    t0 = time.perf_counter()
    try:
        passed, values = c.run(profile)
        error = None
    except Exception as exc:  # a crash is a failed criterion, not a crashed suite
        passed, values = False, {"traceback": traceback.format_exc()}
        error = f"{type(exc).__name__}: {exc}"
    return CriterionResult(c.id, c.name, passed, _jsonable(values), profile.seed,
                           time.perf_counter() - t0, c.budget_seconds, error)


def run_all(profile: Profile = Profile(), only=None, on_result=None) -> list[CriterionResult]:
    out = []
    for c in CRITERIA:
        if only and c.id not in only:
            continue
        r = run_criterion(c, profile)
        if on_result is not None:
            on_result(r)
        out.append(r)
    return out


def report(results: list[CriterionResult], profile: Profile) -> dict:
    return {
        "profile": "quick" if profile.quick else "full",
        "seed": profile.seed,
        "passed": all(r.passed for r in results),
        "criteria": [r.to_dict() for r in results],
    }


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, Estimate):
        return x.to_dict()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return x
