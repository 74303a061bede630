"""The fractional operator L_s, the carre du champ, the Dirichlet form and the
Gagliardo seminorm, evaluated by stratified Monte Carlo.

Pointwise quantities at g are split at |h| = 1.

* Inside B_1 the integrand is sampled on dyadic annuli after subtracting its
  horizontal quadratic part q(h) = sum H_ij h_i h_j.  The subtracted piece
  integrates in closed form, sum H_ij M_ij with M_ij = (Q+2) V_ij / (2-2s).
  The residual is O(|h|^d*) with d* > 2, so the ball left below the last annulus
  only needs a small bound.
* Outside B_1 the substitution y = g h moves the integral onto the support of
  the field: int_{|h|>=1} u(gh) k(h) dh = int u(y) k(g^-1 y) 1{|g^-1 y| >= 1} dy.
  The constant part u(g) k(h) integrates to u(g) sigma_Q / (2s) exactly.

Double integrals use the same split with g drawn from a box covering the
support.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import fields as F
from . import group as G
from . import quadrature as qd
from .errors import DomainError, SymmetryViolation
from .gauge import Gauge, eval_gauge
from .quadrature import Estimate, QuadratureConfig

S_MIN, S_MAX = 0.01, 0.99
_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class FracParams:
    s: float
    Q: float

    def __post_init__(self):
        if not S_MIN <= self.s <= S_MAX:
            raise DomainError(f"s = {self.s} outside the supported range [{S_MIN}, {S_MAX}]")

    @classmethod
    def for_gauge(cls, gauge: Gauge, s: float) -> "FracParams":
        return cls(float(s), gauge.spec.Q)

    @property
    def kernel_exponent(self) -> float:
        return self.Q + 2 * self.s

    @property
    def critical_exponent(self) -> float:
        """2*(s) = 2Q/(Q-2s); only the embedding results need 2s < Q."""
        if 2 * self.s >= self.Q:
            raise DomainError("critical exponent needs 2s < Q")
        return 2 * self.Q / (self.Q - 2 * self.s)


def _params(gauge: Gauge, s) -> FracParams:
    return s if isinstance(s, FracParams) else FracParams.for_gauge(gauge, s)


def _radius(gauge: Gauge, *us: F.ScalarField) -> float:
    radii = []
    for u in us:
        if u.is_constant:
            continue
        r = u.support_radius(gauge)
        if r is None:
            raise DomainError(f"field {u.name} needs a support radius or Schwartz decay")
        radii.append(r)
    return max(radii, default=0.0)


def _box(gauge: Gauge, *us: F.ScalarField) -> np.ndarray:
    """Centred coordinate box covering the supports of all non-constant fields."""
    out = np.zeros(gauge.spec.n)
    for u in us:
        if u.is_constant:
            continue
        b = u.support_box(gauge)
        if b is None:
            raise DomainError(f"field {u.name} needs a support radius or Schwartz decay")
        out = np.maximum(out, b)
    return out


def _core(gauge: Gauge, *us: F.ScalarField) -> np.ndarray:
    """Elementwise max of the core boxes (support boxes where no core is set)."""
    out = np.zeros(gauge.spec.n)
    for u in us:
        if not u.is_constant:
            out = np.maximum(out, u.core_box(gauge))
    return out


def _region(gauge: Gauge, *us: F.ScalarField) -> qd.SampleBox:
    return qd.SampleBox(_box(gauge, *us), _core(gauge, *us))


def _sup(u: F.ScalarField) -> float:
    return abs(u.constant) if u.is_constant else (u.sup if u.sup is not None else 1.0)


# ---------------------------------------------------------------------------
# pointwise functionals


@dataclass
class _Pointwise:
    """A functional P(g) = int inner(h) k(h) dh over B_1 + sum C_ij M_ij
    + const sigma_Q / (2s) + int outer(y) k(g^-1 y) 1{|g^-1 y| >= 1} dy."""

    inner: Callable[[np.ndarray], np.ndarray]
    C: np.ndarray
    C_err: np.ndarray
    outer: Callable[[np.ndarray], np.ndarray]
    const: float
    tail_sup: float = 0.0
    scale: float = 1.0

    def __add__(self, other: "_Pointwise") -> "_Pointwise":
        a, b = self, other
        return _Pointwise(
            lambda h: a.inner(h) + b.inner(h),
            a.C + b.C,
            a.C_err + b.C_err,
            lambda y: a.outer(y) + b.outer(y),
            a.const + b.const,
            a.tail_sup + b.tail_sup,
            a.scale + b.scale,
        )

    def __mul__(self, c: float) -> "_Pointwise":
        a = self
        return _Pointwise(
            lambda h: c * a.inner(h),
            c * a.C,
            abs(c) * a.C_err,
            lambda y: c * a.outer(y),
            c * a.const,
            abs(c) * a.tail_sup,
            abs(c) * a.scale,
        )

    __rmul__ = __mul__


def _hessian_with_error(spec, u: F.ScalarField, g) -> tuple[np.ndarray, np.ndarray]:
    """Horizontal Hessian and an a-posteriori error bound (step-doubling plus roundoff)."""
    m = spec.m
    if u.is_constant:
        return np.zeros((m, m)), np.zeros((m, m))
    h = F.SECOND_FD_STEP
    H = F.horizontal_hessian(spec, u, g, h)
    H2 = F.horizontal_hessian(spec, u, g, 2 * h)
    scale = max(abs(float(u(g))), _sup(u))
    err = np.abs(H - H2) / 15.0 + 50.0 * _EPS * scale / h**2
    return H, err


def _hor_grad(spec, u: F.ScalarField, g) -> tuple[np.ndarray, np.ndarray]:
    if u.is_constant:
        return np.zeros(spec.m), np.zeros(spec.m)
    a = F.left_derivatives(spec, u, g)[spec.horizontal]
    err = np.zeros_like(a) if (u.grad is not None or u.xder is not None) else 1e-9 * (np.abs(a) + _sup(u))
    return a, err


def _op_functional(spec, u: F.ScalarField, g) -> _Pointwise:
    """L_s u(g) as a _Pointwise."""
    g = np.asarray(g, dtype=float)
    ug = float(u(g))
    H, H_err = _hessian_with_error(spec, u, g)
    hor = spec.horizontal

    def inner(h):
        q = np.einsum("...i,ij,...j->...", h[..., hor], H, h[..., hor])
        return -(F.second_difference(spec, u, g, h) - q)

    return _Pointwise(inner, -H, H_err, lambda y: -2.0 * u(y), 2.0 * ug, 2 * u.tail_sup,
                      4.0 * _sup(u))


def _gamma_functional(spec, u: F.ScalarField, v: F.ScalarField, g) -> _Pointwise:
    """Gamma_s(u, v)(g) as a _Pointwise, symmetrized over h and h^-1."""
    g = np.asarray(g, dtype=float)
    ug, vg = float(u(g)), float(v(g))
    a, a_err = _hor_grad(spec, u, g)
    b, b_err = _hor_grad(spec, v, g)
    hor = spec.horizontal

    def inner(h):
        gp = G.multiply(spec, g, h)
        gm = G.multiply(spec, g, -h)
        f = 0.5 * ((ug - u(gp)) * (vg - v(gp)) + (ug - u(gm)) * (vg - v(gm)))
        return f - (h[..., hor] @ a) * (h[..., hor] @ b)

    C = 0.5 * (np.outer(a, b) + np.outer(b, a))
    C_err = np.outer(a_err, np.abs(b)) + np.outer(np.abs(a), b_err)
    C_err = 0.5 * (C_err + C_err.T)
    return _Pointwise(
        inner,
        C,
        C_err,
        lambda y: u(y) * v(y) - ug * v(y) - vg * u(y),
        ug * vg,
        u.tail_sup * (_sup(v) + abs(vg)) + v.tail_sup * (_sup(u) + abs(ug)),
        _sup(u) * _sup(v),
    )


_PROBE_LEVELS = range(2, 8)
_PROBE_N = 64


def _remainder_bound(gauge, s, P: _Pointwise, K: int, sigma: float) -> float:
    """Bound for int_{B_eps} inner k with eps = 2^-K from the empirical constant
    C3 = max |inner(h)| / |h|^d* over probe shells (doubled for safety)."""
    spec = gauge.spec
    d = F.remainder_degree(spec)
    rng = np.random.default_rng(np.random.SeedSequence([0xC3, K]))
    c3 = 0.0
    for k in _PROBE_LEVELS:
        hw = gauge.box(2.0**-k)
        h = qd.uniform_box(rng, hw, _PROBE_N)
        r = eval_gauge(gauge, h)
        ok = (r > 0) & (r < 2.0**-k)
        if ok.any():
            c3 = max(c3, float(np.max(np.abs(P.inner(h[ok])) / r[ok] ** d)))
    eps = 2.0**-K
    return 2.0 * c3 * sigma * eps ** (d - 2 * s) / (d - 2 * s)


def _eval_pointwise(
    gauge: Gauge, params: FracParams, g, P: _Pointwise, region: qd.SampleBox,
    cfg: QuadratureConfig, label: str, check_budget: bool = True,
) -> Estimate:
    spec = gauge.spec
    s = params.s
    Q = spec.Q
    kexp = Q + 2 * s
    g = np.asarray(g, dtype=float)
    consts = qd.gauge_constants(gauge, cfg)
    sigma = consts.sigma
    M, M_err = consts.moment_matrix(s)
    K = cfg.inner_levels

    samplers = [
        qd.annulus_sampler(gauge, 2.0 ** (-k - 1), 2.0**-k, lambda h, r: P.inner(h) * r ** (-kexp))
        for k in range(K)
    ]
    counts = qd.geometric_counts(cfg.n_samples, K, F.remainder_degree(spec) - 2 * s)
    if np.all(region.box > 0):

        def outer(rng, n):
            y, wt = region.draw(rng, n)
            r = eval_gauge(gauge, G.multiply(spec, -g, y))
            far = r >= 1.0
            out = np.zeros(n)
            if far.any():
                out[far] = P.outer(y[far]) * r[far] ** (-kexp)
            return wt * out

        samplers.append(outer)
        counts.append(cfg.n_samples)
    res = qd.stratified(samplers, counts, cfg, label)
    value, var, n = qd.combine(res)

    closure = float(np.sum(P.C * M))
    var += float(np.sum((P.C * M_err) ** 2))
    c_out = P.const / (2 * s)
    value += closure + c_out * sigma.value
    var += (c_out * sigma.std_err) ** 2

    tail = _remainder_bound(gauge, s, P, K, sigma.value)
    tail += float(np.sum(P.C_err * np.abs(M)))
    tail += 2.0 * P.tail_sup * sigma.value / (2 * s)
    # roundoff in the sampled differences grows like 2^(2sk) on shell k
    tail += 4.0 * _EPS * P.scale * sigma.value * 2.0 ** (2 * s * K) / (1 - 2.0 ** (-2 * s))
    return qd._finish(value, var, tail, n, cfg, check_budget)


def eval_Ls(gauge: Gauge, s, u: F.ScalarField, g, cfg: QuadratureConfig) -> Estimate:
    """L_s u(g) = int (2u(g) - u(gh) - u(gh^-1)) / |h|^(Q+2s) dh."""
    params = _params(gauge, s)
    if u.is_constant:
        return Estimate(0.0, 0.0, 0.0, 0, cfg.seed)
    P = _op_functional(gauge.spec, u, g)
    return _eval_pointwise(gauge, params, g, P, _region(gauge, u), cfg, "Ls")


def carre_du_champ(gauge: Gauge, s, u: F.ScalarField, v: F.ScalarField, g,
                   cfg: QuadratureConfig) -> Estimate:
    """Gamma_s(u, v)(g) = int (u(g)-u(gh))(v(g)-v(gh)) / |h|^(Q+2s) dh."""
    params = _params(gauge, s)
    if u.is_constant or v.is_constant:
        return Estimate(0.0, 0.0, 0.0, 0, cfg.seed)
    P = _gamma_functional(gauge.spec, u, v, g)
    return _eval_pointwise(gauge, params, g, P, _region(gauge, u, v), cfg, "gamma")


def product_rule_check(gauge: Gauge, s, u: F.ScalarField, v: F.ScalarField, g,
                       cfg: QuadratureConfig) -> Estimate:
    """Residual L(uv) - u L v - v L u + 2 Gamma(u, v) at g.

    All four terms are sampled on one stream, so the sampled part of the residual
    cancels pathwise; what remains is roundoff and the finite-difference error of
    the quadratic closures, both carried in tail_bound.
    """
    params = _params(gauge, s)
    spec = gauge.spec
    if u.is_constant and v.is_constant:
        return Estimate(0.0, 0.0, 0.0, 0, cfg.seed)
    g = np.asarray(g, dtype=float)
    uv = F.product(u, v)
    ug, vg = float(u(g)), float(v(g))
    P = (
        _op_functional(spec, uv, g)
        + (-ug) * _op_functional(spec, v, g)
        + (-vg) * _op_functional(spec, u, g)
        + 2.0 * _gamma_functional(spec, u, v, g)
    )
    return _eval_pointwise(gauge, params, g, P, _region(gauge, u, v), cfg, "product_rule",
                           check_budget=False)


def eval_Ls_pv(gauge: Gauge, s, u: F.ScalarField, g, eps_list: Sequence[float],
               cfg: QuadratureConfig) -> list[Estimate]:
    """2 int_{|w| >= eps} (u(g) - u(gw)) / |w|^(Q+2s) dw for each eps.

    The near field is sampled literally (no symmetrization), on shells whose
    edges include every eps, so each truncation is a partial sum of strata.
    """
    params = _params(gauge, s)
    eps = [float(e) for e in eps_list]
    if not eps or any(e <= 0 for e in eps) or any(a <= b for a, b in zip(eps, eps[1:])):
        raise DomainError("eps_list must be strictly decreasing and positive")
    if u.is_constant:
        return [Estimate(0.0, 0.0, 0.0, 0, cfg.seed) for _ in eps]
    if eps[0] > 1.0:
        raise DomainError("eps values must not exceed 1")
    spec = gauge.spec
    Q = spec.Q
    sv = params.s
    kexp = Q + 2 * sv
    g = np.asarray(g, dtype=float)
    ug = float(u(g))

    cuts = {1.0, *eps}
    k = 1
    while 2.0**-k > eps[-1]:
        cuts.add(2.0**-k)
        k += 1
    cuts = sorted(cuts, reverse=True)
    shells = list(zip(cuts[1:], cuts[:-1]))
    samplers = [
        qd.annulus_sampler(
            gauge, lo, hi, lambda h, r: 2.0 * (ug - u(G.multiply(spec, g, h))) * r ** (-kexp)
        )
        for lo, hi in shells
    ]
    P = _op_functional(spec, u, g)
    outer_est = _eval_outer_only(gauge, sv, g, P, _region(gauge, u), cfg, "Ls_pv_outer")
    res = qd.stratified(samplers, cfg.n_samples, cfg, "Ls_pv")
    out = []
    for e in eps:
        idx = [i for i, (lo, _) in enumerate(shells) if lo >= e * (1 - 1e-12)]
        value, var, n = qd.combine([res[i] for i in idx])
        near = qd._finish(value, var, 0.0, n, cfg, check_budget=False)
        out.append(near + outer_est)
    return out


def _eval_outer_only(gauge, s, g, P: _Pointwise, region: qd.SampleBox, cfg, label) -> Estimate:
    """The |h| >= 1 part of a pointwise functional."""
    spec = gauge.spec
    kexp = spec.Q + 2 * s
    sigma = qd.sigma_Q(gauge, cfg)

    def outer(rng, n):
        y, wt = region.draw(rng, n)
        r = eval_gauge(gauge, G.multiply(spec, -g, y))
        far = r >= 1.0
        out = np.zeros(n)
        if far.any():
            out[far] = P.outer(y[far]) * r[far] ** (-kexp)
        return wt * out

    res = qd.stratified([outer], cfg.n_samples, cfg, label)
    value, var, n = qd.combine(res)
    c_out = P.const / (2 * s)
    value += c_out * sigma.value
    var += (c_out * sigma.std_err) ** 2
    tail = 2.0 * P.tail_sup * sigma.value / (2 * s)
    return qd._finish(value, var, tail, n, cfg, check_budget=False)


# ---------------------------------------------------------------------------
# double integrals


@dataclass
class _Double:
    """A bilinear double integral
    int_G int_{B_rho} inner(g, h) k(h) dh dg + eps^(2-2s) sum M_ij grad_ij
    + 2 inner_prod sigma_Q rho^(-2s)/(2s)
    + int int outer(g, y) k(g^-1 y) 1{|g^-1 y| >= rho} dg dy,
    where grad_ij = int grads(g)_ij dg closes the ball B_eps, eps = rho 2^-K.

    inner_box(c) covers the g where inner(g, h) can be nonzero for h in the box c;
    local_box covers local and grads; outer_boxes covers (g, y) for outer."""

    inner: Callable[[np.ndarray, np.ndarray], np.ndarray]
    grads: Callable[[np.ndarray], np.ndarray]
    local: Callable[[np.ndarray], np.ndarray]
    outer: Callable[[np.ndarray, np.ndarray], np.ndarray]
    inner_box: Callable[[np.ndarray], qd.SampleBox]
    local_box: qd.SampleBox
    outer_boxes: tuple[qd.SampleBox, qd.SampleBox]
    tail_sup: float = 0.0
    sup: float = 1.0


def _form(gauge: Gauge, u: F.ScalarField, v: F.ScalarField) -> _Double:
    spec = gauge.spec
    hor = spec.horizontal
    ru, rv = _region(gauge, u), _region(gauge, v)

    def inner(g, h):
        gh = G.multiply(spec, g, h)
        return (u(g) - u(gh)) * (v(g) - v(gh))

    def grads(g):
        a = F.left_derivatives(spec, u, g)[..., hor]
        b = F.left_derivatives(spec, v, g)[..., hor]
        return np.einsum("ni,nj->nij", a, b).reshape(len(g), -1)

    # both differences vanish unless g or gh lies in each support
    return _Double(
        inner,
        grads,
        lambda g: u(g) * v(g),
        # the two cross terms coincide under (g, y) -> (y, g) for a symmetric gauge
        lambda g, y: -2.0 * u(g) * v(y),
        lambda c: _meet(_grow(spec, ru, c), _grow(spec, rv, c)),
        _meet(ru, rv),
        (ru, rv),
        u.tail_sup * _sup(v) + v.tail_sup * _sup(u),
        _sup(u) * _sup(v),
    )


def _grow(spec, region: qd.SampleBox, c) -> qd.SampleBox:
    """Region covering g with g h in ``region`` for h in the box c."""
    core = None if region.core is None else G.box_product(spec, region.core, c)
    return qd.SampleBox(G.box_product(spec, region.box, c), core)


def _meet(a: qd.SampleBox, b: qd.SampleBox) -> qd.SampleBox:
    ca = a.core if a.core is not None else a.box
    cb = b.core if b.core is not None else b.box
    return qd.SampleBox(np.minimum(a.box, b.box), np.minimum(ca, cb))


def _split_radius(gauge: Gauge, box) -> float:
    """Dyadic radius splitting near from far pairs, matched to the field scale so
    that the uniformly sampled far-pair term stays a small correction."""
    r = 0.5 * gauge.corner_radius(box)
    return 2.0 ** round(math.log2(max(r, 1e-6)))


def _eval_double(gauge: Gauge, params: FracParams, D: _Double,
                 cfg: QuadratureConfig, label: str) -> tuple[Estimate, dict]:
    spec = gauge.spec
    s = params.s
    Q = spec.Q
    kexp = Q + 2 * s
    m = spec.m
    K = cfg.inner_levels
    consts = qd.gauge_constants(gauge, cfg)
    sigma = consts.sigma
    M, M_err = consts.moment_matrix(s)
    rho = _split_radius(gauge, D.local_box.core if D.local_box.core is not None else D.local_box.box)

    def pair_sampler(k):
        lo, hi = rho * 2.0 ** (-k - 1), rho * 2.0**-k
        hw_h = gauge.box(hi)
        region_g = D.inner_box(gauge.box(hi))
        vol_h = qd.box_volume(hw_h)

        def sample(rng, n):
            h = qd.uniform_box(rng, hw_h, n)
            g, wt = region_g.draw(rng, n)
            r = eval_gauge(gauge, h)
            ok = (r >= lo) & (r < hi)
            out = np.zeros(n)
            if ok.any():
                out[ok] = D.inner(g[ok], h[ok]) * r[ok] ** (-kexp)
            return vol_h * wt * out

        return sample

    vol = D.local_box.volume
    region_g, region_y = D.outer_boxes

    def local(rng, n):
        g, wt = D.local_box.draw(rng, n)
        return wt[:, None] * np.column_stack([D.local(g), D.grads(g)])

    def outer(rng, n):
        g, wg = region_g.draw(rng, n)
        y, wy = region_y.draw(rng, n)
        r = eval_gauge(gauge, G.multiply(spec, -g, y))
        far = r >= rho
        out = np.zeros(n)
        if far.any():
            out[far] = D.outer(g[far], y[far]) * r[far] ** (-kexp)
        return wg * wy * out

    counts = qd.geometric_counts(cfg.n_samples, K, 2 - 2 * s)
    res = qd.stratified([pair_sampler(k) for k in range(K)], counts, cfg, label)
    res_local = qd.stratified([local], cfg.n_samples, cfg, label + ":local")
    res_outer = qd.stratified([outer], cfg.n_samples, cfg, label + ":outer")

    inner_val, inner_var, n1 = qd.combine(res)
    ip_val, ip_var, n2 = qd.combine(res_local, 0)
    grad_val = np.array([res_local[0].mean[1 + c] for c in range(m * m)]).reshape(m, m)
    grad_se = np.sqrt([res_local[0].var_mean[1 + c] for c in range(m * m)]).reshape(m, m)
    out_val, out_var, n3 = qd.combine(res_outer)

    eps_fac = (rho * 2.0**-K) ** (2 - 2 * s)
    closure = eps_fac * float(np.sum(M * grad_val))
    closure_var = eps_fac**2 * float(np.sum((M * grad_se) ** 2 + (M_err * grad_val) ** 2))
    c_out = 2.0 / (2 * s) * rho ** (-2 * s)
    value = inner_val + closure + c_out * ip_val * sigma.value + out_val
    var = inner_var + closure_var + out_var
    var += (c_out * sigma.value) ** 2 * ip_var + (c_out * ip_val * sigma.std_err) ** 2

    # remainder below eps: compare the deepest sampled shell with its closure prediction
    last = res[-1]
    shell_fac = (rho * 2.0 ** -(K - 1)) ** (2 - 2 * s) - eps_fac
    pred = shell_fac * float(np.sum(M * grad_val))
    dev = abs(float(last.mean[0]) - pred) + 2.0 * math.sqrt(float(last.var_mean[0]))
    ratio = 2.0 ** -(3 - 2 * s)
    tail = dev * ratio / (1 - ratio)
    tail += 4.0 * D.tail_sup * sigma.value / (2 * s) * max(vol, 1.0)
    est = qd._finish(value, var, tail, n1 + n2 + n3, cfg)
    parts = {
        "inner": inner_val,
        "closure": closure,
        "inner_product": ip_val,
        "outer": out_val,
        "grad_matrix": grad_val,
    }
    return est, parts


def dirichlet_form(gauge: Gauge, s, u: F.ScalarField, v: F.ScalarField,
                   cfg: QuadratureConfig) -> Estimate:
    """D_s(u, v) = int int (u(g)-u(gh))(v(g)-v(gh)) / |h|^(Q+2s) dg dh.

    Arguments are put in name order first so D(u, v) and D(v, u) agree exactly.
    """
    params = _params(gauge, s)
    if u.is_constant or v.is_constant:
        return Estimate(0.0, 0.0, 0.0, 0, cfg.seed)
    if u.name > v.name:
        u, v = v, u
    est, _ = _eval_double(gauge, params, _form(gauge, u, v), cfg, "dirichlet")
    return est


def seminorm_sq(gauge: Gauge, s, u: F.ScalarField, cfg: QuadratureConfig) -> Estimate:
    """[u]_{s,2}^2."""
    params = _params(gauge, s)
    if u.is_constant:
        return Estimate(0.0, 0.0, 0.0, 0, cfg.seed)
    est, _ = _eval_double(gauge, params, _form(gauge, u, u), cfg, "seminorm")
    return est


def sqrt_estimate(e: Estimate) -> Estimate:
    """sqrt with first-order error propagation; the tail maps monotonically."""
    v = max(e.value, 0.0)
    root = math.sqrt(v)
    if root == 0.0:
        return Estimate(0.0, math.sqrt(e.std_err), math.sqrt(e.tail_bound), e.n_evals, e.seed, e.flags)
    tail = math.sqrt(v + e.tail_bound) - root
    return Estimate(root, e.std_err / (2 * root), tail, e.n_evals, e.seed, e.flags)


def seminorm(gauge: Gauge, s, u: F.ScalarField, cfg: QuadratureConfig) -> Estimate:
    """[u]_{s,2} = (int int |u(g) - u(gh)|^2 / |h|^(Q+2s) dg dh)^(1/2)."""
    return sqrt_estimate(seminorm_sq(gauge, s, u, cfg))


@dataclass
class FormSymmetry:
    dirichlet: Estimate
    v_Lu: Estimate
    u_Lv: Estimate

    @property
    def residual(self) -> Estimate:
        return self.dirichlet - self.v_Lu

    @property
    def ok(self) -> bool:
        r = self.residual
        r2 = self.dirichlet - self.u_Lv
        return r.contains(0.0) and r2.contains(0.0)

    def to_dict(self) -> dict:
        return {
            "dirichlet": self.dirichlet.to_dict(),
            "int_v_Lu": self.v_Lu.to_dict(),
            "int_u_Lv": self.u_Lv.to_dict(),
            "residual": self.residual.to_dict(),
            "ok": self.ok,
        }


def integral_v_Lu(gauge: Gauge, s, u: F.ScalarField, v: F.ScalarField,
                  cfg: QuadratureConfig) -> Estimate:
    """int v(g) L_s u(g) dg with the second-difference form of L_s.

    Below eps = 2^-K the closure uses int v X_i X_j u = -int X_i v X_j u
    (left-invariant fields are divergence free for Haar measure).
    """
    params = _params(gauge, s)
    spec = gauge.spec
    if u.is_constant or v.is_constant:
        return Estimate(0.0, 0.0, 0.0, 0, cfg.seed)
    hor = spec.horizontal

    def inner(g, h):
        return v(g) * (2.0 * u(g) - u(G.multiply(spec, g, h)) - u(G.multiply(spec, g, -h)))

    def grads(g):
        a = F.left_derivatives(spec, u, g)[..., hor]
        b = F.left_derivatives(spec, v, g)[..., hor]
        return np.einsum("ni,nj->nij", b, a).reshape(len(g), -1)

    ru, rv = _region(gauge, u), _region(gauge, v)
    D = _Double(
        inner,
        grads,
        lambda g: u(g) * v(g),
        lambda g, y: -2.0 * v(g) * u(y),
        lambda c: _meet(rv, _grow(spec, ru, c)),
        _meet(ru, rv),
        (rv, ru),
        u.tail_sup * _sup(v) + v.tail_sup * _sup(u),
        _sup(u) * _sup(v),
    )
    est, _ = _eval_double(gauge, params, D, cfg, "v_Lu")
    return est


def form_symmetry_check(gauge: Gauge, s, u: F.ScalarField, v: F.ScalarField,
                        cfg: QuadratureConfig) -> FormSymmetry:
    return FormSymmetry(
        dirichlet_form(gauge, s, u, v, cfg),
        integral_v_Lu(gauge, s, u, v, cfg),
        integral_v_Lu(gauge, s, v, u, cfg),
    )


# ---------------------------------------------------------------------------
# limits, decay, translation differences


@dataclass
class LimitProbeRow:
    s: float
    point: tuple | None
    kind: str
    normalized_value: float
    std_err: float
    tail_bound: float
    target: float

    @property
    def rel_err(self) -> float:
        return abs(self.normalized_value - self.target) / max(abs(self.target), 1e-12)

    def to_dict(self) -> dict:
        return {
            "s": self.s,
            "point": None if self.point is None else list(self.point),
            "kind": self.kind,
            "normalized_value": self.normalized_value,
            "std_err": self.std_err,
            "tail_bound": self.tail_bound,
            "target": self.target,
            "rel_err": self.rel_err,
        }


def horizontal_weights(gauge: Gauge, cfg: QuadratureConfig) -> np.ndarray:
    """Per-direction weights w_i with (2m(1-s)/tau_m) L_s u -> -sum w_i X_i^2 u.

    w_i = 1 for horizontally radial gauges; m tau_hat_i^2 / tau_m for even ones.
    """
    qd._require_symmetry(gauge)
    m = gauge.spec.m
    if gauge.horizontal_radial:
        return np.ones(m)
    consts = qd.gauge_constants(gauge, cfg)
    return m * consts.tau_hat_sq() / consts.tau().value


def _l2_and_grad(gauge: Gauge, u: F.ScalarField, cfg: QuadratureConfig, w: np.ndarray):
    spec = gauge.spec
    region = _region(gauge, u)
    hor = spec.horizontal

    def sample(rng, n):
        g, wt = region.draw(rng, n)
        xd = F.left_derivatives(spec, u, g)[..., hor]
        return wt[:, None] * np.column_stack([u(g) ** 2, (xd**2) @ w])

    res = qd.stratified([sample], cfg.n_samples, cfg, "l2grad")
    l2 = qd._finish(*qd.combine(res, 0)[:2], 0.0, res[0].n, cfg)
    gr = qd._finish(*qd.combine(res, 1)[:2], 0.0, res[0].n, cfg)
    return l2, gr


def limit_probe(gauge: Gauge, u: F.ScalarField, points, s_grid, cfg: QuadratureConfig,
                seminorms: bool = True) -> list[LimitProbeRow]:
    """Normalized operator (and seminorm) values against their s -> 0+ / s -> 1-
    limits.  Values of s below 1/2 are compared with the s -> 0+ target."""
    spec = gauge.spec
    m = spec.m
    w = horizontal_weights(gauge, cfg)
    sigma = qd.sigma_Q(gauge, cfg).value
    tau = qd.tau_m(gauge, cfg).value
    rows: list[LimitProbeRow] = []
    points = np.atleast_2d(np.asarray(points, dtype=float))
    targets_one = {}
    for p in points:
        H = F.horizontal_hessian(spec, u, p)
        targets_one[tuple(p)] = (float(u(p)), -float(np.diag(H) @ w))
    if seminorms:
        l2, gr = _l2_and_grad(gauge, u, cfg, w)
    for s in s_grid:
        near_zero = s < 0.5
        fac = s / sigma if near_zero else 2 * m * (1 - s) / tau
        for p in points:
            est = eval_Ls(gauge, s, u, p, cfg)
            t0, t1 = targets_one[tuple(p)]
            rows.append(LimitProbeRow(
                float(s), tuple(map(float, p)), "operator", fac * est.value,
                fac * est.std_err, fac * est.tail_bound, t0 if near_zero else t1,
            ))
        if seminorms:
            est = seminorm_sq(gauge, s, u, cfg)
            rows.append(LimitProbeRow(
                float(s), None, "seminorm_sq", fac * est.value, fac * est.std_err,
                fac * est.tail_bound, l2.value if near_zero else gr.value,
            ))
    return rows


def direct_far_field(gauge: Gauge, s, u: F.ScalarField, g, n_nodes: int = 24) -> Estimate:
    """-2 int u(y) |g^-1 y|^-(Q+2s) dy by tensor Gauss-Legendre on the support box.

    Valid when g lies outside the support, where it equals L_s u(g).  The error
    estimate is the difference with a half-resolution rule.
    """
    params = _params(gauge, s)
    spec = gauge.spec
    g = np.asarray(g, dtype=float)
    hw = _box(gauge, u)

    def rule(k):
        x, wts = np.polynomial.legendre.leggauss(k)
        grids = np.meshgrid(*[x * a for a in hw], indexing="ij")
        pts = np.stack([c.ravel() for c in grids], axis=-1)
        wgrid = np.ones(1)
        for a in hw:
            wgrid = np.multiply.outer(wgrid, wts * a).ravel()
        r = eval_gauge(gauge, G.multiply(spec, -g, pts))
        return float(-2.0 * np.sum(wgrid * u(pts) * r ** (-params.kernel_exponent))), pts.shape[0]

    fine, n = rule(n_nodes)
    coarse, _ = rule(max(n_nodes // 2, 2))
    return Estimate(fine, 0.0, abs(fine - coarse), n, 0)


@dataclass
class DecayRow:
    radius: float
    value: Estimate
    scaled: float
    scaled_halfwidth: float
    bound: float
    direct: Estimate

    @property
    def within_bound(self) -> bool:
        return self.scaled - self.scaled_halfwidth <= self.bound

    @property
    def matches_direct(self) -> bool:
        return self.value.agrees(self.direct)

    def to_dict(self) -> dict:
        return {
            "radius": self.radius,
            "value": self.value.to_dict(),
            "scaled": self.scaled,
            "scaled_halfwidth": self.scaled_halfwidth,
            "bound": self.bound,
            "direct": self.direct.to_dict(),
            "within_bound": self.within_bound,
            "matches_direct": self.matches_direct,
        }


def unit_direction(gauge: Gauge, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD1]))
    p = rng.standard_normal(gauge.spec.n)
    return G.dilate(gauge.spec, 1.0 / float(eval_gauge(gauge, p)), p)


def decay_profile(gauge: Gauge, s, u: F.ScalarField, radii, cfg: QuadratureConfig,
                  direction=None) -> list[DecayRow]:
    """Rows (|g|, |g|^(Q+2s) |L_s u(g)|) with the bound 2^(Q+2s+1) sigma_Q R^Q ||u||_inf."""
    params = _params(gauge, s)
    spec = gauge.spec
    Q = spec.Q
    R = _radius(gauge, u)
    if any(r < 2 * R - 1e-12 for r in radii) and not u.is_constant:
        raise DomainError(f"radii must be >= 2R = {2 * R:g}")
    sigma = qd.sigma_Q(gauge, cfg)
    bound = 2.0 ** (Q + 2 * params.s + 1) * (sigma.value + 2 * sigma.std_err) * R**Q * _sup(u)
    e = unit_direction(gauge, cfg.seed) if direction is None else np.asarray(direction, float)
    rows = []
    for rad in radii:
        g = G.dilate(spec, rad, e)
        est = eval_Ls(gauge, params, u, g, cfg)
        fac = rad**params.kernel_exponent
        direct = Estimate(0.0) if u.is_constant else direct_far_field(gauge, params, u, g)
        rows.append(DecayRow(float(rad), est, fac * abs(est.value), fac * est.halfwidth, bound, direct))
    return rows


def translation_norm(gauge: Gauge, u: F.ScalarField, h, cfg: QuadratureConfig) -> Estimate:
    """||R_h u - u||_2 with (R_h u)(g) = u(gh)."""
    spec = gauge.spec
    h = np.asarray(h, dtype=float)
    if u.is_constant or not np.any(h):
        return Estimate(0.0, 0.0, 0.0, 0, cfg.seed)
    region = _grow(spec, _region(gauge, u), np.abs(h))
    vol = region.volume

    def sample(rng, n):
        g, wt = region.draw(rng, n)
        return wt * (u(G.multiply(spec, g, h)) - u(g)) ** 2

    res = qd.stratified([sample], cfg.n_samples, cfg, "transdiff")
    sq = qd._finish(*qd.combine(res)[:2], 2 * u.tail_sup * _sup(u) * vol, res[0].n, cfg)
    return sqrt_estimate(sq)


def translation_constants(Q: float, s: float, sigma: float) -> dict:
    """Constants C with ||R_h u - u||_2 <= C |h|^s [u]_{s,2}.

    ``corrected`` averages over B_r with 1/|B_r| = Q/(sigma r^Q) and squares the
    seminorm; ``as_printed`` keeps the averaging factor sigma r^-Q of the original derivation.
    """
    base = 2.0 * (2.0 ** (Q + 2 * s) + 1.0)
    return {"corrected": math.sqrt(base * Q / sigma), "as_printed": math.sqrt(base * sigma)}


@dataclass
class TranslationRow:
    h_norm: float
    diff: Estimate
    ratio: Estimate

    def to_dict(self) -> dict:
        return {"h_norm": self.h_norm, "diff_l2": self.diff.to_dict(), "ratio": self.ratio.to_dict()}


def translation_difference(gauge: Gauge, s, u: F.ScalarField, h, cfg: QuadratureConfig,
                           semi: Estimate | None = None) -> Estimate:
    """||R_h u - u||_2 / (|h|^s [u]_{s,2})."""
    params = _params(gauge, s)
    h = np.asarray(h, dtype=float)
    hn = float(eval_gauge(gauge, h))
    if hn == 0.0 or u.is_constant:
        return Estimate(0.0, 0.0, 0.0, 0, cfg.seed)
    semi = seminorm(gauge, params, u, cfg) if semi is None else semi
    return qd.ratio(translation_norm(gauge, u, h, cfg), semi) / hn**params.s


def translation_sweep(gauge: Gauge, s, u: F.ScalarField, h_norms, cfg: QuadratureConfig,
                      direction=None) -> tuple[list[TranslationRow], Estimate]:
    params = _params(gauge, s)
    spec = gauge.spec
    e = unit_direction(gauge, cfg.seed + 1) if direction is None else np.asarray(direction, float)
    semi = seminorm(gauge, params, u, cfg)
    rows = []
    for hn in h_norms:
        h = G.dilate(spec, hn, e)
        diff = translation_norm(gauge, u, h, cfg)
        rows.append(TranslationRow(float(hn), diff, qd.ratio(diff, semi) / hn**params.s))
    return rows, semi
