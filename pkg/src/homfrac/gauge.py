"""Homogeneous norms (gauges) and the left-invariant distance they induce."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import group as G
from .errors import ConfigError, DomainError, GaugeGroupMismatch, RootBracketFailure
from .group import GroupSpec

KINDS = ("koranyi", "ball_gauge", "parabolic", "euclidean_power")


def _is_heisenberg(spec: GroupSpec) -> bool:
    if spec.n < 3 or spec.n % 2 == 0:
        return False
    ref = G.heisenberg((spec.n - 1) // 2)
    return spec.weights == ref.weights and np.allclose(spec._table, ref._table)


def _common_multiple(weights) -> Fraction:
    """Smallest rational L with L/d integer for every distinct weight d."""
    fracs = {Fraction(d).limit_denominator(1000) for d in weights}
    num = 1
    den = 0
    for f in fracs:
        num = num * f.numerator // math.gcd(num, f.numerator)
        den = math.gcd(den, f.denominator)
    return Fraction(num, den)


@dataclass(frozen=True)
class Gauge:
    """A homogeneous norm bound to a group.

    ``horizontal_radial`` / ``horizontal_even`` record how the gauge depends on
    the weight-one coordinates; the s -> 1 limit constants need this.
    """

    kind: str
    spec: GroupSpec
    r: float = 1.0
    horizontal_radial: bool = True
    horizontal_even: bool = True

    def __call__(self, g) -> np.ndarray:
        return eval_gauge(self, g)

    @property
    def label(self) -> str:
        return f"ball_gauge:{self.r:g}" if self.kind == "ball_gauge" else self.kind

    def unit_box(self) -> np.ndarray:
        """Half-widths of a coordinate box containing the closed unit ball."""
        n = self.spec.n
        if self.kind == "koranyi":
            box = np.ones(n)
            box[-1] = 0.25
            return box
        if self.kind == "ball_gauge":
            return np.full(n, self.r)
        return np.ones(n)

    def box(self, radius: float) -> np.ndarray:
        """Half-widths of a coordinate box containing B_radius."""
        return self.unit_box() * radius ** self.spec.w()

    def corner_radius(self, half_widths) -> float:
        """Gauge radius of a centred coordinate box (every shipped gauge is
        monotone in each |x_j|, so the corner maximizes it)."""
        return float(eval_gauge(self, np.asarray(half_widths, dtype=float)))


def make_gauge(kind: str, spec: GroupSpec, r: float | None = None) -> Gauge:
    if kind == "koranyi":
        if not _is_heisenberg(spec):
            raise GaugeGroupMismatch(f"koranyi gauge needs a Heisenberg group, got {spec.name}")
    elif kind == "parabolic":
        if spec.weights != (1.0, 2.0) or not spec.is_abelian:
            raise GaugeGroupMismatch(f"parabolic gauge needs abelian weights (1,2), got {spec.name}")
    elif kind == "ball_gauge":
        r = 1.0 if r is None else float(r)
        if r <= 0:
            raise DomainError("ball_gauge radius must be positive")
        return Gauge(kind, spec, r)
    elif kind != "euclidean_power":
        raise ConfigError(f"unknown gauge kind {kind!r}; expected one of {KINDS}")
    return Gauge(kind, spec)


def parse_gauge(text: str, spec: GroupSpec) -> Gauge:
    """``koranyi``, ``parabolic``, ``euclidean_power``, ``ball_gauge:0.5``."""
    kind, _, arg = text.partition(":")
    try:
        r = float(arg) if arg else None
    except ValueError as exc:
        raise ConfigError(f"bad gauge parameter in {text!r}") from exc
    return make_gauge(kind, spec, r)


def default_gauge(spec: GroupSpec) -> Gauge:
    if _is_heisenberg(spec):
        return make_gauge("koranyi", spec)
    if spec.name == "parabolic_r2":
        return make_gauge("parabolic", spec)
    return make_gauge("euclidean_power", spec)


def eval_gauge(gauge: Gauge, g) -> np.ndarray:
    x = np.asarray(g, dtype=float)
    if x.shape[-1] != gauge.spec.n:
        raise GaugeGroupMismatch(f"point has {x.shape[-1]} coordinates, group has {gauge.spec.n}")
    kind = gauge.kind
    if kind == "koranyi":
        z2 = np.sum(x[..., :-1] ** 2, axis=-1)
        return (z2**2 + 16.0 * x[..., -1] ** 2) ** 0.25
    if kind == "parabolic":
        return np.abs(x[..., 0]) + np.sqrt(np.abs(x[..., 1]))
    if kind == "euclidean_power":
        return _euclidean_power(gauge.spec, x)
    return ball_gauge(gauge.spec, gauge.r, x)


def _euclidean_power(spec: GroupSpec, x: np.ndarray) -> np.ndarray:
    """(sum over weight layers of |x_layer|^(2L/d))^(1/(2L)), poly-radial."""
    w = spec.w()
    L = float(_common_multiple(spec.weights))
    total = np.zeros(x.shape[:-1])
    for d in np.unique(w):
        layer = np.sum(x[..., w == d] ** 2, axis=-1)
        total = total + layer ** (L / d)
    return total ** (0.5 / L)


def ball_gauge(spec: GroupSpec, r: float, g, max_iter: int = 200) -> np.ndarray:
    """|g|_r: the root of sum_j x_j^2 / lambda^(2 d_j) = r^2.

    In mu = log(lambda) the function psi(mu) = log sum_j x_j^2 e^(-2 d_j mu) - 2 log r
    is convex and strictly decreasing, so Newton started at the left bracket
    mu_0 = max_j log(|x_j|/r)/d_j (where psi >= 0) increases monotonically to the
    root and never overshoots.
    """
    if r <= 0:
        raise DomainError("ball_gauge radius must be positive")
    x = np.asarray(g, dtype=float)
    shape = x.shape[:-1]
    w = spec.w()
    ax = np.abs(x.reshape(-1, spec.n))
    zero = ~np.any(ax > 0, axis=1)
    with np.errstate(divide="ignore"):
        logx = np.log(ax)
    logx[zero] = 0.0
    mu = np.max((logx - math.log(r)) / w, axis=1)
    two_log_r = 2.0 * math.log(r)
    for _ in range(max_iter):
        expo = 2.0 * logx - 2.0 * w * mu[:, None]
        top = expo.max(axis=1)
        e = np.exp(expo - top[:, None])
        tot = e.sum(axis=1)
        psi = top + np.log(tot) - two_log_r
        dpsi = -2.0 * (e @ w) / tot
        step = -psi / dpsi
        mu = mu + step
        if np.all(np.abs(step) <= 1e-14 * np.maximum(1.0, np.abs(mu))):
            break
    else:
        raise RootBracketFailure("Newton iteration for ball_gauge did not converge")
    out = np.exp(mu)
    out[zero] = 0.0
    return out.reshape(shape)


def gauge_distance(gauge: Gauge, g, h) -> np.ndarray:
    """d(g, h) = |h^{-1} g|."""
    spec = gauge.spec
    return eval_gauge(gauge, G.multiply(spec, G.inverse(spec, h), g))


@dataclass
class GaugeReport:
    gauge: str
    group: str
    n_samples: int
    triangle_max_violation: float
    triangle_violations: int
    homogeneity_max_err: float
    symmetry_max_err: float
    radial_max_err: float
    even_max_err: float
    horizontal_probe: bool

    @property
    def ok(self) -> bool:
        return (
            self.triangle_violations == 0
            and self.homogeneity_max_err <= 1e-10
            and self.symmetry_max_err <= 1e-12
            and self.horizontal_probe
        )

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["ok"] = self.ok
        return d


def _random_orthogonal(rng, m):
    q, r = np.linalg.qr(rng.standard_normal((m, m)))
    return q * np.sign(np.diag(r))


def check_gauge_properties(
    gauge: Gauge, n_samples: int = 10_000, seed: int = 0, tol: float = 1e-10
) -> GaugeReport:
    """Sampled checks of the norm axioms and of the horizontal symmetry flags.

    Pairs are drawn at log-uniform scales in [1e-2, 1e2] so that the
    triangle inequality is probed across mismatched sizes.  Violations are
    measured relative to |g| + |h|.
    """
    if n_samples < 1:
        raise DomainError("n_samples must be >= 1")
    spec = gauge.spec
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6A09]))
    scales = 10.0 ** rng.uniform(-2, 2, size=(2, n_samples))
    g = G.dilate(spec, scales[0], rng.standard_normal((n_samples, spec.n)))
    h = G.dilate(spec, scales[1], rng.standard_normal((n_samples, spec.n)))
    ng, nh = eval_gauge(gauge, g), eval_gauge(gauge, h)
    ngh = eval_gauge(gauge, G.multiply(spec, g, h))
    rel = (ngh - ng - nh) / (ng + nh)
    tri = float(max(rel.max(), 0.0))

    hom = 0.0
    for lam in (1e-3, 1.0, 1e3):
        val = eval_gauge(gauge, G.dilate(spec, lam, g))
        hom = max(hom, float(np.max(np.abs(val - lam * ng) / (lam * ng))))
    sym = float(np.max(np.abs(eval_gauge(gauge, G.inverse(spec, g)) - ng) / ng))

    hor = spec.horizontal
    radial_err = even_err = 0.0
    if hor.size:
        flipped = g.copy()
        flipped[:, hor] *= rng.choice([-1.0, 1.0], size=(n_samples, hor.size))
        even_err = float(np.max(np.abs(eval_gauge(gauge, flipped) - ng) / ng))
        rotated = g.copy()
        rotated[:, hor] = g[:, hor] @ _random_orthogonal(rng, hor.size).T
        radial_err = float(np.max(np.abs(eval_gauge(gauge, rotated) - ng) / ng))
        if hor.size == 1:
            radial_err = even_err
    probe = (not gauge.horizontal_radial or radial_err <= tol) and (
        not gauge.horizontal_even or even_err <= tol
    )
    return GaugeReport(
        gauge=gauge.label,
        group=spec.name,
        n_samples=n_samples,
        triangle_max_violation=tri,
        triangle_violations=int(np.sum(rel > tol)),
        homogeneity_max_err=hom,
        symmetry_max_err=sym,
        radial_max_err=radial_err,
        even_max_err=even_err,
        horizontal_probe=bool(probe),
    )
