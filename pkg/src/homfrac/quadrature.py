"""Monte Carlo Haar integration and the geometric constants of a gauge.

Every estimator here is a stratified sum.  Each stratum is sampled in blocks and
every block draws from its own counter-based Philox stream keyed by
(seed, label, stratum, block), so results do not depend on how blocks are
scheduled across workers.  Block statistics are merged in a fixed order.
"""

from __future__ import annotations

import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from . import group as G
from .errors import DomainError, SymmetryViolation
from .gauge import Gauge, eval_gauge


@dataclass(frozen=True)
class QuadratureConfig:
    n_samples: int = 200_000
    seed: int = 0
    inner_levels: int = 20
    outer_levels: int = 20
    box_margin: float = 0.0
    target_rel_err: float = 0.01
    workers: int = 1
    block: int = 1 << 15

    def __post_init__(self):
        if self.n_samples < 100:
            raise DomainError("n_samples must be >= 100")
        if self.inner_levels < 1 or self.outer_levels < 1:
            raise DomainError("inner_levels and outer_levels must be >= 1")
        if self.target_rel_err <= 0:
            raise DomainError("target_rel_err must be positive")

    def scaled(self, factor: float) -> "QuadratureConfig":
        return replace(self, n_samples=max(100, int(self.n_samples * factor)))


@dataclass(frozen=True)
class Estimate:
    """value +- (2 std_err + tail_bound) is the reported interval."""

    value: float
    std_err: float = 0.0
    tail_bound: float = 0.0
    n_evals: int = 0
    seed: int = 0
    flags: tuple[str, ...] = ()

    @property
    def halfwidth(self) -> float:
        return 2.0 * self.std_err + self.tail_bound

    @property
    def interval(self) -> tuple[float, float]:
        return self.value - self.halfwidth, self.value + self.halfwidth

    def contains(self, target: float, k: float = 2.0) -> bool:
        return abs(self.value - target) <= k * self.std_err + self.tail_bound

    def agrees(self, other: "Estimate", k: float = 2.0) -> bool:
        """|a - b| within k combined sigma plus both tail bounds."""
        sig = math.hypot(self.std_err, other.std_err)
        return abs(self.value - other.value) <= k * sig + self.tail_bound + other.tail_bound

    def __add__(self, other):
        if not isinstance(other, Estimate):
            return replace(self, value=self.value + float(other))
        return Estimate(
            self.value + other.value,
            math.hypot(self.std_err, other.std_err),
            self.tail_bound + other.tail_bound,
            self.n_evals + other.n_evals,
            self.seed,
            tuple(sorted(set(self.flags) | set(other.flags))),
        )

    __radd__ = __add__

    def __neg__(self):
        return replace(self, value=-self.value)

    def __sub__(self, other):
        return self + (-other if isinstance(other, Estimate) else -float(other))

    def __mul__(self, c: float):
        c = float(c)
        return replace(self, value=c * self.value, std_err=abs(c) * self.std_err,
                       tail_bound=abs(c) * self.tail_bound)

    __rmul__ = __mul__

    def __truediv__(self, c: float):
        return self * (1.0 / float(c))

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "std_err": self.std_err,
            "tail_bound": self.tail_bound,
            "n_evals": self.n_evals,
            "seed": self.seed,
            "flags": list(self.flags),
        }


def ratio(num: Estimate, den: Estimate) -> Estimate:
    """num/den with first-order error propagation (independent inputs)."""
    r = num.value / den.value
    rel = math.hypot(num.std_err / max(abs(num.value), 1e-300), den.std_err / abs(den.value))
    tail = (num.tail_bound + abs(r) * den.tail_bound) / abs(den.value)
    return Estimate(r, abs(r) * rel, tail, num.n_evals + den.n_evals, num.seed)


# ---------------------------------------------------------------------------
# sampling engine


def stream(seed: int, label: str, stratum: int, block: int) -> np.random.Generator:
    """Counter-based generator for one (seed, label, stratum, block) cell."""
    seed = int(seed) & (2**64 - 1)
    key = [seed & 0xFFFFFFFF, seed >> 32, zlib.crc32(label.encode()), stratum, block]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


Sampler = Callable[[np.random.Generator, int], np.ndarray]


@dataclass
class StratumResult:
    mean: np.ndarray
    var_mean: np.ndarray
    n: int


def stratified(
    strata: Sequence[Sampler], n_per: int | Sequence[int], cfg: QuadratureConfig, label: str
) -> list[StratumResult]:
    """Run each sampler (rng, k) -> (k, p) weighted values; return per-stratum
    means and variances of the mean.  Strata integrals are the means."""
    counts = [n_per] * len(strata) if np.isscalar(n_per) else list(n_per)
    tasks = []
    for s, k in enumerate(counts):
        nb = max(1, math.ceil(k / cfg.block))
        base, extra = divmod(k, nb)
        for b in range(nb):
            tasks.append((s, b, base + (b < extra)))

    def run(task):
        s, b, k = task
        vals = np.asarray(strata[s](stream(cfg.seed, label, s, b), k), dtype=float)
        vals = vals.reshape(k, -1)
        mean = vals.mean(axis=0)
        return k, mean, ((vals - mean) ** 2).sum(axis=0)

    if cfg.workers > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(run, tasks))
    else:
        results = [run(t) for t in tasks]

    out: list[StratumResult] = []
    idx = 0
    for s, k in enumerate(counts):
        n, mean, m2 = 0, None, None
        while idx < len(tasks) and tasks[idx][0] == s:
            kb, mb, m2b = results[idx]
            if mean is None:
                n, mean, m2 = kb, mb, m2b
            else:  # Chan et al. pairwise merge, fixed order
                tot = n + kb
                delta = mb - mean
                mean = mean + delta * kb / tot
                m2 = m2 + m2b + delta**2 * n * kb / tot
                n = tot
            idx += 1
        var_mean = m2 / (n * max(n - 1, 1))
        out.append(StratumResult(mean, var_mean, n))
    return out


def geometric_counts(n_per: int, K: int, rate: float, floor: float = 0.05) -> list[int]:
    """Split a budget of K * n_per samples over K dyadic shells whose spread decays
    like 2^(-rate k) (Neyman allocation), keeping at least floor * n_per each."""
    w = np.maximum(2.0 ** (-rate * np.arange(K)), 1e-300)
    w = w / w.sum()
    lo = max(100, int(floor * n_per))
    counts = np.maximum(lo, np.round(w * K * n_per)).astype(int)
    return [int(c) for c in counts]


def combine(results: Sequence[StratumResult], col: int = 0) -> tuple[float, float, int]:
    """Sum of strata for one column: (value, variance, evaluations)."""
    vals = np.array([r.mean[col] for r in results])
    var = np.array([r.var_mean[col] for r in results])
    return float(np.sum(vals)), float(np.sum(var)), int(sum(r.n for r in results))


def box_volume(half_widths) -> float:
    return float(np.prod(2.0 * np.asarray(half_widths)))


def uniform_box(rng, half_widths, k, center=None) -> np.ndarray:
    hw = np.asarray(half_widths, dtype=float)
    pts = rng.uniform(-1.0, 1.0, size=(k, hw.size)) * hw
    return pts if center is None else pts + center


@dataclass(frozen=True, eq=False)
class SampleBox:
    """Centred box, optionally with a core box holding most of the integrand.

    Points come from the defensive mixture of the uniform laws on the box and
    on the core (half each); ``draw`` returns them with weights 1/density, so
    estimates stay unbiased over the whole box.
    """

    box: np.ndarray
    core: np.ndarray | None = None

    def __post_init__(self):
        box = np.asarray(self.box, dtype=float)
        object.__setattr__(self, "box", box)
        core = None if self.core is None else np.minimum(np.asarray(self.core, dtype=float), box)
        if core is not None and np.all(core >= box):
            core = None
        object.__setattr__(self, "core", core)

    @property
    def volume(self) -> float:
        return box_volume(self.box)

    def draw(self, rng, k: int) -> tuple[np.ndarray, np.ndarray]:
        vol = self.volume
        if self.core is None:
            return uniform_box(rng, self.box, k), np.full(k, vol)
        pick = rng.random(k) < 0.5
        pts = uniform_box(rng, self.box, k)
        pts[pick] = uniform_box(rng, self.core, int(pick.sum()))
        in_core = np.all(np.abs(pts) <= self.core, axis=1)
        density = 0.5 / vol + 0.5 * in_core / box_volume(self.core)
        return pts, 1.0 / density


def dyadic_edges(lo: float, hi: float) -> list[tuple[float, float]]:
    """Annuli [hi/2, hi), [hi/4, hi/2), ... down to lo (last one may be thinner)."""
    edges = []
    top = hi
    while top > lo * (1 + 1e-12):
        bot = max(top / 2.0, lo)
        edges.append((bot, top))
        top = bot
    return edges


def annulus_sampler(gauge: Gauge, lo: float, hi: float, weight: Callable) -> Sampler:
    """Sampler for int_{lo <= |h| < hi} weight(h, |h|) dh from the box of B_hi."""
    hw = gauge.box(hi)
    vol = box_volume(hw)

    def sample(rng, k):
        h = uniform_box(rng, hw, k)
        r = eval_gauge(gauge, h)
        inside = (r >= lo) & (r < hi)
        out = np.zeros((k,) + np.shape(weight(h[:1], r[:1]))[1:])
        if inside.any():
            out[inside] = weight(h[inside], r[inside])
        return vol * out

    return sample


def _finish(value, var, tail, n, cfg, check_budget=True, flags=()) -> Estimate:
    se = math.sqrt(max(var, 0.0))
    flags = tuple(flags)
    if check_budget and value != 0 and se / abs(value) > cfg.target_rel_err:
        flags += ("budget_exceeded",)
    return Estimate(float(value), se, float(tail), int(n), int(cfg.seed), flags)


# ---------------------------------------------------------------------------
# regions and plain integration


@dataclass(frozen=True)
class Box:
    half_widths: tuple[float, ...]
    center: tuple[float, ...] | None = None


@dataclass(frozen=True)
class Ball:
    gauge: Gauge
    radius: float = 1.0
    center: tuple[float, ...] | None = None


@dataclass(frozen=True)
class Annulus:
    gauge: Gauge
    r: float
    R: float


def _as_integrand(f):
    return f if callable(f) else (lambda x: np.full(x.shape[:-1], float(f)))


def integrate_haar(f, region, cfg: QuadratureConfig, label: str = "haar") -> Estimate:
    """int_region f dg for Haar (= coordinate Lebesgue) measure."""
    f = _as_integrand(f)
    if isinstance(region, Box):
        hw = np.asarray(region.half_widths, dtype=float)
        vol = box_volume(hw)
        center = None if region.center is None else np.asarray(region.center, dtype=float)
        samplers = [lambda rng, k: vol * f(uniform_box(rng, hw, k, center))]
    elif isinstance(region, Ball):
        gauge, rad = region.gauge, region.radius
        spec = gauge.spec
        hw = gauge.box(rad)
        vol = box_volume(hw)
        c = None if region.center is None else np.asarray(region.center, dtype=float)

        def ball(rng, k):
            z = uniform_box(rng, hw, k)
            inside = eval_gauge(gauge, z) < rad
            pts = z if c is None else G.multiply(spec, c, z)
            out = np.zeros(k)
            if inside.any():
                out[inside] = f(pts[inside])
            return vol * out

        samplers = [ball]
    elif isinstance(region, Annulus):
        if not 0 < region.r < region.R:
            raise DomainError("annulus needs 0 < r < R")
        samplers = [
            annulus_sampler(region.gauge, lo, hi, lambda h, r: f(h))
            for lo, hi in dyadic_edges(region.r, region.R)
        ]
    else:
        raise DomainError(f"unsupported region {region!r}")
    res = stratified(samplers, cfg.n_samples, cfg, label)
    value, var, n = combine(res)
    return _finish(value, var, 0.0, n, cfg)


# ---------------------------------------------------------------------------
# geometric constants


CONSTANTS_FACTOR = 4


@dataclass(frozen=True)
class GaugeConstants:
    """|B_1| and the horizontal second moments V_ij = int_{B_1} x_i x_j, with the
    constants derived from them through the polar formula:
    sigma_Q = Q |B_1|, tau_m = (Q+2) sum_i V_ii, and
    int_{B_1} x_i x_j |h|^{-Q-2s} = (Q+2) V_ij / (2 - 2s)."""

    Q: float
    m: int
    vol: Estimate
    V: np.ndarray = field(repr=False)
    V_err: np.ndarray = field(repr=False)

    @property
    def sigma(self) -> Estimate:
        return self.vol * self.Q

    def moment_matrix(self, s: float) -> tuple[np.ndarray, np.ndarray]:
        c = (self.Q + 2.0) / (2.0 - 2.0 * s)
        return c * self.V, c * self.V_err

    def tau_hat_sq(self) -> np.ndarray:
        return (self.Q + 2.0) * np.diag(self.V)

    def tau(self) -> Estimate:
        val = (self.Q + 2.0) * float(np.trace(self.V))
        err = (self.Q + 2.0) * float(np.sqrt(np.sum(np.diag(self.V_err) ** 2)))
        return Estimate(val, err, 0.0, self.vol.n_evals, self.vol.seed)


@lru_cache(maxsize=64)
def gauge_constants(gauge: Gauge, cfg: QuadratureConfig) -> GaugeConstants:
    spec = gauge.spec
    hor = spec.horizontal
    m = hor.size
    hw = gauge.box(1.0)
    vol = box_volume(hw)
    pairs = [(a, b) for a in range(m) for b in range(a, m)]

    def sample(rng, k):
        z = uniform_box(rng, hw, k)
        inside = (eval_gauge(gauge, z) < 1.0)[:, None]
        cols = [np.ones(k)] + [z[:, hor[a]] * z[:, hor[b]] for a, b in pairs]
        return vol * inside * np.stack(cols, axis=1)

    n = cfg.n_samples * CONSTANTS_FACTOR
    res = stratified([sample], n, cfg, "constants")
    vol_est = _finish(*combine(res, 0)[:2], 0.0, n, cfg)
    V = np.zeros((m, m))
    V_err = np.zeros((m, m))
    for col, (a, b) in enumerate(pairs, start=1):
        val, var, _ = combine(res, col)
        V[a, b] = V[b, a] = val
        V_err[a, b] = V_err[b, a] = math.sqrt(var)
    return GaugeConstants(spec.Q, m, vol_est, V, V_err)


def vol_B1(gauge: Gauge, cfg: QuadratureConfig) -> Estimate:
    return gauge_constants(gauge, cfg).vol


def sigma_Q(gauge: Gauge, cfg: QuadratureConfig) -> Estimate:
    """sigma_Q = Q |B_1| (gamma = 0 case of the polar formula)."""
    return gauge_constants(gauge, cfg).sigma


def sigma_Q_exterior(gauge: Gauge, s: float, cfg: QuadratureConfig) -> Estimate:
    """Independent estimate 2s int_{|h|>1} |h|^{-Q-2s} dh.

    By homogeneity the annulus {2^k <= |h| < 2^(k+1)} contributes 2^(-2sk) times
    the first one, so the exterior integral is I_0 / (1 - 2^(-2s)) exactly.
    """
    Q = gauge.spec.Q
    samp = annulus_sampler(gauge, 1.0, 2.0, lambda h, r: r ** (-Q - 2 * s))
    res = stratified([samp], cfg.n_samples * CONSTANTS_FACTOR, cfg, "sigma_exterior")
    val, var, n = combine(res)
    c = 2 * s / (1 - 2 ** (-2 * s))
    return _finish(c * val, c * c * var, 0.0, n, cfg)


def _require_symmetry(gauge: Gauge):
    if not (gauge.horizontal_radial or gauge.horizontal_even):
        raise SymmetryViolation(f"{gauge.label} is neither horizontally radial nor even")
    if gauge.spec.m < 1:
        raise DomainError("group has no weight-one coordinates")


def tau_m(gauge: Gauge, cfg: QuadratureConfig) -> Estimate:
    """tau_m = (Q+2) int_{B_1} sum_{d_i=1} x_i^2 dh."""
    _require_symmetry(gauge)
    return gauge_constants(gauge, cfg).tau()


def moment_integral(gauge: Gauge, i: int, j: int, s: float, cfg: QuadratureConfig) -> Estimate:
    """int_{B_1} x_i x_j |h|^{-Q-2s} dh (0-based weight-one indices i, j).

    The integrand is homogeneous of degree 2 - Q - 2s, so the shell
    {2^-(k+1) <= |h| < 2^-k} contributes 2^(-k(2-2s)) times the outermost one.
    Only that shell is sampled; the geometric series is summed exactly.
    """
    spec = gauge.spec
    w = spec.w()
    if abs(w[i] - 1) > 1e-12 or abs(w[j] - 1) > 1e-12:
        raise DomainError("moment_integral needs weight-one indices")
    if not 0 < s < 1:
        raise DomainError("s must lie in (0, 1)")
    Q = spec.Q
    samp = annulus_sampler(gauge, 0.5, 1.0, lambda h, r: h[:, i] * h[:, j] * r ** (-Q - 2 * s))
    res = stratified([samp], cfg.n_samples * CONSTANTS_FACTOR, cfg, f"moment{i},{j}")
    val, var, n = combine(res)
    c = 1.0 / (1.0 - 2.0 ** (-(2 - 2 * s)))
    return _finish(c * val, c * c * var, 0.0, n, cfg, check_budget=i == j)


def annulus_power_integral(
    gauge: Gauge, gamma: float, r: float, R: float, cfg: QuadratureConfig
) -> Estimate:
    """int_{r < |g| < R} |g|^{-gamma} dg."""
    return integrate_haar(
        lambda x: eval_gauge(gauge, x) ** (-gamma), Annulus(gauge, r, R), cfg, f"power{gamma:g}"
    )


def polar_closed_form(Q: float, sigma: float, gamma: float, r: float, R: float) -> float:
    if abs(gamma - Q) < 1e-12:
        return sigma * math.log(R / r)
    return sigma / (Q - gamma) * (R ** (Q - gamma) - r ** (Q - gamma))
