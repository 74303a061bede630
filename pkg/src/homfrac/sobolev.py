"""Sobolev embedding constants, the discrete extremal search, mollification and
truncation, the Rellich projection defect, the multiplication bound and the
abelian translation counterexample."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import integrate
from scipy.interpolate import RegularGridInterpolator
from scipy.spatial import cKDTree

from . import fields as F
from . import fracop as fo
from . import group as G
from . import quadrature as qd
from .errors import DomainError, NormalizationError, OverlapError, ResourceLimit, ZeroField
from .gauge import Gauge, eval_gauge
from .quadrature import Estimate, QuadratureConfig

# ---------------------------------------------------------------------------
# constants


def critical_exponent(Q: float, s: float) -> float:
    """2*(s) = 2Q / (Q - 2s)."""
    if not 0 < s < 1:
        raise DomainError(f"s must lie in (0, 1), got {s}")
    if not 2 * s < Q:
        raise DomainError(f"critical exponent needs 2s < Q, got s={s}, Q={Q}")
    return 2.0 * Q / (Q - 2.0 * s)


def min_power_sum(a: float, b: float, A: float, B: float) -> tuple[float, float]:
    """Minimizer and minimum of f(r) = A r^a + B r^-b over r > 0."""
    if min(a, b, A, B) <= 0:
        raise DomainError("min_power_sum needs a, b, A, B > 0")
    r_star = (b * B / (a * A)) ** (1.0 / (a + b))
    t = b / a
    f_min = (t ** (a / (a + b)) + t ** (-b / (a + b))) * A ** (b / (a + b)) * B ** (a / (a + b))
    return r_star, f_min


def _check_params(Q, s):
    critical_exponent(Q, s)


def hedberg_bracket(Q: float, s: float, corrected: bool = False) -> float:
    """((Q-2s)/2s)^(2s/Q) + ((Q-2s)/2s)^(-e) with e = (Q-2s)/4 as printed,
    e = (Q-2s)/Q after the power-sum minimization is redone."""
    _check_params(Q, s)
    t = (Q - 2 * s) / (2 * s)
    e = (Q - 2 * s) / Q if corrected else (Q - 2 * s) / 4
    return t ** (2 * s / Q) + t ** (-e)


def hedberg_constant(Q: float, s: float, sigma_Q: float) -> float:
    """C_{Q,s} = sigma_Q^(-(Q+2s)/(4(Q-2s))) * bracket, in the printed form."""
    if sigma_Q <= 0:
        raise DomainError("sigma_Q must be positive")
    return sigma_Q ** (-(Q + 2 * s) / (4 * (Q - 2 * s))) * hedberg_bracket(Q, s)


def embedding_constant(Q: float, s: float, sigma_Q: float, corrected: bool = False) -> float:
    """S with ||u||_{2*(s)} <= S [u]_{s,2}.

    The printed form is C_{Q,s}^(Q/(Q-2s)).  The corrected form averages over
    balls of measure sigma_Q r^Q / Q and uses the corrected bracket.
    """
    e = Q / (Q - 2 * s)
    if not corrected:
        return hedberg_constant(Q, s, sigma_Q) ** e
    if sigma_Q <= 0:
        raise DomainError("sigma_Q must be positive")
    return hedberg_bracket(Q, s, corrected=True) ** e * (Q / sigma_Q) ** ((Q + 2 * s) / (2 * Q))


# ---------------------------------------------------------------------------
# grid fields

_MAGIC = b"HFG1"


@dataclass
class GridField:
    """Values at the nodes of a uniform coordinate grid over a centred box,
    zero outside; node i stands for the cell of volume ``cell_volume`` around it."""

    half_widths: np.ndarray
    shape: tuple[int, ...]
    values: np.ndarray

    def __post_init__(self):
        self.half_widths = np.asarray(self.half_widths, dtype=float)
        self.shape = tuple(int(k) for k in self.shape)
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if len(self.shape) != self.half_widths.size or min(self.shape) < 3:
            raise DomainError("grid needs one count >= 3 per axis")
        if self.values.size != int(np.prod(self.shape)):
            raise DomainError("grid values do not match the grid shape")

    @property
    def spacing(self) -> np.ndarray:
        return 2.0 * self.half_widths / (np.asarray(self.shape) - 1)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(-h, h, k) for h, k in zip(self.half_widths, self.shape)]

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(mesh, axis=-1).reshape(-1, len(self.shape))

    def interior(self) -> np.ndarray:
        """Mask of nodes off the outermost shell."""
        idx = np.indices(self.shape).reshape(len(self.shape), -1)
        hi = (np.asarray(self.shape) - 1)[:, None]
        return np.all((idx > 0) & (idx < hi), axis=0)

    def check(self) -> None:
        if not np.all(np.isfinite(self.values)):
            raise DomainError("grid values must be finite")
        if np.any(self.values[~self.interior()] != 0.0):
            raise DomainError("grid boundary shell must vanish")

    def with_values(self, values) -> "GridField":
        return GridField(self.half_widths.copy(), self.shape, np.asarray(values, dtype=float).copy())

    def dilated(self, spec: G.GroupSpec, lam: float, p: float) -> "GridField":
        """lam^(-Q/p) u o delta_(1/lam) on the dilated grid (node values carried over)."""
        if lam <= 0:
            raise DomainError("dilation factor must be positive")
        return GridField(self.half_widths * lam ** spec.w(), self.shape,
                         self.values * lam ** (-spec.Q / p))

    @classmethod
    def sample(cls, gauge: Gauge, u: F.ScalarField, L: float = 6.0, n: int | Sequence[int] = 16):
        """Grid over the coordinate box of B_L with the boundary shell zeroed."""
        dim = gauge.spec.n
        shape = (int(n),) * dim if np.isscalar(n) else tuple(n)
        grid = cls(gauge.box(L), shape, np.zeros(int(np.prod(shape))))
        vals = u(grid.points())
        vals[~grid.interior()] = 0.0
        grid.values = vals
        return grid

    def as_field(self, name: str = "grid") -> F.ScalarField:
        """Multilinear interpolant, zero outside the box."""
        interp = RegularGridInterpolator(
            self.axes(), self.values.reshape(self.shape), bounds_error=False, fill_value=0.0
        )
        return F.ScalarField(
            lambda x: interp(x.reshape(-1, x.shape[-1])).reshape(x.shape[:-1]),
            name,
            box=tuple(self.half_widths),
            sup=float(np.max(np.abs(self.values))),
            smoothness="lipschitz",
        )

    def dump(self, path) -> None:
        """magic, ndim, dims, half-widths, then row-major float64, little-endian."""
        d = len(self.shape)
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack(f"<I{d}I", d, *self.shape))
            fh.write(struct.pack(f"<{d}d", *self.half_widths))
            fh.write(self.values.astype("<f8").tobytes())

    @classmethod
    def load(cls, path) -> "GridField":
        with open(path, "rb") as fh:
            if fh.read(4) != _MAGIC:
                raise DomainError(f"{path} is not an HFG1 grid dump")
            (d,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{d}I", fh.read(4 * d))
            hw = struct.unpack(f"<{d}d", fh.read(8 * d))
            values = np.frombuffer(fh.read(), dtype="<f8")
        return cls(np.array(hw), shape, values.astype(float))


def radial_bump(gauge: Gauge, R: float = 1.0) -> F.ScalarField:
    """exp(-1/(1 - (|g|/R)^4)) on B_R: fills the gauge ball, so it is resolved
    on grids over gauge.box(L) far better than a coordinate bump."""
    if R <= 0:
        raise DomainError("bump radius must be positive")

    def func(x):
        q = (eval_gauge(gauge, x) / R) ** 4
        out = np.zeros_like(q)
        inside = q < 1.0
        out[inside] = np.exp(-1.0 / (1.0 - q[inside]))
        return out

    return F.ScalarField(func, f"radial_bump:R={R:g}", radius=lambda g: R,
                         box=tuple(gauge.box(R)), sup=math.exp(-1.0))


def lp_norm(u: GridField, p: float) -> float:
    return float((u.cell_volume * np.sum(np.abs(u.values) ** p)) ** (1.0 / p))


# ---------------------------------------------------------------------------
# grid operator

MAX_PAIRS = 4 * 10**8
DENSE_LIMIT = 6000
EXTERIOR_SAMPLES = 4096


def _containment_radius(spec, gauge: Gauge, pts: np.ndarray, outer: np.ndarray) -> np.ndarray:
    """Largest r (by bisection) with the box bound of g.B_r inside the box ``outer``."""
    lo = np.zeros(len(pts))
    hi = np.full(len(pts), float(eval_gauge(gauge, outer)))
    a = np.abs(pts)
    unit = gauge.unit_box()
    w = spec.w()
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        fits = np.all(G.box_product(spec, a, unit * mid[:, None] ** w) <= outer, axis=1)
        lo = np.where(fits, mid, lo)
        hi = np.where(fits, hi, mid)
    return lo


def _unit_sphere_samples(gauge: Gauge, rng, k: int) -> np.ndarray:
    """Points on the unit gauge sphere distributed by the polar surface measure
    (radial projection of uniform points in B_1)."""
    spec = gauge.spec
    hw = gauge.unit_box()
    out = []
    while sum(len(o) for o in out) < k:
        z = qd.uniform_box(rng, hw, 2 * k)
        r = eval_gauge(gauge, z)
        keep = (r < 1.0) & (r > 1e-6)
        out.append(G.dilate(spec, 1.0 / r[keep], z[keep]))
    return np.concatenate(out)[:k]


@dataclass
class GridOperator:
    """Discrete L_s on a grid: (Lu)_i = 2 cv sum_j W_ij (u_i - u_j) + 2 E_i u_i,
    with W_ij = |x_j^-1 x_i|^(-Q-2s) off the diagonal and E_i the kernel mass of
    the exterior of the union of cells.  [u]^2 = cv u.Lu."""

    gauge: Gauge
    s: float
    half_widths: np.ndarray
    shape: tuple[int, ...]
    cv: float
    points: np.ndarray = field(repr=False)
    rowsum: np.ndarray = field(repr=False)
    exterior: np.ndarray = field(repr=False)
    exterior_err: np.ndarray = field(repr=False)
    W: np.ndarray | None = field(default=None, repr=False)

    def _rows(self, a: int, b: int) -> np.ndarray:
        spec = self.gauge.spec
        P = self.points
        r = eval_gauge(self.gauge, G.multiply(spec, -P[None, :, :], P[a:b, None, :]))
        with np.errstate(divide="ignore"):
            W = r ** (-(spec.Q + 2 * self.s))
        W[np.arange(b - a), np.arange(a, b)] = 0.0
        return W

    def _blocks(self):
        N = len(self.points)
        step = max(1, 2_000_000 // N)
        for a in range(0, N, step):
            b = min(N, a + step)
            yield a, b, (self.W[a:b] if self.W is not None else self._rows(a, b))

    def apply(self, values) -> np.ndarray:
        u = np.asarray(values, dtype=float)
        Wu = np.empty_like(u)
        for a, b, W in self._blocks():
            Wu[a:b] = W @ u
        return 2.0 * self.cv * (self.rowsum * u - Wu) + 2.0 * self.exterior * u

    def seminorm_sq(self, values) -> float:
        u = np.asarray(values, dtype=float)
        return float(self.cv * u @ self.apply(u))

    def exterior_bound(self, values) -> float:
        """Error bound on seminorm_sq from the sampled exterior masses (2 sigma)."""
        u = np.asarray(values, dtype=float)
        return float(4.0 * self.cv * np.sum(self.exterior_err * u * u))


def _build_operator(gauge: Gauge, s: float, half_widths: tuple, shape: tuple, seed: int,
                    dense: bool | None) -> GridOperator:
    spec = gauge.spec
    grid = GridField(np.array(half_widths), shape, np.zeros(int(np.prod(shape))))
    P = grid.points()
    N = len(P)
    if N * N > MAX_PAIRS:
        raise ResourceLimit(f"{N * N} grid pairs exceed the cap {MAX_PAIRS}")
    dense = N <= DENSE_LIMIT if dense is None else dense
    op = GridOperator(gauge, s, grid.half_widths, grid.shape, grid.cell_volume, P,
                      np.zeros(N), np.zeros(N), np.zeros(N))
    if dense:
        op.W = np.zeros((N, N))
        for a, b, _ in op._blocks():
            op.W[a:b] = op._rows(a, b)
        op.rowsum = op.W.sum(axis=1)
    else:
        for a, b, W in op._blocks():
            op.rowsum[a:b] = W.sum(axis=1)

    # Exterior mass: B(x_i, r0) lies inside the cells, so
    # E_i = int_{|h| >= r0} k(h) 1{x_i h outside} dh, sampled exactly from the
    # normalized kernel measure on {|h| >= r0} (common samples for every node).
    outer = grid.half_widths + 0.5 * grid.spacing
    inner = grid.interior()
    r0 = _containment_radius(spec, gauge, P[inner], outer)
    rng = qd.stream(seed, "grid_exterior", 0, 0)
    omega = _unit_sphere_samples(gauge, rng, EXTERIOR_SAMPLES)
    radial = np.minimum(rng.uniform(1e-12, 1.0, EXTERIOR_SAMPLES) ** (-1.0 / (2 * s)), 1e6)
    h = G.dilate(spec, radial, omega)
    sigma = qd.gauge_constants(gauge, QuadratureConfig(seed=seed)).sigma.value
    frac = np.empty(len(r0))
    for k, (x, r) in enumerate(zip(P[inner], r0)):
        y = G.multiply(spec, x, G.dilate(spec, r, h))
        frac[k] = np.mean(np.any(np.abs(y) > outer, axis=1))
    mass = sigma / (2 * s) * r0 ** (-2 * s)
    op.exterior[inner] = mass * frac
    op.exterior_err[inner] = 2.0 * mass * np.sqrt(np.maximum(frac * (1 - frac), 0.25 / EXTERIOR_SAMPLES)
                                                  / EXTERIOR_SAMPLES)
    return op


@lru_cache(maxsize=8)
def _cached_operator(gauge, s, half_widths, shape, seed, dense):
    return _build_operator(gauge, s, half_widths, shape, seed, dense)


def grid_operator(gauge: Gauge, s: float, u: GridField, seed: int = 0,
                  dense: bool | None = None) -> GridOperator:
    fo.FracParams.for_gauge(gauge, s)
    return _cached_operator(gauge, float(s), tuple(np.round(u.half_widths, 14)), u.shape,
                            int(seed), dense)


def grid_seminorm(gauge: Gauge, s: float, u: GridField, seed: int = 0) -> float:
    """Discrete [u]_{s,2}^2: ordered pairs of distinct nodes plus each node
    paired with the exterior of the grid, where u = 0."""
    u.check()
    if not np.any(u.values):
        return 0.0
    return grid_operator(gauge, s, u, seed).seminorm_sq(u.values)


def extrapolated_seminorm(gauge: Gauge, s: float, coarse: GridField, fine: GridField,
                          seed: int = 0) -> float:
    """Richardson extrapolation of grid_seminorm, whose leading error is
    O(h^(2-2s)) from the omitted diagonal."""
    h = coarse.spacing[0] / fine.spacing[0]
    a, b = grid_seminorm(gauge, s, coarse, seed), grid_seminorm(gauge, s, fine, seed)
    c = h ** (2 - 2 * s)
    return (c * b - a) / (c - 1)


def sobolev_quotient(gauge: Gauge, s: float, u: GridField, seed: int = 0) -> float:
    """[u]^2 / ||u||_{2*(s)}^2 on the grid."""
    p = critical_exponent(gauge.spec.Q, s)
    if not np.any(u.values):
        raise ZeroField("the Sobolev quotient is undefined for u = 0")
    return grid_seminorm(gauge, s, u, seed) / lp_norm(u, p) ** 2


# ---------------------------------------------------------------------------
# extremal search


@dataclass(frozen=True)
class QuotientTrace:
    iteration: int
    quotient: float
    seminorm_sq: float
    lp_norm: float
    step_size: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class OptimizeResult:
    field: GridField
    trace: list[QuotientTrace]
    residual: float
    multiplier: float
    stagnated: bool
    clamped: list[int]

    def __iter__(self):
        yield self.field
        yield self.trace


def euler_lagrange_residual(op: GridOperator, u: np.ndarray, p: float,
                            mask: np.ndarray) -> tuple[float, float]:
    """||Lu - mu u^(p-1)|| / ||Lu|| over the interior, mu = [u]^2 / ||u||_p^p."""
    Lu = op.apply(u)
    norm_p = (op.cv * np.sum(np.abs(u) ** p))
    mu = op.seminorm_sq(u) / norm_p
    res = Lu - mu * np.abs(u) ** (p - 2) * u
    return float(np.linalg.norm(res[mask]) / np.linalg.norm(Lu[mask])), float(mu)


def optimize_quotient(gauge: Gauge, s: float, init: GridField, iters: int = 200,
                      step: float = 0.5, seed: int = 0, tol: float = 1e-3,
                      max_halvings: int = 25, armijo: float = 1e-4) -> OptimizeResult:
    """Projected steepest descent on the discrete Sobolev quotient.

    Each trial step u - t grad is clamped to u >= 0 and rescaled to unit
    2*(s)-norm; t starts at ``step`` and halves until the Armijo condition holds.
    The start is replaced by |u|, which does not increase the quotient.
    """
    init.check()
    if not np.any(init.values):
        raise ZeroField("optimize_quotient needs a nonzero start")
    p = critical_exponent(gauge.spec.Q, s)
    op = grid_operator(gauge, s, init, seed)
    cv = op.cv
    mask = init.interior()

    def normalize(v):
        return v / (cv * np.sum(np.abs(v) ** p)) ** (1.0 / p)

    u = normalize(np.abs(init.values))
    semi = op.seminorm_sq(u)
    trace = [QuotientTrace(0, semi, semi, 1.0, 0.0)]
    stagnated = False
    clamped = []
    residual, mu = euler_lagrange_residual(op, u, p, mask)
    for it in range(1, iters + 1):
        if residual <= tol:
            break
        q = semi
        grad = 2.0 * (op.apply(u) - q * np.abs(u) ** (p - 2) * u)
        grad[~mask] = 0.0
        gnorm2 = cv * float(grad @ grad)
        t = step
        for _ in range(max_halvings):
            raw = u - t * grad
            trial = np.maximum(raw, 0.0)
            if np.any(trial):
                trial = normalize(trial)
                semi_t = op.seminorm_sq(trial)
                if semi_t <= q - armijo * t * gnorm2:
                    break
            t *= 0.5
        else:
            stagnated = True
            break
        if np.any(raw < 0):
            clamped.append(it)
        u, semi = trial, semi_t
        trace.append(QuotientTrace(it, semi, semi, 1.0, t))
        residual, mu = euler_lagrange_residual(op, u, p, mask)
    return OptimizeResult(init.with_values(u), trace, residual, mu, stagnated, clamped)


def quotient_trace_monotone(trace: Sequence[QuotientTrace]) -> bool:
    q = [row.quotient for row in trace]
    return all(b <= a * (1 + 1e-12) for a, b in zip(q, q[1:]))


# ---------------------------------------------------------------------------
# continuum norms and the Sobolev inequality


def lp_norm_estimate(gauge: Gauge, u: F.ScalarField, p: float, cfg: QuadratureConfig) -> Estimate:
    """||u||_p over the support box, with the p-th root propagated to first order."""
    box = u.support_box(gauge)
    if box is None:
        raise DomainError(f"field {u.name} has no support box")
    est = qd.integrate_haar(lambda x: np.abs(u(x)) ** p, qd.Box(tuple(box)), cfg, f"lp{p:g}")
    val = max(est.value, 0.0) ** (1.0 / p)
    se = val / (p * est.value) * est.std_err if est.value > 0 else 0.0
    return replace(est, value=val, std_err=se)


@dataclass
class SobolevCheck:
    group: str
    gauge: str
    field: str
    s: float
    lp: Estimate
    seminorm: Estimate
    constant_printed: float
    constant_corrected: float

    @property
    def ratio_printed(self) -> float:
        """||u||_{2*} / (S [u]); the inequality is ratio <= 1."""
        return self.lp.value / (self.constant_printed * self.seminorm.value)

    @property
    def ratio_corrected(self) -> float:
        return self.lp.value / (self.constant_corrected * self.seminorm.value)

    def holds(self, slack: float = 1.05) -> bool:
        return self.ratio_printed <= slack

    def to_dict(self) -> dict:
        return {
            "group": self.group,
            "gauge": self.gauge,
            "field": self.field,
            "s": self.s,
            "lp_norm": self.lp.to_dict(),
            "seminorm": self.seminorm.to_dict(),
            "constant_printed": self.constant_printed,
            "constant_corrected": self.constant_corrected,
            "ratio_printed": self.ratio_printed,
            "ratio_corrected": self.ratio_corrected,
        }


def sobolev_inequality_check(gauge: Gauge, s: float, u: F.ScalarField,
                             cfg: QuadratureConfig) -> SobolevCheck:
    Q = gauge.spec.Q
    p = critical_exponent(Q, s)
    sigma = qd.sigma_Q(gauge, cfg).value
    return SobolevCheck(
        gauge.spec.name,
        gauge.label,
        u.name,
        s,
        lp_norm_estimate(gauge, u, p, cfg),
        fo.seminorm(gauge, s, u, cfg),
        embedding_constant(Q, s, sigma),
        embedding_constant(Q, s, sigma, corrected=True),
    )


# ---------------------------------------------------------------------------
# mollification and truncation


def _gauss_box(box, nodes: int):
    x, w = np.polynomial.legendre.leggauss(nodes)
    axes = [hw * x for hw in box]
    weights = [hw * w for hw in box]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(box))
    wts = np.prod(np.stack(np.meshgrid(*weights, indexing="ij"), axis=-1).reshape(-1, len(box)),
                  axis=1)
    return pts, wts


def _mass_nodes(dim: int) -> int:
    return max(6, min(32, int(4e5 ** (1.0 / dim))))


def field_mass(gauge: Gauge, rho: F.ScalarField) -> float:
    """int rho by a tensor Gauss-Legendre rule over the support box."""
    box = rho.support_box(gauge)
    if box is None:
        raise DomainError("mollifier needs a bounded support")
    pts, wts = _gauss_box(box, _mass_nodes(gauge.spec.n))
    return float(np.sum(wts * rho(pts)))


def unit_mass_bump(gauge: Gauge, R: float = 1.0) -> F.ScalarField:
    """compact_bump(R) divided by its integral."""
    bump = F.compact_bump(gauge.spec, R)
    return replace(F.scaled(bump, 1.0 / field_mass(gauge, bump)), name=f"unit_bump:R={R:g}")


def mollify(gauge: Gauge, rho: F.ScalarField, eps: float, u, nodes: int = 5) -> F.ScalarField:
    """u_eps(x) = int rho(z) u((delta_eps z^-1) x) dz.

    The integral over supp(rho) uses a tensor Gauss-Legendre rule with weights
    renormalized to sum to one, so u_eps is a convex combination of left
    translates of u: constants are reproduced exactly and [u_eps] <= [u].
    """
    spec = gauge.spec
    if eps <= 0:
        raise DomainError("eps must be positive")
    if isinstance(u, GridField):
        u = u.as_field()
    mass = field_mass(gauge, rho)
    if abs(mass - 1.0) > 0.01:
        raise NormalizationError(f"mollifier integrates to {mass:.4f}, not 1")
    if u.is_constant:
        return u
    pts, wts = _gauss_box(rho.support_box(gauge), nodes)
    wts = wts * rho(pts)
    keep = wts > 0
    shifts = -G.dilate(spec, eps, pts[keep])
    wts = wts[keep] / wts[keep].sum()

    def func(x):
        out = np.zeros(x.shape[:-1])
        for a, c in zip(shifts, wts):
            out += c * u.func(G.multiply(spec, a, x))
        return out

    rho_box = G.dilate(spec, eps, rho.support_box(gauge))
    box = None if u.support_box(gauge) is None else tuple(
        G.box_product(spec, rho_box, u.support_box(gauge)))
    rho_r = rho.support_radius(gauge)
    radius = None
    if u.radius is not None and rho_r is not None:
        radius = lambda g: u.radius(g) + eps * rho_r  # noqa: E731
    return F.ScalarField(func, f"mollify({u.name},eps={eps:g})", radius=radius, box=box,
                         smoothness=u.smoothness, sup=u.sup, tail_sup=u.tail_sup)


def _ramp(t):
    """C-infinity monotone ramp from 0 (t <= 0) to 1 (t >= 1); max slope 2 at t = 1/2."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
    return a / (a + b)


def truncation_field(gauge: Gauge, R: float) -> F.ScalarField:
    """phi_R = ramp((|g| - R)/R): 0 on B_R, 1 off B_2R, |phi(g)-phi(h)| <= (2/R)|h^-1 g|."""
    if R <= 0:
        raise DomainError("truncation radius must be positive")
    return F.ScalarField(lambda x: _ramp((eval_gauge(gauge, x) - R) / R), f"phi_R:R={R:g}",
                         smoothness="smooth", sup=1.0)


def truncation_complement(gauge: Gauge, R: float) -> F.ScalarField:
    """1 - phi_R, supported in B_2R."""
    if R <= 0:
        raise DomainError("truncation radius must be positive")
    return F.ScalarField(lambda x: 1.0 - _ramp((eval_gauge(gauge, x) - R) / R), f"1-phi_R:R={R:g}",
                         radius=lambda g: 2.0 * R, box=tuple(gauge.box(2.0 * R)), sup=1.0)


def lipschitz_probe(gauge: Gauge, R: float, n_pairs: int = 10_000, seed: int = 0) -> float:
    """max |phi(g)-phi(h)| R / (2 |h^-1 g|) over random pairs near the ramp."""
    spec = gauge.spec
    phi = truncation_field(gauge, R)
    rng = qd.stream(seed, "lipschitz", 0, 0)
    g = qd.uniform_box(rng, gauge.box(2.5 * R), n_pairs)
    step = G.dilate(spec, rng.uniform(1e-3, 1.0, n_pairs) * R, rng.standard_normal((n_pairs, spec.n)))
    h = G.multiply(spec, g, step)
    d = eval_gauge(gauge, G.multiply(spec, -h, g))
    ok = d > 0
    return float(np.max(np.abs(phi(g) - phi(h))[ok] * R / (2.0 * d[ok])))


# ---------------------------------------------------------------------------
# Rellich projection defect


def pack_balls(gauge: Gauge, omega_box, delta: float) -> tuple[np.ndarray, float]:
    """Centres on the lattice with spacing gauge.box(delta) whose balls of radius
    delta/2 stay inside the box; distinct centres are >= delta apart for the
    shipped gauges (checked by rellich_defect)."""
    spec = gauge.spec
    omega = np.asarray(omega_box, dtype=float)
    spacing = gauge.box(delta)
    axes = [np.arange(-math.floor(o / h), math.floor(o / h) + 1) * h for o, h in zip(omega, spacing)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, spec.n)
    fits = np.all(G.box_product(spec, np.abs(pts), gauge.box(delta / 2)) <= omega * (1 + 1e-12),
                  axis=1)
    return pts[fits], delta / 2


def check_disjoint(gauge: Gauge, centers: np.ndarray, radii) -> None:
    """Raise OverlapError unless |c_j^-1 c_i| >= r_i + r_j for all i != j.

    Candidates come from the horizontal coordinates, where the group law is
    plain addition, so the prefilter is exact."""
    spec = gauge.spec
    centers = np.asarray(centers, dtype=float)
    radii = np.broadcast_to(np.asarray(radii, dtype=float), (len(centers),))
    if len(centers) < 2:
        return
    hor = spec.horizontal
    scale = gauge.unit_box()[hor]
    tree = cKDTree(centers[:, hor] / scale)
    reach = 2.0 * radii.max()
    pairs = tree.query_pairs(reach * (1 - 1e-12), p=np.inf, output_type="ndarray")
    for a in range(0, len(pairs), 1 << 20):
        i, j = pairs[a:a + (1 << 20)].T
        d = eval_gauge(gauge, G.multiply(spec, -centers[j], centers[i]))
        bad = d < (radii[i] + radii[j]) * (1 - 1e-9)
        if bad.any():
            k = int(np.argmax(bad))
            raise OverlapError(f"balls {i[k]} and {j[k]} overlap (distance {d[k]:.4g})")


@dataclass
class RellichResult:
    delta: float
    defect: Estimate
    n_balls: int
    covered_fraction: float

    def to_dict(self) -> dict:
        return {"delta": self.delta, "defect": self.defect.to_dict(), "n_balls": self.n_balls,
                "covered_fraction": self.covered_fraction}


def rellich_defect(gauge: Gauge, u: F.ScalarField, centers, radius: float, omega_box,
                   cfg: QuadratureConfig, points_per_ball: int = 64) -> RellichResult:
    """sum_j int_{B_j} |u - mean_{B_j} u|^2, i.e. ||u - Pu||^2 on the union of the
    balls, Pu = sum_j (mean of u on B_j) chi_j.

    Each ball is sampled with the same unit-ball points; the error combines the
    per-ball sampling errors of the variance estimates.
    """
    spec = gauge.spec
    centers = np.asarray(centers, dtype=float)
    check_disjoint(gauge, centers, radius)
    omega = np.asarray(omega_box, dtype=float)
    inside = np.all(G.box_product(spec, np.abs(centers), gauge.box(radius)) <= omega * (1 + 1e-12),
                    axis=1)
    if not inside.all():
        raise DomainError("every ball must lie inside the region")
    consts = qd.gauge_constants(gauge, cfg)
    vol_ball = consts.vol.value * radius**spec.Q
    rng = qd.stream(cfg.seed, "rellich", 0, 0)
    k = points_per_ball
    hw = gauge.unit_box()
    unit = []
    while sum(len(x) for x in unit) < k:
        z = qd.uniform_box(rng, hw, 4 * k)
        unit.append(z[eval_gauge(gauge, z) < 1.0])
    h = G.dilate(spec, radius, np.concatenate(unit)[:k])
    total = 0.0
    var = 0.0
    chunk = max(1, 2_000_000 // k)
    for a in range(0, len(centers), chunk):
        c = centers[a:a + chunk]
        vals = u(G.multiply(spec, c[:, None, :], h[None, :, :]))
        dev = vals - vals.mean(axis=1, keepdims=True)
        s2 = (dev**2).sum(axis=1) / (k - 1)
        m4 = (dev**4).mean(axis=1)
        total += vol_ball * s2.sum()
        var += vol_ball**2 * np.maximum(m4 - s2**2 * (k - 3) / (k - 1), 0.0).sum() / k
    rel_vol = consts.vol.std_err / consts.vol.value
    var += (total * rel_vol) ** 2
    est = Estimate(float(total), math.sqrt(var), 0.0, len(centers) * k, cfg.seed)
    frac = len(centers) * vol_ball / qd.box_volume(omega)
    return RellichResult(2 * radius, est, len(centers), frac)


def rellich_sweep(gauge: Gauge, u: F.ScalarField, omega_box, deltas, cfg: QuadratureConfig,
                  points_per_ball: int = 64) -> list[RellichResult]:
    rows = []
    for d in deltas:
        centers, r = pack_balls(gauge, omega_box, d)
        rows.append(rellich_defect(gauge, u, centers, r, omega_box, cfg, points_per_ball))
    return rows


def loglog_slope(xs, ys) -> float:
    """Least-squares slope of log y against log x."""
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


# ---------------------------------------------------------------------------
# multiplication operator


@dataclass
class MultiplicationReport:
    lhs: Estimate
    main: Estimate
    A: Estimate
    B: Estimate

    @property
    def rhs(self) -> Estimate:
        return self.main + self.A + self.B

    @property
    def slack(self) -> Estimate:
        return self.rhs - self.lhs

    @property
    def holds(self) -> bool:
        d = self.slack
        return d.value >= -(2.0 * d.std_err + d.tail_bound)

    def to_dict(self) -> dict:
        return {"lhs": self.lhs.to_dict(), "main": self.main.to_dict(), "A": self.A.to_dict(),
                "B": self.B.to_dict(), "rhs": self.rhs.to_dict(), "slack": self.slack.to_dict(),
                "holds": self.holds}


def _weighted_gamma(gauge, s, phi, u, box, keep, cfg, inner_cfg, n_points, label) -> Estimate:
    """int_box keep(y) u(y)^2 Gamma(phi)(y) dy by nested sampling: uniform y,
    each Gamma(phi)(y) from its own unbiased estimate."""
    rng = qd.stream(cfg.seed, label, 0, 0)
    y = qd.uniform_box(rng, box, n_points)
    w = u(y) ** 2 * keep(y)
    vals = np.zeros(n_points)
    tails = 0.0
    for i in np.flatnonzero(w > 0):
        g = fo.carre_du_champ(gauge, s, phi, phi, y[i], replace(inner_cfg, seed=cfg.seed + i))
        vals[i] = w[i] * g.value
        tails += w[i] * g.tail_bound
    vol = qd.box_volume(box)
    se = vol * vals.std(ddof=1) / math.sqrt(n_points)
    return Estimate(vol * vals.mean(), se, vol * tails / n_points, n_points, cfg.seed)


def multiplication_bound_check(gauge: Gauge, s: float, phi: F.ScalarField, u: F.ScalarField,
                               R: float, cfg: QuadratureConfig, n_points: int = 128,
                               inner_samples: int = 4000) -> MultiplicationReport:
    """1/2 [phi u]^2 <= ||phi||_inf^2 [u]^2 + A + B, where
    A + B = int |u(y)|^2 Gamma_s(phi)(y) dy split at |y| = 2R (supp phi in B_R)."""
    zero = Estimate(0.0, 0.0, 0.0, 0, cfg.seed)
    if phi.is_constant and phi.constant == 0.0:
        return MultiplicationReport(zero, zero, zero, zero)
    prod = F.product(phi, u)
    lhs = fo.seminorm_sq(gauge, s, prod, cfg) * 0.5
    sup = phi.sup if phi.sup is not None else 1.0
    main = fo.seminorm_sq(gauge, s, u, cfg) * sup**2
    inner_cfg = replace(cfg, n_samples=inner_samples)
    big = lambda y: eval_gauge(gauge, y) >= 2 * R  # noqa: E731
    box_u = u.support_box(gauge)
    A = _weighted_gamma(gauge, s, phi, u, box_u, big, cfg, inner_cfg, n_points, "mult_A")
    B = _weighted_gamma(gauge, s, phi, u, np.minimum(gauge.box(2 * R), box_u),
                        lambda y: ~big(y), cfg, inner_cfg, n_points, "mult_B")
    return MultiplicationReport(lhs, main, A, B)


# ---------------------------------------------------------------------------
# the abelian counterexample


@dataclass(frozen=True)
class CounterexampleRow:
    k: float
    eta: float
    r: float
    saturated: bool
    disjoint_value: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _l2_sq(f, lo, hi, points=()) -> float:
    val, _ = integrate.quad(f, lo, hi, points=[p for p in points if lo < p < hi] or None,
                            limit=400, epsabs=1e-14, epsrel=1e-12)
    return val


def translation_ratio(psi, shift: float, eta: float, width: float = 1.0) -> float:
    """||psi(. + shift) - psi||_2 / (eta^(1/2) ||psi||_2) for psi supported in [-width, width]."""
    norm = _l2_sq(lambda x: psi(x) ** 2, -width, width)
    diff = _l2_sq(lambda x: (psi(x + shift) - psi(x)) ** 2, -width - shift, width,
                  (width - shift, -width))
    return math.sqrt(diff / (eta * norm))


def counterexample_sweep(k_list, eta_list, psi=F.bump1d, width: float = 1.0) -> list[CounterexampleRow]:
    """r(k, eta) = ||psi(k. + k eta) - psi(k.)||_2 / (eta^(1/2) ||psi(k.)||_2).

    Once k eta exceeds the support width 2*width the translates are disjoint and
    r = sqrt(2) eta^(-1/2), which is unbounded as eta -> 0.
    """
    rows = []
    for eta in eta_list:
        for k in k_list:
            if k <= 0 or eta <= 0:
                raise DomainError("k and eta must be positive")
            shift = k * eta
            rows.append(CounterexampleRow(
                float(k), float(eta), translation_ratio(psi, shift, eta, width),
                shift >= 2 * width, math.sqrt(2.0 / eta),
            ))
    return rows
