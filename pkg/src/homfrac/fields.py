"""Scalar test fields, invariant vector fields and the order-2 Taylor apparatus.

A ScalarField wraps a vectorized callable on (..., n) coordinate arrays together
with what the integrators need to know about it: a gauge support radius (or an
effective one for Schwartz fields), a sup bound, and optional derivative oracles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from . import group as G
from .errors import ConfigError, DomainError, StepUnderflow
from .gauge import Gauge, eval_gauge
from .group import GroupSpec

# Schwartz fields are treated as supported where they exceed this fraction of
# their sup; the neglected mass enters tail bounds through ``tail_sup``.
SCHWARTZ_CUTOFF = 1e-18
_Q_CUT = -math.log(SCHWARTZ_CUTOFF)


@dataclass(frozen=True)
class ScalarField:
    """Real-valued field on the group.

    ``radius(gauge)`` bounds sup{|g| : u(g) != 0} (up to ``tail_sup`` for
    Schwartz fields); ``None`` means no usable support information.
    ``grad`` is a coordinate-gradient oracle and ``xder`` an oracle for all
    left-invariant first derivatives; both map (N, n) -> (N, n).
    ``box`` holds half-widths of an origin-centred coordinate box containing
    the (effective) support, when one is known; ``core`` is a smaller box
    holding nearly all of the mass, used to concentrate samples.
    """

    func: Callable[[np.ndarray], np.ndarray]
    name: str = "field"
    radius: Callable[[Gauge], float] | None = None
    smoothness: str = "compact_smooth"
    sup: float | None = None
    tail_sup: float = 0.0
    grad: Callable | None = None
    xder: Callable | None = None
    constant: float | None = None
    box: tuple[float, ...] | None = None
    core: tuple[float, ...] | None = None

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.constant is not None:
            return np.full(x.shape[:-1], self.constant)
        return self.func(x)

    def support_radius(self, gauge: Gauge) -> float | None:
        if self.constant == 0.0:
            return 0.0
        return None if self.radius is None else float(self.radius(gauge))

    def support_box(self, gauge: Gauge) -> np.ndarray | None:
        """Coordinate half-widths covering the support; falls back to the box of
        the gauge ball given by the support radius."""
        if self.box is not None:
            return np.asarray(self.box, dtype=float)
        r = self.support_radius(gauge)
        return None if r is None else gauge.box(r)

    def core_box(self, gauge: Gauge) -> np.ndarray | None:
        return np.asarray(self.core, dtype=float) if self.core is not None else self.support_box(gauge)

    @property
    def is_constant(self) -> bool:
        return self.constant is not None


# ---------------------------------------------------------------------------
# built-in fields


def _hom_sq(spec: GroupSpec, x, scale):
    return np.sum(x**2 / scale ** (2 * spec.w()), axis=-1)


def gaussian(spec: GroupSpec, scale: float = 1.0) -> ScalarField:
    """exp(-||delta_{1/scale} x||^2)."""
    w = spec.w()
    c = math.sqrt(_Q_CUT)

    def func(x):
        return np.exp(-_hom_sq(spec, x, scale))

    def grad(x):
        return -2.0 * x / scale ** (2 * w) * func(x)[..., None]

    return ScalarField(
        func,
        f"gaussian:scale={scale:g}",
        radius=lambda gauge: scale * gauge.corner_radius(np.full(spec.n, c)),
        box=tuple(c * scale**w),
        core=tuple(2.5 * scale**w),
        smoothness="schwartz",
        sup=1.0,
        tail_sup=SCHWARTZ_CUTOFF,
        grad=grad,
    )


def compact_bump(spec: GroupSpec, R: float = 1.0) -> ScalarField:
    """exp(-1/(1 - q)) for q = ||delta_{1/R} x||^2 < 1, zero elsewhere.

    The support is the Euclidean unit ball pushed forward by delta_R, so the
    gauge radius is at most R times the gauge of the unit cube corner.
    """
    if R <= 0:
        raise DomainError("bump radius must be positive")
    w = spec.w()

    def func(x):
        q = _hom_sq(spec, x, R)
        inside = q < 1.0
        out = np.zeros_like(q)
        out[inside] = np.exp(-1.0 / (1.0 - q[inside]))
        return out

    def grad(x):
        q = _hom_sq(spec, x, R)
        inside = q < 1.0
        fac = np.zeros_like(q)
        qi = q[inside]
        fac[inside] = -np.exp(-1.0 / (1.0 - qi)) / (1.0 - qi) ** 2
        return fac[..., None] * 2.0 * x / R ** (2 * w)

    return ScalarField(
        func,
        f"compact_bump:R={R:g}",
        radius=lambda gauge: R * gauge.corner_radius(np.ones(spec.n)),
        box=tuple(R**w),
        sup=math.exp(-1.0),
        grad=grad,
    )


def poly_bump(spec: GroupSpec, R: float = 1.0, j: int = 0, shift: float = 0.0) -> ScalarField:
    """(x_j + shift) times compact_bump(R); a bump without radial symmetry."""
    base = compact_bump(spec, R)

    def func(x):
        return (x[..., j] + shift) * base.func(x)

    def grad(x):
        out = (x[..., j] + shift)[..., None] * base.grad(x)
        out[..., j] += base.func(x)
        return out

    sup = math.exp(-1.0) * (R ** spec.weights[j] + abs(shift))
    return replace(base, func=func, grad=grad, name=f"poly_bump:R={R:g},j={j + 1}", sup=sup)


def bump1d(x):
    """exp(-1/(1-x^2)) on (-1, 1), zero elsewhere; x is a plain array."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - x[inside] ** 2))
    return out


def product_field(spec: GroupSpec, phi=bump1d, psi=bump1d) -> ScalarField:
    """u(x, y) = phi(x) psi(y) on a two-coordinate group."""
    if spec.n != 2:
        raise ConfigError("product field needs a two-coordinate group")
    return ScalarField(
        lambda x: phi(x[..., 0]) * psi(x[..., 1]),
        "product:phi=bump1d,psi=bump1d",
        radius=lambda gauge: gauge.corner_radius(np.ones(2)),
        box=(1.0, 1.0),
        sup=math.exp(-2.0),
    )


def constant(value: float) -> ScalarField:
    return ScalarField(lambda x: np.full(x.shape[:-1], value), f"constant:c={value:g}",
                       smoothness="schwartz", sup=abs(value), constant=float(value))


def zero() -> ScalarField:
    return constant(0.0)


def _kv(args: str) -> dict:
    out = {}
    for item in filter(None, args.split(",")):
        key, _, val = item.partition("=")
        out[key.strip()] = val.strip()
    return out


def parse_field(text: str, spec: GroupSpec) -> ScalarField:
    """``gaussian``, ``gaussian:scale=2``, ``compact_bump:R=1``,
    ``poly_bump:R=1,j=1``, ``product:phi=bump1d,psi=bump1d``, ``constant:c=3``, ``zero``."""
    name, _, args = text.partition(":")
    kv = _kv(args)
    try:
        if name == "gaussian":
            return gaussian(spec, float(kv.get("scale", 1.0)))
        if name == "compact_bump":
            return compact_bump(spec, float(kv.get("R", 1.0)))
        if name == "poly_bump":
            return poly_bump(spec, float(kv.get("R", 1.0)), int(kv.get("j", 1)) - 1)
        if name == "product":
            if kv.get("phi", "bump1d") != "bump1d" or kv.get("psi", "bump1d") != "bump1d":
                raise ConfigError("only bump1d factors are built in")
            return product_field(spec)
        if name == "constant":
            return constant(float(kv.get("c", 1.0)))
        if name == "zero":
            return zero()
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"bad field parameters in {text!r}: {exc}") from exc
    raise ConfigError(f"unknown field {name!r}")


# ---------------------------------------------------------------------------
# field algebra: translation by L_g0 and composition with delta_lam


def translate(spec: GroupSpec, u: ScalarField, g0) -> ScalarField:
    """u o L_{g0}: x -> u(g0 x).  Left-invariant derivatives commute with it."""
    g0 = np.asarray(g0, dtype=float)
    if u.is_constant:
        return u
    radius = None
    if u.radius is not None:
        radius = lambda gauge: u.radius(gauge) + float(eval_gauge(gauge, g0))  # noqa: E731
    xder = None
    if u.xder is not None or u.grad is not None:
        xder = lambda x: left_derivatives(spec, u, G.multiply(spec, g0, x))  # noqa: E731
    box = None if u.box is None else tuple(G.box_product(spec, np.abs(g0), u.box))
    core = None if u.core is None else tuple(G.box_product(spec, np.abs(g0), u.core))
    return replace(
        u,
        func=lambda x: u.func(G.multiply(spec, g0, x)),
        name=f"{u.name}@L",
        radius=radius,
        grad=None,
        xder=xder,
        box=box,
        core=core,
    )


def compose_dilation(spec: GroupSpec, u: ScalarField, lam: float, amp: float = 1.0) -> ScalarField:
    """amp * u o delta_lam."""
    if lam <= 0:
        raise DomainError("dilation factor must be positive")
    if u.is_constant:
        return constant(amp * u.constant)
    w = spec.w()
    radius = None
    if u.radius is not None:
        radius = lambda gauge: u.radius(gauge) / lam  # noqa: E731
    grad = None
    if u.grad is not None:
        grad = lambda x: amp * lam**w * u.grad(G.dilate(spec, lam, x))  # noqa: E731
    return replace(
        u,
        func=lambda x: amp * u.func(G.dilate(spec, lam, x)),
        name=f"{u.name}@delta{lam:g}",
        radius=radius,
        sup=None if u.sup is None else abs(amp) * u.sup,
        tail_sup=abs(amp) * u.tail_sup,
        grad=grad,
        xder=None,
        box=None if u.box is None else tuple(np.asarray(u.box) / lam**w),
        core=None if u.core is None else tuple(np.asarray(u.core) / lam**w),
    )


def scaled(u: ScalarField, c: float) -> ScalarField:
    if u.is_constant:
        return constant(c * u.constant)
    return replace(
        u,
        func=lambda x: c * u.func(x),
        sup=None if u.sup is None else abs(c) * u.sup,
        tail_sup=abs(c) * u.tail_sup,
        grad=None if u.grad is None else (lambda x: c * u.grad(x)),
        xder=None if u.xder is None else (lambda x: c * u.xder(x)),
    )


def _combine_radius(u, v, how):
    ru, rv = u.radius, v.radius
    if u.constant == 0.0:
        return rv
    if v.constant == 0.0:
        return ru
    if ru is None or rv is None:
        if how == "min":
            return ru or rv
        return None
    pick = min if how == "min" else max
    return lambda gauge: pick(ru(gauge), rv(gauge))


def _combine_box(u, v, how):
    bu, bv = u.box, v.box
    if u.constant == 0.0:
        return bv
    if v.constant == 0.0:
        return bu
    if bu is None or bv is None:
        return (bu or bv) if how == "min" else None
    pick = np.minimum if how == "min" else np.maximum
    return tuple(pick(bu, bv))


def _combine_core(u, v, how):
    """Cores combine like boxes, with a missing core standing in for the box."""
    if u.core is None and v.core is None:
        return None
    cu = u.core if u.core is not None else u.box
    cv = v.core if v.core is not None else v.box
    if u.constant == 0.0 or cu is None:
        return cv if how == "min" or u.constant == 0.0 else None
    if v.constant == 0.0 or cv is None:
        return cu if how == "min" or v.constant == 0.0 else None
    pick = np.minimum if how == "min" else np.maximum
    return tuple(pick(cu, cv))


def product(u: ScalarField, v: ScalarField) -> ScalarField:
    if u.is_constant and v.is_constant:
        return constant(u.constant * v.constant)
    sup = None if u.sup is None or v.sup is None else u.sup * v.sup
    grad = None
    if (u.grad or u.is_constant) and (v.grad or v.is_constant):
        def grad(x):
            gu = 0.0 if u.is_constant else u.grad(x)
            gv = 0.0 if v.is_constant else v.grad(x)
            return gu * v(x)[..., None] + u(x)[..., None] * gv
    return ScalarField(
        lambda x: u(x) * v(x),
        f"({u.name})*({v.name})",
        radius=_combine_radius(u, v, "min"),
        box=_combine_box(u, v, "min"),
        core=_combine_core(u, v, "min"),
        smoothness="schwartz" if "schwartz" in (u.smoothness, v.smoothness) else u.smoothness,
        sup=sup,
        tail_sup=max(u.tail_sup * (v.sup or 1.0), v.tail_sup * (u.sup or 1.0)),
        grad=grad,
    )


def difference(u: ScalarField, v: ScalarField) -> ScalarField:
    """u - v."""
    sup = None if u.sup is None or v.sup is None else u.sup + v.sup
    grad = None
    if u.grad is not None and v.grad is not None:
        grad = lambda x: u.grad(x) - v.grad(x)  # noqa: E731
    return ScalarField(
        lambda x: u(x) - v(x),
        f"({u.name})-({v.name})",
        radius=_combine_radius(u, v, "max"),
        box=_combine_box(u, v, "max"),
        core=_combine_core(u, v, "max"),
        smoothness="schwartz" if "schwartz" in (u.smoothness, v.smoothness) else u.smoothness,
        sup=sup,
        tail_sup=u.tail_sup + v.tail_sup,
        grad=grad,
    )


# ---------------------------------------------------------------------------
# invariant vector fields


def _field_columns(spec: GroupSpec, g, sign: float) -> np.ndarray:
    x = np.asarray(g, dtype=float)
    n = spec.n
    A = np.zeros(x.shape[:-1] + (n, n))
    eye = np.eye(n)
    for j in range(n):
        col = np.broadcast_to(eye[j], x.shape).copy()
        if not spec.is_abelian:
            xe = G.bracket(spec, x, eye[j])
            col = col + sign * 0.5 * xe
            if spec.step >= 3:
                col = col + G.bracket(spec, x, xe) / 12.0
        A[..., :, j] = col
    return A


def left_field_coeffs(spec: GroupSpec, g) -> np.ndarray:
    """A(g) with X_j = sum_k A[k, j] d/dx_k; column j is d/dt (g . t e_j) at t = 0.

    Differentiating the truncated BCH series in its second argument leaves
    e_j + [x, e_j]/2 + [x, [x, e_j]]/12 (the Bernoulli coefficient of ad^3 is 0).
    """
    return _field_columns(spec, g, +1.0)


def right_field_coeffs(spec: GroupSpec, g) -> np.ndarray:
    """Column j is d/dt (t e_j . g) at t = 0: e_j - [x, e_j]/2 + [x, [x, e_j]]/12."""
    return _field_columns(spec, g, -1.0)


def fd_step(x) -> np.ndarray:
    return np.maximum(1e-5, 1e-5 * (1.0 + np.linalg.norm(x, axis=-1)))


def coordinate_gradient(u: ScalarField, x) -> np.ndarray:
    """Gradient from the oracle, else 5-point central differences."""
    x = np.asarray(x, dtype=float)
    if u.is_constant:
        return np.zeros_like(x)
    if u.grad is not None:
        return u.grad(x)
    h = fd_step(x)
    if np.any(h < 1e-8):
        raise StepUnderflow("finite-difference step below 1e-8")
    out = np.empty_like(x)
    for k in range(x.shape[-1]):
        e = np.zeros(x.shape[-1])
        e[k] = 1.0
        d = h[..., None] * e
        out[..., k] = (-u(x + 2 * d) + 8 * u(x + d) - 8 * u(x - d) + u(x - 2 * d)) / (12 * h)
    return out


def left_derivatives(spec: GroupSpec, u: ScalarField, x) -> np.ndarray:
    """All X_j u at x, shape (..., n)."""
    x = np.asarray(x, dtype=float)
    if u.xder is not None:
        return u.xder(x)
    grad = coordinate_gradient(u, x)
    return np.einsum("...k,...kj->...j", grad, left_field_coeffs(spec, x))


def apply_field(spec: GroupSpec, j: int, side: str, u: ScalarField, g) -> np.ndarray:
    """(X_j u)(g) for side='left', (Y_j u)(g) for side='right'."""
    if side == "left":
        return left_derivatives(spec, u, g)[..., j]
    if side != "right":
        raise DomainError("side must be 'left' or 'right'")
    g = np.asarray(g, dtype=float)
    grad = coordinate_gradient(u, g)
    return np.einsum("...k,...k->...", grad, right_field_coeffs(spec, g)[..., :, j])


def _flow(spec, g, j, t):
    t = np.asarray(t, dtype=float)
    e = np.zeros(t.shape + (spec.n,))
    e[..., j] = t
    return G.multiply(spec, g, e)


def _second_flow_fd(spec, u, g, i, j, h):
    """Central mixed difference of t,s -> u(g exp(sX_i) exp(tX_j)); i == j uses
    the three-point formula along the single flow."""
    if i == j:
        return (u(_flow(spec, g, i, h)) + u(_flow(spec, g, i, -h)) - 2.0 * u(g)) / h**2
    total = 0.0
    for a in (1, -1):
        for b in (1, -1):
            total = total + a * b * u(_flow(spec, _flow(spec, g, i, a * h), j, b * h))
    return total / (4.0 * h * h)


SECOND_FD_STEP = 1e-3


def horizontal_hessian(spec: GroupSpec, u: ScalarField, g, h: float = SECOND_FD_STEP) -> np.ndarray:
    """Matrix X_i X_j u(g) over weight-one indices, by flow differences with one
    Richardson step (error O(h^4) + O(eps/h^2))."""
    g = np.asarray(g, dtype=float)
    hor = spec.horizontal
    m = hor.size
    out = np.zeros(g.shape[:-1] + (m, m))
    if u.is_constant:
        return out
    for a, i in enumerate(hor):
        for b, j in enumerate(hor):
            d1 = _second_flow_fd(spec, u, g, i, j, h)
            d2 = _second_flow_fd(spec, u, g, i, j, h / 2)
            out[..., a, b] = (4.0 * d2 - d1) / 3.0
    return out


def horizontal_laplacian(spec: GroupSpec, u: ScalarField, g, method: str = "flow") -> np.ndarray:
    """sum over weight-one i of X_i^2 u(g).

    ``flow`` uses the symmetric three-point formula along t -> g exp(t X_i);
    ``nested`` differentiates the field X_i u once more along the same flow.
    """
    if spec.m < 1:
        raise DomainError("group has no weight-one coordinates")
    g = np.asarray(g, dtype=float)
    if method == "flow":
        return np.trace(horizontal_hessian(spec, u, g), axis1=-2, axis2=-1)
    if method != "nested":
        raise DomainError("method must be 'flow' or 'nested'")
    total = 0.0
    for i in spec.horizontal:
        xi = ScalarField(lambda x, i=i: left_derivatives(spec, u, x)[..., i], smoothness="schwartz")
        h = fd_step(g)
        total = total + (
            -xi(_flow(spec, g, i, 2 * h)) + 8 * xi(_flow(spec, g, i, h))
            - 8 * xi(_flow(spec, g, i, -h)) + xi(_flow(spec, g, i, -2 * h))
        ) / (12 * h)
    return total


def second_difference(spec: GroupSpec, u: ScalarField, g, h) -> np.ndarray:
    """u(g h) + u(g h^{-1}) - 2 u(g)."""
    return u(G.multiply(spec, g, h)) + u(G.multiply(spec, g, G.inverse(spec, h))) - 2.0 * u(g)


def taylor_p2(spec: GroupSpec, u: ScalarField, g, h) -> np.ndarray:
    """Left Taylor polynomial of order 2 of u at g, evaluated at h (vectorized in h)."""
    g = np.asarray(g, dtype=float)
    h = np.asarray(h, dtype=float)
    w = spec.w()
    lin = w <= 2.0 + 1e-12
    xd = left_derivatives(spec, u, g)
    out = u(g) + h[..., lin] @ xd[..., lin]
    hor = spec.horizontal
    H = horizontal_hessian(spec, u, g)
    xh = h[..., hor]
    return out + 0.5 * np.einsum("...i,ij,...j->...", xh, H, xh)


def remainder_degree(spec: GroupSpec) -> float:
    """Smallest weighted degree above 2 of a monomial, the order of the Taylor remainder."""
    w = sorted(set(spec.weights))
    cands = [d for d in w if d > 2]
    cands += [a + b for a in w for b in w if a + b > 2]
    cands += [a + b + c for a in w for b in w for c in w]
    return min(cands)
