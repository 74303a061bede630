"""Graded nilpotent Lie groups in exponential coordinates of the first kind.

Points are plain numpy arrays whose last axis holds the n coordinates, so every
operation here is vectorized over leading axes.  The group law is the
Baker-Campbell-Hausdorff series truncated at bracket length four, which is exact
whenever the largest dilation weight is below five.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError, UnknownGroup, UnsupportedStep

_WEIGHT_TOL = 1e-12
MAX_STEP = 4


@dataclass(frozen=True)
class GroupSpec:
    """Graded Lie algebra data: weights d_j and structure constants c_ij^k.

    ``brackets`` holds ``(i, j, k, c)`` tuples with 0-based indices meaning
    ``[X_i, X_j] = ... + c X_k``.  Entries with ``i < j`` are the canonical
    storage; the mirrored ``(j, i)`` entry is implied unless given explicitly.
    """

    name: str
    weights: tuple[float, ...]
    brackets: tuple[tuple[int, int, int, float], ...] = ()
    _table: np.ndarray = field(init=False, repr=False, compare=False)
    _terms: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.weights)
        if n == 0:
            raise ConfigError("group must have at least one coordinate")
        table = np.zeros((n, n, n))
        given = set()
        for i, j, k, c in self.brackets:
            if not all(0 <= idx < n for idx in (i, j, k)):
                raise ConfigError(f"bracket index out of range: {(i, j, k)}")
            table[i, j, k] = c
            given.add((i, j))
        for i, j, k, c in self.brackets:
            if (j, i) not in given:
                table[j, i, k] = -c
        object.__setattr__(self, "_table", table)
        nz = np.argwhere(table != 0)
        terms = tuple((int(i), int(j), int(k), float(table[i, j, k])) for i, j, k in nz)
        object.__setattr__(self, "_terms", terms)

    @property
    def n(self) -> int:
        return len(self.weights)

    @property
    def Q(self) -> float:
        return float(sum(self.weights))

    @property
    def m(self) -> int:
        return sum(1 for d in self.weights if abs(d - 1.0) <= _WEIGHT_TOL)

    @property
    def step(self) -> int:
        return int(math.floor(max(self.weights) + _WEIGHT_TOL))

    @property
    def horizontal(self) -> np.ndarray:
        """Indices of the weight-one coordinates."""
        return np.flatnonzero(np.abs(np.asarray(self.weights) - 1.0) <= _WEIGHT_TOL)

    @property
    def is_abelian(self) -> bool:
        return not self._terms

    @property
    def structure_tensor(self) -> np.ndarray:
        return self._table.copy()

    def w(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)


# ---------------------------------------------------------------------------
# builtins and file I/O


def euclidean(n: int, weights=None) -> GroupSpec:
    weights = (1.0,) * n if weights is None else tuple(float(d) for d in weights)
    if len(weights) != n:
        raise ConfigError(f"euclidean({n}) needs {n} weights, got {len(weights)}")
    return GroupSpec(f"euclidean({n},{tuple(weights)})", weights)


def heisenberg(n: int = 1) -> GroupSpec:
    """Heisenberg group H^n with [X_j, X_{n+j}] = X_{2n+1}."""
    if n < 1:
        raise ConfigError("heisenberg(n) needs n >= 1")
    weights = (1.0,) * (2 * n) + (2.0,)
    brackets = tuple((j, n + j, 2 * n, 1.0) for j in range(n))
    return GroupSpec(f"heisenberg({n})", weights, brackets)


def parabolic_r2() -> GroupSpec:
    spec = euclidean(2, (1.0, 2.0))
    return GroupSpec("parabolic_r2", spec.weights)


def builtin(name: str, *params) -> GroupSpec:
    """Look up a built-in group by name, e.g. ``builtin("heisenberg", 1)``."""
    if name == "euclidean":
        n = int(params[0]) if params else 2
        weights = params[1] if len(params) > 1 else None
        return euclidean(n, weights)
    if name == "heisenberg":
        return heisenberg(int(params[0]) if params else 1)
    if name == "parabolic_r2":
        return parabolic_r2()
    raise UnknownGroup(f"unknown built-in group {name!r}")


def parse_group(text: str) -> GroupSpec:
    """Parse a CLI group designator.

    Accepted forms: ``heisenberg:1``, ``parabolic_r2``, ``euclidean:2``,
    ``euclidean:2:1,2`` (weights) or a path to a JSON spec file.
    """
    path = Path(text)
    if text.endswith(".json") or path.is_file():
        return load_spec(path)
    name, *rest = text.split(":")
    if name == "euclidean" and len(rest) == 2:
        return euclidean(int(rest[0]), [float(d) for d in rest[1].split(",")])
    try:
        return builtin(name, *rest)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad group designator {text!r}: {exc}") from exc


def spec_to_dict(spec: GroupSpec) -> dict:
    return {
        "name": spec.name,
        "n": spec.n,
        "weights": list(spec.weights),
        "brackets": [
            {"i": i + 1, "j": j + 1, "k": k + 1, "c": c} for i, j, k, c in spec.brackets if i < j
        ],
    }


def spec_from_dict(data: dict) -> GroupSpec:
    try:
        weights = tuple(float(d) for d in data["weights"])
        n = int(data.get("n", len(weights)))
        brackets = tuple(
            (int(b["i"]) - 1, int(b["j"]) - 1, int(b["k"]) - 1, float(b["c"]))
            for b in data.get("brackets", [])
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed group spec: {exc}") from exc
    if n != len(weights):
        raise ConfigError(f"n = {n} but {len(weights)} weights given")
    return GroupSpec(str(data.get("name", "custom")), weights, brackets)


def load_spec(path) -> GroupSpec:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read group spec {path}: {exc}") from exc
    return spec_from_dict(data)


def save_spec(spec: GroupSpec, path) -> None:
    Path(path).write_text(json.dumps(spec_to_dict(spec), indent=2))


# ---------------------------------------------------------------------------
# validation


@dataclass
class Check:
    passed: bool
    offenders: list = field(default_factory=list)
    detail: str = ""


@dataclass
class ValidationReport:
    checks: dict[str, Check]

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def diagnostics(self) -> list[str]:
        out = []
        for name, check in self.checks.items():
            if not check.passed:
                shown = ", ".join(str(tuple(x + 1 for x in o)) for o in check.offenders[:10])
                out.append(f"{name}: {check.detail} offending (1-based): {shown}".rstrip(": "))
        return out

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "checks": {
                k: {
                    "passed": c.passed,
                    "offenders": [[x + 1 for x in o] for o in c.offenders],
                    "detail": c.detail,
                }
                for k, c in self.checks.items()
            },
        }


def validate_spec(spec: GroupSpec, tol: float = 1e-12) -> ValidationReport:
    """Check the hypotheses that make the dilations algebra automorphisms."""
    d = spec.w()
    C = spec._table
    n = spec.n
    checks: dict[str, Check] = {}

    bad = []
    if abs(d[0] - 1.0) > _WEIGHT_TOL:
        bad.append((0,))
    bad += [(j,) for j in range(1, n) if d[j] < d[j - 1] - _WEIGHT_TOL]
    checks["weights"] = Check(not bad, bad, "need 1 = d_1 <= ... <= d_n")

    anti = np.argwhere(np.abs(C + C.transpose(1, 0, 2)) > tol)
    anti = [tuple(map(int, t)) for t in anti if t[0] <= t[1]]
    checks["antisymmetry"] = Check(not anti, anti, "c_ij^k != -c_ji^k")

    grading = [
        (int(i), int(j), int(k))
        for i, j, k in np.argwhere(np.abs(C) > tol)
        if i < j and abs(d[k] - d[i] - d[j]) > _WEIGHT_TOL
    ]
    checks["grading"] = Check(not grading, grading, "c_ij^k != 0 but d_k != d_i + d_j")

    # [e_a,[e_b,e_c]] + [e_b,[e_c,e_a]] + [e_c,[e_a,e_b]] expanded in structure constants
    inner = np.einsum("bcl,alk->abck", C, C)
    jac = inner + inner.transpose(1, 2, 0, 3) + inner.transpose(2, 0, 1, 3)
    viol = np.argwhere(np.abs(jac).max(axis=3) > tol)
    viol = [tuple(map(int, t)) for t in viol if t[0] < t[1] < t[2]]
    checks["jacobi"] = Check(not viol, viol, "Jacobi identity fails")

    step_ok = spec.step <= MAX_STEP
    checks["step"] = Check(step_ok, [] if step_ok else [(n - 1,)], f"step {spec.step} > {MAX_STEP}")
    return ValidationReport(checks)


# ---------------------------------------------------------------------------
# arithmetic


def bracket(spec: GroupSpec, x, y) -> np.ndarray:
    """Lie bracket [x, y]_k = sum_ij x_i y_j c_ij^k, vectorized over leading axes."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    shape = np.broadcast_shapes(x.shape, y.shape)
    out = np.zeros(shape)
    for i, j, k, c in spec._terms:
        out[..., k] += c * x[..., i] * y[..., j]
    return out


def multiply(spec: GroupSpec, g, h) -> np.ndarray:
    """Group product via the Dynkin series through bracket length four."""
    if spec.step > MAX_STEP:
        raise UnsupportedStep(f"step {spec.step} exceeds supported BCH order {MAX_STEP}")
    x = np.asarray(g, dtype=float)
    y = np.asarray(h, dtype=float)
    z = x + y
    if spec.is_abelian:
        return z
    xy = bracket(spec, x, y)
    z = z + 0.5 * xy
    if spec.step >= 3:
        x_xy = bracket(spec, x, xy)
        z = z + (x_xy - bracket(spec, y, xy)) / 12.0
        if spec.step >= 4:
            z = z - bracket(spec, y, x_xy) / 24.0
    return z


def box_product(spec: GroupSpec, a, b) -> np.ndarray:
    """Half-widths of a centred box containing x.y for |x_k| <= a_k, |y_k| <= b_k.

    Each BCH term is bounded through the absolute structure constants.
    Vectorized over leading axes.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    out = a + b
    if spec.is_abelian:
        return out

    def br(x, y):
        res = np.zeros(np.broadcast_shapes(x.shape, y.shape))
        for i, j, k, c in spec._terms:
            res[..., k] += abs(c) * x[..., i] * y[..., j]
        return res

    xy = br(a, b)
    out = out + 0.5 * xy
    if spec.step >= 3:
        x_xy = br(a, xy)
        out = out + (x_xy + br(b, xy)) / 12.0
        if spec.step >= 4:
            out = out + br(b, x_xy) / 24.0
    return out


def inverse(spec: GroupSpec, g) -> np.ndarray:
    return -np.asarray(g, dtype=float)


def dilate(spec: GroupSpec, lam, g) -> np.ndarray:
    """delta_lambda: coordinate j scaled by lambda**d_j (lambda may broadcast)."""
    lam = np.asarray(lam, dtype=float)
    if np.any(lam <= 0):
        raise DomainError("dilation factor must be positive")
    return np.asarray(g, dtype=float) * lam[..., None] ** spec.w()


def identity(spec: GroupSpec) -> np.ndarray:
    return np.zeros(spec.n)


def random_points(spec: GroupSpec, rng: np.random.Generator, size: int, scale: float = 1.0):
    """Gaussian coordinates dilated by scale, for property checks."""
    return dilate(spec, scale, rng.standard_normal((size, spec.n)))


@dataclass
class AlgebraReport:
    group: str
    n_triples: int
    associativity_max_err: float
    inverse_max_err: float
    automorphism_max_err: float

    @property
    def max_err(self) -> float:
        return max(self.associativity_max_err, self.inverse_max_err, self.automorphism_max_err)

    def ok(self, tol: float = 1e-10) -> bool:
        return self.max_err <= tol

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["max_err"] = self.max_err
        return d


def check_algebra(spec: GroupSpec, n_triples: int = 1000, seed: int = 0,
                  lambdas=(0.5, 2.0, 10.0)) -> AlgebraReport:
    """Sup-norm errors of the group laws on seeded random triples.

    Automorphism errors are relative to |delta_lambda(g h)|_inf so that large
    dilation factors do not inflate roundoff.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA55C]))
    g, h, k = (random_points(spec, rng, n_triples) for _ in range(3))
    assoc = multiply(spec, multiply(spec, g, h), k) - multiply(spec, g, multiply(spec, h, k))
    inv = np.concatenate([multiply(spec, g, inverse(spec, g)), multiply(spec, inverse(spec, g), g)])
    auto = 0.0
    gh = multiply(spec, g, h)
    for lam in lambdas:
        lhs = dilate(spec, lam, gh)
        err = np.abs(lhs - multiply(spec, dilate(spec, lam, g), dilate(spec, lam, h))).max(axis=1)
        auto = max(auto, float(np.max(err / np.maximum(np.abs(lhs).max(axis=1), 1.0))))
    return AlgebraReport(spec.name, n_triples, float(np.abs(assoc).max()), float(np.abs(inv).max()),
                         auto)
