import math

import numpy as np
import pytest

from homfrac import fields as F
from homfrac import fracop as fo
from homfrac import group as G
from homfrac import sobolev as so
from homfrac.errors import DomainError, NormalizationError, OverlapError
from homfrac.gauge import default_gauge
from homfrac.quadrature import QuadratureConfig

H1 = G.heisenberg(1)
KOR = default_gauge(H1)
E1 = G.euclidean(1)
LINE = default_gauge(E1)
SIGMA_H1 = math.pi**2 / 2


@pytest.mark.parametrize("Q, s, p", [(4, 0.5, 8 / 3), (2, 0.5, 4.0), (3, 0.25, 2.4)])
def test_critical_exponent(Q, s, p):
    assert so.critical_exponent(Q, s) == pytest.approx(p)


def test_critical_exponent_domain():
    with pytest.raises(DomainError):
        so.critical_exponent(1, 0.5)
    with pytest.raises(DomainError):
        so.critical_exponent(4, 1.0)


def test_min_power_sum():
    assert so.min_power_sum(1, 1, 1, 1) == pytest.approx((1.0, 2.0))
    r, f = so.min_power_sum(2, 1, 1, 2)
    assert r == pytest.approx(1.0) and f == pytest.approx(3.0)
    rs = np.linspace(0.2, 5, 20001)
    assert f == pytest.approx(np.min(rs**2 + 2 / rs), rel=1e-6)
    for rr in (0.9 * r, 1.1 * r):
        assert rr**2 + 2 / rr > f


def test_min_power_sum_scaling():
    a, b = 0.5, 1.5
    _, f1 = so.min_power_sum(a, b, 1.0, 1.0)
    _, f2 = so.min_power_sum(a, b, 2.0, 1.0)
    assert f2 / f1 == pytest.approx(2 ** (b / (a + b)))


@pytest.mark.parametrize("Q, s", [(4, 0.5), (6, 0.3), (3, 0.25)])
def test_corrected_bracket_is_the_power_sum_minimum(Q, s):
    _, f = so.min_power_sum(s, (Q - 2 * s) / 2, 1.0, 1.0)
    assert so.hedberg_bracket(Q, s, corrected=True) == pytest.approx(f)


def test_hedberg_bracket_value():
    assert so.hedberg_bracket(4, 0.5) == pytest.approx(1.7548, abs=1e-3)


def test_hedberg_constant_stays_bounded_as_s_shrinks():
    # the constant decreases towards s -> 0 instead of blowing up
    vals = [so.hedberg_constant(4, s, SIGMA_H1) for s in (0.5, 0.25, 0.1, 0.01)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert vals[0] == pytest.approx(0.902, abs=1e-3)
    assert vals[-1] == pytest.approx(0.690, abs=1e-3)


def test_grid_zero_field():
    grid = so.GridField.sample(KOR, F.zero(), 6.0, 8)
    assert so.grid_seminorm(KOR, 0.5, grid) == 0.0


@pytest.mark.slow
def test_grid_refinement_16_vs_24():
    u = so.radial_bump(KOR, 5.0)
    a = so.grid_seminorm(KOR, 0.5, so.GridField.sample(KOR, u, 6.0, 16))
    b = so.grid_seminorm(KOR, 0.5, so.GridField.sample(KOR, u, 6.0, 24))
    assert abs(a - b) / b < 0.05


def test_grid_refinement_and_monte_carlo_agree():
    u = so.radial_bump(KOR, 5.0)
    coarse = so.GridField.sample(KOR, u, 6.0, 12)
    fine = so.GridField.sample(KOR, u, 6.0, 16)
    a, b = so.grid_seminorm(KOR, 0.5, coarse), so.grid_seminorm(KOR, 0.5, fine)
    assert abs(a - b) / b < 0.05
    mc = fo.seminorm_sq(KOR, 0.5, u, QuadratureConfig(n_samples=100_000))
    assert so.extrapolated_seminorm(KOR, 0.5, coarse, fine) == pytest.approx(mc.value, rel=0.03)


def test_quotient_invariances_and_lower_bound():
    grid = so.GridField.sample(KOR, so.radial_bump(KOR, 3.0), 6.0, 12)
    q = so.sobolev_quotient(KOR, 0.5, grid)
    assert so.sobolev_quotient(KOR, 0.5, grid.with_values(-3 * grid.values)) == pytest.approx(q)
    S = so.embedding_constant(4, 0.5, SIGMA_H1, corrected=True)
    assert q * S**2 >= 1


def test_optimizer_decreases():
    grid = so.GridField.sample(KOR, so.radial_bump(KOR, 3.0), 6.0, 12)
    res = so.optimize_quotient(KOR, 0.5, grid, iters=10)
    qs = [t.quotient for t in res.trace]
    assert all(a > b for a, b in zip(qs, qs[1:]))
    assert so.quotient_trace_monotone(res.trace)


def test_sobolev_inequality_holds():
    chk = so.sobolev_inequality_check(KOR, 0.5, F.compact_bump(H1), QuadratureConfig(n_samples=20_000))
    assert chk.holds()
    assert chk.ratio_corrected <= chk.ratio_printed


def test_mollifier_keeps_constants():
    rho = so.unit_mass_bump(KOR, 1.0)
    assert so.field_mass(KOR, rho) == pytest.approx(1.0)
    out = so.mollify(KOR, rho, 0.5, F.constant(2.5))
    np.testing.assert_allclose(out(np.zeros((2, 3))), 2.5)
    with pytest.raises(NormalizationError):
        so.mollify(KOR, F.compact_bump(H1), 0.5, F.gaussian(H1))


def test_mollifier_converges_pointwise():
    u = F.gaussian(H1)
    x = np.array([[0.2, 0.1, -0.3]])
    rho = so.unit_mass_bump(KOR, 1.0)
    errs = [abs(so.mollify(KOR, rho, eps, u)(x) - u(x))[0] for eps in (0.4, 0.2, 0.1)]
    assert errs[0] > errs[1] > errs[2]


def test_truncation_field():
    R = 2.0
    phi = so.truncation_field(KOR, R)
    e = np.array([[1.0, 0.0, 0.0]])
    assert phi(G.dilate(H1, R / 2, e))[0] == 0.0
    assert phi(G.dilate(H1, 3 * R, e))[0] == 1.0
    assert so.lipschitz_probe(KOR, R, 2000) <= 1 + 1e-6


def test_rellich_constant_field():
    res = so.rellich_defect(LINE, F.constant(2.0), np.array([[0.0]]), 0.5, [1.0],
                            QuadratureConfig(n_samples=20_000))
    assert res.defect.value == 0.0


def test_rellich_linear_single_ball():
    lin = F.ScalarField(lambda x: x[..., 0], "x", smoothness="smooth")
    res = so.rellich_defect(LINE, lin, np.array([[0.0]]), 0.5, [1.0],
                            QuadratureConfig(n_samples=20_000), points_per_ball=20_000)
    assert res.defect.contains(1 / 12, k=3.0)


def test_overlapping_balls_rejected():
    with pytest.raises(OverlapError):
        so.check_disjoint(LINE, np.array([[0.0], [0.5]]), 0.5)


def test_multiplication_bound():
    cfg = QuadratureConfig(n_samples=20_000)
    zero = so.multiplication_bound_check(KOR, 0.5, F.zero(), F.gaussian(H1), 1.0, cfg)
    assert zero.holds and zero.lhs.value == 0.0
    rep = so.multiplication_bound_check(KOR, 0.5, F.compact_bump(H1), F.gaussian(H1), 1.0, cfg,
                                        n_points=32, inner_samples=2000)
    assert rep.holds


def test_counterexample():
    rows = so.counterexample_sweep([1, 300], [0.01])
    small, big = rows
    assert not small.saturated and big.saturated
    assert big.r == pytest.approx(math.sqrt(2 / 0.01), rel=1e-6)
    assert big.r > 50 * small.r
    with pytest.raises(DomainError):
        so.counterexample_sweep([0], [0.1])


def test_grid_dump_round_trip(tmp_path):
    grid = so.GridField.sample(KOR, F.gaussian(H1), 4.0, (6, 7, 8))
    path = tmp_path / "u.hfg"
    grid.dump(path)
    back = so.GridField.load(path)
    assert back.shape == grid.shape
    np.testing.assert_array_equal(back.half_widths, grid.half_widths)
    np.testing.assert_array_equal(back.values, grid.values)
    (tmp_path / "bad.hfg").write_bytes(b"nope")
    with pytest.raises(DomainError):
        so.GridField.load(tmp_path / "bad.hfg")
