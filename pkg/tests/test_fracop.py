import numpy as np
import pytest

from homfrac import fields as F
from homfrac import fracop as fo
from homfrac import group as G
from homfrac.acceptance import fourier_oracle_1d
from homfrac.errors import DomainError
from homfrac.gauge import default_gauge, make_gauge
from homfrac.quadrature import QuadratureConfig

H1 = G.heisenberg(1)
KOR = default_gauge(H1)
G0 = np.array([0.2, 0.1, -0.3])


def test_constant_field_is_annihilated(cfg):
    est = fo.eval_Ls(KOR, 0.5, F.constant(3.0), np.zeros(3), cfg)
    assert est.value == 0.0 and est.std_err == 0.0


@pytest.mark.parametrize("x", [0.0, 0.7, 1.5])
def test_euclidean_line_matches_fourier(cfg, x):
    spec = G.euclidean(1)
    est = fo.eval_Ls(default_gauge(spec), 0.5, F.gaussian(spec), np.array([x]), cfg)
    assert est.contains(fourier_oracle_1d(0.5, x), k=3.0)


def test_principal_value_converges(cfg):
    u = F.gaussian(H1)
    eps = [0.5, 0.25, 0.125, 0.0625]
    pv = fo.eval_Ls_pv(KOR, 0.25, u, G0, eps, cfg)
    full = fo.eval_Ls(KOR, 0.25, u, G0, cfg)
    gaps = [abs(p.value - full.value) for p in pv]
    assert all(a > b for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < 0.02 * abs(full.value)


def test_pv_rejects_bad_eps(cfg):
    with pytest.raises(DomainError):
        fo.eval_Ls_pv(KOR, 0.25, F.gaussian(H1), G0, [0.1, 0.2], cfg)


def test_carre_du_champ_nonnegative(cfg):
    assert fo.carre_du_champ(KOR, 0.5, F.gaussian(H1), F.gaussian(H1), G0, cfg).value > 0


def test_product_rule_residual_vanishes(cfg):
    res = fo.product_rule_check(KOR, 0.5, F.gaussian(H1), F.compact_bump(H1), G0, cfg)
    assert abs(res.value) <= 2 * res.std_err + res.tail_bound + 1e-8


def test_form_symmetry(cfg):
    sym = fo.form_symmetry_check(KOR, 0.5, F.compact_bump(H1), F.gaussian(H1, 0.7), cfg)
    assert sym.ok, sym.to_dict()


@pytest.mark.parametrize("s", [0.0, 1.0, 1.5, -0.2])
def test_s_range(s):
    with pytest.raises(DomainError):
        fo.FracParams(s, 4.0)


def test_critical_exponent_needs_2s_below_Q():
    assert fo.FracParams(0.5, 4).critical_exponent == pytest.approx(8 / 3)
    with pytest.raises(DomainError):
        fo.FracParams(0.75, 1).critical_exponent


def test_limit_near_one():
    spec = G.euclidean(2)
    rows = fo.limit_probe(make_gauge("euclidean_power", spec), F.gaussian(spec), [[0.0, 0.0]],
                          (0.98,), QuadratureConfig(n_samples=100_000))
    assert all(r.rel_err < 0.1 for r in rows), [r.to_dict() for r in rows]


def test_decay_beyond_support(cfg):
    u = F.compact_bump(H1, 1.0)
    R = fo._radius(KOR, u)
    rows = fo.decay_profile(KOR, 0.5, u, [2 * R, 4 * R], cfg)
    assert all(r.within_bound for r in rows)
    assert all(r.value.agrees(r.direct, 3.0) for r in rows)
    with pytest.raises(DomainError):
        fo.decay_profile(KOR, 0.5, u, [R], cfg)


def test_translation_difference_vanishes_with_h():
    cfg = QuadratureConfig(n_samples=20_000)
    u = F.compact_bump(H1, 1.0)
    rows, semi = fo.translation_sweep(KOR, 0.5, u, [1.0, 0.25, 0.0625], cfg)
    diffs = [r.diff.value for r in rows]
    assert diffs[0] > diffs[1] > diffs[2]
    assert semi.value > 0


def test_dirichlet_form_dilation_scaling():
    cfg = QuadratureConfig(n_samples=20_000)
    u = F.compact_bump(H1, 1.0)
    lam, s = 1.7, 0.5
    a = fo.seminorm_sq(KOR, s, u, cfg)
    b = fo.seminorm_sq(KOR, s, F.compose_dilation(H1, u, lam), cfg)
    expected = lam ** (2 * s - H1.Q) * a.value
    assert abs(b.value - expected) <= 3 * (b.std_err + lam ** (2 * s - H1.Q) * a.std_err) + b.tail_bound
