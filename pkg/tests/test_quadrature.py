import math

import numpy as np
import pytest

from homfrac import group as G
from homfrac import quadrature as qd
from homfrac.errors import DomainError
from homfrac.gauge import default_gauge

E1, E2, H1 = G.euclidean(1), G.euclidean(2), G.heisenberg(1)


def test_disk_area(cfg):
    est = qd.integrate_haar(1.0, qd.Ball(default_gauge(E2), 1.0), cfg)
    assert est.contains(math.pi, k=3.0)


def test_box_integral(cfg):
    est = qd.integrate_haar(lambda x: x[:, 0] ** 2, qd.Box((1.0, 2.0)), cfg)
    assert est.contains(2 * 2 * 2 / 3, k=3.0)


def test_plane_constants(cfg):
    gauge = default_gauge(E2)
    assert qd.sigma_Q(gauge, cfg).contains(2 * math.pi, k=3.0)
    assert qd.tau_m(gauge, cfg).contains(2 * math.pi, k=3.0)


def test_line_constants(cfg):
    gauge = default_gauge(E1)
    assert qd.sigma_Q(gauge, cfg).value == pytest.approx(2.0)
    assert qd.tau_m(gauge, cfg).contains(2.0, k=3.0)


def test_moment_identity(cfg):
    est = qd.moment_integral(default_gauge(E2), 0, 0, 0.5, cfg)
    assert est.contains(math.pi, k=3.0)


def test_koranyi_sigma(cfg):
    assert qd.sigma_Q(default_gauge(H1), cfg).contains(math.pi**2 / 2, k=3.0)


def test_polar_identity_heisenberg():
    cfg = qd.QuadratureConfig(n_samples=200_000)
    est = qd.annulus_power_integral(default_gauge(H1), 3.0, 0.5, 2.0, cfg)
    assert est.contains(qd.polar_closed_form(4.0, math.pi**2 / 2, 3.0, 0.5, 2.0), k=3.0)


def test_polar_identity_critical_power(cfg):
    est = qd.annulus_power_integral(default_gauge(E2), 2.0, 0.5, 2.0, cfg)
    assert est.contains(2 * math.pi * math.log(4.0), k=3.0)


def test_ball_volume_scales_like_Q(cfg):
    gauge = default_gauge(H1)
    a = qd.integrate_haar(1.0, qd.Ball(gauge, 1.0), cfg)
    b = qd.integrate_haar(1.0, qd.Ball(gauge, 2.0), cfg)
    assert b.value / a.value == pytest.approx(2.0**H1.Q, rel=1e-12)


def test_deterministic_given_seed(cfg):
    gauge = default_gauge(H1)
    a = qd.annulus_power_integral(gauge, 3.0, 0.5, 2.0, cfg)
    b = qd.annulus_power_integral(gauge, 3.0, 0.5, 2.0, cfg)
    c = qd.annulus_power_integral(gauge, 3.0, 0.5, 2.0, qd.QuadratureConfig(50_000, seed=1))
    assert a.value == b.value
    assert a.value != c.value


def test_estimate_arithmetic():
    a = qd.Estimate(1.0, 0.3, 0.1)
    b = qd.Estimate(2.0, 0.4, 0.2)
    d = a + b
    assert d.value == 3.0 and d.std_err == pytest.approx(0.5) and d.tail_bound == pytest.approx(0.3)
    assert a.interval == pytest.approx((0.3, 1.7))
    assert a.contains(1.69) and not a.contains(1.71)


def test_config_validation():
    with pytest.raises(DomainError):
        qd.QuadratureConfig(n_samples=10)
    with pytest.raises(DomainError):
        qd.integrate_haar(1.0, qd.Annulus(default_gauge(E2), 2.0, 1.0), qd.QuadratureConfig())


def test_geometric_counts_sum():
    counts = qd.geometric_counts(1000, 10, 0.5)
    assert sum(counts) >= 1000 * 0.9
    assert all(c > 0 for c in counts)
