import numpy as np
import pytest

from homfrac import group as G
from homfrac.errors import GaugeGroupMismatch
from homfrac.gauge import (ball_gauge, check_gauge_properties, default_gauge, eval_gauge,
                           gauge_distance, make_gauge)

H1 = G.heisenberg(1)


def test_koranyi_value():
    assert eval_gauge(make_gauge("koranyi", H1), [0, 0, 1]) == pytest.approx(2.0)


def test_parabolic_value():
    assert eval_gauge(default_gauge(G.parabolic_r2()), [1, 4]) == pytest.approx(3.0)


def test_ball_gauge_unit_points():
    np.testing.assert_allclose(ball_gauge(H1, 1.0, np.array([[0, 0, 1.0], [1, 0, 0]])), [1, 1],
                               rtol=1e-10)


def test_ball_gauge_characterizes_ball():
    rng = np.random.default_rng(3)
    g = rng.uniform(-1.5, 1.5, (2000, 3))
    r = 0.8
    inside = np.linalg.norm(g, axis=1) < r
    np.testing.assert_array_equal(ball_gauge(H1, r, g) < 1, inside)


@pytest.mark.parametrize("kind", ["koranyi", "euclidean_power", "ball_gauge"])
def test_homogeneity_and_invariance(kind):
    gauge = make_gauge(kind, H1)
    rng = np.random.default_rng(1)
    g, h, c = rng.standard_normal((3, 200, 3))
    for lam in (0.3, 5.0):
        np.testing.assert_allclose(eval_gauge(gauge, G.dilate(H1, lam, g)),
                                   lam * eval_gauge(gauge, g), rtol=1e-9)
    np.testing.assert_allclose(
        gauge_distance(gauge, G.multiply(H1, c, g), G.multiply(H1, c, h)),
        gauge_distance(gauge, g, h), rtol=1e-9)


@pytest.mark.parametrize("spec", [G.euclidean(2), G.parabolic_r2(), G.heisenberg(1), G.heisenberg(2)])
def test_default_gauge_report(spec):
    report = check_gauge_properties(default_gauge(spec), n_samples=5000)
    assert report.ok, report.to_dict()


def test_mismatch():
    with pytest.raises(GaugeGroupMismatch):
        make_gauge("koranyi", G.parabolic_r2())
