import numpy as np
import pytest

from homfrac import fields as F
from homfrac import group as G

H1 = G.heisenberg(1)
PAR = G.parabolic_r2()
QUAD = F.ScalarField(lambda x: x[..., 0] ** 2 + x[..., 1] ** 2, "x2+y2", smoothness="smooth")


def test_field_coeffs_identity_at_origin():
    for spec in (H1, PAR, G.heisenberg(2)):
        np.testing.assert_allclose(F.left_field_coeffs(spec, np.zeros(spec.n)), np.eye(spec.n))
        np.testing.assert_allclose(F.right_field_coeffs(spec, np.zeros(spec.n)), np.eye(spec.n))


def test_heisenberg_field_columns():
    left = F.left_field_coeffs(H1, [0, 1, 0])
    right = F.right_field_coeffs(H1, [0, 1, 0])
    np.testing.assert_allclose(left[:, 0], [1, 0, -0.5])
    np.testing.assert_allclose(right[:, 0], [1, 0, 0.5])


def test_left_derivative_of_quadratic():
    g = np.array([0.2, 0.1, -0.3])
    assert F.apply_field(H1, 0, "left", QUAD, g) == pytest.approx(0.4, abs=1e-8)


@pytest.mark.parametrize("method", ["flow", "nested"])
def test_sub_laplacian_of_quadratic(method):
    val = F.horizontal_laplacian(H1, QUAD, np.array([0.3, -0.2, 0.5]), method)
    assert val == pytest.approx(4.0, abs=1e-5)


def test_parabolic_gaussian_laplacian():
    assert F.horizontal_laplacian(PAR, F.gaussian(PAR), np.zeros(2)) == pytest.approx(-2.0, abs=1e-6)


def test_flow_and_nested_agree():
    g = np.array([0.2, 0.1, -0.3])
    u = F.gaussian(H1)
    a = F.horizontal_laplacian(H1, u, g, "flow")
    b = F.horizontal_laplacian(H1, u, g, "nested")
    assert abs(a - b) < 1e-4


def test_taylor_remainder_order():
    u = F.gaussian(H1)
    g = np.array([0.2, 0.1, -0.3])
    e = np.random.default_rng(0).standard_normal(3)
    ts = np.array([0.1, 0.05, 0.025])
    errs = [abs(u(G.multiply(H1, g, G.dilate(H1, t, e))) - F.taylor_p2(H1, u, g, G.dilate(H1, t, e)))
            for t in ts]
    slope = np.polyfit(np.log(ts), np.log(errs), 1)[0]
    assert slope > 2
    assert F.remainder_degree(H1) == 3


def test_second_difference_small_for_small_h():
    u = F.gaussian(H1)
    g = np.array([0.2, 0.1, -0.3])
    e = np.array([1.0, 0.5, 0.2])
    d1 = abs(F.second_difference(H1, u, g, G.dilate(H1, 0.1, e)))
    d2 = abs(F.second_difference(H1, u, g, G.dilate(H1, 0.05, e)))
    assert d2 < d1 / 3


def test_translate_and_dilate():
    u = F.gaussian(H1)
    g0 = np.array([0.3, -0.2, 0.25])
    x = np.array([0.1, 0.4, -0.2])
    assert F.translate(H1, u, g0)(x) == pytest.approx(float(u(G.multiply(H1, g0, x))))
    assert F.compose_dilation(H1, u, 2.0)(x) == pytest.approx(float(u(G.dilate(H1, 2.0, x))))


def test_parse_field():
    assert F.parse_field("constant:c=3", H1)(np.zeros(3)) == 3
    assert F.parse_field("zero", H1).is_constant
    assert F.parse_field("compact_bump:R=2", H1).support_radius is not None
