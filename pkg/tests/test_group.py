import numpy as np
import pytest

from homfrac import group as G
from homfrac.errors import ConfigError, UnknownGroup, UnsupportedStep


def test_multiply_euclidean_weighted():
    spec = G.euclidean(2, (1, 2))
    np.testing.assert_allclose(G.multiply(spec, [1, 2], [3, 4]), [4, 6])


def test_multiply_heisenberg():
    h1 = G.heisenberg(1)
    np.testing.assert_allclose(G.multiply(h1, [1, 0, 0], [0, 1, 0]), [1, 1, 0.5])
    np.testing.assert_allclose(G.bracket(h1, [1, 0, 0], [0, 1, 0]), [0, 0, 1])


def test_inverse_is_negation():
    h1 = G.heisenberg(1)
    g = np.array([1.0, 2.0, 3.0])
    np.testing.assert_allclose(G.inverse(h1, g), -g)
    np.testing.assert_allclose(G.multiply(h1, g, G.inverse(h1, g)), 0, atol=1e-15)


def test_dilate_parabolic():
    np.testing.assert_allclose(G.dilate(G.parabolic_r2(), 2, [1, 1]), [2, 4])


@pytest.mark.parametrize("spec, Q, m", [
    (G.euclidean(2), 2, 2),
    (G.parabolic_r2(), 3, 1),
    (G.heisenberg(1), 4, 2),
    (G.heisenberg(2), 6, 4),
])
def test_builtin_dimensions(spec, Q, m):
    assert spec.Q == Q
    assert spec.m == m
    assert G.validate_spec(spec).ok


def test_parse_group():
    assert G.parse_group("heisenberg:2").Q == 6
    with pytest.raises(UnknownGroup):
        G.parse_group("nope")


def test_grading_violation_reported():
    bad = G.GroupSpec("bad", (1, 1, 1), ((0, 1, 2, 1.0),))
    report = G.validate_spec(bad)
    assert not report.ok
    assert report.checks["grading"].offenders == [(0, 1, 2)]
    assert "(1, 2, 3)" in report.diagnostics()[0]


def test_first_weight_must_be_one():
    report = G.validate_spec(G.GroupSpec("bad", (2, 2)))
    assert not report.checks["weights"].passed


def test_bad_bracket_index():
    with pytest.raises(ConfigError):
        G.GroupSpec("bad", (1, 1), ((0, 1, 5, 1.0),))


@pytest.mark.parametrize("spec", [G.euclidean(2), G.parabolic_r2(), G.heisenberg(1), G.heisenberg(2)])
def test_check_algebra(spec):
    report = G.check_algebra(spec, n_triples=500)
    assert report.ok(), report.to_dict()


def test_step_above_four_unsupported():
    # filiform algebra of step 5: [e1, e_j] = e_{j+1}
    weights = (1, 1, 2, 3, 4, 5)
    brackets = tuple((0, j, j + 1, 1.0) for j in range(1, 5))
    spec = G.GroupSpec("filiform5", weights, brackets)
    with pytest.raises(UnsupportedStep):
        G.multiply(spec, np.zeros(6), np.zeros(6))


def test_spec_round_trip(tmp_path):
    spec = G.heisenberg(2)
    path = tmp_path / "h2.json"
    G.save_spec(spec, path)
    back = G.load_spec(path)
    assert back.weights == spec.weights
    assert back.brackets == spec.brackets
