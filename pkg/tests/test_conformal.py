import math

import numpy as np
import pytest

from conformal_rectifier.conformal_service import (
    conformal_length,
    conformal_state,
    nu_density,
    omega_equidistant,
    series_inversion,
)
from conformal_rectifier.curve_model_service import arclength_map, catalog_curve
from conformal_rectifier.errors import CapabilityError, ConformalDegeneracyError, DomainError
from conformal_rectifier.frenet_service import frenet_state, frenet_state_at

from .conftest import HELIX_NU, HELIX_P, HELIX_Q, HELIX_T, generic_s


@pytest.mark.parametrize("s", [1.0, 14.0, 27.0])
def test_helix_invariants(helix, helix_map, s):
    cs = conformal_state(frenet_state(helix, helix_map, s))
    assert cs.nu == pytest.approx(HELIX_NU, rel=1e-9)
    assert cs.f == pytest.approx(math.sqrt(HELIX_NU), rel=1e-9)
    assert cs.Q == pytest.approx(HELIX_Q, rel=1e-9)
    assert cs.T == pytest.approx(HELIX_T, rel=1e-9)
    assert cs.P == pytest.approx(HELIX_P, rel=1e-9)
    assert cs.P_qt == pytest.approx(HELIX_P, rel=1e-9)
    assert abs(cs.nu_s) < 1e-12


@pytest.mark.parametrize("name", ["helix", "trig_poly"])
def test_P_identity(name, helix, helix_map, trig_poly, trig_poly_map):
    curve, amap = (helix, helix_map) if name == "helix" else (trig_poly, trig_poly_map)
    rng = np.random.default_rng(7)
    for s in rng.uniform(0.05, 0.95, 20) * amap.total_length:
        cs = conformal_state(frenet_state(curve, amap, float(s)))
        assert cs.P_residual <= 1e-9
        assert cs.P == pytest.approx(cs.P_qt, rel=1e-9, abs=1e-9)


def test_circle_is_conformally_degenerate(circle, circle_map):
    fr = frenet_state(circle, circle_map, 1.0)
    assert fr.kappa == pytest.approx(1.0)
    with pytest.raises(ConformalDegeneracyError) as info:
        conformal_state(fr)
    assert info.value.s == 1.0


def test_ellipse_vertex_is_degenerate():
    ellipse = catalog_curve("ellipse", [2, 1])
    with pytest.raises(ConformalDegeneracyError):
        conformal_state(frenet_state_at(ellipse, 0.0))
    assert conformal_state(frenet_state_at(ellipse, 0.7)).T == 0.0


def test_isolated_zero_between_scan_points():
    ellipse = catalog_curve("ellipse", [2, 1])
    amap = arclength_map(ellipse)
    vertex = amap.s_of_t(math.pi / 2)
    with pytest.raises(ConformalDegeneracyError) as info:
        conformal_length(ellipse, amap, amap.s_of_t(math.pi / 2 - 0.3), amap.s_of_t(math.pi / 2 + 0.2117))
    assert info.value.s == pytest.approx(vertex, abs=1e-8)
    with pytest.raises(ConformalDegeneracyError):
        omega_equidistant(ellipse, amap, amap.s_of_t(math.pi / 2 + 0.01), 0.1, -1)


def test_nu_density_matches_conformal_state(trig_poly, trig_poly_map):
    t = np.linspace(0.5, 5.5, 6)
    density = nu_density(trig_poly, t)
    assert density.shape == (6,)
    for ti, value in zip(t, density):
        assert value == pytest.approx(conformal_state(frenet_state_at(trig_poly, ti)).nu, rel=1e-10)


def test_nu_density_vanishes_on_circle(circle):
    np.testing.assert_allclose(nu_density(circle, np.linspace(0, 6, 5)), 0.0, atol=1e-14)


def test_conformal_length_of_helix(helix, helix_map):
    assert conformal_length(helix, helix_map, 2.0, 12.0) == pytest.approx(10.0 * math.sqrt(HELIX_NU), rel=1e-11)
    assert conformal_length(helix, helix_map, 12.0, 2.0) == pytest.approx(-10.0 * math.sqrt(HELIX_NU), rel=1e-11)
    assert conformal_length(helix, helix_map, 5.0, 5.0) == 0.0


def test_conformal_length_errors(helix, helix_map, circle, circle_map):
    with pytest.raises(DomainError):
        conformal_length(helix, helix_map, -1.0, 2.0)
    with pytest.raises(ConformalDegeneracyError):
        conformal_length(circle, circle_map, 1.0, 2.0)


def test_conformal_length_is_similarity_invariant(trig_poly):
    R = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    moved = trig_poly.similarity(R, (3.0, -1.0, 0.5), 2.5)
    lengths = []
    for curve in (trig_poly, moved):
        amap = arclength_map(curve)
        lengths.append(conformal_length(curve, amap, amap.s_of_t(1.0), amap.s_of_t(2.0)))
    assert lengths[1] == pytest.approx(lengths[0], rel=1e-10)


def test_invariants_under_similarity_and_mirror(trig_poly):
    R = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    scaled = trig_poly.similarity(R, (3.0, -1.0, 0.5), 2.5)
    mirrored = trig_poly.similarity(np.diag([1.0, 1.0, -1.0]))
    base = conformal_state(frenet_state_at(trig_poly, 1.2))
    cs = conformal_state(frenet_state_at(scaled, 1.2))
    assert cs.nu == pytest.approx(base.nu / 2.5**2, rel=1e-10)
    assert cs.Q == pytest.approx(base.Q, rel=1e-9)
    assert cs.T == pytest.approx(base.T, rel=1e-9)
    flipped = conformal_state(frenet_state_at(mirrored, 1.2))
    assert flipped.Q == pytest.approx(base.Q, rel=1e-9)
    assert flipped.T == pytest.approx(-base.T, rel=1e-9)


@pytest.mark.parametrize("k", [-2, -1, 1, 3])
def test_omega_equidistant_on_helix(helix, helix_map, k):
    s = omega_equidistant(helix, helix_map, 14.0, 0.1, k)
    assert s == pytest.approx(14.0 + k * 0.1 / math.sqrt(HELIX_NU), abs=1e-11)


def test_omega_equidistant_roundtrip(trig_poly, trig_poly_map, trig_poly_s0):
    s = omega_equidistant(trig_poly, trig_poly_map, trig_poly_s0, 0.15, 2)
    assert conformal_length(trig_poly, trig_poly_map, trig_poly_s0, s) == pytest.approx(0.3, rel=1e-10)
    assert omega_equidistant(trig_poly, trig_poly_map, trig_poly_s0, 0.15, 0) == trig_poly_s0


def test_omega_equidistant_errors(helix, helix_map, circle, circle_map):
    with pytest.raises(DomainError):
        omega_equidistant(helix, helix_map, 14.0, 100.0, 1)
    with pytest.raises(ConformalDegeneracyError):
        omega_equidistant(circle, circle_map, 1.0, 0.1, 1)


def test_series_inversion_on_helix(helix, helix_map):
    series = series_inversion(helix, helix_map, 14.0)
    assert len(series.coefficients) == 7
    assert series.coefficients[0] == pytest.approx(1.0 / math.sqrt(HELIX_NU), rel=1e-12)
    np.testing.assert_allclose(series.coefficients[1:], 0.0, atol=1e-9)
    assert series.epsilon(0.2) == pytest.approx(0.2 / math.sqrt(HELIX_NU), rel=1e-12)


def test_series_inversion_beats_linear_term(trig_poly, trig_poly_map, trig_poly_s0):
    series = series_inversion(trig_poly, trig_poly_map, trig_poly_s0)
    omega = 0.02
    exact = omega_equidistant(trig_poly, trig_poly_map, trig_poly_s0, omega, 1) - trig_poly_s0
    linear = omega * series.coefficients[0]
    assert abs(float(series.epsilon(omega)) - exact) <= 1e-3 * abs(linear - exact)


def test_series_inversion_error_exponent(trig_poly, trig_poly_map, trig_poly_s0):
    series = series_inversion(trig_poly, trig_poly_map, trig_poly_s0)
    omegas, gaps = [], []
    for omega in np.geomspace(0.1, 0.02, 6):
        exact = omega_equidistant(trig_poly, trig_poly_map, trig_poly_s0, omega, 1) - trig_poly_s0
        gap = abs(float(series.epsilon(omega)) - exact)
        # below this the root finder's own tolerance dominates
        if gap > 1e-12 * abs(exact):
            omegas.append(omega)
            gaps.append(gap)
    assert len(omegas) >= 3
    slope = np.polyfit(np.log(omegas), np.log(gaps), 1)[0]
    assert slope >= 7.5


def test_series_inversion_first_coefficients(trig_poly, trig_poly_map):
    s0 = 0.3 * trig_poly_map.total_length
    series = series_inversion(trig_poly, trig_poly_map, s0)
    cs = conformal_state(frenet_state(trig_poly, trig_poly_map, s0))
    f_s = cs.nu_s / (2.0 * cs.f)
    assert series.coefficients[0] == pytest.approx(1.0 / cs.f, rel=1e-10)
    assert series.coefficients[1] == pytest.approx(-f_s / cs.f**3, rel=1e-8, abs=1e-12)


def test_series_inversion_needs_nine_derivatives(helix, helix_map):
    with pytest.raises(CapabilityError):
        series_inversion(helix.model_copy(update={"max_order": 5}), helix_map, 14.0)


def test_generic_point_is_not_degenerate(trig_poly, trig_poly_map):
    s0 = generic_s(trig_poly, trig_poly_map)
    assert conformal_state(frenet_state(trig_poly, trig_poly_map, s0)).nu > 1e-3
