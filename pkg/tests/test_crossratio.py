import math

import numpy as np
import pytest

from conformal_rectifier.crossratio_service import (
    branch_residual,
    cross_ratio,
    cubic_residual,
    pqr_from_circles,
    pqr_from_uv,
    tetrahedron_surface,
)
from conformal_rectifier.errors import DegenerateInputError, DomainError, OutOfRegionError
from conformal_rectifier.inversive_kernel_service import random_mobius

SQUARE = [(1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (-1.0, 0.0, 0.0), (0.0, -1.0, 0.0)]


def separated_quadruple(rng, ratio=0.1):
    while True:
        points = rng.normal(size=(4, 3))
        gaps = [np.linalg.norm(a - b) for i, a in enumerate(points) for b in points[i + 1 :]]
        if min(gaps) >= ratio * max(gaps):
            return points


def test_symmetric_point():
    p, q, r = pqr_from_uv(1.0, 1.0)
    assert (p, q, r) == pytest.approx((0.5, 0.5, -0.5))


@pytest.mark.parametrize(
    "u,v,vertex",
    [(0.5, 0.5, (1.0, 1.0, 1.0)), (1.5, 0.5, (-1.0, 1.0, -1.0)), (0.5, 1.5, (1.0, -1.0, -1.0))],
)
def test_region_boundary_vertices(u, v, vertex):
    assert pqr_from_uv(u, v) == pytest.approx(vertex)


def test_region_violations():
    with pytest.raises(OutOfRegionError) as info:
        pqr_from_uv(0.2, 0.3)
    assert info.value.bound == "u+v>=1"
    with pytest.raises(OutOfRegionError) as info:
        pqr_from_uv(3.0, 1.0)
    assert info.value.bound == "|u-v|<=1"
    with pytest.raises(DomainError):
        pqr_from_uv(0.0, 1.0)


def test_cross_ratio_of_square():
    assert cross_ratio(SQUARE, 1, 4, 2, 3) == pytest.approx(0.5)
    assert cross_ratio(SQUARE, 1, 2, 4, 3) == pytest.approx(0.5)
    with pytest.raises(DegenerateInputError):
        cross_ratio([(0, 0, 0), (0, 0, 0), (1, 0, 0), (0, 1, 0)], 1, 4, 2, 3)
    with pytest.raises(DomainError):
        cross_ratio(SQUARE[:3], 1, 2, 3, 1)


def test_concyclic_points_are_tangent():
    report = pqr_from_circles(SQUARE)
    assert report.on_boundary
    assert report.all_tangent
    assert (report.p, report.q, report.r) == pytest.approx((1.0, 1.0, 1.0))
    for cos in report.crossing_cos.values():
        assert abs(cos) == pytest.approx(1.0, abs=1e-12)
    assert set(report.crossing_cos) == {"12", "34", "23", "14", "13", "24"}


def test_regular_tetrahedron():
    points = [(1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)]
    report = pqr_from_circles(points)
    assert (report.u, report.v) == pytest.approx((1.0, 1.0))
    assert (report.p, report.q, report.r) == pytest.approx((0.5, 0.5, -0.5))
    assert not report.on_boundary
    assert report.magnitude_check < 1e-12


def test_random_quadruples(rng):
    for _ in range(1000):
        report = pqr_from_circles(separated_quadruple(rng))
        assert abs(report.residual_cubic) <= 1e-10
        assert abs(report.residual_branch) <= 1e-10
        assert report.u + report.v >= 1.0 - 1e-12
        assert abs(report.u - report.v) <= 1.0 + 1e-12
        assert report.pairing_check <= 1e-9
        assert report.magnitude_check <= 1e-9
        assert report.p + report.q >= -1e-12


def test_residual_helpers():
    assert cubic_residual(0.5, 0.5, -0.5) == pytest.approx(0.0, abs=1e-15)
    assert branch_residual(0.5, 0.5, -0.5) == pytest.approx(0.0, abs=1e-15)
    assert branch_residual(0.5, 0.5, 1.0) == pytest.approx(1.5)


@pytest.mark.parametrize("mirror", [False, True])
def test_mobius_invariance(rng, mirror):
    points = rng.normal(size=(4, 3))
    base = pqr_from_circles(points)
    for _ in range(10):
        image = pqr_from_circles(random_mobius(rng, avoid=points, mirror=mirror)(points))
        for key in ("u", "v", "p", "q", "r"):
            assert getattr(image, key) == pytest.approx(getattr(base, key), abs=1e-9)
        for key, cos in base.crossing_cos.items():
            assert image.crossing_cos[key] == pytest.approx(cos, abs=1e-9)


def test_tetrahedron_surface_vertices():
    samples = tetrahedron_surface(50)
    face = [(s.p, s.q, s.r) for s in samples if s.on_allowed_face]
    for vertex in [(1.0, 1.0, 1.0), (-1.0, 1.0, -1.0), (1.0, -1.0, -1.0)]:
        assert any(np.allclose(point, vertex, atol=1e-12) for point in face)
    for s in samples:
        assert abs(cubic_residual(s.p, s.q, s.r)) <= 1e-9
        assert s.branch in ("minus", "plus")


def test_tetrahedron_surface_minimal_grid():
    samples = tetrahedron_surface(2)
    assert len(samples) == 6 + 2 * 9
    with pytest.raises(DomainError):
        tetrahedron_surface(1)


def test_allowed_face_matches_configurations():
    samples = [s for s in tetrahedron_surface(12) if s.branch == "minus" and s.on_allowed_face]
    assert all(s.p + s.q >= -1e-12 for s in samples)
    for s in samples:
        assert branch_residual(s.p, s.q, s.r) == pytest.approx(0.0, abs=1e-9)
    assert math.isclose(min(s.r for s in samples), -1.0, abs_tol=1e-12)
