import math

import numpy as np
import pytest
from pydantic import ValidationError

from conformal_rectifier.errors import DegenerateInputError, DegenerateSphereError, PoleError
from conformal_rectifier.inversive_kernel_service import (
    Dilation,
    Inversion,
    MobiusMap,
    Rotation,
    Translation,
    circle_tangent,
    circumcircle,
    circumsphere,
    cusp_angle_cos,
    cusp_cos_batch,
    cusp_residual_batch,
    gram_coefficients,
    mobius_apply,
    random_mobius,
    sphere_angle_cos,
    tangent_batch,
    torsion_angle_cos,
    torsion_cos_batch,
    torsion_residual_batch,
    unit_angle,
)


def on_circle(*angles):
    return [(math.cos(a), math.sin(a), 0.0) for a in angles]


def test_circumcircle_of_unit_circle_points():
    circle = circumcircle(*on_circle(0.1, 1.3, 2.9))
    np.testing.assert_allclose(circle.centre, (0.0, 0.0, 0.0), atol=1e-14)
    assert circle.radius == pytest.approx(1.0)
    assert not circle.is_line


def test_tangents_follow_point_order():
    circle = circumcircle(*on_circle(0.0, math.pi / 2, math.pi))
    np.testing.assert_allclose(circle.tangent(1), (0.0, 1.0, 0.0), atol=1e-14)
    np.testing.assert_allclose(circle.tangent(2), (-1.0, 0.0, 0.0), atol=1e-14)
    np.testing.assert_allclose(circle.tangent(3), (0.0, -1.0, 0.0), atol=1e-14)
    with pytest.raises(ValueError):
        circle.tangent(4)


def test_collinear_points_give_a_line():
    line = circumcircle((0, 0, 0), (1, 0, 0), (3, 0, 0))
    assert line.is_line
    assert line.radius == math.inf
    for at in (1, 2, 3):
        tangent = circle_tangent(line, at)
        assert np.linalg.norm(tangent) == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(tangent, (1.0, 0.0, 0.0), atol=1e-12)


def test_random_tangents_are_unit(rng):
    for _ in range(100):
        circle = circumcircle(*rng.normal(size=(3, 3)))
        for at in (1, 2, 3):
            assert np.linalg.norm(circle.tangent(at)) == pytest.approx(1.0, abs=1e-12)


def test_coincident_points():
    with pytest.raises(DegenerateInputError):
        circumcircle((0, 0, 0), (0, 0, 0), (1, 0, 0))
    with pytest.raises(DegenerateInputError):
        cusp_angle_cos((0, 0, 0), (1, 0, 0), (1, 0, 0), (2, 1, 0))


def test_unit_angle():
    angle = unit_angle((1.0, 0.0, 0.0), (-3.0, 0.0, 0.0))
    assert angle.cos == -1.0
    assert angle.one_minus_cos == 2.0
    assert angle.radians == pytest.approx(math.pi)
    with pytest.raises(DegenerateInputError):
        unit_angle((0.0, 0.0, 0.0), (1.0, 0.0, 0.0))


def test_concyclic_angles_vanish():
    points = on_circle(0.0, 0.4, 1.1, 1.5, 2.6)
    cusp = cusp_angle_cos(*points[:4])
    torsion = torsion_angle_cos(*points)
    assert cusp.cos == pytest.approx(1.0, abs=1e-14)
    assert torsion.cos == pytest.approx(1.0, abs=1e-14)
    assert cusp.one_minus_cos < 1e-28
    assert torsion.one_minus_cos < 1e-28


def separated_configurations(rng, count, size=5, ratio=0.1):
    draws = rng.normal(size=(4 * count, size, 3))
    gaps = np.linalg.norm(draws[:, :, np.newaxis] - draws[:, np.newaxis], axis=-1)[:, ~np.eye(size, dtype=bool)]
    kept = draws[gaps.min(axis=1) >= ratio * gaps.max(axis=1)]
    assert len(kept) >= count
    return kept[:count]


def test_closed_forms_match_tangent_dots(rng):
    configs = separated_configurations(rng, 1000)
    assert cusp_residual_batch(configs[:, :4]).max() <= 1e-10
    assert torsion_residual_batch(configs).max() <= 1e-10
    for points in configs[:50]:
        cusp = cusp_angle_cos(*points[:4])
        torsion = torsion_angle_cos(*points)
        assert cusp.residual <= 1e-10
        assert torsion.residual <= 1e-10
        assert 0.0 <= cusp.one_minus_cos <= 2.0
        assert cusp.one_minus_cos == pytest.approx(1.0 - cusp.cos, abs=1e-10)


def test_batch_kernel_matches_single_configurations(rng):
    configs = rng.normal(size=(20, 5, 3))
    cusp = cusp_cos_batch(configs[:, :4])
    torsion = torsion_cos_batch(configs)
    assert cusp.shape == torsion.shape == (20,)
    for i, points in enumerate(configs):
        assert cusp[i] == pytest.approx(cusp_angle_cos(*points[:4]).cos, abs=1e-12)
        assert torsion[i] == pytest.approx(torsion_angle_cos(*points).cos, abs=1e-12)
    tangents = tangent_batch(configs[:, 0], configs[:, 1], configs[:, 2], 2)
    np.testing.assert_allclose(tangents[3], circumcircle(*configs[3, :3]).tangent(2), atol=1e-12)


def test_batch_kernel_rejects_bad_input():
    with pytest.raises(DegenerateInputError):
        cusp_cos_batch(np.zeros((3, 5, 3)))
    config = np.array([[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]])
    with pytest.raises(DegenerateInputError):
        cusp_cos_batch(config)
    with pytest.raises(ValueError):
        tangent_batch(config[:, 0], config[:, 1], config[:, 3], 4)


def test_circumsphere():
    centre = np.array([1.0, 2.0, 3.0])
    directions = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1], [-1, -1, -1]], dtype=float)
    directions /= np.linalg.norm(directions, axis=1)[:, np.newaxis]
    points = centre + 2.0 * directions
    sphere = circumsphere(*points)
    np.testing.assert_allclose(sphere.centre, centre, atol=1e-12)
    assert sphere.radius == pytest.approx(2.0)


def test_sphere_normal_points_to_centre(rng):
    for _ in range(100):
        sphere = circumsphere(*rng.normal(size=(4, 3)))
        normal = sphere.normal_at_q4
        towards = np.asarray(sphere.centre) - np.asarray(sphere.q4)
        cos = np.dot(normal, towards) / (np.linalg.norm(normal) * np.linalg.norm(towards))
        assert cos == pytest.approx(1.0, abs=1e-9)


def test_gram_coefficients_agree_with_stable_solve():
    points = np.array([[0.3, 0.1, 0.0], [1.2, -0.4, 0.5], [0.1, 1.1, 0.2], [-0.2, 0.0, 1.3]])
    sphere = circumsphere(*points)
    A1, A2, A3, D = gram_coefficients(*points)
    assert D == pytest.approx(sphere.D, rel=1e-10)
    np.testing.assert_allclose((A1, A2, A3), sphere.A, rtol=1e-9)
    z = points[:3] - points[3]
    np.testing.assert_allclose(points[3] + (A1 * z[0] + A2 * z[1] + A3 * z[2]) / (2 * D), sphere.centre, atol=1e-12)


def test_sphere_angle_carries_gram_residual(rng):
    for points in separated_configurations(rng, 50):
        angle = sphere_angle_cos(*points)
        assert angle.residual is not None
        assert angle.residual <= 1e-7


def test_coplanar_quadruple():
    with pytest.raises(DegenerateSphereError):
        circumsphere((0, 0, 0), (1, 0, 0), (0, 1, 0), (1, 1, 0))
    with pytest.raises(DegenerateSphereError):
        sphere_angle_cos((0, 0, 0), (1, 0, 0), (0, 1, 0), (1, 1, 0), (0, 0, 1))


def test_cospherical_spheres_coincide():
    rng = np.random.default_rng(3)
    directions = rng.normal(size=(5, 3))
    points = directions / np.linalg.norm(directions, axis=1)[:, np.newaxis]
    assert sphere_angle_cos(*points).cos == pytest.approx(1.0, abs=1e-10)


def test_inversion_is_an_involution(rng):
    inversion = Inversion(centre=(1.0, 0.0, 0.0), radius=2.0)
    points = rng.normal(size=(10, 3)) + 5.0
    np.testing.assert_allclose(inversion.apply(inversion.apply(points)), points, rtol=1e-12)
    assert inversion.inverse() is inversion
    with pytest.raises(PoleError):
        inversion.apply(np.array([1.0, 0.0, 0.0]))


def test_inversion_fixes_its_sphere():
    inversion = Inversion(centre=(0.0, 0.0, 0.0), radius=3.0)
    np.testing.assert_allclose(inversion.apply(np.array([0.0, 3.0, 0.0])), (0.0, 3.0, 0.0))


def test_step_validation():
    with pytest.raises(ValidationError):
        Rotation(matrix=((2.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0)))
    with pytest.raises(ValidationError):
        Dilation(factor=0.0)
    with pytest.raises(ValidationError):
        Inversion(centre=(0.0, 0.0, 0.0), radius=-1.0)


def test_mobius_map_inverse(rng):
    points = rng.normal(size=(6, 3))
    mobius = random_mobius(rng, avoid=points)
    np.testing.assert_allclose(mobius.inverse()(mobius(points)), points, atol=1e-9)


def test_mobius_map_roundtrips_through_json():
    mobius = MobiusMap(
        steps=(
            Translation(vector=(1.0, 2.0, 3.0)),
            Inversion(centre=(0.0, 0.0, 0.0), radius=1.5),
            Dilation(factor=2.0),
        )
    )
    restored = MobiusMap.model_validate_json(mobius.model_dump_json())
    assert [step.kind for step in restored.steps] == ["translation", "inversion", "dilation"]
    np.testing.assert_allclose(restored((1.0, 1.0, 1.0)), mobius((1.0, 1.0, 1.0)))


def test_mobius_apply_shape_check():
    with pytest.raises(DegenerateInputError):
        mobius_apply(MobiusMap(), np.zeros((4, 2)))


@pytest.mark.parametrize("mirror", [False, True])
def test_angles_are_mobius_invariant(rng, mirror):
    points = rng.normal(size=(5, 3))
    cusp = cusp_angle_cos(*points[:4]).cos
    torsion = torsion_angle_cos(*points).cos
    sphere = sphere_angle_cos(*points).cos
    for _ in range(10):
        mobius = random_mobius(rng, avoid=points, mirror=mirror)
        image = mobius(points)
        assert cusp_angle_cos(*image[:4]).cos == pytest.approx(cusp, abs=1e-9)
        assert torsion_angle_cos(*image).cos == pytest.approx(torsion, abs=1e-9)
        assert abs(sphere_angle_cos(*image).cos) == pytest.approx(abs(sphere), abs=1e-9)
