import logging
import math
from typing import Annotated, Iterable, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.spatial.transform import Rotation as SciRotation

from conformal_rectifier.curve_model_service import Vector3, as_point
from conformal_rectifier.errors import DegenerateInputError, DegenerateSphereError, PoleError

logger = logging.getLogger(__name__)

CROSS_CHECK_TOL = 1e-8
COPLANAR_FLOOR = 1e-13
POLE_FLOOR = 1e-12


class Angle(BaseModel):
    """
    Cosine of an angle together with 1 - cos evaluated without cancellation.

    ``residual`` holds the disagreement between two independent evaluations where the
    operation has them (closed distance formula vs. tangent dot product).
    """

    model_config = ConfigDict(frozen=True)

    cos: float
    one_minus_cos: float
    residual: Optional[float] = None

    @property
    def radians(self) -> float:
        return 2.0 * math.asin(min(1.0, math.sqrt(max(self.one_minus_cos, 0.0) / 2.0)))


def _vec(p) -> Vector3:
    return tuple(float(c) for c in p)


def unit_angle(u, v, residual: Optional[float] = None, cos: Optional[float] = None) -> Angle:
    """
    Angle between two nonzero vectors; 1 - cos is half the squared chord of the unit vectors.

    Raises:
        DegenerateInputError: One of the vectors vanishes.
    """
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise DegenerateInputError("angle with a zero-length vector")
    uh, vh = np.asarray(u) / nu, np.asarray(v) / nv
    value = float(np.dot(uh, vh)) if cos is None else cos
    return Angle(
        cos=float(np.clip(value, -1.0, 1.0)),
        one_minus_cos=0.5 * float(np.dot(uh - vh, uh - vh)),
        residual=residual,
    )


def _points(points: Iterable) -> Tuple[np.ndarray, ...]:
    pts = tuple(as_point(p) for p in points)
    diam = max(float(np.linalg.norm(a - b)) for i, a in enumerate(pts) for b in pts[i + 1 :])
    for i, a in enumerate(pts):
        for j in range(i + 1, len(pts)):
            if np.linalg.norm(a - pts[j]) <= 1e-14 * diam:
                raise DegenerateInputError(f"points {i + 1} and {j + 1} coincide")
    return pts


def _d(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b))


class CircleTriple(BaseModel):
    """
    Circle through three ordered points; a line when they are collinear.
    """

    model_config = ConfigDict(frozen=True)

    p1: Vector3
    p2: Vector3
    p3: Vector3
    x12: float
    x13: float
    x23: float
    centre: Optional[Vector3] = None
    radius: float = math.inf

    @property
    def is_line(self) -> bool:
        return self.centre is None

    def tangent(self, at: int) -> np.ndarray:
        return circle_tangent(self, at)


def circumcircle(p1, p2, p3) -> CircleTriple:
    """
    Circle through three pairwise distinct points.

    Collinear points give a line: ``centre`` is None and ``radius`` infinite.

    Raises:
        DegenerateInputError: Two of the points coincide.
    """
    A, B, C = _points((p1, p2, p3))
    a = A - C
    b = B - C
    ab_cross = np.cross(a, b)
    norm_ab_cross = float(np.linalg.norm(ab_cross))
    centre = None
    radius = math.inf
    if norm_ab_cross > 1e-14 * np.linalg.norm(a) * np.linalg.norm(b):
        radius = float(np.linalg.norm(a) * np.linalg.norm(b) * np.linalg.norm(a - b) / (2 * norm_ab_cross))
        centre = _vec(np.cross(a.dot(a) * b - b.dot(b) * a, ab_cross) / (2 * norm_ab_cross**2) + C)
    return CircleTriple(
        p1=_vec(A),
        p2=_vec(B),
        p3=_vec(C),
        x12=_d(A, B),
        x13=_d(A, C),
        x23=_d(B, C),
        centre=centre,
        radius=radius,
    )


def circle_tangent(c: CircleTriple, at: int) -> np.ndarray:
    """
    Unit tangent of the circle through (p1, p2, p3) at one of its defining points,
    oriented along the order p1 -> p2 -> p3.

    Args:
        c (CircleTriple): The circle.
        at (int): 1, 2 or 3.

    Returns:
        np.ndarray: Tangent vector, unit length up to rounding. On a line it is the
        direction of the line.

    Example:
        circle_tangent(circumcircle((0, 0, 0), (1, 0, 0), (3, 0, 0)), 3)  # array([1., 0., 0.])
    """
    x1, x2, x3 = np.asarray(c.p1), np.asarray(c.p2), np.asarray(c.p3)
    x12, x13, x23 = c.x12, c.x13, c.x23
    if at == 1:
        return ((x13 / x12) * (x2 - x1) + (x12 / x13) * (x1 - x3)) / x23
    if at == 2:
        return ((x12 / x23) * (x3 - x2) + (x23 / x12) * (x2 - x1)) / x13
    if at == 3:
        return ((x23 / x13) * (x1 - x3) + (x13 / x23) * (x3 - x2)) / x12
    raise ValueError(f"tangent index must be 1, 2 or 3, got {at}")


def _cross_checked(closed: float, ta: np.ndarray, tb: np.ndarray, what: str) -> Angle:
    dot = float(np.dot(ta, tb) / (np.linalg.norm(ta) * np.linalg.norm(tb)))
    residual = abs(closed - dot)
    if residual > CROSS_CHECK_TOL:
        logger.warning("%s: closed form %.17g vs tangent dot %.17g", what, closed, dot)
    else:
        logger.debug("%s cross-check residual %.3g", what, residual)
    return unit_angle(ta, tb, residual=residual, cos=closed)


def cusp_angle_cos(x1, x2, x3, x4) -> Angle:
    """
    Cusp angle at x3 between the circles through (x1, x2, x3) and (x2, x3, x4).

    ``cos`` is the distance-ratio formula, ``one_minus_cos`` comes from the two unit
    tangents at x3 and ``residual`` compares both routes.

    Raises:
        DegenerateInputError: Two of the points coincide.
    """
    p1, p2, p3, p4 = _points((x1, x2, x3, x4))
    x12, x13, x14 = _d(p1, p2), _d(p1, p3), _d(p1, p4)
    x23, x24, x34 = _d(p2, p3), _d(p2, p4), _d(p3, p4)
    closed = (x13**2 * x24**2 + x34**2 * x12**2 - x23**2 * x14**2) / (2 * x12 * x24 * x13 * x34)
    ta = circle_tangent(circumcircle(p1, p2, p3), 3)
    tb = circle_tangent(circumcircle(p2, p3, p4), 2)
    return _cross_checked(closed, ta, tb, "cusp angle")


def torsion_angle_cos(x1, x2, x3, x4, x5) -> Angle:
    """
    Torsion angle at x3 between the circle through (x1, x2, x3) and the circle through
    (x3, x4, x5).

    Raises:
        DegenerateInputError: Two of the points coincide.
    """
    p1, p2, p3, p4, p5 = _points((x1, x2, x3, x4, x5))
    x12, x13, x14, x15 = _d(p1, p2), _d(p1, p3), _d(p1, p4), _d(p1, p5)
    x23, x24, x25 = _d(p2, p3), _d(p2, p4), _d(p2, p5)
    x34, x35, x45 = _d(p3, p4), _d(p3, p5), _d(p4, p5)
    closed = (
        x13**2 * x24**2 * x35**2
        + x15**2 * x23**2 * x34**2
        - x13**2 * x25**2 * x34**2
        - x14**2 * x23**2 * x35**2
    ) / (2 * x12 * x13 * x23 * x34 * x35 * x45)
    ta = circle_tangent(circumcircle(p1, p2, p3), 3)
    tb = circle_tangent(circumcircle(p3, p4, p5), 1)
    return _cross_checked(closed, ta, tb, "torsion angle")


def _distance_table(points, count: int) -> np.ndarray:
    P = np.asarray(points, dtype=float)
    if P.ndim != 3 or P.shape[1:] != (count, 3):
        raise DegenerateInputError(f"expected configurations of shape (n, {count}, 3), got {P.shape}")
    X = np.linalg.norm(P[:, :, np.newaxis, :] - P[:, np.newaxis, :, :], axis=-1)
    diam = X.max(axis=(1, 2))
    off = ~np.eye(count, dtype=bool)
    bad = np.flatnonzero((X[:, off] <= 1e-14 * diam[:, np.newaxis]).any(axis=1))
    if bad.size:
        raise DegenerateInputError(f"configuration {int(bad[0])} has coincident points")
    return X


def cusp_cos_batch(points) -> np.ndarray:
    """
    Distance-formula cusp cosines for a stack of configurations, shape (n, 4, 3) -> (n,).

    Same formula as ``cusp_angle_cos`` without the tangent cross-check.

    Raises:
        DegenerateInputError: Wrong shape, or two points of a configuration coincide.
    """
    X = _distance_table(points, 4)
    x12, x13, x14 = X[:, 0, 1], X[:, 0, 2], X[:, 0, 3]
    x23, x24, x34 = X[:, 1, 2], X[:, 1, 3], X[:, 2, 3]
    return (x13**2 * x24**2 + x34**2 * x12**2 - x23**2 * x14**2) / (2 * x12 * x24 * x13 * x34)


def torsion_cos_batch(points) -> np.ndarray:
    """
    Distance-formula torsion cosines for a stack of configurations, shape (n, 5, 3) -> (n,).

    Raises:
        DegenerateInputError: Wrong shape, or two points of a configuration coincide.
    """
    X = _distance_table(points, 5)
    x12, x13, x14, x15 = X[:, 0, 1], X[:, 0, 2], X[:, 0, 3], X[:, 0, 4]
    x23, x24, x25 = X[:, 1, 2], X[:, 1, 3], X[:, 1, 4]
    x34, x35, x45 = X[:, 2, 3], X[:, 2, 4], X[:, 3, 4]
    return (
        x13**2 * x24**2 * x35**2
        + x15**2 * x23**2 * x34**2
        - x13**2 * x25**2 * x34**2
        - x14**2 * x23**2 * x35**2
    ) / (2 * x12 * x13 * x23 * x34 * x35 * x45)


def tangent_batch(p1, p2, p3, at: int) -> np.ndarray:
    """``circle_tangent`` over stacks of point triples, each of shape (n, 3)."""
    x1, x2, x3 = (np.asarray(p, dtype=float) for p in (p1, p2, p3))
    x12 = np.linalg.norm(x1 - x2, axis=-1)[:, np.newaxis]
    x13 = np.linalg.norm(x1 - x3, axis=-1)[:, np.newaxis]
    x23 = np.linalg.norm(x2 - x3, axis=-1)[:, np.newaxis]
    if at == 1:
        return ((x13 / x12) * (x2 - x1) + (x12 / x13) * (x1 - x3)) / x23
    if at == 2:
        return ((x12 / x23) * (x3 - x2) + (x23 / x12) * (x2 - x1)) / x13
    if at == 3:
        return ((x23 / x13) * (x1 - x3) + (x13 / x23) * (x3 - x2)) / x12
    raise ValueError(f"tangent index must be 1, 2 or 3, got {at}")


def _tangent_cos(ta: np.ndarray, tb: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->i", ta, tb) / (np.linalg.norm(ta, axis=-1) * np.linalg.norm(tb, axis=-1))


def cusp_residual_batch(points) -> np.ndarray:
    """|closed form - tangent dot| of the cusp angle for every configuration."""
    P = np.asarray(points, dtype=float)
    closed = cusp_cos_batch(P)
    ta = tangent_batch(P[:, 0], P[:, 1], P[:, 2], 3)
    tb = tangent_batch(P[:, 1], P[:, 2], P[:, 3], 2)
    return np.abs(closed - _tangent_cos(ta, tb))


def torsion_residual_batch(points) -> np.ndarray:
    """|closed form - tangent dot| of the torsion angle for every configuration."""
    P = np.asarray(points, dtype=float)
    closed = torsion_cos_batch(P)
    ta = tangent_batch(P[:, 0], P[:, 1], P[:, 2], 3)
    tb = tangent_batch(P[:, 2], P[:, 3], P[:, 4], 1)
    return np.abs(closed - _tangent_cos(ta, tb))


def gram_coefficients(q1, q2, q3, q4) -> Tuple[float, float, float, float]:
    """
    Literal determinants (A1, A2, A3, D) with x_c = q4 + (A1 z1 + A2 z2 + A3 z3) / (2 D),
    z_j = q_j - q4.

    D is the Gram determinant of z1, z2, z3 and A_i replaces its i-th column by the
    squared lengths |z_j|^2. Loses accuracy quickly for small quadruples; use
    ``circumsphere`` for anything but cross-checks.
    """
    pts = [as_point(q) for q in (q1, q2, q3, q4)]
    Z = np.array([p - pts[3] for p in pts[:3]])
    G = Z @ Z.T
    sq = np.diag(G).copy()
    A = []
    for i in range(3):
        M = G.copy()
        M[:, i] = sq
        A.append(float(np.linalg.det(M)))
    return A[0], A[1], A[2], float(np.linalg.det(G))


class SphereQuad(BaseModel):
    model_config = ConfigDict(frozen=True)

    q1: Vector3
    q2: Vector3
    q3: Vector3
    q4: Vector3
    A: Tuple[float, float, float]
    D: float
    centre: Vector3
    radius: float

    @property
    def normal_at_q4(self) -> np.ndarray:
        """A1 z1 + A2 z2 + A3 z3: points from q4 towards the centre."""
        Z = np.array([np.subtract(q, self.q4) for q in (self.q1, self.q2, self.q3)])
        return np.asarray(self.A) @ Z


def circumsphere(q1, q2, q3, q4) -> SphereQuad:
    """
    Sphere through four points.

    The coefficients come from a linear solve rather than the determinant expansion:
    c = x_c - q4 solves z_j . c = |z_j|^2 / 2, then c = sum a_i z_i gives A_i = 2 D a_i
    with D = det(Z)^2.

    Raises:
        DegenerateInputError: Two of the points coincide.
        DegenerateSphereError: The points are coplanar.
    """
    pts = _points((q1, q2, q3, q4))
    Z = np.array([p - pts[3] for p in pts[:3]])
    diam = max(_d(a, b) for i, a in enumerate(pts) for b in pts[i + 1 :])
    det = float(np.linalg.det(Z))
    if abs(det) <= COPLANAR_FLOOR * diam**3:
        raise DegenerateSphereError(f"coplanar quadruple (|det| = {abs(det):.3g}, diameter {diam:.3g})")
    rel = np.linalg.solve(Z, 0.5 * np.einsum("ij,ij->i", Z, Z))
    a = np.linalg.solve(Z.T, rel)
    D = det**2
    return SphereQuad(
        q1=_vec(pts[0]),
        q2=_vec(pts[1]),
        q3=_vec(pts[2]),
        q4=_vec(pts[3]),
        A=_vec(2.0 * D * a),
        D=D,
        centre=_vec(pts[3] + rel),
        radius=float(np.linalg.norm(rel)),
    )


def sphere_angle_cos(x1, x2, x3, x4, x5) -> Angle:
    """
    Angle at x4 between the sphere through (x1, x2, x3, x4) and the sphere through
    (x5, x2, x3, x4), measured between their normals at x4.

    ``residual`` compares the cosine against the one from the literal Gram determinants.
    Those lose accuracy quickly on small quadruples, so the residual is only logged.

    Raises:
        DegenerateSphereError: Either quadruple is coplanar.
    """
    first = circumsphere(x1, x2, x3, x4)
    second = circumsphere(x5, x2, x3, x4)
    angle = unit_angle(first.normal_at_q4, second.normal_at_q4)
    ga, gb = _gram_normal(first), _gram_normal(second)
    na, nb = np.linalg.norm(ga), np.linalg.norm(gb)
    residual = abs(float(np.dot(ga, gb) / (na * nb)) - angle.cos) if na > 0.0 and nb > 0.0 else math.inf
    logger.debug("sphere angle Gram residual %.3g", residual)
    return angle.model_copy(update={"residual": residual})


def _gram_normal(sphere: SphereQuad) -> np.ndarray:
    A1, A2, A3, _ = gram_coefficients(sphere.q1, sphere.q2, sphere.q3, sphere.q4)
    Z = np.array([np.subtract(q, sphere.q4) for q in (sphere.q1, sphere.q2, sphere.q3)])
    return np.array([A1, A2, A3]) @ Z


class Translation(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["translation"] = "translation"
    vector: Vector3

    def apply(self, p: np.ndarray) -> np.ndarray:
        return p + np.asarray(self.vector)

    def inverse(self) -> "Translation":
        return Translation(vector=_vec(-np.asarray(self.vector)))


class Rotation(BaseModel):
    """Orthogonal linear map; determinant -1 (a mirror) is allowed."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["rotation"] = "rotation"
    matrix: Tuple[Vector3, Vector3, Vector3]

    @field_validator("matrix")
    @classmethod
    def orthogonal(cls, value):
        R = np.asarray(value, dtype=float)
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-10):
            raise ValueError("rotation matrix must be orthogonal")
        return value

    def apply(self, p: np.ndarray) -> np.ndarray:
        return p @ np.asarray(self.matrix).T

    def inverse(self) -> "Rotation":
        return Rotation(matrix=tuple(_vec(row) for row in np.asarray(self.matrix).T))


class Dilation(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["dilation"] = "dilation"
    factor: float = Field(gt=0)

    def apply(self, p: np.ndarray) -> np.ndarray:
        return self.factor * p

    def inverse(self) -> "Dilation":
        return Dilation(factor=1.0 / self.factor)


class Inversion(BaseModel):
    """Inversion in the sphere of the given centre and radius."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["inversion"] = "inversion"
    centre: Vector3
    radius: float = Field(gt=0)

    def apply(self, p: np.ndarray) -> np.ndarray:
        d = p - np.asarray(self.centre)
        r2 = np.sum(d * d, axis=-1, keepdims=True)
        if np.any(r2 <= (POLE_FLOOR * self.radius) ** 2):
            raise PoleError(f"point at the inversion centre {self.centre}")
        return np.asarray(self.centre) + self.radius**2 * d / r2

    def inverse(self) -> "Inversion":
        return self


MobiusStep = Annotated[Union[Translation, Rotation, Dilation, Inversion], Field(discriminator="kind")]


class MobiusMap(BaseModel):
    """
    Composition of similarities and sphere inversions, applied left to right.
    """

    model_config = ConfigDict(frozen=True)

    steps: Tuple[MobiusStep, ...] = ()

    def inverse(self) -> "MobiusMap":
        return MobiusMap(steps=tuple(step.inverse() for step in reversed(self.steps)))

    def __call__(self, p) -> np.ndarray:
        return mobius_apply(self, p)


def mobius_apply(m: MobiusMap, p) -> np.ndarray:
    """
    Image of a point, or of an array of points with shape (..., 3).

    Raises:
        PoleError: A point sits at an inversion centre.
    """
    out = np.asarray(p, dtype=float)
    if out.shape[-1:] != (3,):
        raise DegenerateInputError(f"expected points in 3-space, got shape {out.shape}")
    for step in m.steps:
        out = step.apply(out)
    return out


def random_mobius(
    rng: np.random.Generator, avoid: Optional[Sequence[Sequence[float]]] = None, mirror: bool = False
) -> MobiusMap:
    """
    Random map rotation -> translation -> inversion -> dilation.

    The inversion centre is placed between one and three configuration diameters away
    from every point of ``avoid``, so the image stays well conditioned.
    """
    pts = np.zeros((1, 3)) if avoid is None else np.asarray(avoid, dtype=float).reshape(-1, 3)
    matrix = SciRotation.random(random_state=rng).as_matrix()
    if mirror:
        matrix = matrix @ np.diag([1.0, 1.0, -1.0])
    shift = rng.normal(size=3)
    moved = pts @ matrix.T + shift
    centroid = moved.mean(axis=0)
    diam = max(1.0, float(np.max(np.linalg.norm(moved - centroid, axis=1))) * 2.0)
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    distance = diam * rng.uniform(1.0, 3.0)
    centre = centroid + direction * distance
    return MobiusMap(
        steps=(
            Rotation(matrix=tuple(_vec(row) for row in matrix)),
            Translation(vector=_vec(shift)),
            Inversion(centre=_vec(centre), radius=distance * rng.uniform(0.5, 1.5)),
            Dilation(factor=float(np.exp(rng.uniform(-0.5, 0.5)))),
        )
    )
