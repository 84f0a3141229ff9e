import logging
import math
from itertools import combinations
from typing import Dict, List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from conformal_rectifier.curve_model_service import as_point
from conformal_rectifier.errors import DegenerateInputError, DomainError, OutOfRegionError
from conformal_rectifier.inversive_kernel_service import circle_tangent, circumcircle

logger = logging.getLogger(__name__)

REGION_TOL = 1e-12
BOUNDARY_TOL = 1e-9

# circle pair (i, j) -> the crossing cosine it carries; cc^(i) omits point i
PAIRINGS: Dict[str, Tuple[Tuple[int, int], Tuple[int, int]]] = {
    "p": ((1, 2), (3, 4)),
    "q": ((2, 3), (1, 4)),
    "r": ((1, 3), (2, 4)),
}


class CrossRatioReport(BaseModel):
    """
    Conformal invariants of four points: cross ratios, circle crossing cosines and
    the residuals of the relations between them.

    ``p``, ``q``, ``r`` come from the cross ratios. ``crossing_cos`` holds the cosines
    measured between the circles themselves (key "ij" for the circles omitting points
    i and j), with the signs the tangent orientation produces.
    """

    model_config = ConfigDict(frozen=True)

    u: float
    v: float
    p: float
    q: float
    r: float
    phi: float
    psi: float
    chi: float
    residual_cubic: float
    residual_branch: float
    pairing_check: float
    magnitude_check: float
    crossing_cos: Dict[str, float]
    on_boundary: bool
    all_tangent: bool


def _distinct(points: Sequence) -> List[np.ndarray]:
    pts = [as_point(p) for p in points]
    if len(pts) != 4:
        raise DomainError(f"expected four points, got {len(pts)}")
    scale = max(np.linalg.norm(a - b) for a, b in combinations(pts, 2))
    for (i, a), (j, b) in combinations(enumerate(pts, start=1), 2):
        if np.linalg.norm(a - b) <= 1e-14 * scale:
            raise DegenerateInputError(f"points {i} and {j} coincide")
    return pts


def cross_ratio(points: Sequence, i: int, j: int, k: int, l: int) -> float:
    """
    C(i, j, k, l) = (x_ik / x_il) (x_jl / x_jk) with 1-based point indices.

    u = C(1, 4, 2, 3) and v = C(1, 2, 4, 3) are the two independent ones.

    Raises:
        DegenerateInputError: Two of the points coincide.
    """
    pts = _distinct(points)

    def x(a: int, b: int) -> float:
        return float(np.linalg.norm(pts[a - 1] - pts[b - 1]))

    return (x(i, k) / x(i, l)) * (x(j, l) / x(j, k))


def pqr_from_uv(u: float, v: float, tol: float = REGION_TOL) -> Tuple[float, float, float]:
    """
    Crossing-angle cosines of the four circumcircles from the cross ratios.

    Args:
        u (float): C(1, 4, 2, 3).
        v (float): C(1, 2, 4, 3).
        tol (float): Slack on the region bounds.

    Returns:
        Tuple[float, float, float]: (p, q, r), clipped to [-1, 1].

    Raises:
        DomainError: u <= 0 or v <= 0.
        OutOfRegionError: u + v < 1 or |u - v| > 1.

    Example:
        pqr_from_uv(1.0, 1.0)  # (0.5, 0.5, -0.5)
    """
    if not (u > 0.0 and v > 0.0):
        raise DomainError(f"cross ratios must be positive, got u={u}, v={v}")
    if u + v < 1.0 - tol:
        raise OutOfRegionError(f"u + v = {u + v:.17g} < 1", bound="u+v>=1")
    if abs(u - v) > 1.0 + tol:
        raise OutOfRegionError(f"|u - v| = {abs(u - v):.17g} > 1", bound="|u-v|<=1")
    p = (1 + v**2 - u**2) / (2 * v)
    q = (1 + u**2 - v**2) / (2 * u)
    r = (1 - u**2 - v**2) / (2 * u * v)
    return tuple(float(np.clip(x, -1.0, 1.0)) for x in (p, q, r))


def cubic_residual(p: float, q: float, r: float) -> float:
    return p**2 + q**2 + r**2 - 2 * p * q * r - 1


def branch_residual(p: float, q: float, r: float) -> float:
    return r - (p * q - math.sqrt(max((1 - p**2) * (1 - q**2), 0.0)))


def _circle_omitting(pts: List[np.ndarray], i: int):
    kept = [k for k in range(1, 5) if k != i]
    return kept, circumcircle(*(pts[k - 1] for k in kept))


def _crossing_cos(pts: List[np.ndarray], i: int, j: int, at: int) -> float:
    tangents = []
    for omit in (i, j):
        kept, circle = _circle_omitting(pts, omit)
        tangents.append(circle_tangent(circle, kept.index(at) + 1))
    a, b = tangents
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))


def pqr_from_circles(points: Sequence) -> CrossRatioReport:
    """
    Measures the six crossing angles of the four circumcircles and checks them against
    the cross-ratio formulas.

    Each circle pair is evaluated at both of its common points; ``pairing_check`` is the
    largest disagreement in |cos| within a complementary pairing (both evaluation points
    included), ``magnitude_check`` the largest |cos| disagreement with p, q, r.

    Raises:
        DegenerateInputError: Two of the points coincide.
        OutOfRegionError: Only through rounding on wildly ill-conditioned input.
    """
    pts = _distinct(points)
    u = cross_ratio(pts, 1, 4, 2, 3)
    v = cross_ratio(pts, 1, 2, 4, 3)
    p, q, r = pqr_from_uv(u, v, tol=1e-9)

    crossing: Dict[str, float] = {}
    pairing = 0.0
    magnitude = 0.0
    for name, value in zip("pqr", (p, q, r)):
        measured = []
        for i, j in PAIRINGS[name]:
            common = [k for k in range(1, 5) if k not in (i, j)]
            values = [_crossing_cos(pts, i, j, at) for at in common]
            crossing[f"{i}{j}"] = values[0]
            measured.extend(abs(x) for x in values)
        pairing = max(pairing, max(measured) - min(measured))
        magnitude = max(magnitude, max(abs(m - abs(value)) for m in measured))
    if pairing > 1e-9 or magnitude > 1e-9:
        logger.warning("crossing angles disagree: pairing %.3g, magnitude %.3g", pairing, magnitude)

    report = CrossRatioReport(
        u=u,
        v=v,
        p=p,
        q=q,
        r=r,
        phi=math.acos(p),
        psi=math.acos(q),
        chi=math.acos(r),
        residual_cubic=cubic_residual(p, q, r),
        residual_branch=branch_residual(p, q, r),
        pairing_check=pairing,
        magnitude_check=magnitude,
        crossing_cos=crossing,
        on_boundary=abs(u + v - 1) <= BOUNDARY_TOL or abs(abs(u - v) - 1) <= BOUNDARY_TOL,
        all_tangent=all(abs(abs(c) - 1) <= BOUNDARY_TOL for c in crossing.values()),
    )
    logger.debug("cross ratios u=%.17g v=%.17g, cubic residual %.3g", u, v, report.residual_cubic)
    return report


class SurfaceSample(BaseModel):
    model_config = ConfigDict(frozen=True)

    p: float
    q: float
    r: float
    branch: str
    on_allowed_face: bool


def tetrahedron_surface(grid_n: int) -> List[SurfaceSample]:
    """
    Sample points of the rounded tetrahedron p^2 + q^2 + r^2 - 2pqr = 1.

    The first block covers the face reached by actual point configurations: triangle
    angles A = pi i/n, C = pi j/n with i + j <= n, mapped through the cross ratios
    u = sin C / sin B, v = sin A / sin B in the interior and through p = cos C,
    q = cos A, r = cos(A + C) on the boundary lines u + v = 1, |u - v| = 1. The
    second block samples both branches r = pq -/+ sqrt((1 - p^2)(1 - q^2)) over the
    whole square for context.

    Raises:
        DomainError: grid_n < 2.
    """
    if grid_n < 2:
        raise DomainError(f"grid_n must be at least 2, got {grid_n}")
    samples: List[SurfaceSample] = []
    for i in range(grid_n + 1):
        for j in range(grid_n + 1 - i):
            A = math.pi * i / grid_n
            C = math.pi * j / grid_n
            B = math.pi - A - C
            if i == 0 or j == 0 or i + j == grid_n:
                p, q, r = math.cos(C), math.cos(A), math.cos(A + C)
            else:
                p, q, r = pqr_from_uv(math.sin(C) / math.sin(B), math.sin(A) / math.sin(B))
            samples.append(SurfaceSample(p=p, q=q, r=r, branch="minus", on_allowed_face=True))
    for p in np.linspace(-1.0, 1.0, grid_n + 1):
        for q in np.linspace(-1.0, 1.0, grid_n + 1):
            root = math.sqrt(max((1 - p**2) * (1 - q**2), 0.0))
            for branch, sign in (("minus", -1.0), ("plus", 1.0)):
                samples.append(
                    SurfaceSample(
                        p=float(p),
                        q=float(q),
                        r=float(np.clip(p * q + sign * root, -1.0, 1.0)),
                        branch=branch,
                        on_allowed_face=branch == "minus" and p + q >= 0.0,
                    )
                )
    logger.info("tetrahedron surface: %d samples", len(samples))
    return samples
