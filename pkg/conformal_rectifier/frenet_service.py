import logging
import math
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from conformal_rectifier import jets
from conformal_rectifier.curve_model_service import (
    ArcLengthMap,
    CurveSpec,
    Vector3,
    as_point,
    stencil_weights,
)
from conformal_rectifier.errors import (
    CapabilityError,
    DegenerateCurveError,
    DegeneratePlaneError,
    DomainError,
    InflectionPointError,
)
from conformal_rectifier.inversive_kernel_service import Angle, unit_angle

logger = logging.getLogger(__name__)

KAPPA_FLOOR = 1e-10
FALLBACK_OFFSETS = (-3, -2, -1, 0, 1, 2, 3)


class FrenetState(BaseModel):
    """
    Frenet apparatus at one point of a curve, with s-derivatives of curvature and torsion.
    """

    model_config = ConfigDict(frozen=True)

    s: float
    param: float
    point: Vector3
    t: Vector3
    n: Vector3
    b: Vector3
    kappa: float
    tau: float
    kappa_s: float
    kappa_ss: float
    kappa_sss: float
    tau_s: float
    tau_ss: float


def arclength_jet(curve: CurveSpec, t: float, order: int) -> np.ndarray:
    """
    Taylor coefficients of x(s0 + sigma) in the arc-length offset sigma, shape (order + 1, 3).

    Raises:
        CapabilityError: The curve has fewer than ``order`` derivatives.
        DegenerateCurveError: Zero speed at ``t``.
    """
    if order > curve.max_order:
        raise CapabilityError(f"{curve.name}: needs derivatives up to order {order}, has {curve.max_order}")
    X = np.array([curve.deriv(t, k) / math.factorial(k) for k in range(order + 1)])
    velocity = jets.deriv(X)
    speed_sq = jets.dot(velocity, velocity)
    if speed_sq[0] <= 0.0:
        raise DegenerateCurveError(f"{curve.name}: zero speed at t={t}")
    s = jets.integrate(jets.sqrt(speed_sq))
    return jets.compose(X, jets.revert(s))


def curvature_jets(Y: np.ndarray, kappa_floor: float = KAPPA_FLOOR) -> Tuple[np.ndarray, np.ndarray]:
    """
    Jets of kappa(s) and tau(s) from an arc-length jet of length N + 1.

    kappa comes back with N - 1 coefficients, tau with N - 2.
    """
    d1 = jets.deriv(Y)
    d2 = jets.deriv(d1)
    d3 = jets.deriv(d2)
    c = jets.cross(d1, d2)
    cc = jets.dot(c, c)
    speed = jets.sqrt(jets.dot(d1, d1))
    kappa0 = math.sqrt(max(cc[0], 0.0)) / speed[0] ** 3
    if kappa0 <= kappa_floor:
        raise InflectionPointError(f"curvature {kappa0:.3g} below floor {kappa_floor:g}")
    kappa = jets.mul(jets.sqrt(cc), jets.reciprocal(jets.mul(speed, jets.mul(speed, speed))))
    tau = jets.mul(jets.dot(c, d3), jets.reciprocal(cc))
    return kappa, tau


def _frame(Y: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    tangent = Y[1] / np.linalg.norm(Y[1])
    binormal = np.cross(Y[1], Y[2])
    binormal = binormal / np.linalg.norm(binormal)
    return tangent, np.cross(binormal, tangent), binormal


def _fallback_derivatives(
    curve: CurveSpec, amap: ArcLengthMap, s: float, kappa_floor: float
) -> Tuple[np.ndarray, np.ndarray]:
    # curves with only third derivatives: differentiate kappa and tau numerically in s
    t0 = amap.t_of_s(s)
    speed = float(np.linalg.norm(curve.deriv(t0, 1)))
    h = curve.feature_size * speed * np.finfo(float).eps ** (1.0 / 7.0)
    if s + FALLBACK_OFFSETS[0] * h < 0.0 or s + FALLBACK_OFFSETS[-1] * h > amap.total_length:
        raise DomainError(f"s={s} too close to the domain boundary for the difference stencil")
    samples = []
    for j in FALLBACK_OFFSETS:
        kappa, tau = curvature_jets(arclength_jet(curve, amap.t_of_s(s + j * h), 3), kappa_floor)
        samples.append((kappa[0], tau[0]))
    values = np.array(samples)
    kappa_d = [values[3, 0]] + [
        float(np.dot(stencil_weights(k, FALLBACK_OFFSETS), values[:, 0]) / h**k) for k in (1, 2, 3)
    ]
    tau_d = [values[3, 1]] + [float(np.dot(stencil_weights(k, FALLBACK_OFFSETS), values[:, 1]) / h**k) for k in (1, 2)]
    return np.array(kappa_d), np.array(tau_d)


def frenet_state_at(
    curve: CurveSpec,
    t: float,
    s: Optional[float] = None,
    amap: Optional[ArcLengthMap] = None,
    kappa_floor: float = KAPPA_FLOOR,
) -> FrenetState:
    """
    Frenet state at parameter ``t``.

    Args:
        curve (CurveSpec): Curve with derivatives up to order 5, or 3 together with ``amap``.
        t (float): Curve parameter.
        s (Optional[float]): Arc length recorded in the state; taken from ``amap`` when omitted.
        amap (Optional[ArcLengthMap]): Needed for the difference fallback and for ``s``.
        kappa_floor (float): Curvature below which the frame is undefined.

    Returns:
        FrenetState: Frame, curvature, torsion and their s-derivatives.

    Raises:
        InflectionPointError: Curvature below ``kappa_floor``.
        CapabilityError: Fewer than three derivatives, or fewer than five without ``amap``.
    """
    if s is None:
        s = amap.s_of_t(t) if amap is not None else float("nan")
    if curve.max_order >= 5:
        Y = arclength_jet(curve, t, 5)
        kappa, tau = curvature_jets(Y, kappa_floor)
        kappa_d = jets.derivatives(kappa)
        tau_d = jets.derivatives(tau)
    elif curve.max_order >= 3 and amap is not None:
        logger.debug("%s: difference fallback for kappa and tau derivatives", curve.name)
        Y = arclength_jet(curve, t, 3)
        curvature_jets(Y, kappa_floor)
        kappa_d, tau_d = _fallback_derivatives(curve, amap, s, kappa_floor)
    else:
        raise CapabilityError(f"{curve.name}: Frenet state needs derivatives up to order 3 (5 without a map)")
    tangent, normal, binormal = _frame(Y)
    return FrenetState(
        s=s,
        param=t,
        point=tuple(float(c) for c in Y[0]),
        t=tuple(float(c) for c in tangent),
        n=tuple(float(c) for c in normal),
        b=tuple(float(c) for c in binormal),
        kappa=float(kappa_d[0]),
        tau=float(tau_d[0]),
        kappa_s=float(kappa_d[1]),
        kappa_ss=float(kappa_d[2]),
        kappa_sss=float(kappa_d[3]),
        tau_s=float(tau_d[1]),
        tau_ss=float(tau_d[2]),
    )


def frenet_state(curve: CurveSpec, amap: ArcLengthMap, s: float, kappa_floor: float = KAPPA_FLOOR) -> FrenetState:
    """Frenet state at arc length ``s``."""
    return frenet_state_at(curve, amap.t_of_s(s), s=s, amap=amap, kappa_floor=kappa_floor)


def metric_cusp_cos(x1, x2, x3) -> Angle:
    """
    Angle between the straight edges x1 -> x2 and x2 -> x3.

    Raises:
        DegenerateInputError: x1 == x2 or x2 == x3.
    """
    x1, x2, x3 = as_point(x1), as_point(x2), as_point(x3)
    return unit_angle(x2 - x1, x3 - x2)


def metric_plane_cos(x1, x2, x3, x4, x5) -> Angle:
    """
    Angle between the planes (x2, x3, x1) and (x5, x3, x4) through their unit normals.

    Raises:
        DegeneratePlaneError: One of the triples is collinear.
    """
    x1, x2, x3, x4, x5 = (as_point(p) for p in (x1, x2, x3, x4, x5))
    normals = []
    for a, b in ((x2 - x3, x1 - x3), (x5 - x3, x4 - x3)):
        normal = np.cross(a, b)
        scale = np.linalg.norm(a) * np.linalg.norm(b)
        if scale == 0.0 or np.linalg.norm(normal) <= 1e-14 * scale:
            raise DegeneratePlaneError("collinear triple does not fix a plane")
        normals.append(normal)
    return unit_angle(normals[0], normals[1])


def metric_cusp_expansion(fr: FrenetState) -> Tuple[float, float]:
    """
    Coefficients (c2, c4) of cos(alpha_bar) = 1 + c2 eps^2 + c4 eps^4 + O(eps^6) for the
    straight-edge cusp angle at arc-length spacing eps.
    """
    k, t = fr.kappa, fr.tau
    return -(k**2) / 2.0, k**4 / 24.0 + k**2 * t**2 / 12.0 - k * fr.kappa_ss / 12.0
