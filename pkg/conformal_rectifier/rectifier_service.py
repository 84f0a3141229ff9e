import logging
import math
from concurrent.futures import ThreadPoolExecutor
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import BaseModel, ConfigDict

from conformal_rectifier.conformal_service import (
    NU_FLOOR,
    ConformalState,
    conformal_state,
    omega_equidistant_parameter,
)
from conformal_rectifier.curve_model_service import ArcLengthMap, CurveSpec, Vector3, as_point
from conformal_rectifier.errors import ConfigurationError, DegenerateInputError, DomainError
from conformal_rectifier.frenet_service import FrenetState, frenet_state, metric_cusp_cos, metric_plane_cos
from conformal_rectifier.inversive_kernel_service import (
    Angle,
    CircleTriple,
    circumcircle,
    cusp_angle_cos,
    cusp_cos_batch,
    sphere_angle_cos,
    torsion_angle_cos,
    torsion_cos_batch,
)

logger = logging.getLogger(__name__)

EPSILON_SCHEDULE = tuple(0.1 * 2.0**-k for k in range(5))
OMEGA_SCHEDULE = tuple(0.2 * 2.0**-k for k in range(5))
STABILITY_WINDOW = (1e-3, 2e-1)


class SampleWindow(BaseModel):
    """
    Points of a curve at consecutive offsets ``index * step`` from s0, in arc length
    (metric sampling) or conformal length (conformal sampling).
    """

    model_config = ConfigDict(frozen=True)

    step: float
    indices: Tuple[int, ...]
    s: Tuple[float, ...]
    params: Tuple[float, ...]
    points: Tuple[Vector3, ...]

    def array(self) -> np.ndarray:
        return np.asarray(self.points)


def _window_indices(count: int, first: Optional[int]) -> Tuple[int, ...]:
    if count < 1:
        raise ConfigurationError("a sample window needs at least one point")
    start = -(count // 2) if first is None else first
    return tuple(range(start, start + count))


def _vec(p) -> Vector3:
    return tuple(float(c) for c in p)


def sample_metric(
    curve: CurveSpec, amap: ArcLengthMap, s0: float, eps: float, count: int, first: Optional[int] = None
) -> SampleWindow:
    """
    Points x(s0 + k eps) for k = first .. first + count - 1.

    ``first`` defaults to the symmetric window: count=5 gives k = -2..2; pass first=-3
    for the left-shifted window used by the sphere angle.

    Raises:
        DomainError: eps <= 0 or the window leaves the curve.
    """
    if not eps > 0.0:
        raise DomainError(f"metric step must be positive, got {eps}")
    indices = _window_indices(count, first)
    s_values = [s0 + k * eps for k in indices]
    if s_values[0] < 0.0 or s_values[-1] > amap.total_length:
        raise DomainError(f"window [{s_values[0]:.6g}, {s_values[-1]:.6g}] leaves [0, {amap.total_length:.6g}]")
    params = [amap.t_of_s(s) for s in s_values]
    return SampleWindow(
        step=eps,
        indices=indices,
        s=tuple(s_values),
        params=tuple(params),
        points=tuple(_vec(curve.eval(t)) for t in params),
    )


def sample_conformal(
    curve: CurveSpec,
    amap: ArcLengthMap,
    s0: float,
    omega: float,
    count: int,
    first: Optional[int] = None,
    nu_floor: float = NU_FLOOR,
) -> SampleWindow:
    """
    Points at conformal offsets k * omega from s0, consecutive points exactly omega apart.

    Raises:
        DomainError: omega <= 0 or the window leaves the curve.
        ConformalDegeneracyError: nu vanishes inside the window.
    """
    if not omega > 0.0:
        raise DomainError(f"conformal step must be positive, got {omega}")
    indices = _window_indices(count, first)
    t0 = amap.t_of_s(s0)
    params = {0: t0}
    for k in range(1, indices[-1] + 1):
        params[k] = omega_equidistant_parameter(curve, amap, params[k - 1], omega, nu_floor)
    for k in range(-1, indices[0] - 1, -1):
        params[k] = omega_equidistant_parameter(curve, amap, params[k + 1], -omega, nu_floor)
    chosen = [params[k] for k in indices]
    return SampleWindow(
        step=omega,
        indices=indices,
        s=tuple(amap.s_of_t(t) for t in chosen),
        params=tuple(chosen),
        points=tuple(_vec(curve.eval(t)) for t in chosen),
    )


class ArcSide(str, Enum):
    """Black polygon: arcs x_j -> x_{j+1} (plus). Red polygon: arcs x_{j-1} -> x_j (minus)."""

    PLUS = "plus"
    MINUS = "minus"


class CircularPolygon(BaseModel):
    """
    Polygon with circular edges inscribed in a point sequence.

    ``circles[j]`` passes through corners j, j + 1, j + 2, so it is the circle of the
    interior corner j + 1.
    """

    model_config = ConfigDict(frozen=True)

    corners: Tuple[Vector3, ...]
    side: ArcSide
    circles: Tuple[CircleTriple, ...]

    def cusp_angle(self, j: int) -> Angle:
        """Angle at corner j between the circles of corners j - 1 and j."""
        if j < 2 or j + 1 >= len(self.corners):
            raise DomainError(f"cusp angle needs corners {j - 2}..{j + 1}")
        return cusp_angle_cos(*self.corners[j - 2 : j + 2])

    def torsion_angle(self, j: int) -> Angle:
        """Angle at corner j between the circles of corners j - 1 and j + 1."""
        if j < 2 or j + 2 >= len(self.corners):
            raise DomainError(f"torsion angle needs corners {j - 2}..{j + 2}")
        return torsion_angle_cos(*self.corners[j - 2 : j + 3])

    def cusp_cosines(self) -> np.ndarray:
        """Distance-formula cusp cosines at corners 2 .. len - 2, all at once."""
        if len(self.corners) < 4:
            return np.empty(0)
        windows = sliding_window_view(np.asarray(self.corners), (4, 3)).reshape(-1, 4, 3)
        return cusp_cos_batch(windows)

    def torsion_cosines(self) -> np.ndarray:
        """Distance-formula torsion cosines at corners 2 .. len - 3."""
        if len(self.corners) < 5:
            return np.empty(0)
        windows = sliding_window_view(np.asarray(self.corners), (5, 3)).reshape(-1, 5, 3)
        return torsion_cos_batch(windows)

    def arcs(self) -> List[Tuple[int, int, int]]:
        """(circle index, start corner, end corner) for every edge of the selected side."""
        if self.side == ArcSide.PLUS:
            return [(i, i + 1, i + 2) for i in range(len(self.circles))]
        return [(i, i, i + 1) for i in range(len(self.circles))]

    def arc_points(self, samples: int = 16) -> List[np.ndarray]:
        """Points along every arc, endpoints included; straight segments for collinear triples."""
        out = []
        for i, start, end in self.arcs():
            circle = self.circles[i]
            a = np.asarray(self.corners[start])
            b = np.asarray(self.corners[end])
            lam = np.linspace(0.0, 1.0, samples)[:, np.newaxis]
            if circle.is_line:
                out.append(a + lam * (b - a))
                continue
            other = np.asarray(self.corners[i + 2 if start == i else i])
            centre = np.asarray(circle.centre)
            e1 = (a - centre) / circle.radius
            normal = np.cross(a - centre, b - centre)
            if np.linalg.norm(normal) == 0.0:
                normal = np.cross(a - centre, other - centre)
            e2 = np.cross(normal / np.linalg.norm(normal), e1)

            def phase(p):
                d = p - centre
                return math.atan2(float(d @ e2), float(d @ e1)) % (2 * math.pi)

            sweep = phase(b)
            if phase(other) < sweep:
                sweep -= 2 * math.pi
            angles = lam[:, 0] * sweep
            out.append(centre + circle.radius * (np.outer(np.cos(angles), e1) + np.outer(np.sin(angles), e2)))
        return out


def inscribe(points: Sequence[Sequence[float]], side: ArcSide = ArcSide.PLUS) -> CircularPolygon:
    """
    Circular polygon through the given corners: one circle per consecutive triple.

    Raises:
        DomainError: Fewer than three points.
        DegenerateInputError: Consecutive points coincide.
    """
    corners = [as_point(p) for p in points]
    if len(corners) < 3:
        raise DomainError("an inscribed circular polygon needs at least three corners")
    circles = tuple(circumcircle(*corners[i : i + 3]) for i in range(len(corners) - 2))
    return CircularPolygon(corners=tuple(_vec(p) for p in corners), side=ArcSide(side), circles=circles)


class SkippedStep(BaseModel):
    model_config = ConfigDict(frozen=True)

    step: float
    reason: str


class EstimatorReport(BaseModel):
    """
    Outcome of one convergence study: per-step estimates, the Richardson value from the
    last two steps and the observed order of the error.

    ``fitted_order`` is the slope of log|error| against log(step) over the steps where
    the error still decreases; errors are taken against ``reference`` when known and
    from successive differences otherwise. ``fitted_remainder_order`` adds the power of
    the step at which the quantity enters the underlying angle expansion.
    """

    quantity: str
    steps: List[float]
    estimates: List[float]
    skipped: List[SkippedStep] = []
    richardson_order: int
    leading_power: int
    extrapolated: Optional[float] = None
    fitted_order: Optional[float] = None
    fitted_remainder_order: Optional[float] = None
    reference: Optional[float] = None
    reference_alt: Optional[float] = None
    relative_error: Optional[float] = None
    warnings: List[str] = []
    components: Dict[str, "EstimatorReport"] = {}


EstimatorReport.model_rebuild()


def richardson(steps: Sequence[float], estimates: Sequence[float], order: int) -> Optional[float]:
    """Eliminates the error term step^order using the last two estimates."""
    if not estimates:
        return None
    if len(estimates) == 1:
        return float(estimates[-1])
    factor = (steps[-2] / steps[-1]) ** order
    return float((factor * estimates[-1] - estimates[-2]) / (factor - 1.0))


def fit_order(
    steps: Sequence[float], estimates: Sequence[float], reference: Optional[float]
) -> Tuple[Optional[float], bool]:
    """
    Observed convergence order and whether the error decay was monotone throughout.
    """
    h = np.asarray(steps, dtype=float)
    e = np.asarray(estimates, dtype=float)
    if reference is not None:
        errors = np.abs(e - reference)
    else:
        errors = np.abs(np.diff(e))
        h = h[1:]
    prefix = 1
    while prefix < len(errors) and 0.0 < errors[prefix] < errors[prefix - 1]:
        prefix += 1
    monotone = prefix == len(errors)
    if prefix < 2 or errors[0] == 0.0:
        return None, monotone
    slope, _ = np.polyfit(np.log(h[:prefix]), np.log(errors[:prefix]), 1)
    return float(slope), monotone


def _validate_schedule(schedule: Sequence[float], name: str) -> List[float]:
    values = [float(x) for x in schedule]
    if not values:
        raise ConfigurationError(f"{name} schedule is empty")
    if any(not x > 0.0 for x in values):
        raise ConfigurationError(f"{name} schedule must be positive")
    if any(b >= a for a, b in zip(values, values[1:])):
        raise ConfigurationError(f"{name} schedule must be strictly decreasing")
    return values


def _run_schedule(
    quantity: str,
    schedule: Sequence[float],
    step_fn: Callable[[float], float],
    richardson_order: int,
    leading_power: int,
    reference: Optional[float] = None,
    reference_alt: Optional[float] = None,
    workers: int = 1,
) -> EstimatorReport:
    values = _validate_schedule(schedule, quantity)
    warnings = []
    lo, hi = STABILITY_WINDOW
    outside = [h for h in values if not lo <= h <= hi]
    if outside:
        warnings.append(f"steps {outside} outside the stability window [{lo:g}, {hi:g}]")

    def guarded(h: float):
        try:
            return step_fn(h), None
        except DegenerateInputError as e:
            return None, str(e)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(guarded, values))
    else:
        results = [guarded(h) for h in values]

    steps, estimates, skipped = [], [], []
    for h, (value, reason) in zip(values, results):
        if reason is None:
            steps.append(h)
            estimates.append(float(value))
        else:
            logger.warning("%s: skipping step %g: %s", quantity, h, reason)
            skipped.append(SkippedStep(step=h, reason=reason))
    if not estimates:
        warnings.append("no step produced an estimate")

    report = EstimatorReport(
        quantity=quantity,
        steps=steps,
        estimates=estimates,
        skipped=skipped,
        richardson_order=richardson_order,
        leading_power=leading_power,
        reference=reference,
        reference_alt=reference_alt,
        warnings=warnings,
    )
    return finish_report(report)


def finish_report(report: EstimatorReport) -> EstimatorReport:
    """Fills in the extrapolated value, fitted orders and relative error."""
    extrapolated = richardson(report.steps, report.estimates, report.richardson_order)
    fitted, monotone = fit_order(report.steps, report.estimates, report.reference)
    warnings = list(report.warnings)
    if report.estimates and not monotone:
        warnings.append("error decay not monotone; roundoff dominates the smallest steps")
    relative = None
    if extrapolated is not None and report.reference is not None:
        relative = abs(extrapolated - report.reference) / max(abs(report.reference), np.finfo(float).tiny)
    logger.info("%s: extrapolated %s, reference %s, fitted order %s", report.quantity, extrapolated, report.reference, fitted)
    return report.model_copy(
        update={
            "extrapolated": extrapolated,
            "fitted_order": fitted,
            "fitted_remainder_order": None if fitted is None else report.leading_power + fitted,
            "relative_error": relative,
            "warnings": warnings,
        }
    )


def _reference_frenet(curve: CurveSpec, amap: ArcLengthMap, s0: float) -> Optional[FrenetState]:
    if curve.is_sampled:
        return None
    return frenet_state(curve, amap, s0)


def _reference_conformal(curve: CurveSpec, amap: ArcLengthMap, s0: float, nu_floor: float) -> Optional[ConformalState]:
    if curve.is_sampled:
        return None
    return conformal_state(frenet_state(curve, amap, s0), nu_floor)


def estimate_nu(
    curve: CurveSpec,
    amap: ArcLengthMap,
    s0: float,
    schedule: Sequence[float] = EPSILON_SCHEDULE,
    workers: int = 1,
    nu_floor: float = NU_FLOOR,
) -> EstimatorReport:
    """
    nu from the cusp angle at x(s0) of metric samples s0 - 2eps .. s0 + eps:
    1 - cos(alpha) = nu^2 eps^4 / 8 + O(eps^5).

    Raises:
        ConformalDegeneracyError: nu(s0) below the floor.
    """
    ref = _reference_conformal(curve, amap, s0, nu_floor)

    def step(eps: float) -> float:
        window = sample_metric(curve, amap, s0, eps, 4, first=-2)
        return math.sqrt(8.0 * cusp_angle_cos(*window.points).one_minus_cos) / eps**2

    return _run_schedule("nu", schedule, step, 1, 4, None if ref is None else ref.nu, workers=workers)


def estimate_P(
    curve: CurveSpec,
    amap: ArcLengthMap,
    s0: float,
    schedule: Sequence[float] = OMEGA_SCHEDULE,
    workers: int = 1,
    nu_floor: float = NU_FLOOR,
) -> EstimatorReport:
    """
    P from the cusp angle of conformal samples at offsets -2..1:
    1 - cos(alpha) = omega^4 / 8 - P omega^6 + O(omega^7).

    The reference is the direct formula; ``reference_alt`` is (Q + 3/4 T^2) / 24.
    """
    ref = _reference_conformal(curve, amap, s0, nu_floor)

    def step(omega: float) -> float:
        window = sample_conformal(curve, amap, s0, omega, 4, first=-2, nu_floor=nu_floor)
        one_minus_cos = cusp_angle_cos(*window.points).one_minus_cos
        return (omega**4 / 8.0 - one_minus_cos) / omega**6

    return _run_schedule(
        "P",
        schedule,
        step,
        1,
        6,
        None if ref is None else ref.P,
        None if ref is None else ref.P_qt,
        workers=workers,
    )


def estimate_T2_beta(
    curve: CurveSpec,
    amap: ArcLengthMap,
    s0: float,
    schedule: Sequence[float] = OMEGA_SCHEDULE,
    workers: int = 1,
    nu_floor: float = NU_FLOOR,
) -> EstimatorReport:
    """
    T^2 from the torsion angle at x(s0) of conformal samples at offsets -2..2:
    1 - cos(beta) = T^2 omega^6 / 8 + O(omega^8).

    Reversing the window leaves beta unchanged, so odd powers drop out of the
    error and the extrapolation removes omega^2.
    """
    ref = _reference_conformal(curve, amap, s0, nu_floor)

    def step(omega: float) -> float:
        window = sample_conformal(curve, amap, s0, omega, 5, nu_floor=nu_floor)
        return 8.0 * torsion_angle_cos(*window.points).one_minus_cos / omega**6

    return _run_schedule("T2beta", schedule, step, 2, 6, None if ref is None else ref.T**2, workers=workers)


def estimate_T2_gamma(
    curve: CurveSpec,
    amap: ArcLengthMap,
    s0: float,
    schedule: Sequence[float] = EPSILON_SCHEDULE,
    workers: int = 1,
    nu_floor: float = NU_FLOOR,
    nu: Optional[float] = None,
) -> EstimatorReport:
    """
    T^2 from the angle between the spheres through metric samples s0 - 3eps .. s0 and
    s0 - 2eps .. s0 + eps: 1 - cos(gamma) = T^2 nu eps^2 / 2 + O(eps^3).

    Args:
        nu (Optional[float]): Value of nu at s0. Defaults to the analytic value, or to
            the extrapolated cusp-angle estimate for sampled curves.

    Coplanar quadruples skip their step; a planar curve ends with an empty report.
    """
    ref = _reference_conformal(curve, amap, s0, nu_floor)
    if nu is None:
        nu = ref.nu if ref is not None else estimate_nu(curve, amap, s0, schedule, workers, nu_floor).extrapolated
    if nu is None or not nu > nu_floor:
        raise DegenerateInputError(f"no usable nu at s0={s0} for the sphere-angle estimate")

    def step(eps: float) -> float:
        window = sample_metric(curve, amap, s0, eps, 5, first=-3)
        return 2.0 * sphere_angle_cos(*window.points).one_minus_cos / (nu * eps**2)

    return _run_schedule("T2gamma", schedule, step, 1, 2, None if ref is None else ref.T**2, workers=workers)


def estimate_Q(
    curve: CurveSpec,
    amap: ArcLengthMap,
    s0: float,
    schedule: Sequence[float] = OMEGA_SCHEDULE,
    workers: int = 1,
    nu_floor: float = NU_FLOOR,
) -> EstimatorReport:
    """
    Q = 24 P - 3/4 T^2 step by step from the cusp and torsion estimates on the same
    conformal schedule. The component reports are attached.
    """
    ref = _reference_conformal(curve, amap, s0, nu_floor)
    p_report = estimate_P(curve, amap, s0, schedule, workers, nu_floor)
    t_report = estimate_T2_beta(curve, amap, s0, schedule, workers, nu_floor)
    t_by_step = dict(zip(t_report.steps, t_report.estimates))
    steps, estimates = [], []
    for h, p in zip(p_report.steps, p_report.estimates):
        if h in t_by_step:
            steps.append(h)
            estimates.append(24.0 * p - 0.75 * t_by_step[h])
    skipped = p_report.skipped + t_report.skipped
    report = EstimatorReport(
        quantity="Q",
        steps=steps,
        estimates=estimates,
        skipped=skipped,
        richardson_order=1,
        leading_power=6,
        reference=None if ref is None else ref.Q,
        warnings=p_report.warnings + t_report.warnings,
        components={"P": p_report, "T2beta": t_report},
    )
    return finish_report(report)


def estimate_kappa(
    curve: CurveSpec, amap: ArcLengthMap, s0: float, schedule: Sequence[float] = EPSILON_SCHEDULE, workers: int = 1
) -> EstimatorReport:
    """kappa from straight edges: 1 - cos(alpha_bar) = kappa^2 eps^2 / 2 + O(eps^4)."""
    ref = _reference_frenet(curve, amap, s0)

    def step(eps: float) -> float:
        window = sample_metric(curve, amap, s0, eps, 3)
        return math.sqrt(2.0 * metric_cusp_cos(*window.points).one_minus_cos) / eps

    return _run_schedule("kappa", schedule, step, 2, 2, None if ref is None else ref.kappa, workers=workers)


def estimate_tau(
    curve: CurveSpec, amap: ArcLengthMap, s0: float, schedule: Sequence[float] = EPSILON_SCHEDULE, workers: int = 1
) -> EstimatorReport:
    """|tau| from the planes of straight edges: 1 - cos(gamma_bar) = 2 tau^2 eps^2 + O(eps^4)."""
    ref = _reference_frenet(curve, amap, s0)

    def step(eps: float) -> float:
        window = sample_metric(curve, amap, s0, eps, 5)
        return math.sqrt(metric_plane_cos(*window.points).one_minus_cos / 2.0) / eps

    return _run_schedule("tau", schedule, step, 2, 2, None if ref is None else abs(ref.tau), workers=workers)


def estimate_alpha_leading(
    curve: CurveSpec,
    amap: ArcLengthMap,
    s0: float,
    schedule: Sequence[float] = OMEGA_SCHEDULE,
    workers: int = 1,
    nu_floor: float = NU_FLOOR,
) -> EstimatorReport:
    """
    8 (1 - cos(alpha)) / omega^4, which tends to 1 on every curve.
    """
    if not curve.is_sampled:
        _reference_conformal(curve, amap, s0, nu_floor)

    def step(omega: float) -> float:
        window = sample_conformal(curve, amap, s0, omega, 4, first=-2, nu_floor=nu_floor)
        return 8.0 * cusp_angle_cos(*window.points).one_minus_cos / omega**4

    return _run_schedule("alpha", schedule, step, 2, 4, 1.0, workers=workers)


def recover_invariants(
    curve: CurveSpec,
    amap: ArcLengthMap,
    s0: float,
    omega_schedule: Sequence[float] = OMEGA_SCHEDULE,
    epsilon_schedule: Sequence[float] = EPSILON_SCHEDULE,
    workers: int = 1,
    nu_floor: float = NU_FLOOR,
) -> Dict[str, EstimatorReport]:
    """
    nu, P, T^2 (both routes) and Q at s0 from circle and sphere angles alone.

    The sphere route is fed the extrapolated cusp estimate of nu, so no derivative of
    the curve enters any estimate; derivatives only supply the references.
    """
    nu_report = estimate_nu(curve, amap, s0, epsilon_schedule, workers, nu_floor)
    q_report = estimate_Q(curve, amap, s0, omega_schedule, workers, nu_floor)
    reports = {
        "nu": nu_report,
        "P": q_report.components["P"],
        "T2beta": q_report.components["T2beta"],
        "Q": q_report,
    }
    try:
        reports["T2gamma"] = estimate_T2_gamma(
            curve, amap, s0, epsilon_schedule, workers, nu_floor, nu=nu_report.extrapolated
        )
    except DegenerateInputError as e:
        logger.warning("sphere route unavailable: %s", e)
    return reports


ESTIMATORS: Dict[str, Callable[..., EstimatorReport]] = {
    "nu": estimate_nu,
    "P": estimate_P,
    "T2beta": estimate_T2_beta,
    "T2gamma": estimate_T2_gamma,
    "Q": estimate_Q,
    "kappa": estimate_kappa,
    "tau": estimate_tau,
    "alpha": estimate_alpha_leading,
}

METRIC_ESTIMATORS = frozenset({"nu", "T2gamma", "kappa", "tau"})
