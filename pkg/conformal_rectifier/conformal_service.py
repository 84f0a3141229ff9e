import logging
import math
from typing import Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy.integrate import quad
from scipy.optimize import brentq

from conformal_rectifier import jets
from conformal_rectifier.curve_model_service import ArcLengthMap, CurveSpec
from conformal_rectifier.errors import CapabilityError, ConformalDegeneracyError, DomainError
from conformal_rectifier.frenet_service import FrenetState, arclength_jet, curvature_jets

logger = logging.getLogger(__name__)

NU_FLOOR = 1e-10
SCAN_POINTS = 257
SERIES_ORDER = 7

_QUAD_OPTS = {"epsabs": 1e-15, "epsrel": 1e-13, "limit": 200}
_BRENTQ_OPTS = {"xtol": 1e-14, "rtol": 4 * np.finfo(float).eps, "maxiter": 200}


class ConformalState(BaseModel):
    """
    Conformal invariants at one point.

    ``P`` is the direct formula, ``P_qt`` the combination (Q + 3/4 T^2)/24 and
    ``P_residual`` their relative difference.
    """

    model_config = ConfigDict(frozen=True)

    s: float
    nu: float
    f: float
    nu_s: float
    nu_ss: float
    Q: float
    T: float
    P: float
    P_qt: float
    P_residual: float


def conformal_state(fr: FrenetState, nu_floor: float = NU_FLOOR) -> ConformalState:
    """
    Computes nu, Q, T and P from a Frenet state.

    Args:
        fr (FrenetState): Curvature, torsion and their arc-length derivatives.
        nu_floor (float): Values of nu at or below this mark a conformal degeneracy.

    Returns:
        ConformalState: The invariants, with P evaluated twice.

    Raises:
        ConformalDegeneracyError: nu <= nu_floor, e.g. anywhere on a circle.

    Example:
        helix = catalog_curve("helix", [2, 1])
        amap = arclength_map(helix)
        conformal_state(frenet_state(helix, amap, 3.0)).Q  # -1.0
    """
    k, k1, k2, k3 = fr.kappa, fr.kappa_s, fr.kappa_ss, fr.kappa_sss
    t, t1, t2 = fr.tau, fr.tau_s, fr.tau_ss
    w = k1**2 + k**2 * t**2
    nu = math.sqrt(w)
    if nu <= nu_floor:
        raise ConformalDegeneracyError(f"nu = {nu:.3g} at s = {fr.s:.17g}", s=fr.s)

    w1 = 2 * k1 * k2 + 2 * k * k1 * t**2 + 2 * k**2 * t * t1
    w2 = (
        2 * k2**2
        + 2 * k1 * k3
        + 2 * k1**2 * t**2
        + 2 * k * k2 * t**2
        + 8 * k * k1 * t * t1
        + 2 * k**2 * t1**2
        + 2 * k**2 * t * t2
    )
    nu_s = w1 / (2 * nu)
    nu_ss = w2 / (2 * nu) - w1**2 / (4 * nu**3)

    Q = (4 * (nu_ss - k**2 * nu) * nu - 5 * nu_s**2) / (8 * nu**3)
    T = (2 * k1**2 * t + k**2 * t**3 + k * k1 * t1 - k * k2 * t) / nu**2.5

    numerator = (
        2 * k * t * k1**2 * (20 * k1 * t1 - 19 * t * k2)
        + 2 * k**3 * t**3 * (5 * k1 * t1 - 4 * t * k2)
        + k1**2 * (28 * t**2 * k1**2 - 5 * k2**2 + 4 * k1 * k3)
        + k**2
        * (
            19 * t**4 * k1**2
            - 4 * k1**4
            + 10 * k1**2 * t1**2
            + 2 * t * k1 * (2 * k1 * t2 - 15 * t1 * k2)
            + 2 * t**2 * (5 * k2**2 + 2 * k1 * k3)
        )
        + k**4 * t**2 * (6 * t**4 - 8 * k1**2 - 5 * t1**2 + 4 * t * t2)
        - 4 * k**6 * t**4
    )
    P = numerator / (192 * nu**5)
    P_qt = (Q + 0.75 * T**2) / 24
    residual = abs(P - P_qt) / max(1.0, abs(P))
    if residual > 1e-6:
        logger.warning("P identity residual %.3g at s=%.17g", residual, fr.s)
    else:
        logger.debug("P identity residual %.3g at s=%.17g", residual, fr.s)
    return ConformalState(
        s=fr.s,
        nu=nu,
        f=math.sqrt(nu),
        nu_s=nu_s,
        nu_ss=nu_ss,
        Q=Q,
        T=T,
        P=P,
        P_qt=P_qt,
        P_residual=residual,
    )


def _nu_components(curve: CurveSpec, t) -> Tuple[np.ndarray, np.ndarray]:
    # (kappa_s, kappa * tau); points of zero curvature give (0, 0)
    x1 = curve.deriv(t, 1)
    x2 = curve.deriv(t, 2)
    x3 = curve.deriv(t, 3)
    c = np.cross(x1, x2)
    dc = np.cross(x1, x3)
    v = np.linalg.norm(x1, axis=-1)
    cn = np.linalg.norm(c, axis=-1)
    safe = np.where(cn > 0.0, cn, 1.0)
    dkappa_dt = np.einsum("...i,...i->...", c, dc) / (safe * v**3) - 3 * cn * np.einsum("...i,...i->...", x1, x2) / v**5
    kappa_s = np.where(cn > 0.0, dkappa_dt / v, 0.0)
    ktau = np.where(cn > 0.0, np.einsum("...i,...i->...", c, x3) / (safe * v**3), 0.0)
    return kappa_s, ktau


def nu_density(curve: CurveSpec, t) -> np.ndarray:
    """
    nu along the curve parameter, from the first three parameter derivatives.

    Vectorized over ``t``. Points of zero curvature report nu = 0.
    """
    kappa_s, ktau = _nu_components(curve, t)
    return np.sqrt(kappa_s**2 + ktau**2)


def _omega_density(curve: CurveSpec, t: float) -> float:
    # d omega / dt
    return float(np.sqrt(nu_density(curve, t)) * np.linalg.norm(curve.deriv(t, 1)))


def _omega_between(curve: CurveSpec, ta: float, tb: float) -> float:
    if ta == tb:
        return 0.0
    value, _ = quad(lambda u: _omega_density(curve, u), ta, tb, **_QUAD_OPTS)
    return value


def _check_nondegenerate(curve: CurveSpec, amap: ArcLengthMap, ta: float, tb: float, nu_floor: float) -> None:
    grid = np.linspace(min(ta, tb), max(ta, tb), SCAN_POINTS)
    kappa_s, ktau = _nu_components(curve, grid)
    values = np.sqrt(kappa_s**2 + ktau**2)
    i = int(np.argmin(values))
    where, lowest = float(grid[i]), float(values[i])
    # nu = 0 needs kappa_s = 0 and kappa * tau = 0; isolated zeros between scan points
    # sit on a sign change of kappa_s where kappa * tau comes close to zero
    flips = np.sign(kappa_s[:-1]) * np.sign(kappa_s[1:]) < 0
    near = np.minimum(np.abs(ktau[:-1]), np.abs(ktau[1:])) <= 2.0 * np.abs(np.diff(ktau)) + nu_floor
    for j in np.flatnonzero(flips & (near | (np.sign(ktau[:-1]) != np.sign(ktau[1:])))):
        if lowest <= nu_floor:
            break
        root = brentq(lambda u: float(_nu_components(curve, u)[0]), grid[j], grid[j + 1], **_BRENTQ_OPTS)
        value = float(nu_density(curve, root))
        if value < lowest:
            where, lowest = root, value
    if lowest <= nu_floor:
        s = amap.s_of_t(where)
        raise ConformalDegeneracyError(f"{curve.name}: nu = {lowest:.3g} near s = {s:.6g}", s=s)


def conformal_length(
    curve: CurveSpec, amap: ArcLengthMap, s0: float, s1: float, tol: float = 1e-13, nu_floor: float = NU_FLOOR
) -> float:
    """
    Conformal length between two arc-length positions; negative when s1 < s0.

    Raises:
        DomainError: s0 or s1 outside the curve.
        ConformalDegeneracyError: nu vanishes somewhere in between.
    """
    for s in (s0, s1):
        if s < 0.0 or s > amap.total_length:
            raise DomainError(f"s={s} outside [0, {amap.total_length}]")
    if s0 == s1:
        return 0.0
    ta, tb = amap.t_of_s(s0), amap.t_of_s(s1)
    _check_nondegenerate(curve, amap, ta, tb, nu_floor)
    value, _ = quad(lambda u: _omega_density(curve, u), ta, tb, epsabs=1e-15, epsrel=max(tol, 5e-14), limit=200)
    return value


def omega_equidistant_parameter(
    curve: CurveSpec, amap: ArcLengthMap, t0: float, target: float, nu_floor: float = NU_FLOOR
) -> float:
    """
    Parameter t with conformal length ``target`` from t0 (signed).

    The bracket grows from a first-order guess until it straddles the root, then
    ``brentq`` refines it.

    Raises:
        DomainError: The target lies beyond the end of the parameter domain.
        ConformalDegeneracyError: nu vanishes inside the bracket.
    """
    if target == 0.0:
        return t0
    direction = 1.0 if target > 0 else -1.0
    edge = amap.t_max if direction > 0 else amap.t_min
    if float(nu_density(curve, t0)) <= nu_floor:
        s = amap.s_of_t(t0)
        raise ConformalDegeneracyError(f"{curve.name}: nu vanishes at s = {s:.6g}", s=s)
    step = abs(target) / _omega_density(curve, t0)
    near, far = t0, t0
    while True:
        far = far + direction * step
        if (far - edge) * direction >= 0.0:
            far = edge
        if abs(_omega_between(curve, t0, far)) >= abs(target):
            break
        if far == edge:
            _check_nondegenerate(curve, amap, t0, far, nu_floor)
            raise DomainError(f"conformal offset {target:g} from t={t0:.6g} leaves the parameter domain")
        near = far
        step *= 2.0
    _check_nondegenerate(curve, amap, t0, far, nu_floor)
    lo, hi = (near, far) if direction > 0 else (far, near)
    if lo == hi:
        return lo
    return brentq(lambda u: _omega_between(curve, t0, u) - target, lo, hi, **_BRENTQ_OPTS)


def omega_equidistant(
    curve: CurveSpec, amap: ArcLengthMap, s0: float, omega: float, k: int, nu_floor: float = NU_FLOOR
) -> float:
    """
    Arc length s with conformal length k * omega from s0 (k may be negative).

    Raises:
        DomainError: The target lies outside the curve.
        ConformalDegeneracyError: nu vanishes on the way.
    """
    if k == 0 or omega == 0.0:
        return s0
    t = omega_equidistant_parameter(curve, amap, amap.t_of_s(s0), k * omega, nu_floor)
    return amap.s_of_t(t)


class SeriesInversion(BaseModel):
    """
    Arc-length offset as a power series in the conformal offset:
    eps(omega) = sum_j g_j omega^j / j!, with g_1 = 1/f and g_j = g_{j-1}' / f.
    """

    model_config = ConfigDict(frozen=True)

    s0: float
    coefficients: Tuple[float, ...]

    def epsilon(self, omega):
        omega = np.asarray(omega, dtype=float)
        total = np.zeros_like(omega)
        for j in range(len(self.coefficients), 0, -1):
            total = (total + self.coefficients[j - 1] / math.factorial(j)) * omega
        return total


def series_inversion(curve: CurveSpec, amap: ArcLengthMap, s0: float, nu_floor: float = NU_FLOOR) -> SeriesInversion:
    """
    Coefficients g_1..g_7 of the inverse expansion of the conformal length at s0.

    Raises:
        CapabilityError: The curve has fewer than nine derivatives (g_7 needs f^(6),
            hence kappa^(7)).
        ConformalDegeneracyError: nu <= nu_floor at s0.
    """
    order = SERIES_ORDER + 2
    if curve.max_order < order:
        raise CapabilityError(f"{curve.name}: series inversion needs derivatives up to order {order}")
    Y = arclength_jet(curve, amap.t_of_s(s0), order)
    kappa, tau = curvature_jets(Y)
    kappa_s = jets.deriv(kappa)
    w = jets.mul(kappa_s, kappa_s) + jets.mul(jets.mul(kappa, kappa), jets.mul(tau, tau))
    if w[0] <= nu_floor**2:
        raise ConformalDegeneracyError(f"nu = {math.sqrt(max(w[0], 0.0)):.3g} at s = {s0:.17g}", s=s0)
    f = jets.sqrt(jets.sqrt(w))
    inv_f = jets.reciprocal(f)
    g = inv_f
    coefficients = [float(g[0])]
    for _ in range(SERIES_ORDER - 1):
        g = jets.mul(jets.deriv(g), inv_f)
        coefficients.append(float(g[0]))
    return SeriesInversion(s0=s0, coefficients=tuple(coefficients))
