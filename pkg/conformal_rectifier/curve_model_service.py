import logging
import math
from enum import Enum
from fractions import Fraction
from functools import lru_cache
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy.integrate import quad
from scipy.interpolate import BarycentricInterpolator
from scipy.optimize import brentq

from conformal_rectifier.errors import (
    CapabilityError,
    ConfigurationError,
    DegenerateCurveError,
    DegenerateInputError,
    DomainError,
)

logger = logging.getLogger(__name__)

Point3 = Tuple[float, float, float]
Vector3 = Tuple[float, float, float]

REGULARITY_FLOOR = 1e-12


def as_point(p: Union[Sequence[float], np.ndarray]) -> np.ndarray:
    """
    Coerces a point-like value into a finite float array of shape (3,).

    Raises:
        DegenerateInputError: If the value is not three finite coordinates.
    """
    arr = np.asarray(p, dtype=float)
    if arr.shape != (3,) or not np.all(np.isfinite(arr)):
        raise DegenerateInputError(f"expected three finite coordinates, got {p!r}")
    return arr


class DerivativeSource(str, Enum):
    ANALYTIC = "analytic"
    FINITE_DIFFERENCE = "finite-difference"


class CurveSpec(BaseModel):
    """
    A parametric curve in 3-space with access to parameter derivatives.

    Subclasses implement ``deriv``; ``deriv(t, 0)`` is the point itself. Both accept a
    scalar parameter (result shape (3,)) or an array of parameters (shape t.shape + (3,)).
    Instances are frozen and safe to share between threads.
    """

    model_config = ConfigDict(frozen=True)

    name: str
    param_domain: Tuple[float, float]
    derivative_source: DerivativeSource = DerivativeSource.ANALYTIC
    max_order: int = 5

    def deriv(self, t, k: int) -> np.ndarray:
        raise NotImplementedError

    def eval(self, t) -> np.ndarray:
        return self.deriv(t, 0)

    @property
    def feature_size(self) -> float:
        """Parameter length over which the curve changes appreciably."""
        return 1.0

    @property
    def is_sampled(self) -> bool:
        """True when the curve comes from data and has no exact reference invariants."""
        return False

    def local_evaluator(self, t: float) -> Callable[[np.ndarray], np.ndarray]:
        """Point map valid around ``t``; piecewise curves return their local piece."""
        return self.eval

    def with_domain(self, t_min: float, t_max: float) -> "CurveSpec":
        if not t_max > t_min:
            raise ConfigurationError(f"empty parameter domain [{t_min}, {t_max}]")
        return self.model_copy(update={"param_domain": (float(t_min), float(t_max))})


class TrigonometricCurve(CurveSpec):
    """
    x(t) = offset + drift * t + sum_m cos_terms[m] cos(f_m t) + sin_terms[m] sin(f_m t).

    Every catalog curve is of this form, which gives exact derivatives of any order.
    """

    offset: Vector3 = (0.0, 0.0, 0.0)
    drift: Vector3 = (0.0, 0.0, 0.0)
    frequencies: Tuple[float, ...] = ()
    cos_terms: Tuple[Vector3, ...] = ()
    sin_terms: Tuple[Vector3, ...] = ()
    max_order: int = 16

    def deriv(self, t, k: int) -> np.ndarray:
        if k < 0 or k > self.max_order:
            raise CapabilityError(f"{self.name}: derivative order {k} not available")
        t_arr = np.asarray(t, dtype=float)
        freqs = np.asarray(self.frequencies, dtype=float)
        cos_terms = np.asarray(self.cos_terms, dtype=float).reshape(-1, 3)
        sin_terms = np.asarray(self.sin_terms, dtype=float).reshape(-1, 3)
        phase = np.multiply.outer(t_arr, freqs) + k * np.pi / 2.0
        scale = freqs**k
        out = (np.cos(phase) * scale) @ cos_terms + (np.sin(phase) * scale) @ sin_terms
        if k == 0:
            out = out + np.asarray(self.offset) + np.asarray(self.drift) * t_arr[..., np.newaxis]
        elif k == 1:
            out = out + np.asarray(self.drift)
        return out

    @property
    def feature_size(self) -> float:
        nonzero = [abs(f) for f in self.frequencies if f != 0.0]
        return 1.0 / max(nonzero) if nonzero else 1.0

    def similarity(
        self,
        rotation: Union[Sequence[Sequence[float]], np.ndarray],
        translation: Sequence[float] = (0.0, 0.0, 0.0),
        scale: float = 1.0,
    ) -> "TrigonometricCurve":
        """
        Image of the curve under x -> scale * R x + translation.

        ``rotation`` may be any orthogonal matrix, so mirror images are included.
        """
        R = np.asarray(rotation, dtype=float)
        if R.shape != (3, 3) or not np.allclose(R.T @ R, np.eye(3), atol=1e-9):
            raise ConfigurationError("similarity needs an orthogonal 3x3 matrix")
        if scale <= 0:
            raise ConfigurationError("similarity scale must be positive")
        A = scale * R

        def rows(terms):
            return tuple(tuple(float(c) for c in A @ np.asarray(v)) for v in terms)

        return self.model_copy(
            update={
                "offset": tuple(float(c) for c in A @ np.asarray(self.offset) + np.asarray(translation)),
                "drift": tuple(float(c) for c in A @ np.asarray(self.drift)),
                "cos_terms": rows(self.cos_terms),
                "sin_terms": rows(self.sin_terms),
            }
        )


@lru_cache(maxsize=None)
def stencil_weights(order: int, offsets: Tuple[int, ...]) -> Tuple[float, ...]:
    """
    Exact finite-difference weights for the ``order``-th derivative on integer ``offsets``.

    Solves the Vandermonde moment system in rational arithmetic so that the weights
    carry no rounding beyond the final conversion to float.
    """
    n = len(offsets)
    if n <= order:
        raise CapabilityError(f"{n} stencil points cannot resolve derivative order {order}")
    rows = [
        [Fraction(o) ** i for o in offsets] + [Fraction(math.factorial(order) if i == order else 0)]
        for i in range(n)
    ]
    for col in range(n):
        pivot = next(r for r in range(col, n) if rows[r][col] != 0)
        rows[col], rows[pivot] = rows[pivot], rows[col]
        for r in range(n):
            if r != col and rows[r][col] != 0:
                factor = rows[r][col] / rows[col][col]
                rows[r] = [a - factor * b for a, b in zip(rows[r], rows[col])]
    return tuple(float(rows[i][n] / rows[i][i]) for i in range(n))


def central_weights(order: int, accuracy: int = 6) -> Tuple[np.ndarray, np.ndarray]:
    """Central stencil of the given accuracy order: (weights, integer offsets)."""
    points = 2 * ((order + 1) // 2) - 1 + accuracy
    half = points // 2
    offsets = tuple(range(-half, half + 1))
    return np.array(stencil_weights(order, offsets)), np.array(offsets, dtype=float)


class FiniteDifferenceCurve(CurveSpec):
    """
    Derivative oracle built from point evaluations of another curve by central stencils.

    The step balances truncation against rounding: h = feature_size * eps^(1/(k+accuracy)).
    """

    source: CurveSpec
    derivative_source: DerivativeSource = DerivativeSource.FINITE_DIFFERENCE
    accuracy: int = 6

    def deriv(self, t, k: int) -> np.ndarray:
        if k == 0:
            return self.source.eval(t)
        if k < 0 or k > self.max_order:
            raise CapabilityError(f"{self.name}: finite differences limited to order {self.max_order}")
        weights, offsets = central_weights(k, self.accuracy)
        h = self.feature_size * np.finfo(float).eps ** (1.0 / (k + self.accuracy))
        t_arr = np.asarray(t, dtype=float)
        flat = np.atleast_1d(t_arr).ravel()
        out = np.empty((flat.size, 3))
        for i, ti in enumerate(flat):
            local = self.source.local_evaluator(ti)
            out[i] = weights @ local(ti + offsets * h) / h**k
        return out.reshape(t_arr.shape + (3,))

    @property
    def feature_size(self) -> float:
        return self.source.feature_size

    @property
    def is_sampled(self) -> bool:
        return self.source.is_sampled

    def local_evaluator(self, t: float) -> Callable[[np.ndarray], np.ndarray]:
        return self.source.local_evaluator(t)


class PolylineCurve(CurveSpec):
    """
    Sampled curve: node j sits at parameter t = j, points between nodes come from the
    interpolating polynomial through the ``window`` nearest nodes.
    """

    points: Tuple[Point3, ...]
    window: int = 8

    def _window_start(self, t: float) -> int:
        start = int(round(t)) - self.window // 2
        return min(max(start, 0), len(self.points) - self.window)

    def local_evaluator(self, t: float) -> Callable[[np.ndarray], np.ndarray]:
        start = self._window_start(float(t))
        nodes = np.arange(start, start + self.window, dtype=float)
        values = np.asarray(self.points[start : start + self.window], dtype=float)
        return BarycentricInterpolator(nodes, values)

    def deriv(self, t, k: int) -> np.ndarray:
        if k != 0:
            raise CapabilityError("sampled polylines only evaluate points; wrap them in FiniteDifferenceCurve")
        t_arr = np.asarray(t, dtype=float)
        flat = np.atleast_1d(t_arr).ravel()
        out = np.array([self.local_evaluator(ti)(ti) for ti in flat]).reshape(-1, 3)
        return out.reshape(t_arr.shape + (3,))

    @property
    def is_sampled(self) -> bool:
        return True


def _helix(params: List[float]) -> TrigonometricCurve:
    if len(params) != 2 or params[0] <= 0:
        raise ConfigurationError("helix needs (a, b) with a > 0")
    a, b = params
    return TrigonometricCurve(
        name=f"helix({a:g},{b:g})",
        param_domain=(0.0, 4.0 * math.pi),
        drift=(0.0, 0.0, b),
        frequencies=(1.0,),
        cos_terms=((a, 0.0, 0.0),),
        sin_terms=((0.0, a, 0.0),),
    )


def _circle(params: List[float]) -> TrigonometricCurve:
    radius = params[0] if params else 1.0
    if len(params) > 1 or radius <= 0:
        raise ConfigurationError("circle needs (radius,) with radius > 0")
    curve = _helix([radius, 0.0])
    return curve.model_copy(update={"name": f"circle({radius:g})", "param_domain": (0.0, 2.0 * math.pi)})


def _ellipse(params: List[float]) -> TrigonometricCurve:
    if len(params) != 2 or min(params) <= 0:
        raise ConfigurationError("ellipse needs (a, b) with a, b > 0")
    a, b = params
    return TrigonometricCurve(
        name=f"ellipse({a:g},{b:g})",
        param_domain=(0.0, 2.0 * math.pi),
        frequencies=(1.0,),
        cos_terms=((a, 0.0, 0.0),),
        sin_terms=((0.0, b, 0.0),),
    )


def _line(params: List[float]) -> TrigonometricCurve:
    if params:
        raise ConfigurationError("line takes no parameters")
    return TrigonometricCurve(name="line", param_domain=(0.0, 1.0), drift=(1.0, 0.0, 0.0))


def _torus_knot(params: List[float]) -> TrigonometricCurve:
    if len(params) != 4:
        raise ConfigurationError("torus_knot needs (p, q, R, r)")
    p, q, R, r = params
    if not R > r > 0 or p == 0 or q == 0:
        raise ConfigurationError("torus_knot needs R > r > 0 and nonzero p, q")
    # (R + r cos qt)(cos pt, sin pt) + r sin qt e_z, expanded into single frequencies
    return TrigonometricCurve(
        name=f"torus_knot({p:g},{q:g},{R:g},{r:g})",
        param_domain=(0.0, 2.0 * math.pi),
        frequencies=(p, p + q, p - q, q),
        cos_terms=((R, 0.0, 0.0), (r / 2, 0.0, 0.0), (r / 2, 0.0, 0.0), (0.0, 0.0, 0.0)),
        sin_terms=((0.0, R, 0.0), (0.0, r / 2, 0.0), (0.0, r / 2, 0.0), (0.0, 0.0, r)),
    )


def _trig_poly(params: List[float]) -> TrigonometricCurve:
    if len(params) != 2:
        raise ConfigurationError("trig_poly needs (seed, degree)")
    seed, degree = params
    if seed < 0 or seed != int(seed) or degree != int(degree) or degree < 2:
        raise ConfigurationError("trig_poly needs an integer seed >= 0 and integer degree >= 2")
    rng = np.random.default_rng(int(seed))
    degree = int(degree)
    cos_terms = rng.normal(size=(degree, 3)) / np.arange(1, degree + 1)[:, np.newaxis]
    sin_terms = rng.normal(size=(degree, 3)) / np.arange(1, degree + 1)[:, np.newaxis]
    return TrigonometricCurve(
        name=f"trig_poly({int(seed)},{degree})",
        param_domain=(0.0, 2.0 * math.pi),
        frequencies=tuple(float(j) for j in range(1, degree + 1)),
        cos_terms=tuple(tuple(float(c) for c in row) for row in cos_terms),
        sin_terms=tuple(tuple(float(c) for c in row) for row in sin_terms),
    )


CATALOG: Dict[str, Callable[[List[float]], TrigonometricCurve]] = {
    "helix": _helix,
    "circle": _circle,
    "ellipse": _ellipse,
    "line": _line,
    "torus_knot": _torus_knot,
    "trig_poly": _trig_poly,
}


def catalog_curve(
    name: str, params: Sequence[float] = (), domain: Optional[Tuple[float, float]] = None
) -> TrigonometricCurve:
    """
    Builds an analytic test curve from the catalog.

    Args:
        name (str): One of helix(a, b), circle(radius), ellipse(a, b), line(),
            torus_knot(p, q, R, r), trig_poly(seed, degree).
        params (Sequence[float]): Family parameters.
        domain (Optional[Tuple[float, float]]): Parameter interval overriding the family default.

    Returns:
        TrigonometricCurve: Curve with analytic derivatives of every order up to 16.

    Raises:
        ConfigurationError: Unknown name or invalid parameters.

    Example:
        helix = catalog_curve("helix", [2, 1])
        helix.eval(0.0)  # array([2., 0., 0.])
    """
    try:
        builder = CATALOG[name]
    except KeyError:
        raise ConfigurationError(f"unknown curve {name!r}; known: {', '.join(sorted(CATALOG))}") from None
    curve = builder([float(p) for p in params])
    if domain is not None:
        curve = curve.with_domain(*domain)
    return curve


def load_polyline(path: Union[str, Path], window: int = 8) -> FiniteDifferenceCurve:
    """
    Loads a sampled curve from CSV (one point per row, three columns).

    Raises:
        ConfigurationError: Unreadable file, wrong shape or too few rows.
    """
    try:
        data = np.loadtxt(path, delimiter=",", ndmin=2)
    except (OSError, ValueError) as e:
        raise ConfigurationError(f"cannot read polyline {path}: {e}") from e
    if data.shape[1] != 3 or data.shape[0] < window:
        raise ConfigurationError(f"polyline needs at least {window} rows of three columns, got {data.shape}")
    if not np.all(np.isfinite(data)):
        raise ConfigurationError("polyline contains non-finite coordinates")
    name = f"polyline({Path(path).name})"
    polyline = PolylineCurve(
        name=name,
        param_domain=(0.0, float(len(data) - 1)),
        derivative_source=DerivativeSource.FINITE_DIFFERENCE,
        points=tuple(tuple(float(c) for c in row) for row in data),
        window=window,
    )
    logger.info("loaded %s with %d nodes", name, len(data))
    return FiniteDifferenceCurve(name=name, param_domain=polyline.param_domain, source=polyline)


class ArcLengthMap(BaseModel):
    """
    Monotone map s(t) = integral of |x'| from t_min, with its inverse t(s).
    """

    model_config = ConfigDict(frozen=True)

    curve: CurveSpec
    t_min: float
    t_max: float
    total_length: float
    tol: float

    def speed(self, t) -> np.ndarray:
        return np.linalg.norm(self.curve.deriv(t, 1), axis=-1)

    def s_of_t(self, t: float) -> float:
        if t == self.t_min:
            return 0.0
        value, _ = quad(
            lambda u: float(self.speed(u)),
            self.t_min,
            t,
            epsabs=self.tol * 1e-3,
            epsrel=max(self.tol, 5e-14),
            limit=200,
        )
        return value

    def t_of_s(self, s: float) -> float:
        if s <= 0.0:
            return self.t_min
        if s >= self.total_length:
            return self.t_max
        return brentq(lambda t: self.s_of_t(t) - s, self.t_min, self.t_max, xtol=1e-14, rtol=1e-15)


def arclength_map(curve: CurveSpec, tol: float = 1e-12, floor: float = REGULARITY_FLOOR) -> ArcLengthMap:
    """
    Arc-length reparametrization of a regular curve over its parameter domain.

    Args:
        curve (CurveSpec): Curve to reparametrize.
        tol (float): Quadrature tolerance.
        floor (float): Regularity floor on |x'|.

    Returns:
        ArcLengthMap: Map anchored at s(t_min) = 0.

    Raises:
        DegenerateCurveError: The speed drops below ``floor`` somewhere on the domain.
    """
    if tol <= 0:
        raise ConfigurationError("quadrature tolerance must be positive")
    t_min, t_max = curve.param_domain
    grid = np.linspace(t_min, t_max, 513)
    speeds = np.linalg.norm(curve.deriv(grid, 1), axis=-1)
    if speeds.min() < floor:
        where = float(grid[int(np.argmin(speeds))])
        raise DegenerateCurveError(f"{curve.name}: speed {speeds.min():.3g} below floor near t={where:.6g}")
    amap = ArcLengthMap(curve=curve, t_min=t_min, t_max=t_max, total_length=0.0, tol=tol)
    total = amap.s_of_t(t_max)
    logger.debug("%s: arc length %.17g", curve.name, total)
    return amap.model_copy(update={"total_length": total})


def point_at_s(curve: CurveSpec, amap: ArcLengthMap, s: float) -> np.ndarray:
    """
    Point of the curve at arc length ``s``.

    Raises:
        DomainError: ``s`` outside [0, total length].
    """
    slack = 10 * amap.tol * max(1.0, amap.total_length)
    if s < -slack or s > amap.total_length + slack:
        raise DomainError(f"s={s} outside [0, {amap.total_length}]")
    return curve.eval(amap.t_of_s(s))
