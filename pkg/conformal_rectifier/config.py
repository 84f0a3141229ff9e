import configparser
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from conformal_rectifier.curve_model_service import (
    CurveSpec,
    FiniteDifferenceCurve,
    Vector3,
    catalog_curve,
    load_polyline,
)
from conformal_rectifier.errors import ConfigurationError

logger = logging.getLogger(__name__)

DEFAULT_PARAMS: Dict[str, Tuple[float, ...]] = {
    "helix": (2.0, 1.0),
    "circle": (1.0,),
    "ellipse": (2.0, 1.0),
    "torus_knot": (2.0, 3.0, 2.0, 1.0),
    "trig_poly": (42.0, 3.0),
}


def parse_floats(value: Any) -> Any:
    """Accepts "a, b, c" as well as sequences; anything else passes through for validation."""
    if isinstance(value, str):
        text = value.strip()
        if not text:
            return []
        try:
            return [float(x) for x in text.split(",")]
        except ValueError:
            raise ValueError(f"expected comma-separated numbers, got {value!r}") from None
    return value


def parse_points(value: Any) -> Any:
    """Accepts "x,y,z; x,y,z; ..."."""
    if isinstance(value, str):
        return [parse_floats(chunk) for chunk in value.split(";") if chunk.strip()]
    return value


class Schedule(BaseModel):
    """
    Step sizes of a convergence study: explicit ``values`` or start / ratio^k for k < count.
    """

    model_config = ConfigDict(frozen=True)

    start: float = Field(0.1, gt=0)
    ratio: float = Field(2.0, gt=1)
    count: int = Field(5, ge=1)
    values: Optional[Tuple[float, ...]] = None

    @field_validator("values", mode="before")
    @classmethod
    def split_values(cls, v):
        return parse_floats(v) or None

    @model_validator(mode="after")
    def decreasing(self):
        steps = self.steps()
        if any(h <= 0 for h in steps):
            raise ValueError("schedule steps must be positive")
        if any(b >= a for a, b in zip(steps, steps[1:])):
            raise ValueError("schedule steps must be strictly decreasing")
        return self

    def steps(self) -> List[float]:
        if self.values:
            return list(self.values)
        return [self.start / self.ratio**k for k in range(self.count)]


class CurveConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str = "helix"
    params: Optional[Tuple[float, ...]] = None
    domain: Optional[Tuple[float, float]] = None
    polyline: Optional[Path] = None
    finite_difference: bool = False

    @field_validator("params", mode="before")
    @classmethod
    def split_params(cls, v):
        return parse_floats(v)

    @field_validator("domain", mode="before")
    @classmethod
    def split_domain(cls, v):
        return parse_floats(v) or None

    def build(self) -> CurveSpec:
        """
        The configured curve: a sampled polyline when ``polyline`` is set, otherwise a
        catalog curve, optionally behind finite-difference derivatives.
        """
        if self.polyline is not None:
            return load_polyline(self.polyline)
        params = self.params if self.params is not None else DEFAULT_PARAMS.get(self.name, ())
        curve = catalog_curve(self.name, params, self.domain)
        if self.finite_difference:
            curve = FiniteDifferenceCurve(name=curve.name, param_domain=curve.param_domain, source=curve)
        return curve


class Tolerances(BaseModel):
    model_config = ConfigDict(frozen=True)

    quadrature: float = Field(1e-12, gt=0)
    nu_floor: float = Field(1e-10, gt=0)
    kappa_floor: float = Field(1e-10, gt=0)
    regularity_floor: float = Field(1e-12, gt=0)


class RunConfig(BaseModel):
    """
    Everything one CLI run needs. Built from an INI file and command-line overrides.
    """

    model_config = ConfigDict(frozen=True)

    curve: CurveConfig = CurveConfig()
    s0: Optional[float] = None
    s_range: Optional[Tuple[float, float]] = None
    rows: int = Field(5, ge=1)
    omega: Schedule = Schedule(start=0.2)
    epsilon: Schedule = Schedule(start=0.1)
    format: Literal["csv", "json"] = "csv"
    out: Optional[Path] = None
    seed: int = 0
    workers: int = Field(1, ge=1)
    mobius_checks: int = Field(10, ge=0)
    grid_n: int = Field(50, ge=2)
    points: Optional[Tuple[Vector3, Vector3, Vector3, Vector3]] = None
    tolerances: Tolerances = Tolerances()

    @field_validator("s_range", mode="before")
    @classmethod
    def split_range(cls, v):
        return parse_floats(v) or None

    @field_validator("points", mode="before")
    @classmethod
    def split_points(cls, v):
        return parse_points(v) or None


SECTIONS = {"curve", "run", "omega", "epsilon", "tolerances", "crossratio"}
DEFAULTS: Dict[str, Any] = {"omega": {"start": 0.2}, "epsilon": {"start": 0.1}}


def read_ini(path: Path) -> Dict[str, Any]:
    """
    Nested settings from an INI file; [run] and [crossratio] keys land at the top level.

    Raises:
        ConfigurationError: Missing file, syntax error or unknown section.
    """
    parser = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as e:
        raise ConfigurationError(f"cannot read config {path}: {e}") from e
    except configparser.Error as e:
        raise ConfigurationError(f"invalid config {path}: {e}") from e
    settings: Dict[str, Any] = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigurationError(f"unknown section [{section}] in {path}")
        values = dict(parser.items(section))
        if section in ("run", "crossratio"):
            settings.update(values)
        else:
            settings[section] = values
    return settings


def _merge(base: Dict[str, Any], overrides: Mapping[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in overrides.items():
        if value is None:
            continue
        if isinstance(value, Mapping):
            merged[key] = _merge(dict(merged.get(key, {})), value)
        else:
            merged[key] = value
    return merged


def load_config(path: Optional[Path] = None, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """
    Builds the run configuration: INI file first, then overrides key by key.

    Args:
        path (Optional[Path]): INI file, or None for defaults only.
        overrides (Optional[Mapping[str, Any]]): Same nesting as the file; None values
            are ignored, so unset command-line flags leave the file untouched.

    Returns:
        RunConfig: Validated configuration.

    Raises:
        ConfigurationError: Unreadable file or invalid values.
    """
    settings = _merge(DEFAULTS, read_ini(path) if path is not None else {})
    settings = _merge(settings, overrides or {})
    try:
        cfg = RunConfig.model_validate(settings)
    except ValidationError as e:
        raise ConfigurationError(f"invalid configuration: {e}") from e
    logger.debug("run configuration: %s", cfg.model_dump_json())
    return cfg
