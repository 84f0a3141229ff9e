import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from conformal_rectifier.conformal_service import conformal_state
from conformal_rectifier.config import RunConfig, load_config
from conformal_rectifier.crossratio_service import CrossRatioReport, pqr_from_circles, tetrahedron_surface
from conformal_rectifier.curve_model_service import ArcLengthMap, CurveSpec, arclength_map
from conformal_rectifier.errors import (
    ConfigurationError,
    ConformalDegeneracyError,
    InflectionPointError,
    NumericalError,
)
from conformal_rectifier.frenet_service import frenet_state
from conformal_rectifier.inversive_kernel_service import random_mobius
from conformal_rectifier.output import emit, report_csv, to_csv, to_json
from conformal_rectifier.rectifier_service import (
    METRIC_ESTIMATORS,
    ArcSide,
    EstimatorReport,
    estimate_alpha_leading,
    estimate_kappa,
    estimate_nu,
    estimate_P,
    estimate_Q,
    estimate_T2_beta,
    estimate_T2_gamma,
    estimate_tau,
    inscribe,
    recover_invariants,
    sample_conformal,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2

INVARIANT_COLUMNS = ("s", "kappa", "tau", "kappa_s", "nu", "sqrt_nu", "Q", "T", "P", "P_qt", "status")
CROSSRATIO_COLUMNS = (
    "u",
    "v",
    "p",
    "q",
    "r",
    "phi",
    "psi",
    "chi",
    "residual_cubic",
    "residual_branch",
    "pairing_check",
    "magnitude_check",
    "on_boundary",
    "all_tangent",
    "mobius_max_deviation",
)
SURFACE_COLUMNS = ("p", "q", "r", "branch", "on_allowed_face")
POLYGON_COLUMNS = ("side", "kind", "index", "x", "y", "z")
WHICH = ("nu", "P", "T2beta", "T2gamma", "Q", "kappa", "tau", "alpha", "all")


def _curve_and_map(cfg: RunConfig):
    curve = cfg.curve.build()
    amap = arclength_map(curve, cfg.tolerances.quadrature, cfg.tolerances.regularity_floor)
    return curve, amap


def _s0(cfg: RunConfig, amap: ArcLengthMap) -> float:
    return cfg.s0 if cfg.s0 is not None else amap.total_length / 2.0


def cmd_invariants(cfg: RunConfig, args: argparse.Namespace) -> int:
    """
    Table of kappa, tau, nu, Q, T and P over an arc-length range; degenerate points
    are reported in the ``status`` column instead of failing the run.
    """
    curve, amap = _curve_and_map(cfg)
    lo, hi = cfg.s_range if cfg.s_range is not None else (0.0, amap.total_length)
    if cfg.s_range is None and cfg.s0 is not None:
        lo = hi = cfg.s0
    rows: List[Dict[str, Any]] = []
    for s in np.linspace(lo, hi, cfg.rows if hi > lo else 1):
        row: Dict[str, Any] = {"s": float(s), "status": "ok"}
        try:
            fr = frenet_state(curve, amap, float(s), cfg.tolerances.kappa_floor)
            row.update(kappa=fr.kappa, tau=fr.tau, kappa_s=fr.kappa_s)
            cs = conformal_state(fr, cfg.tolerances.nu_floor)
            row.update(nu=cs.nu, sqrt_nu=cs.f, Q=cs.Q, T=cs.T, P=cs.P, P_qt=cs.P_qt)
        except InflectionPointError:
            row["status"] = "inflection"
        except ConformalDegeneracyError:
            row["status"] = "conformal-degenerate"
        except NumericalError as e:
            row["status"] = f"error: {e}"
        rows.append(row)
    flagged = sum(1 for row in rows if row["status"] != "ok")
    if flagged:
        logger.warning("%s: %d of %d rows degenerate", curve.name, flagged, len(rows))
    text = to_json({"curve": curve.name, "rows": rows}) if cfg.format == "json" else to_csv(INVARIANT_COLUMNS, rows)
    emit(text, cfg.out)
    return EXIT_OK


def _run_estimator(which: str, curve: CurveSpec, amap: ArcLengthMap, s0: float, cfg: RunConfig) -> EstimatorReport:
    schedule = cfg.epsilon.steps() if which in METRIC_ESTIMATORS else cfg.omega.steps()
    floor = cfg.tolerances.nu_floor
    if which == "kappa":
        return estimate_kappa(curve, amap, s0, schedule, cfg.workers)
    if which == "tau":
        return estimate_tau(curve, amap, s0, schedule, cfg.workers)
    estimator = {
        "nu": estimate_nu,
        "P": estimate_P,
        "T2beta": estimate_T2_beta,
        "T2gamma": estimate_T2_gamma,
        "Q": estimate_Q,
        "alpha": estimate_alpha_leading,
    }[which]
    return estimator(curve, amap, s0, schedule, cfg.workers, floor)


def _summary(report: EstimatorReport) -> str:
    return (
        f"{report.quantity}: extrapolated={report.extrapolated!r} reference={report.reference!r} "
        f"relative_error={report.relative_error!r} fitted_order={report.fitted_order!r}"
    )


def cmd_converge(cfg: RunConfig, args: argparse.Namespace) -> int:
    """
    Convergence study of one estimator, or of all of them with ``--which all``.
    Fails only when no estimator produced a single step.
    """
    curve, amap = _curve_and_map(cfg)
    s0 = _s0(cfg, amap)
    if args.which == "all":
        reports = recover_invariants(
            curve, amap, s0, cfg.omega.steps(), cfg.epsilon.steps(), cfg.workers, cfg.tolerances.nu_floor
        )
        for which in ("kappa", "tau", "alpha"):
            reports[which] = _run_estimator(which, curve, amap, s0, cfg)
    else:
        reports = {args.which: _run_estimator(args.which, curve, amap, s0, cfg)}
    for report in reports.values():
        print(_summary(report), file=sys.stderr)
    if cfg.format == "json":
        text = to_json(reports if len(reports) > 1 else next(iter(reports.values())))
    else:
        text = "\n".join(report_csv(report) for report in reports.values())
    emit(text, cfg.out)
    if all(not report.estimates for report in reports.values()):
        logger.error("no estimator produced a value")
        return EXIT_NUMERICAL
    return EXIT_OK


def _max_deviation(a: CrossRatioReport, b: CrossRatioReport) -> float:
    scalar = max(abs(getattr(a, k) - getattr(b, k)) for k in ("u", "v", "p", "q", "r"))
    crossing = max(abs(abs(a.crossing_cos[k]) - abs(b.crossing_cos[k])) for k in a.crossing_cos)
    return max(scalar, crossing)


def cmd_crossratio(cfg: RunConfig, args: argparse.Namespace) -> int:
    """
    Cross-ratio report for four points (seeded random ones by default) and the largest
    change of the invariants under ``mobius_checks`` random Mobius maps.
    """
    rng = np.random.default_rng(cfg.seed)
    points = np.asarray(cfg.points) if cfg.points is not None else rng.normal(size=(4, 3))
    report = pqr_from_circles(points)
    deviation = 0.0
    for _ in range(cfg.mobius_checks):
        mobius = random_mobius(rng, avoid=points)
        deviation = max(deviation, _max_deviation(report, pqr_from_circles(mobius(points))))
    logger.info("Mobius invariance: max deviation %.3g over %d maps", deviation, cfg.mobius_checks)
    row = report.model_dump()
    row["mobius_max_deviation"] = deviation
    if cfg.format == "json":
        text = to_json({"points": points.tolist(), **row})
    else:
        footer = {f"crossing_cos {k}": v for k, v in report.crossing_cos.items()}
        text = to_csv(CROSSRATIO_COLUMNS, [row], footer)
    emit(text, cfg.out)
    return EXIT_OK


def cmd_tetrahedron(cfg: RunConfig, args: argparse.Namespace) -> int:
    samples = tetrahedron_surface(cfg.grid_n)
    rows = [sample.model_dump() for sample in samples]
    text = to_json(rows) if cfg.format == "json" else to_csv(SURFACE_COLUMNS, rows)
    emit(text, cfg.out)
    return EXIT_OK


def cmd_polygon(cfg: RunConfig, args: argparse.Namespace) -> int:
    """
    Plot data for the black (plus) and red (minus) circular polygons inscribed in
    conformally equidistant samples around s0, using the first omega step.
    """
    curve, amap = _curve_and_map(cfg)
    window = sample_conformal(
        curve, amap, _s0(cfg, amap), cfg.omega.steps()[0], args.corners, nu_floor=cfg.tolerances.nu_floor
    )
    sides = [ArcSide.PLUS, ArcSide.MINUS] if args.side == "both" else [ArcSide(args.side)]
    rows: List[Dict[str, Any]] = []
    for side in sides:
        polygon = inscribe(window.points, side)
        for i, corner in enumerate(polygon.corners):
            rows.append({"side": side.value, "kind": "corner", "index": i, "x": corner[0], "y": corner[1], "z": corner[2]})
        for i, arc in enumerate(polygon.arc_points(args.samples)):
            for point in arc:
                rows.append({"side": side.value, "kind": "arc", "index": i, "x": float(point[0]), "y": float(point[1]), "z": float(point[2])})
    text = to_json(rows) if cfg.format == "json" else to_csv(POLYGON_COLUMNS, rows)
    emit(text, cfg.out)
    return EXIT_OK


def _common_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="INI file with [curve], [run], [omega], ...")
    parser.add_argument("--curve", default=None, help="catalog curve: helix, circle, ellipse, line, torus_knot, trig_poly")
    parser.add_argument("--params", default=None, help="family parameters, e.g. 2,1")
    parser.add_argument("--domain", default=None, help="parameter interval t_min,t_max")
    parser.add_argument("--polyline", type=Path, default=None, help="CSV file of sampled points")
    parser.add_argument("--finite-difference", action="store_true", default=None, help="differentiate numerically")
    parser.add_argument("--s0", type=float, default=None)
    parser.add_argument("--s-range", default=None, help="arc-length range s_min,s_max")
    parser.add_argument("--rows", type=int, default=None)
    for name in ("omega", "epsilon"):
        parser.add_argument(f"--{name}-start", type=float, default=None)
        parser.add_argument(f"--{name}-ratio", type=float, default=None)
        parser.add_argument(f"--{name}-count", type=int, default=None)
    parser.add_argument("--format", choices=["csv", "json"], default=None)
    parser.add_argument("--out", type=Path, default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--workers", type=int, default=None)
    parser.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="conformal-rectifier",
        description="Metric and conformal invariants of space curves from inscribed circular polygons",
    )
    sub = parser.add_subparsers(dest="cmd", required=True)

    pi = sub.add_parser("invariants", help="table of kappa, tau, nu, Q, T, P along the curve")
    _common_arguments(pi)
    pi.set_defaults(func=cmd_invariants)

    pc = sub.add_parser("converge", help="convergence study of an angle estimator")
    _common_arguments(pc)
    pc.add_argument("--which", choices=WHICH, default="P")
    pc.set_defaults(func=cmd_converge)

    px = sub.add_parser("crossratio", help="cross ratios and crossing angles of four points")
    _common_arguments(px)
    px.add_argument("--points", default=None, help="four points as x,y,z;x,y,z;x,y,z;x,y,z")
    px.add_argument("--mobius-checks", type=int, default=None)
    px.set_defaults(func=cmd_crossratio)

    pt = sub.add_parser("tetrahedron", help="samples of the rounded tetrahedron surface")
    _common_arguments(pt)
    pt.add_argument("--grid-n", type=int, default=None)
    pt.set_defaults(func=cmd_tetrahedron)

    pp = sub.add_parser("polygon", help="plot data of the inscribed circular polygons")
    _common_arguments(pp)
    pp.add_argument("--side", choices=["plus", "minus", "both"], default="both")
    pp.add_argument("--corners", type=int, default=7)
    pp.add_argument("--samples", type=int, default=16)
    pp.set_defaults(func=cmd_polygon)
    return parser


def overrides_from_args(args: argparse.Namespace) -> Dict[str, Any]:
    return {
        "curve": {
            "name": args.curve,
            "params": args.params,
            "domain": args.domain,
            "polyline": args.polyline,
            "finite_difference": args.finite_difference,
        },
        "s0": args.s0,
        "s_range": args.s_range,
        "rows": args.rows,
        "omega": {"start": args.omega_start, "ratio": args.omega_ratio, "count": args.omega_count},
        "epsilon": {"start": args.epsilon_start, "ratio": args.epsilon_ratio, "count": args.epsilon_count},
        "format": args.format,
        "out": args.out,
        "seed": args.seed,
        "workers": args.workers,
        "points": getattr(args, "points", None),
        "mobius_checks": getattr(args, "mobius_checks", None),
        "grid_n": getattr(args, "grid_n", None),
    }


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Entry point. Exit codes: 0 success, 1 configuration or I/O error, 2 numerical failure.
    """
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=max(logging.DEBUG, logging.WARNING - 10 * args.verbose),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = load_config(args.config, overrides_from_args(args))
        return args.func(cfg, args)
    except (ConfigurationError, OSError) as e:
        logger.error("%s", e)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as e:
        logger.error("%s: %s", type(e).__name__, e)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except Exception:
        logger.exception("Error processing request")
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
