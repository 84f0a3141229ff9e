import csv
import io
import json
import logging
import math
import sys
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence

from pydantic import BaseModel

from conformal_rectifier.rectifier_service import EstimatorReport

logger = logging.getLogger(__name__)


def fmt(value: Any) -> str:
    """17 significant digits for floats, which round-trips every double."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def to_csv(
    columns: Sequence[str], rows: Iterable[Mapping[str, Any]], footer: Optional[Mapping[str, Any]] = None
) -> str:
    """CSV text with a header row; ``footer`` entries follow as ``# key = value`` lines."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([fmt(row.get(c)) for c in columns])
    for key, value in (footer or {}).items():
        buffer.write(f"# {key} = {fmt(value)}\n")
    return buffer.getvalue()


def _finite(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, Mapping):
        return {k: _finite(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_finite(v) for v in value]
    return value


def to_json(payload: Any) -> str:
    """JSON text; models are dumped first and non-finite floats become null."""
    if isinstance(payload, BaseModel):
        payload = payload.model_dump(mode="python")
    elif isinstance(payload, Mapping):
        payload = {k: v.model_dump(mode="python") if isinstance(v, BaseModel) else v for k, v in payload.items()}
    return json.dumps(_finite(payload), indent=2, default=str, allow_nan=False) + "\n"


REPORT_COLUMNS = ("step", "estimate", "abs_error", "rel_error")


def report_rows(report: EstimatorReport) -> List[Dict[str, Any]]:
    rows = []
    for h, value in zip(report.steps, report.estimates):
        row: Dict[str, Any] = {"step": h, "estimate": value}
        if report.reference is not None:
            row["abs_error"] = abs(value - report.reference)
            if report.reference != 0.0:
                row["rel_error"] = abs(value - report.reference) / abs(report.reference)
        rows.append(row)
    return rows


def report_footer(report: EstimatorReport) -> Dict[str, Any]:
    footer: Dict[str, Any] = {
        "quantity": report.quantity,
        "extrapolated": report.extrapolated,
        "reference": report.reference,
        "reference_alt": report.reference_alt,
        "relative_error": report.relative_error,
        "richardson_order": report.richardson_order,
        "fitted_order": report.fitted_order,
        "fitted_remainder_order": report.fitted_remainder_order,
    }
    for skipped in report.skipped:
        footer[f"skipped {fmt(skipped.step)}"] = skipped.reason
    for i, warning in enumerate(report.warnings):
        footer[f"warning {i + 1}"] = warning
    return footer


def report_csv(report: EstimatorReport) -> str:
    return to_csv(REPORT_COLUMNS, report_rows(report), report_footer(report))


def emit(text: str, out: Optional[Path]) -> None:
    """Writes to ``out`` or, without a path, to standard output."""
    if out is None:
        sys.stdout.write(text)
        return
    Path(out).write_text(text, encoding="utf-8")
    logger.info("wrote %s", out)
