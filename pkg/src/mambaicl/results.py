"""CSV schemas for sweep results and diagnostic reports (UTF-8, LF, floats in repr)."""

from __future__ import annotations

import csv
import io
from dataclasses import astuple, dataclass, fields
from pathlib import Path

from .errors import ValidationError

SWEEP_HEADER = ["model", "n_context", "d", "r", "seed", "mean_err", "std_err", "metric"]
REPORT_HEADER = ["report", "key", "value"]


@dataclass(frozen=True)
class ResultRow:
    """One (model, context length) point; ``std_err`` is the across-task standard deviation."""

    model: str
    n_context: int
    d: int
    r: int
    seed: int
    mean_err: float
    std_err: float
    metric: str


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def format_rows(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    for row in rows:
        w.writerow([_fmt(v) for v in astuple(row)])
    return buf.getvalue()


def write_rows(path, rows) -> None:
    Path(path).write_text(format_rows(rows), encoding="utf-8", newline="\n")


def parse_rows(text: str, source: str = "<csv>") -> list[ResultRow]:
    lines = text.splitlines()
    if not lines:
        raise ValidationError(f"{source}: empty file")
    reader = csv.reader(lines)
    header = next(reader)
    if header != SWEEP_HEADER:
        raise ValidationError(f"{source}:1: expected header {','.join(SWEEP_HEADER)}")
    types = [f.type for f in fields(ResultRow)]
    rows = []
    for lineno, rec in enumerate(reader, start=2):
        if len(rec) != len(SWEEP_HEADER):
            raise ValidationError(f"{source}:{lineno}: expected {len(SWEEP_HEADER)} fields, got {len(rec)}")
        try:
            vals = [int(v) if t == "int" else float(v) if t == "float" else v for v, t in zip(rec, types)]
        except ValueError as exc:
            raise ValidationError(f"{source}:{lineno}: {exc}") from exc
        row = ResultRow(*vals)
        if not row.mean_err >= 0 or not row.std_err >= 0:
            raise ValidationError(f"{source}:{lineno}: errors must be nonnegative")
        rows.append(row)
    return rows


def read_rows(path) -> list[ResultRow]:
    return parse_rows(Path(path).read_text(encoding="utf-8"), str(path))


def write_report(path, entries) -> None:
    """``entries`` is an iterable of (report, key, value); values are str, int, float or bool."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_HEADER)
    for report, key, value in entries:
        w.writerow([report, key, _encode(value)])
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="\n")


def read_report(path) -> dict[str, dict[str, object]]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != REPORT_HEADER:
            raise ValidationError(f"{path}:1: expected header {','.join(REPORT_HEADER)}")
        out: dict[str, dict[str, object]] = {}
        for report, key, value in reader:
            out.setdefault(report, {})[key] = _decode(value)
    return out


def _encode(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return "none"
    return str(v)


def _decode(s: str):
    if s in ("true", "false"):
        return s == "true"
    if s == "none":
        return None
    for conv in (int, float):
        try:
            return conv(s)
        except ValueError:
            pass
    return s
