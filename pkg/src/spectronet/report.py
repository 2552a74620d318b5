from __future__ import annotations

import csv
import io
import os
from pathlib import Path

from .experiments import Report

CSV_COLUMNS = ("condition", "fraction", "iteration", "test_acc")


class InvalidReportError(ValueError):
    pass


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def report_rows(report: Report) -> list[dict]:
    """One flat row per run, for accuracy-vs-fraction style plots."""
    return [
        {
            "condition": c.get("condition", ""),
            "fraction": c.get("fraction", 1.0),
            "iteration": c.get("iteration", 0),
            "test_acc": c["test_acc"],
        }
        for c in report.conditions
    ]


def emit_report(report: Report, out_dir: str | os.PathLike) -> tuple[Path, Path]:
    """Write ``report.json`` and ``runs.csv`` into ``out_dir``; returns both paths."""
    if not report.conditions:
        raise InvalidReportError("report has no conditions")
    for c in report.conditions:
        if "test_acc" not in c:
            raise InvalidReportError(f"condition {c.get('condition')!r} has no test accuracy")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    json_path, csv_path = out / "report.json", out / "runs.csv"
    _atomic_write(json_path, report.to_json())
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(report_rows(report))
    _atomic_write(csv_path, buf.getvalue())
    return json_path, csv_path
