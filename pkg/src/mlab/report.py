"""Metrics CSV export and RunRecord persistence.

``export_metrics`` writes two files:

* the metrics table, columns ``stage,task,accuracy,reference,cka``. There is
  one row per (stage, task) accuracy, followed by one row per
  (stage, reference, probe task) CKA score;
* a scatter table ``misalignment,accuracy_delta``, one row per stage, with
  ``1 - CKA`` to the record's primary reference and the accuracy change on
  the primary task relative to that reference stage.

Floats are written with 12 significant digits and ``\\n`` line endings, so
identical records give byte-identical files.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

from .cka import AlignmentScore
from .errors import IoError, ParseError
from .pipelines import RunRecord, StageMetrics

METRICS_HEADER = ["stage", "task", "accuracy", "reference", "cka"]
SCATTER_HEADER = ["misalignment", "accuracy_delta"]


def fmt(x: float) -> str:
    return f"{x:.12g}"


def metrics_rows(record: RunRecord):
    for s in record.stages:
        for task, acc in s.accuracy.items():
            yield [s.label, task, fmt(acc), "", ""]
        for (ref, task), score in s.cka.items():
            yield [s.label, task, "", ref, fmt(score.cka)]


def scatter_rows(record: RunRecord):
    ref, task = record.primary_reference, record.primary_task
    try:
        baseline = record.stage(ref).accuracy[task]
    except KeyError:
        return
    for s in record.stages:
        if (ref, task) in s.cka:
            yield [fmt(1.0 - s.cka_value(ref, task)), fmt(s.accuracy[task] - baseline)]


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def scatter_path_for(path) -> Path:
    path = Path(path)
    return path.with_name(f"{path.stem}_scatter{path.suffix or '.csv'}")


def export_metrics(record: RunRecord, path, scatter_path=None):
    """Write the metrics and scatter CSVs; returns both paths."""
    path = Path(path)
    scatter_path = scatter_path_for(path) if scatter_path is None else Path(scatter_path)
    try:
        path.write_text(_csv_text(METRICS_HEADER, metrics_rows(record)), encoding="utf-8")
        scatter_path.write_text(_csv_text(SCATTER_HEADER, scatter_rows(record)), encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write metrics: {exc}") from exc
    return path, scatter_path


def read_metrics(path) -> list:
    """Parse a metrics CSV back into ``StageMetrics`` (CKA scores carry only ``cka``)."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read metrics: {exc}") from exc
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != METRICS_HEADER:
        raise ParseError(f"unexpected metrics header {header}", line=1)
    stages = {}
    for lineno, row in enumerate(reader, start=2):
        if len(row) != 5:
            raise ParseError("expected 5 columns", line=lineno)
        label, task, acc, ref, value = row
        m = stages.setdefault(label, StageMetrics(label=label, role=""))
        try:
            if ref:
                v = float(value)
                m.cka[(ref, task)] = AlignmentScore(cka=v, hsic_st=float("nan"),
                                                    hsic_ss=float("nan"), hsic_tt=float("nan"))
            else:
                m.accuracy[task] = float(acc)
        except ValueError as exc:
            raise ParseError(f"bad number: {exc}", line=lineno) from None
    return list(stages.values())


def record_to_dict(record: RunRecord) -> dict:
    return {
        "scenario": record.scenario,
        "seed": record.seed,
        "primary_reference": record.primary_reference,
        "primary_task": record.primary_task,
        "config": record.config,
        "stages": [
            {
                "label": s.label,
                "role": s.role,
                "accuracy": s.accuracy,
                "cka": [
                    {"reference": ref, "task": task, "cka": sc.cka, "hsic_st": sc.hsic_st,
                     "hsic_ss": sc.hsic_ss, "hsic_tt": sc.hsic_tt}
                    for (ref, task), sc in s.cka.items()
                ],
            }
            for s in record.stages
        ],
        "lineage": record.lineage,
        "wall_clock": record.wall_clock,
    }


def record_from_dict(d: dict) -> RunRecord:
    try:
        stages = [
            StageMetrics(
                label=s["label"],
                role=s["role"],
                accuracy=dict(s["accuracy"]),
                cka={
                    (c["reference"], c["task"]): AlignmentScore(c["cka"], c["hsic_st"], c["hsic_ss"], c["hsic_tt"])
                    for c in s["cka"]
                },
            )
            for s in d["stages"]
        ]
        return RunRecord(
            scenario=d["scenario"],
            seed=d["seed"],
            config=d["config"],
            primary_reference=d["primary_reference"],
            primary_task=d["primary_task"],
            stages=stages,
            wall_clock=dict(d.get("wall_clock", {})),
            lineage=dict(d.get("lineage", {})),
        )
    except (KeyError, TypeError) as exc:
        raise ParseError(f"malformed run record: missing or invalid {exc}") from None


def save_record(record: RunRecord, path) -> None:
    try:
        Path(path).write_text(json.dumps(record_to_dict(record), indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write record: {exc}") from exc


def load_record(path) -> RunRecord:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read record: {exc}") from exc
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"record is not valid JSON: {exc.msg}", line=exc.lineno) from None
    return record_from_dict(d)
