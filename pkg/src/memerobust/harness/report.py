"""Grid and single-channel reports, rendered as Markdown or CSV tables."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from ..metrics import MetricsRow, row_from_dict, row_to_dict
from ..textnoise import TEXT_FAMILY_NAMES, TextFamily
from ..imagenoise import IMAGE_FAMILY_NAMES, ImageFamily
from .core import condition_name

METRICS = ("accuracy", "auroc", "f1")
GRID_HEADER = ("Text noise†", "Image noise‡", "Accuracy", "AUROC", "F1", "ΔAcc", "ΔAUROC", "ΔF1")
SUITE_HEADER = ("Model", "Perturbation", "Accuracy", "AUROC", "F1", "Abs. Robust.", "Rel. Robust.")
TEXT_FOOTNOTE = "Text-noise indices: " + "; ".join(
    f"{int(f)} = {TEXT_FAMILY_NAMES[f]}" for f in TextFamily if f != TextFamily.NONE) + "."
IMAGE_FOOTNOTE = "Image-noise indices: " + "; ".join(
    f"{int(f)} = {IMAGE_FAMILY_NAMES[f]}" for f in ImageFamily if f != ImageFamily.NONE) + "."


def _metric(row: MetricsRow, name: str) -> float:
    return row.table_f1 if name == "f1" else getattr(row, name)


@dataclass
class GridReport:
    clean: MetricsRow
    cells: dict = field(default_factory=dict)  # (t, i) -> MetricsRow

    def __post_init__(self):
        self.cells = {tuple(k): v for k, v in sorted(self.cells.items())}

    @property
    def deltas(self) -> dict:
        """(t, i) -> (dAcc, dAUROC, dF1), each clean minus cell."""
        return {k: tuple(_metric(self.clean, m) - _metric(r, m) for m in METRICS) for k, r in self.cells.items()}

    @property
    def average_drop(self) -> Optional[tuple]:
        if not self.cells:
            return None
        d = np.array(list(self.deltas.values()))
        return tuple(float(x) for x in d.mean(axis=0))

    @property
    def average_dropping_rate(self) -> Optional[tuple]:
        drop = self.average_drop
        if drop is None:
            return None
        return tuple(dv / _metric(self.clean, m) for dv, m in zip(drop, METRICS))

    def to_dict(self) -> dict:
        return {"kind": "grid", "clean": row_to_dict(self.clean),
                "cells": [{"text": t, "image": i, "row": row_to_dict(r)} for (t, i), r in self.cells.items()]}

    @classmethod
    def from_dict(cls, d: dict) -> "GridReport":
        return cls(row_from_dict(d["clean"]), {(c["text"], c["image"]): row_from_dict(c["row"]) for c in d["cells"]})

    @classmethod
    def from_table(cls, clean: tuple, cells: dict) -> "GridReport":
        """Build from printed (accuracy, auroc, f1) triples keyed by (t, i)."""
        return cls(MetricsRow("clean", *clean),
                   {k: MetricsRow(condition_name(*k), *v) for k, v in cells.items()})


@dataclass
class SuiteTable:
    label: str
    mode: str  # text_only or image_only
    clean: MetricsRow
    rows: dict = field(default_factory=dict)  # family index -> MetricsRow

    def family_name(self, f: int) -> str:
        return TEXT_FAMILY_NAMES[TextFamily(f)] if self.mode == "text_only" else IMAGE_FAMILY_NAMES[ImageFamily(f)]

    def to_dict(self) -> dict:
        return {"label": self.label, "mode": self.mode, "clean": row_to_dict(self.clean),
                "rows": [{"family": f, "row": row_to_dict(r)} for f, r in self.rows.items()]}

    @classmethod
    def from_dict(cls, d: dict) -> "SuiteTable":
        return cls(d["label"], d["mode"], row_from_dict(d["clean"]),
                   {r["family"]: row_from_dict(r["row"]) for r in d["rows"]})


@dataclass
class SuiteReport:
    text: SuiteTable
    image: SuiteTable

    def to_dict(self) -> dict:
        return {"kind": "suite", "text": self.text.to_dict(), "image": self.image.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "SuiteReport":
        return cls(SuiteTable.from_dict(d["text"]), SuiteTable.from_dict(d["image"]))


Report = Union[GridReport, SuiteReport]


def dump_json(report: Report) -> str:
    return json.dumps(report.to_dict(), sort_keys=True, indent=1) + "\n"


def load_json(text: str) -> Report:
    d = json.loads(text)
    kind = d.get("kind")
    if kind == "grid":
        return GridReport.from_dict(d)
    if kind == "suite":
        return SuiteReport.from_dict(d)
    raise ValueError(f"unknown report kind {kind!r}")


# ---------------------------------------------------------------- rendering

def _grid_rows(report: GridReport) -> list:
    c = report.clean
    rows = [["0", "0", f"{c.accuracy:.3f}", f"{c.auroc:.3f}", f"{c.table_f1:.3f}", "--", "--", "--"]]
    deltas = report.deltas
    for (t, i), r in report.cells.items():
        rows.append([str(t), str(i), f"{r.accuracy:.3f}", f"{r.auroc:.3f}", f"{r.table_f1:.3f}"]
                    + [f"{d:.4f}" for d in deltas[t, i]])
    return rows


def _grid_footer(report: GridReport) -> list:
    drop, rate = report.average_drop, report.average_dropping_rate
    if drop is None:
        return []
    return [["Average drop"] + [f"{d:.4f}" for d in drop],
            ["Average dropping rate"] + [f"{100 * r:.2f}%" for r in rate]]


def _suite_rows(table: SuiteTable) -> list:
    def fmt(r, name):
        v = getattr(r, name)
        return "--" if v is None else f"{v:.5f}"
    c = table.clean
    label = f"{table.label} ({'Text' if table.mode == 'text_only' else 'Image'})"
    rows = [[label, "Clean", f"{c.accuracy:.3f}", f"{c.auroc:.3f}", f"{c.table_f1:.3f}", "--", "--"]]
    for f, r in table.rows.items():
        rows.append([label, table.family_name(f), f"{r.accuracy:.3f}", f"{r.auroc:.3f}", f"{r.table_f1:.3f}",
                     fmt(r, "abs_robust"), fmt(r, "rel_robust")])
    return rows


def _markdown(header, rows) -> list:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    return lines


def make_report(report: Report, fmt: str = "markdown") -> str:
    """Render a grid (Table-4 layout) or suite (Table-6 layout)."""
    if fmt not in ("markdown", "csv"):
        raise ValueError("format must be 'markdown' or 'csv'")
    if isinstance(report, GridReport):
        header, rows, footer = GRID_HEADER, _grid_rows(report), _grid_footer(report)
    else:
        header = SUITE_HEADER
        rows = _suite_rows(report.text) + _suite_rows(report.image)
        footer = []
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        for f in footer:
            # footer labels span the five metric columns, as in the printed table
            w.writerow([f[0], "", "", "", ""] + f[1:])
        return buf.getvalue()
    lines = _markdown(header, rows)
    for f in footer:
        lines.append("| " + " | ".join([f"**{f[0]}**", "", "", "", ""] + f[1:]) + " |")
    if isinstance(report, GridReport) and report.cells:
        lines += ["", TEXT_FOOTNOTE, IMAGE_FOOTNOTE]
    return "\n".join(lines) + "\n"


def grid_from_csv(text: str) -> GridReport:
    """Inverse of ``make_report(grid, 'csv')``; footer rows are derived, so skipped."""
    rd = csv.reader(io.StringIO(text))
    header = next(rd)
    if tuple(header) != GRID_HEADER:
        raise ValueError("not a grid report CSV")
    clean, cells = None, {}
    for rec in rd:
        if not rec or not rec[0].isdigit():
            continue
        t, i = int(rec[0]), int(rec[1])
        vals = tuple(float(v) for v in rec[2:5])
        if (t, i) == (0, 0):
            clean = MetricsRow("clean", *vals)
        else:
            cells[t, i] = MetricsRow(condition_name(t, i), *vals)
    if clean is None:
        raise ValueError("grid report CSV lacks the clean row")
    return GridReport(clean, cells)
