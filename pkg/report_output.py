#!/usr/bin/env python3
"""
Report, CSV and SVG emission for the GRW geodesic toolkit.

Reports are JSON with sorted keys, infinite values written as "inf" /
"-inf" and a config echo, so identical runs produce identical files.
Plots are rendered from two fixed jinja2 templates: the (r, tau)
profile of sampled geodesics and the (K, residual) chart of a sweep.
"""

import csv
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from jinja2 import Environment, FileSystemLoader, StrictUndefined

from grw_errors import GRWError, PreconditionError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"
TOOL_VERSION = "0.3.0"
TEMPLATE_DIR = Path(__file__).resolve().parent / "templates"

CANVAS = {"width": 640, "height": 400, "margin": 56}
PALETTE = ["#1f5fa8", "#c0392b", "#2e8b57", "#8e44ad", "#d68910", "#34495e"]


def to_jsonable(value: Any) -> Any:
    """Plain JSON types with infinities as strings and numpy values unwrapped."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        if math.isnan(value):
            return "nan"
        return value
    return value


def build_report(subcommand: str, config: Dict, result: Dict,
                 timings: Optional[Dict[str, float]] = None) -> Dict:
    report = {
        "schema_version": SCHEMA_VERSION,
        "tool_version": TOOL_VERSION,
        "subcommand": subcommand,
        "config": config,
        "result": result,
    }
    if timings is not None:
        report["timings"] = timings
    return to_jsonable(report)


def dumps_report(report: Dict) -> str:
    return json.dumps(to_jsonable(report), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def write_json(report: Dict, path: Path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            f.write(dumps_report(report))
    except OSError as e:
        raise GRWError(f"Could not write report {path}: {e}")
    logger.info(f"Report saved to: {path}")
    return path


def write_csv(header: Sequence[str], rows: Sequence[Sequence], path: Path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8', newline='') as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_csv_cell(v) for v in row])
    except OSError as e:
        raise GRWError(f"Could not write CSV {path}: {e}")
    logger.info(f"CSV saved to: {path} ({len(rows)} rows)")
    return path


def _csv_cell(value: Any) -> Any:
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(round(value, 12))
    return value


# -- plots -----------------------------------------------------------------------

def _environment() -> Environment:
    return Environment(loader=FileSystemLoader(str(TEMPLATE_DIR)), undefined=StrictUndefined,
                       keep_trailing_newline=True, autoescape=True)


def _scale(lo: float, hi: float, size: float, margin: float, flip: bool = False):
    span = hi - lo if hi > lo else 1.0

    def to_px(v: float) -> float:
        frac = (v - lo) / span
        if flip:
            frac = 1.0 - frac
        return round(margin + frac * (size - 2 * margin), 2)
    return to_px


def _series_points(xs: np.ndarray, ys: np.ndarray, bounds: Dict[str, float]) -> str:
    sx = _scale(bounds["x_min"], bounds["x_max"], CANVAS["width"], CANVAS["margin"])
    sy = _scale(bounds["y_min"], bounds["y_max"], CANVAS["height"], CANVAS["margin"], flip=True)
    return " ".join(f"{sx(float(x)):.2f},{sy(float(y)):.2f}" for x, y in zip(xs, ys))


def _bounds(series: List[Dict]) -> Dict[str, float]:
    xs = np.concatenate([s["x"] for s in series])
    ys = np.concatenate([s["y"] for s in series])
    return {"x_min": float(xs.min()), "x_max": float(xs.max()),
            "y_min": float(ys.min()), "y_max": float(ys.max())}


def _render(template: str, title: str, x_label: str, y_label: str, series: List[Dict],
            path: Path) -> Path:
    series = [s for s in series if len(s["x"])]
    if not series:
        raise PreconditionError("nothing to plot: the data set is empty")
    bounds = _bounds(series)
    lines = []
    for k, s in enumerate(series):
        lines.append({
            "label": s.get("label", f"series {k}"),
            "color": PALETTE[k % len(PALETTE)],
            "points": _series_points(s["x"], s["y"], bounds),
        })
    text = _environment().get_template(template).render(
        title=title, x_label=x_label, y_label=y_label, lines=lines,
        bounds={k: f"{v:.6g}" for k, v in bounds.items()}, **CANVAS)
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            f.write(text)
    except OSError as e:
        raise GRWError(f"Could not write plot {path}: {e}")
    logger.info(f"Plot saved to: {path}")
    return path


def emit_plot(kind: str, data: Any, path: Path, title: str = "") -> Path:
    """
    Render a deterministic SVG.

    ``kind`` "profile" takes a list of curves with ``r`` and ``tau`` arrays;
    "sweep" takes a SweepReport-like object with ``samples`` (K, residual).
    """
    if kind == "profile":
        series = [{"x": np.asarray(c.r, dtype=float), "y": np.asarray(c.tau, dtype=float),
                   "label": f"{c.character} D={c.D:.6g}"} for c in data]
        return _render("profile.svg.j2", title or "base coordinate along the fiber arclength",
                       "fiber arclength r", "tau", series, path)
    if kind == "sweep":
        samples = list(getattr(data, "samples", data))
        series = []
        for L in sorted({s.L for s in samples}):
            picked = [s for s in samples if s.L == L and math.isfinite(s.residual)]
            series.append({
                "x": np.array([s.K for s in picked], dtype=float),
                "y": np.log10(np.array([s.residual for s in picked], dtype=float) + 1e-16),
                "label": f"L={L:.6g}",
            })
        return _render("sweep.svg.j2", title or "shooting residual over K", "K",
                       "log10 residual", series, path)
    raise GRWError(f"Unknown plot kind: {kind}")
