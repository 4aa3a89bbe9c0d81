"""Metrics CSV round-tripping, atomic file output, and SVG learning curves."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable
from xml.sax.saxutils import escape

from .errors import MissingColumnError
from .training.loop import METRIC_FIELDS, MetricsRecord

REQUIRED_PLOT_COLUMNS = ("step", "split", "loss")
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
WIDTH, HEIGHT = 640, 400
LEFT, RIGHT, TOP, BOTTOM = 70, 130, 40, 50


def write_atomic(path, content: str | bytes) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(content, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"newline": "", "encoding": "utf-8"})) as fh:
            fh.write(content)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _cell(value) -> str:
    # repr keeps floats exact on re-parse
    return repr(value) if isinstance(value, float) else str(value)


def metrics_to_csv(records: Iterable[MetricsRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(METRIC_FIELDS)
    for rec in records:
        row = rec.as_row()
        writer.writerow([_cell(row[f]) for f in METRIC_FIELDS])
    return buf.getvalue()


def write_metrics_csv(records: Iterable[MetricsRecord], path) -> None:
    write_atomic(path, metrics_to_csv(records))


def _read_rows(path, required: Iterable[str]) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        columns = reader.fieldnames or []
        missing = [c for c in required if c not in columns]
        if missing:
            raise MissingColumnError(f"{path}: missing column(s) {', '.join(missing)}")
        return list(reader)


def read_metrics_csv(path) -> list[MetricsRecord]:
    return [MetricsRecord.from_row(r) for r in _read_rows(path, METRIC_FIELDS)]


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def _tick(x: float) -> str:
    return f"{x:.4g}"


def render_curves_svg(rows: list[dict], conventions: dict | None = None, title: str = "loss") -> str:
    """SVG 1.1 document with one loss polyline per split, in sorted split order."""
    series: dict[str, list[tuple[float, float]]] = {}
    for r in rows:
        series.setdefault(r["split"], []).append((float(r["step"]), float(r["loss"])))
    points = [p for pts in series.values() for p in pts]
    xs = [p[0] for p in points] or [0.0]
    ys = [p[1] for p in points] or [0.0]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM

    def sx(x):
        return LEFT + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return TOP + (1.0 - (y - y0) / (y1 - y0)) * ph

    meta = json.dumps(conventions, sort_keys=True) if conventions else "see summary.json (conventions)"
    out = [
        '<?xml version="1.0" encoding="UTF-8" standalone="no"?>',
        '<!DOCTYPE svg PUBLIC "-//W3C//DTD SVG 1.1//EN" "http://www.w3.org/Graphics/SVG/1.1/DTD/svg11.dtd">',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f"<title>{escape(title)}</title>",
        f"<desc>normkit conventions: {escape(meta)}</desc>",
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<line x1="{LEFT}" y1="{TOP + ph}" x2="{LEFT + pw}" y2="{TOP + ph}" stroke="black"/>',
        f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{TOP + ph}" stroke="black"/>',
        f'<text x="{LEFT + pw / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle" font-size="13">step</text>',
        f'<text x="18" y="{TOP + ph / 2:.1f}" text-anchor="middle" font-size="13" transform="rotate(-90 18 {TOP + ph / 2:.1f})">loss</text>',
        f'<text x="{LEFT}" y="{TOP + ph + 16}" text-anchor="middle" font-size="11">{_tick(x0)}</text>',
        f'<text x="{LEFT + pw}" y="{TOP + ph + 16}" text-anchor="middle" font-size="11">{_tick(x1)}</text>',
        f'<text x="{LEFT - 6}" y="{TOP + ph + 4}" text-anchor="end" font-size="11">{_tick(y0)}</text>',
        f'<text x="{LEFT - 6}" y="{TOP + 4}" text-anchor="end" font-size="11">{_tick(y1)}</text>',
        f'<text x="{WIDTH / 2:.1f}" y="{TOP - 14}" text-anchor="middle" font-size="14">{escape(title)}</text>',
    ]
    for k, split in enumerate(sorted(series)):
        color = PALETTE[k % len(PALETTE)]
        coords = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in series[split])
        out.append(f'<polyline class="loss" data-split="{escape(split)}" fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        ly = TOP + 16 * k + 8
        out.append(f'<line x1="{LEFT + pw + 12}" y1="{ly}" x2="{LEFT + pw + 32}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{LEFT + pw + 38}" y="{ly + 4}" font-size="12">{escape(split)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _sibling_conventions(csv_path: Path) -> dict | None:
    summary = csv_path.with_name("summary.json")
    if summary.exists():
        try:
            return json.loads(summary.read_text()).get("conventions")
        except (OSError, ValueError):
            return None
    return None


def render_curves(csv_path, out_path=None, conventions: dict | None = None) -> Path:
    """Render ``metrics.csv`` to ``curves.svg`` (next to the CSV unless ``out_path`` is given)."""
    csv_path = Path(csv_path)
    rows = _read_rows(csv_path, REQUIRED_PLOT_COLUMNS)
    if conventions is None:
        conventions = _sibling_conventions(csv_path)
    out_path = Path(out_path) if out_path else csv_path.with_name("curves.svg")
    write_atomic(out_path, render_curves_svg(rows, conventions))
    return out_path
