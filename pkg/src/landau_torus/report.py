"""Byte-stable CSV, JSON summary and SVG heatmap emission."""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import jsonschema
import numpy as np

SUMMARY_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "subcommand", "config", "tolerances", "scalars", "checks", "artifacts", "passed"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": 1},
        "subcommand": {"enum": ["basis", "projector", "husimi", "qll", "ed", "verify"]},
        "config": {"type": "object"},
        "tolerances": {"type": "object", "additionalProperties": {"type": ["number", "null"]}},
        "scalars": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["value", "tolerance"],
                "additionalProperties": False,
                "properties": {
                    "value": {"type": ["number", "integer", "null", "boolean"]},
                    "tolerance": {"type": ["number", "null"]},
                },
            },
        },
        "checks": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "value", "tolerance", "passed"],
                "additionalProperties": False,
                "properties": {
                    "name": {"type": "string"},
                    "value": {"type": ["number", "null", "boolean"]},
                    "tolerance": {"type": ["number", "null"]},
                    "passed": {"type": "boolean"},
                },
            },
        },
        "artifacts": {"type": "array", "items": {"type": "string"}},
        "passed": {"type": "boolean"},
    },
}


class ReportError(OSError):
    pass


def format_number(x) -> str:
    """17 significant digits for floats, plain text for everything else."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return format(x, ".17g")
    return str(x)


def csv_text(rows: list[dict], columns: list[str] | None = None) -> str:
    if not rows:
        raise ValueError("no rows to write")
    columns = columns or list(rows[0].keys())
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_number(row.get(c, "")) for c in columns])
    return buf.getvalue()


def grid_rows(values: np.ndarray, L: float) -> list[dict]:
    """Flatten a real field into ``(i, j, x, y, value)`` rows."""
    n = values.shape[0]
    h = L / n
    return [
        {"i": i, "j": j, "x": i * h, "y": j * h, "value": float(values[i, j])}
        for i in range(n)
        for j in range(values.shape[1])
    ]


def _json_clean(obj):
    if isinstance(obj, dict):
        return {str(k): _json_clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_clean(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return None if not math.isfinite(x) else x
    return obj


def summary_text(summary: dict) -> str:
    clean = _json_clean(summary)
    jsonschema.validate(clean, SUMMARY_SCHEMA)
    return json.dumps(clean, indent=2, sort_keys=True) + "\n"


def _lerp_color(t: float) -> str:
    # dark blue -> teal -> yellow
    stops = [(0.0, (40, 20, 90)), (0.5, (30, 150, 140)), (1.0, (250, 230, 40))]
    t = min(1.0, max(0.0, t))
    for (t0, c0), (t1, c1) in zip(stops, stops[1:]):
        if t <= t1:
            u = (t - t0) / (t1 - t0)
            r, g, b = (round(a + u * (b_ - a)) for a, b_ in zip(c0, c1))
            return f"#{r:02x}{g:02x}{b:02x}"
    return "#fae628"


def svg_heatmap(values: np.ndarray, cell: int = 4, max_side: int = 128, title: str = "") -> str:
    """Rectangle-per-cell heatmap; axis 0 runs left to right, axis 1 bottom to top."""
    vals = np.asarray(values, dtype=float)
    step = max(1, math.ceil(max(vals.shape) / max_side))
    vals = vals[::step, ::step]
    nx, ny = vals.shape
    lo, hi = float(vals.min()), float(vals.max())
    span = hi - lo if hi > lo else 1.0
    w, h = nx * cell, ny * cell
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
        f"<title>{title} min={format_number(lo)} max={format_number(hi)}</title>",
    ]
    for i in range(nx):
        for j in range(ny):
            color = _lerp_color((vals[i, j] - lo) / span)
            parts.append(f'<rect x="{i * cell}" y="{(ny - 1 - j) * cell}" width="{cell}" height="{cell}" fill="{color}"/>')
    parts.append("</svg>\n")
    return "\n".join(parts)


class ReportWriter:
    """Collects artifacts in memory and writes them in one go."""

    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        self.files: dict[str, str] = {}
        self.blobs: dict[str, bytes] = {}

    def add_csv(self, name: str, rows: list[dict], columns: list[str] | None = None) -> None:
        self.files[name] = csv_text(rows, columns)

    def add_svg(self, name: str, values: np.ndarray, title: str = "") -> None:
        self.files[name] = svg_heatmap(values, title=title)

    def add_bytes(self, name: str, data: bytes) -> None:
        self.blobs[name] = data

    def add_json(self, name: str, data) -> None:
        self.files[name] = json.dumps(_json_clean(data), indent=2, sort_keys=True) + "\n"

    def write(self, summary: dict) -> list[str]:
        summary = dict(summary)
        summary["artifacts"] = sorted(list(self.files) + list(self.blobs)) + ["summary.json"]
        text = summary_text(summary)
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            for name, body in sorted(self.files.items()):
                (self.out_dir / name).write_text(body, encoding="utf-8")
            for name, blob in sorted(self.blobs.items()):
                (self.out_dir / name).write_bytes(blob)
            (self.out_dir / "summary.json").write_text(text, encoding="utf-8")
        except OSError as exc:
            raise ReportError(f"cannot write to {self.out_dir}: {exc}") from exc
        return summary["artifacts"]
