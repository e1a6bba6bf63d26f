"""Artifact writers: CSV, line records with a schema header, SVG rasters.

Every file is written to a temporary sibling and renamed into place, so readers
never observe a partial artifact.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence
from xml.sax.saxutils import escape

FORMAT_VERSION = 1


def atomic_write(path: str | Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _cell(v) -> str:
    if hasattr(v, "item") and not isinstance(v, (list, tuple)):  # numpy scalars
        v = v.item()
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ("nan" if math.isnan(v) else ("inf" if v > 0 else "-inf"))
    return str(v)


def csv_text(columns: Sequence[str], rows: Iterable[Sequence], header: dict | None = None,
             footer: dict | None = None) -> str:
    """CSV with optional ``# key: value`` comment lines before and after the table."""
    buf = io.StringIO()
    for k, v in (header or {}).items():
        buf.write(f"# {k}: {_cell(v)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(v) for v in r])
    for k, v in (footer or {}).items():
        buf.write(f"# {k}: {_cell(v)}\n")
    return buf.getvalue()


def _json_safe(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, dict):
        return {str(k): _json_safe(u) for k, u in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(u) for u in v]
    if hasattr(v, "item"):  # numpy scalars
        return _json_safe(v.item())
    return v


def records_text(kind: str, fields: Sequence[str], records: Iterable[dict]) -> str:
    """One JSON object per line; the first line declares the record kind and its fields."""
    lines = [json.dumps({"schema": kind, "version": FORMAT_VERSION, "fields": list(fields)})]
    for rec in records:
        lines.append(json.dumps({f: _json_safe(rec.get(f)) for f in fields}))
    return "\n".join(lines) + "\n"


def read_records(text: str) -> tuple[dict, list[dict]]:
    rows = [json.loads(line) for line in text.splitlines() if line.strip()]
    return rows[0], rows[1:]


def pretty_table(fields: Sequence[str], records: Sequence[dict]) -> str:
    cells = [[_pretty(r.get(f)) for f in fields] for r in records]
    widths = [max([len(f)] + [len(row[i]) for row in cells]) for i, f in enumerate(fields)]
    out = ["  ".join(f.ljust(w) for f, w in zip(fields, widths)),
           "  ".join("-" * w for w in widths)]
    out += ["  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in cells]
    return "\n".join(out) + "\n"


def _pretty(v) -> str:
    if isinstance(v, float):
        return f"{v:.10g}"
    return "" if v is None else str(v)


# -- SVG --------------------------------------------------------------------------

VERDICT_FILL = {"tracked": "#9a9a9a", "destabilized": "#ffffff", "exhausted": "#d04040"}


def scan_svg(xs, lams, verdicts, polylines: Sequence[tuple[str, Sequence[tuple[float, float]]]] = (),
             width: int = 600, height: int = 600) -> str:
    """Verdict raster in the (x, lambda) plane: one rect per cell, one polyline per curve.

    ``verdicts`` is indexed [lambda, x]; polylines are (label, [(x, lambda), ...]).
    """
    nx, nl = len(xs), len(lams)
    x0, x1 = float(min(xs)), float(max(xs))
    l0, l1 = float(min(lams)), float(max(lams))
    dx = (x1 - x0) / max(nx - 1, 1) or 1.0
    dl = (l1 - l0) / max(nl - 1, 1) or 1.0
    x0, x1, l0, l1 = x0 - dx / 2, x1 + dx / 2, l0 - dl / 2, l1 + dl / 2
    sx, sl = width / (x1 - x0), height / (l1 - l0)

    def px(x, lam):
        return (x - x0) * sx, height - (lam - l0) * sl

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             f'<g id="cells" shape-rendering="crispEdges">']
    cw, ch = dx * sx, dl * sl
    for i, lam in enumerate(lams):
        for j, x in enumerate(xs):
            cx, cy = px(float(x), float(lam))
            v = str(verdicts[i][j])
            parts.append(f'<rect x="{cx - cw / 2:.3f}" y="{cy - ch / 2:.3f}" width="{cw:.3f}" '
                         f'height="{ch:.3f}" fill="{VERDICT_FILL.get(v, "#000000")}" data-verdict="{v}"/>')
    parts.append("</g>")
    parts.append('<g id="canards" fill="none" stroke-width="1.5">')
    for label, pts in polylines:
        coords = []
        for x, lam in pts:
            if x0 <= x <= x1 and l0 <= lam <= l1:
                cx, cy = px(float(x), float(lam))
                coords.append(f"{cx:.2f},{cy:.2f}")
        if len(coords) >= 2:
            parts.append(f'<polyline data-label="{escape(label)}" stroke="#1f4fbf" points="{" ".join(coords)}"/>')
    parts.append("</g></svg>")
    return "\n".join(parts) + "\n"
