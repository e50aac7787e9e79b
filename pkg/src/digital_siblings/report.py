"""Heatmap (SVG, CSV matrix) and table rendering. Output is byte-deterministic."""

from __future__ import annotations

import csv
import io

from .featuremap import FeatureMap, MetricKind

GREEN = (26, 152, 80)
YELLOW = (255, 255, 191)
RED = (215, 48, 39)

CELL_PX = 28
MARGIN_LEFT = 64
MARGIN_TOP = 40
MARGIN_BOTTOM = 40


def color_for(value: float) -> str:
    """Green (0) through yellow (0.5) to red (1)."""
    v = min(1.0, max(0.0, value))
    if v <= 0.5:
        a, b, t = GREEN, YELLOW, v / 0.5
    else:
        a, b, t = YELLOW, RED, (v - 0.5) / 0.5
    rgb = tuple(round(a[i] + (b[i] - a[i]) * t) for i in range(3))
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def axes_for(maps) -> tuple[list, list]:
    """Shared axis ranges (turn counts, curvature bins) covering every map."""
    cells = set().union(*(m.cell_set() for m in maps))
    if not cells:
        return [], []
    turns = [c[0] for c in cells]
    bins = [c[1] for c in cells]
    return list(range(min(turns), max(turns) + 1)), list(range(min(bins), max(bins) + 1))


def heatmap_csv(fm: FeatureMap, metric: MetricKind, turns=None, bins=None) -> str:
    """Rows are curvature bins (highest first), columns turn counts; empty cells blank."""
    if turns is None:
        turns, bins = axes_for([fm])
    values = fm.values(metric)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["curvature"] + [str(t) for t in turns])
    for b in reversed(bins):
        row = [f"{b * fm.bin_width:.2f}"]
        for t in turns:
            v = values.get((t, b))
            row.append("" if v is None else repr(float(v)))
        w.writerow(row)
    return buf.getvalue()


def heatmap_svg(fm: FeatureMap, metric: MetricKind, title: str, turns=None, bins=None) -> str:
    if turns is None:
        turns, bins = axes_for([fm])
    values = fm.values(metric)
    width = MARGIN_LEFT + CELL_PX * max(len(turns), 1) + 16
    height = MARGIN_TOP + CELL_PX * max(len(bins), 1) + MARGIN_BOTTOM
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="9">',
        f'<text x="{MARGIN_LEFT}" y="16" font-size="12">{_escape(title)}</text>',
    ]
    for row, b in enumerate(reversed(bins)):
        y = MARGIN_TOP + row * CELL_PX
        out.append(f'<text x="{MARGIN_LEFT - 4}" y="{y + CELL_PX // 2 + 3}" text-anchor="end">{b * fm.bin_width:.2f}</text>')
        for col, t in enumerate(turns):
            x = MARGIN_LEFT + col * CELL_PX
            v = values.get((t, b))
            if v is None:
                out.append(f'<rect x="{x}" y="{y}" width="{CELL_PX}" height="{CELL_PX}" fill="none" stroke="#cccccc"/>')
                continue
            out.append(f'<rect x="{x}" y="{y}" width="{CELL_PX}" height="{CELL_PX}" fill="{color_for(v)}" stroke="#cccccc"/>')
            out.append(f'<text x="{x + CELL_PX // 2}" y="{y + CELL_PX // 2 + 3}" text-anchor="middle">{v:.2f}</text>')
    base = MARGIN_TOP + CELL_PX * len(bins)
    for col, t in enumerate(turns):
        out.append(f'<text x="{MARGIN_LEFT + col * CELL_PX + CELL_PX // 2}" y="{base + 12}" text-anchor="middle">{t}</text>')
    out.append(f'<text x="{MARGIN_LEFT}" y="{base + 30}">turns (x) / curvature 1/m (y)</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _fmt(v):
    return "" if v is None else repr(v)


def comparison_table(comparisons, metric: str, columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["comparison"] + list(columns))
    for c in comparisons:
        if c["metric"] != metric:
            continue
        w.writerow([f"{c['candidate']} vs {c['reference']}"] + [_fmt(c[k]) for k in columns])
    return buf.getvalue()


def text_summary(report: dict) -> str:
    lines = [f"config {report['config_hash'][:12]}  seed {report['seed']}"]
    for c in report["comparisons"]:
        parts = [f"{c['metric']:<20} {c['candidate']:>6} vs {c['reference']:<6}"]
        for k in ("distance", "wilcoxon_p", "pearson_r", "pearson_p", "auc_prc"):
            if c.get(k) is not None:
                parts.append(f"{k}={c[k]:.4f}")
        lines.append("  ".join(parts))
    return "\n".join(lines) + "\n"
