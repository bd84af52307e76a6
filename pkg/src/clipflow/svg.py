"""Minimal SVG line and bar charts; no plotting library involved."""
from __future__ import annotations

import math
from html import escape

W, H = 640, 400
PAD_L, PAD_R, PAD_T, PAD_B = 70, 20, 40, 50
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


def _fmt(v: float) -> str:
    return f"{v:.3g}"


def _frame(title: str, xlabel: str, ylabel: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
        f'<text x="{W / 2}" y="{H - 10}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
        f'<text x="16" y="{H / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 16 {H / 2})">{escape(ylabel)}</text>',
        f'<line x1="{PAD_L}" y1="{H - PAD_B}" x2="{W - PAD_R}" y2="{H - PAD_B}" stroke="black"/>',
        f'<line x1="{PAD_L}" y1="{PAD_T}" x2="{PAD_L}" y2="{H - PAD_B}" stroke="black"/>',
    ]


def _ticks(lo: float, hi: float, sy, log_y: bool) -> list[str]:
    out = []
    for k in range(5):
        v = lo + (hi - lo) * k / 4
        y = sy(v)
        label = _fmt(10**v) if log_y else _fmt(v)
        out.append(f'<text x="{PAD_L - 6}" y="{y + 4:.1f}" text-anchor="end" font-size="10">{label}</text>')
        out.append(f'<line x1="{PAD_L - 3}" y1="{y:.1f}" x2="{PAD_L}" y2="{y:.1f}" stroke="black"/>')
    return out


def line_chart(series: dict, title: str, xlabel: str, ylabel: str, log_y: bool = False) -> str:
    """``series`` maps a legend label to (xs, ys). Non-finite points are skipped."""
    pts = {}
    for name, (xs, ys) in series.items():
        keep = [(float(x), float(y)) for x, y in zip(xs, ys)
                if math.isfinite(float(y)) and (not log_y or float(y) > 0)]
        pts[name] = [(x, math.log10(y) if log_y else y) for x, y in keep]
    allp = [p for v in pts.values() for p in v]
    parts = _frame(title, xlabel, ylabel)
    if not allp:
        parts.append("</svg>")
        return "\n".join(parts)
    x0, x1 = min(p[0] for p in allp), max(p[0] for p in allp)
    y0, y1 = min(p[1] for p in allp), max(p[1] for p in allp)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0

    def sx(x):
        return PAD_L + (x - x0) / (x1 - x0) * (W - PAD_L - PAD_R)

    def sy(y):
        return H - PAD_B - (y - y0) / (y1 - y0) * (H - PAD_T - PAD_B)

    parts += _ticks(y0, y1, sy, log_y)
    parts.append(f'<text x="{PAD_L}" y="{H - PAD_B + 16}" font-size="10">{_fmt(x0)}</text>')
    parts.append(f'<text x="{W - PAD_R}" y="{H - PAD_B + 16}" text-anchor="end" font-size="10">{_fmt(x1)}</text>')
    for k, (name, p) in enumerate(pts.items()):
        color = COLORS[k % len(COLORS)]
        if p:
            path = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in p)
            parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{path}"/>')
        ly = PAD_T + 14 * k
        parts.append(f'<line x1="{W - 150}" y1="{ly}" x2="{W - 130}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{W - 125}" y="{ly + 4}" font-size="11">{escape(name)}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def reliability_chart(bins: list[dict], title: str = "reliability") -> str:
    """Accuracy bars per confidence bin with the diagonal for reference."""
    parts = _frame(title, "confidence", "accuracy")
    pw, ph = W - PAD_L - PAD_R, H - PAD_T - PAD_B
    for b in bins:
        if b["count"] == 0:
            continue
        x = PAD_L + b["edge_lo"] * pw
        w = (b["edge_hi"] - b["edge_lo"]) * pw
        h = b["accuracy"] * ph
        parts.append(
            f'<rect x="{x:.2f}" y="{H - PAD_B - h:.2f}" width="{w:.2f}" height="{h:.2f}" '
            f'fill="{COLORS[0]}" fill-opacity="0.7" stroke="black" stroke-width="0.5"/>'
        )
    parts.append(
        f'<line x1="{PAD_L}" y1="{H - PAD_B}" x2="{W - PAD_R}" y2="{PAD_T}" '
        f'stroke="gray" stroke-dasharray="4 3"/>'
    )
    for k in range(5):
        v = k / 4
        parts.append(f'<text x="{PAD_L - 6}" y="{H - PAD_B - v * ph + 4:.1f}" text-anchor="end" '
                     f'font-size="10">{v:.2f}</text>')
        parts.append(f'<text x="{PAD_L + v * pw:.1f}" y="{H - PAD_B + 16}" text-anchor="middle" '
                     f'font-size="10">{v:.2f}</text>')
    parts.append("</svg>")
    return "\n".join(parts)
