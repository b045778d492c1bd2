"""Curve rendering: a dependency-free SVG writer plus matplotlib figure helpers.

The SVG writer emits one polyline per curve and a legend entry per curve name,
with nothing beyond what a static viewer needs. The matplotlib helpers render the
same curves to PNG for reports; they pin the backend and strip volatile metadata
so repeated runs produce identical bytes.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

__all__ = ["Curve", "load_curve_csv", "save_curve_figure", "write_curves_svg"]

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")

_WIDTH = 640
_HEIGHT = 440
_MARGIN_LEFT = 72
_MARGIN_RIGHT = 24
_MARGIN_TOP = 48
_MARGIN_BOTTOM = 56


@dataclass
class Curve:
    name: str
    points: list[tuple[float, float]]

    def __post_init__(self) -> None:
        if not self.points:
            raise ValueError(f"curve {self.name!r} has no points")


def load_curve_csv(path: Union[str, Path], name: str = "") -> Curve:
    """Read a two-column numeric CSV into a curve; a single header row is tolerated."""
    path = Path(path)
    points = []
    with path.open(newline="") as fh:
        for row_no, row in enumerate(csv.reader(fh), start=1):
            if not row or not any(cell.strip() for cell in row):
                continue
            try:
                points.append((float(row[0]), float(row[1])))
            except (ValueError, IndexError):
                if row_no == 1:
                    continue
                raise ValueError(
                    f"{path}: row {row_no} is not two numeric columns: {row}"
                ) from None
    if not points:
        raise ValueError(f"{path}: no data rows")
    return Curve(name or path.stem, points)


def _axis_range(values: Sequence[float]) -> tuple[float, float]:
    lo, hi = min(values), max(values)
    if lo == hi:
        pad = abs(lo) if lo != 0 else 1.0
        return lo - 0.05 * pad, hi + 0.05 * pad
    return lo, hi


def write_curves_svg(
    curves: Sequence[Curve],
    *,
    title: str = "",
    x_label: str = "",
    y_label: str = "",
) -> str:
    """Render curves to a static SVG document string."""
    if not curves:
        raise ValueError("nothing to plot")
    xs = [x for c in curves for x, _ in c.points]
    ys = [y for c in curves for _, y in c.points]
    x_lo, x_hi = _axis_range(xs)
    y_lo, y_hi = _axis_range(ys)
    plot_w = _WIDTH - _MARGIN_LEFT - _MARGIN_RIGHT
    plot_h = _HEIGHT - _MARGIN_TOP - _MARGIN_BOTTOM

    def px(x: float) -> float:
        return _MARGIN_LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w

    def py(y: float) -> float:
        return _MARGIN_TOP + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h

    out = io.StringIO()
    out.write(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" height="{_HEIGHT}" '
        f'viewBox="0 0 {_WIDTH} {_HEIGHT}" font-family="sans-serif" font-size="12">\n'
    )
    out.write(f'<rect width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>\n')
    if title:
        out.write(
            f'<text x="{_WIDTH / 2:.1f}" y="24" text-anchor="middle" '
            f'font-size="15">{_escape(title)}</text>\n'
        )
    # axes and ticks
    x_axis_y = _MARGIN_TOP + plot_h
    out.write(
        f'<line x1="{_MARGIN_LEFT}" y1="{x_axis_y}" x2="{_MARGIN_LEFT + plot_w}" '
        f'y2="{x_axis_y}" stroke="black"/>\n'
    )
    out.write(
        f'<line x1="{_MARGIN_LEFT}" y1="{_MARGIN_TOP}" x2="{_MARGIN_LEFT}" '
        f'y2="{x_axis_y}" stroke="black"/>\n'
    )
    for k in range(5):
        fx = x_lo + (x_hi - x_lo) * k / 4
        fy = y_lo + (y_hi - y_lo) * k / 4
        tx = px(fx)
        ty = py(fy)
        out.write(f'<line x1="{tx:.1f}" y1="{x_axis_y}" x2="{tx:.1f}" y2="{x_axis_y + 5}" stroke="black"/>\n')
        out.write(
            f'<text x="{tx:.1f}" y="{x_axis_y + 20}" text-anchor="middle">{fx:.2f}</text>\n'
        )
        out.write(f'<line x1="{_MARGIN_LEFT - 5}" y1="{ty:.1f}" x2="{_MARGIN_LEFT}" y2="{ty:.1f}" stroke="black"/>\n')
        out.write(
            f'<text x="{_MARGIN_LEFT - 9}" y="{ty + 4:.1f}" text-anchor="end">{fy:.2f}</text>\n'
        )
    if x_label:
        out.write(
            f'<text x="{_MARGIN_LEFT + plot_w / 2:.1f}" y="{_HEIGHT - 12}" '
            f'text-anchor="middle">{_escape(x_label)}</text>\n'
        )
    if y_label:
        cy = _MARGIN_TOP + plot_h / 2
        out.write(
            f'<text x="18" y="{cy:.1f}" text-anchor="middle" '
            f'transform="rotate(-90 18 {cy:.1f})">{_escape(y_label)}</text>\n'
        )
    for i, curve in enumerate(curves):
        color = PALETTE[i % len(PALETTE)]
        coords = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in curve.points)
        out.write(
            f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>\n'
        )
    # legend: a swatch and a name per curve
    out.write('<g class="legend">\n')
    for i, curve in enumerate(curves):
        color = PALETTE[i % len(PALETTE)]
        ly = _MARGIN_TOP + 8 + 18 * i
        lx = _MARGIN_LEFT + plot_w - 150
        out.write(
            f'<line x1="{lx}" y1="{ly}" x2="{lx + 24}" y2="{ly}" '
            f'stroke="{color}" stroke-width="1.5"/>\n'
        )
        out.write(
            f'<text class="legend-entry" x="{lx + 30}" y="{ly + 4}">{_escape(curve.name)}</text>\n'
        )
    out.write("</g>\n</svg>\n")
    return out.getvalue()


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def save_curve_figure(
    curves: Sequence[Curve],
    path: Union[str, Path],
    *,
    title: str = "",
    x_label: str = "",
    y_label: str = "",
    markers: bool = False,
) -> None:
    """Render curves to a PNG file with byte-stable output across identical runs."""
    if not curves:
        raise ValueError("nothing to plot")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6.4, 4.4), dpi=100)
    try:
        for i, curve in enumerate(curves):
            xs = [x for x, _ in curve.points]
            ys = [y for _, y in curve.points]
            ax.plot(
                xs,
                ys,
                label=curve.name,
                color=PALETTE[i % len(PALETTE)],
                marker="o" if markers else None,
            )
        if title:
            ax.set_title(title)
        if x_label:
            ax.set_xlabel(x_label)
        if y_label:
            ax.set_ylabel(y_label)
        ax.grid(True, alpha=0.3)
        ax.legend(loc="best")
        fig.tight_layout()
        fig.savefig(path, format="png", metadata={"Software": "sgnms"})
    finally:
        plt.close(fig)
