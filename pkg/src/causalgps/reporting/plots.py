"""
SVG figures for covariate balance and exposure-response curves.

Both figures are plain SVG 1.1 rendered from jinja2 templates. Coordinates are written
with three decimals so output is byte-stable.
"""

from __future__ import annotations

import logging
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
from jinja2 import Environment

from ..design.balance import BalanceReport
from ..errors import InputError, IoError
from ..outcome.erf import ErfEstimate

logger = logging.getLogger(__name__)

_env = Environment(autoescape=True, trim_blocks=True, lstrip_blocks=True)

BALANCE_TEMPLATE = _env.from_string(
    """<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{{ width }}" height="{{ height }}" viewBox="0 0 {{ width }} {{ height }}">
<style>
.marker.original{fill:#9e9e9e;}
.marker.adjusted{fill:#1a73e8;}
.legend-swatch.original{fill:#9e9e9e;}
.legend-swatch.adjusted{fill:#1a73e8;}
.threshold{stroke:#d93025;stroke-width:1.5;}
.mean-adjusted{stroke:#1a73e8;stroke-width:1;stroke-dasharray:5 4;}
.axis{stroke:#202124;fill:none;}
.grid{stroke:#e0e0e0;fill:none;}
text{font-family:Arial,Helvetica,sans-serif;font-size:11px;fill:#202124;}
</style>
<rect x="0" y="0" width="{{ width }}" height="{{ height }}" fill="#ffffff"/>
<text class="title" x="{{ left }}" y="20">{{ title }}</text>
{% for row in rows %}
<path class="grid" d="M {{ left }} {{ row.y }} H {{ right }}"/>
<text class="label" x="{{ left - 8 }}" y="{{ row.y }}" text-anchor="end" dominant-baseline="middle">{{ row.name }}</text>
<circle class="marker original" cx="{{ row.x_original }}" cy="{{ row.y }}" r="4"><title>{{ row.name }} original {{ row.original }}</title></circle>
<circle class="marker adjusted" cx="{{ row.x_adjusted }}" cy="{{ row.y }}" r="4"><title>{{ row.name }} adjusted {{ row.adjusted }}</title></circle>
{% endfor %}
<path class="axis" d="M {{ left }} {{ axis_y }} H {{ right }}"/>
{% for tick in ticks %}
<path class="axis" d="M {{ tick.x }} {{ axis_y }} V {{ axis_y + 4 }}"/>
<text class="tick" x="{{ tick.x }}" y="{{ axis_y + 16 }}" text-anchor="middle">{{ tick.label }}</text>
{% endfor %}
<text class="axis-label" x="{{ (left + right) / 2 }}" y="{{ axis_y + 34 }}" text-anchor="middle">Absolute correlation</text>
<line class="threshold" x1="{{ x_threshold }}" y1="{{ top }}" x2="{{ x_threshold }}" y2="{{ axis_y }}"/>
<line class="mean-adjusted" x1="{{ x_mean }}" y1="{{ top }}" x2="{{ x_mean }}" y2="{{ axis_y }}"/>
<g class="legend">
<circle class="legend-swatch original" cx="{{ right - 150 }}" cy="{{ height - 12 }}" r="4"/>
<text x="{{ right - 142 }}" y="{{ height - 12 }}" dominant-baseline="middle">original</text>
<circle class="legend-swatch adjusted" cx="{{ right - 80 }}" cy="{{ height - 12 }}" r="4"/>
<text x="{{ right - 72 }}" y="{{ height - 12 }}" dominant-baseline="middle">adjusted</text>
</g>
{% if details %}
<g class="details">
{% for line in details %}
<text x="{{ right + 24 }}" y="{{ top + 14 * loop.index }}">{{ line }}</text>
{% endfor %}
</g>
{% endif %}
</svg>
"""
)

ERF_TEMPLATE = _env.from_string(
    """<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{{ width }}" height="{{ height }}" viewBox="0 0 {{ width }} {{ height }}">
<style>
.erf{stroke:#1a73e8;stroke-width:2;fill:none;}
.band{fill:#1a73e8;fill-opacity:0.2;stroke:none;}
.axis{stroke:#202124;fill:none;}
text{font-family:Arial,Helvetica,sans-serif;font-size:11px;fill:#202124;}
</style>
<rect x="0" y="0" width="{{ width }}" height="{{ height }}" fill="#ffffff"/>
<text class="title" x="{{ left }}" y="20">{{ title }}</text>
{% if band %}
<polygon class="band" points="{{ band }}"/>
{% endif %}
<polyline class="erf" points="{{ line }}"/>
<path class="axis" d="M {{ left }} {{ top }} V {{ bottom }} H {{ right }}"/>
{% for tick in x_ticks %}
<text class="tick" x="{{ tick.pos }}" y="{{ bottom + 16 }}" text-anchor="middle">{{ tick.label }}</text>
{% endfor %}
{% for tick in y_ticks %}
<text class="tick" x="{{ left - 6 }}" y="{{ tick.pos }}" text-anchor="end" dominant-baseline="middle">{{ tick.label }}</text>
{% endfor %}
<text class="axis-label" x="{{ (left + right) / 2 }}" y="{{ bottom + 34 }}" text-anchor="middle">{{ x_label }}</text>
<text class="axis-label" x="14" y="{{ (top + bottom) / 2 }}" text-anchor="middle" transform="rotate(-90 14 {{ (top + bottom) / 2 }})">{{ y_label }}</text>
</svg>
"""
)


@dataclass(frozen=True)
class BalanceAxis:
    """x_px = left + value / axis_max * plot_width."""

    left: float
    plot_width: float
    axis_max: float

    def to_px(self, value: float) -> float:
        return round(self.left + value / self.axis_max * self.plot_width, 3)


def balance_axis(report: BalanceReport, threshold: float, left: float = 140.0, plot_width: float = 400.0) -> BalanceAxis:
    values = [*report.original_ac, *report.adjusted_ac, threshold, report.adjusted.mean_ac]
    axis_max = float(max(values))
    return BalanceAxis(left, plot_width, axis_max if axis_max > 0 else 1.0)


def _write_svg(svg: str, out_path: str | Path) -> Path:
    path = Path(out_path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(svg, encoding="utf-8")
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e
    logger.debug("wrote %s", path)
    return path


def emit_balance_plot(
    report: BalanceReport,
    threshold: float,
    out_path: str | Path,
    details: Mapping[str, Any] | None = None,
) -> Path:
    """Covariates sorted by original AC (descending), one row each with two markers."""
    if not report.names:
        raise InputError("balance report has no covariates")
    axis = balance_axis(report, threshold)
    top, row_h = 40.0, 24.0
    order = sorted(range(len(report.names)), key=lambda i: (-report.original_ac[i], i))
    rows = [
        {
            "name": report.names[i],
            "original": f"{report.original_ac[i]:.4f}",
            "adjusted": f"{report.adjusted_ac[i]:.4f}",
            "x_original": axis.to_px(float(report.original_ac[i])),
            "x_adjusted": axis.to_px(float(report.adjusted_ac[i])),
            "y": top + row_h * (k + 0.5),
        }
        for k, i in enumerate(order)
    ]
    axis_y = top + row_h * len(rows) + 6
    ticks = [
        {"x": axis.to_px(v), "label": f"{v:.2f}"} for v in np.linspace(0.0, axis.axis_max, 5)
    ]
    detail_lines = [f"{k}: {v}" for k, v in details.items()] if details else []
    right = axis.left + axis.plot_width
    svg = BALANCE_TEMPLATE.render(
        width=int(right + (260 if detail_lines else 30)),
        height=int(axis_y + 64),
        left=axis.left,
        right=right,
        top=top,
        axis_y=axis_y,
        rows=rows,
        ticks=ticks,
        x_threshold=axis.to_px(threshold),
        x_mean=axis.to_px(report.adjusted.mean_ac),
        title=f"Covariate balance ({report.threshold_type} AC threshold {threshold:g})",
        details=detail_lines,
    )
    return _write_svg(svg, out_path)


def _ticks(lo: float, hi: float, to_px: Any) -> list[dict[str, Any]]:
    return [{"pos": to_px(v), "label": f"{v:.3g}"} for v in np.linspace(lo, hi, 5)]


def emit_erf_plot(
    erf: ErfEstimate,
    out_path: str | Path,
    x_label: str = "Exposure",
    y_label: str = "Exposure-response",
) -> Path:
    """Polyline through (w, mu(w)) plus, when present, the band polygon (2k vertices)."""
    w = np.asarray(erf.w_vals, dtype=np.float64)
    mu = np.asarray(erf.estimates, dtype=np.float64)
    if w.size == 0:
        raise InputError("ERF estimate is empty")
    left, right, top, bottom = 60.0, 580.0, 40.0, 340.0
    ys = [mu] + ([erf.ci_lower, erf.ci_upper] if erf.has_bands else [])
    finite = np.concatenate([np.asarray(v, dtype=np.float64) for v in ys])
    finite = finite[np.isfinite(finite)]
    y_lo, y_hi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    if y_hi <= y_lo:
        y_lo, y_hi = y_lo - 1.0, y_hi + 1.0
    x_lo, x_hi = float(w.min()), float(w.max())
    if x_hi <= x_lo:
        x_lo, x_hi = x_lo - 1.0, x_hi + 1.0

    def px(v: float) -> float:
        return round(left + (v - x_lo) / (x_hi - x_lo) * (right - left), 3)

    def py(v: float) -> float:
        return round(bottom - (v - y_lo) / (y_hi - y_lo) * (bottom - top), 3)

    def points(xs: np.ndarray, vals: np.ndarray) -> str:
        return " ".join(f"{px(x)},{py(v)}" for x, v in zip(xs, vals) if np.isfinite(v))

    band = None
    if erf.has_bands:
        assert erf.ci_lower is not None and erf.ci_upper is not None
        band = points(w, np.asarray(erf.ci_upper)) + " " + points(w[::-1], np.asarray(erf.ci_lower)[::-1])
    title = f"Exposure-response ({erf.method})"
    if erf.optimal_bw is not None:
        title += f", bandwidth {erf.optimal_bw:g}"
    svg = ERF_TEMPLATE.render(
        width=int(right + 30),
        height=int(bottom + 50),
        left=left,
        right=right,
        top=top,
        bottom=bottom,
        line=points(w, mu),
        band=band,
        x_ticks=_ticks(x_lo, x_hi, px),
        y_ticks=_ticks(y_lo, y_hi, py),
        title=title,
        x_label=x_label,
        y_label=y_label,
    )
    return _write_svg(svg, out_path)
