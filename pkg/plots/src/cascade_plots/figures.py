"""Figure construction for the five CSV table kinds.

Each figure kind consumes one finalized CSV schema and produces a
standalone SVG: the spectrum with a slope guide of -2c/3, the flux
plateau with the sigma^2/2 guide, the dissipation-rate-versus-viscosity
curve, the controlled perturbation decay, and the high-shell tangent
contraction.  All layout decisions are fixed constants, so a given
input renders to identical bytes every time.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass
from pathlib import Path

from cascade_plots.csvio import FigureDataError, FigureFormatError, read_rows
from cascade_plots.svg import Canvas

__all__ = ["KINDS", "HEADERS", "FigureSpec", "render"]

KINDS = ("spectrum", "flux", "anomaly", "control", "foias_prodi")

HEADERS = {
    "spectrum": "j,log2_mean_u2,se",
    "flux": "j,mean_u,mean_u2,mean_u3,flux_mean,flux_se,balance_r1",
    "anomaly": "nu,epsilon,epsilon_se,n_samples",
    "control": "cycle,rho_norm,control_energy",
    "foias_prodi": "n_cut,norm_mean,norm_se",
}

WIDTH = 640
HEIGHT = 440
MARGIN = (64.0, 20.0, 36.0, 48.0)  # left, right, top, bottom

DATA_COLOR = "#1f77b4"
ALT_COLOR = "#2ca02c"
GUIDE_COLOR = "#d62728"
FRAME_COLOR = "#333333"
GUIDE_DASH = "6,4"


@dataclass(frozen=True)
class FigureSpec:
    """One rendering request: input table, figure kind, output, guides."""

    kind: str
    input_path: Path
    output_path: Path
    c: float = 1.0
    sigma: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise FigureDataError(
                f"kind: must be one of {', '.join(KINDS)} (got {self.kind!r})"
            )
        if not (math.isfinite(self.c) and self.c > 0):
            raise FigureDataError(f"c: must be finite and > 0 (got {self.c!r})")
        if not (math.isfinite(self.sigma) and self.sigma >= 0):
            raise FigureDataError(
                f"sigma: must be finite and >= 0 (got {self.sigma!r})"
            )


def _pad_range(lo: float, hi: float) -> tuple[float, float]:
    if hi < lo:
        lo, hi = hi, lo
    span = hi - lo
    if span == 0.0:
        span = max(abs(hi), 1.0) * 0.2
        return lo - span / 2.0, hi + span / 2.0
    return lo - 0.05 * span, hi + 0.05 * span


def _nice_ticks(lo: float, hi: float, target: int = 6) -> list[float]:
    raw = (hi - lo) / max(target, 1)
    mag = 10.0 ** math.floor(math.log10(raw))
    step = 10.0 * mag
    for mult in (1.0, 2.0, 5.0, 10.0):
        if (hi - lo) / (mult * mag) <= target + 0.5:
            step = mult * mag
            break
    first = math.ceil(lo / step - 1e-9) * step
    ticks = []
    value = first
    while value <= hi + 1e-9 * step:
        ticks.append(0.0 if abs(value) < step * 1e-6 else value)
        value += step
    return ticks


def _decade_ticks(lo: float, hi: float) -> list[int]:
    first = math.ceil(lo - 1e-9)
    last = math.floor(hi + 1e-9)
    if last < first:
        first = math.floor(lo)
        last = math.ceil(hi)
    step = max(1, (last - first) // 6 + (1 if (last - first) % 6 else 0))
    return list(range(first, last + 1, step))


def _fmt_tick(value: float) -> str:
    return f"{value:g}"


class _Panel:
    """Linear data-to-pixel mapping over a rectangular canvas region."""

    def __init__(
        self,
        canvas: Canvas,
        region: tuple[float, float, float, float],
        x_range: tuple[float, float],
        y_range: tuple[float, float],
    ) -> None:
        self.canvas = canvas
        self.x0, self.y0, self.w, self.h = region
        self.x_lo, self.x_hi = x_range
        self.y_lo, self.y_hi = y_range

    def px(self, x: float) -> float:
        return self.x0 + (x - self.x_lo) / (self.x_hi - self.x_lo) * self.w

    def py(self, y: float) -> float:
        return self.y0 + self.h - (y - self.y_lo) / (self.y_hi - self.y_lo) * self.h

    def frame(self) -> None:
        c = self.canvas
        c.line(self.x0, self.y0, self.x0, self.y0 + self.h, stroke=FRAME_COLOR)
        c.line(
            self.x0,
            self.y0 + self.h,
            self.x0 + self.w,
            self.y0 + self.h,
            stroke=FRAME_COLOR,
        )

    def x_axis(self, ticks: list[float], labels: list[str], label: str) -> None:
        base = self.y0 + self.h
        for value, text in zip(ticks, labels):
            x = self.px(value)
            self.canvas.line(x, base, x, base + 4, stroke=FRAME_COLOR)
            self.canvas.text(x, base + 16, text, size=11, anchor="middle")
        self.canvas.text(
            self.x0 + self.w / 2.0, base + 32, label, size=12, anchor="middle"
        )

    def y_axis(self, ticks: list[float], labels: list[str], label: str) -> None:
        for value, text in zip(ticks, labels):
            y = self.py(value)
            self.canvas.line(self.x0 - 4, y, self.x0, y, stroke=FRAME_COLOR)
            self.canvas.text(self.x0 - 7, y + 4, text, size=11, anchor="end")
        self.canvas.text(
            self.x0 - 48,
            self.y0 + self.h / 2.0,
            label,
            size=12,
            anchor="middle",
            rotate=True,
        )

    def series(
        self,
        points: list[tuple[float, float]],
        *,
        color: str = DATA_COLOR,
        marker: bool = True,
        line: bool = True,
    ) -> None:
        pix = [(self.px(x), self.py(y)) for x, y in points]
        if line and len(pix) > 1:
            self.canvas.polyline(pix, stroke=color)
        if marker:
            for x, y in pix:
                self.canvas.circle(x, y, 3.0, fill=color)

    def error_bars(
        self, triples: list[tuple[float, float, float]], *, color: str = DATA_COLOR
    ) -> None:
        for x, lo, hi in triples:
            px = self.px(x)
            y1, y2 = self.py(lo), self.py(hi)
            self.canvas.line(px, y1, px, y2, stroke=color)
            self.canvas.line(px - 3, y1, px + 3, y1, stroke=color)
            self.canvas.line(px - 3, y2, px + 3, y2, stroke=color)

    def hguide(self, y: float, label: str) -> None:
        py = self.py(y)
        self.canvas.line(
            self.x0,
            py,
            self.x0 + self.w,
            py,
            stroke=GUIDE_COLOR,
            dash=GUIDE_DASH,
        )
        self.canvas.text(
            self.x0 + self.w - 4, py - 5, label, size=11, anchor="end", fill=GUIDE_COLOR
        )

    def guide_line(
        self, p1: tuple[float, float], p2: tuple[float, float], label: str
    ) -> None:
        self.canvas.line(
            self.px(p1[0]),
            self.py(p1[1]),
            self.px(p2[0]),
            self.py(p2[1]),
            stroke=GUIDE_COLOR,
            dash=GUIDE_DASH,
        )
        self.canvas.text(
            self.px(p2[0]),
            self.py(p2[1]) - 6,
            label,
            size=11,
            anchor="end",
            fill=GUIDE_COLOR,
        )


def _full_region() -> tuple[float, float, float, float]:
    left, right, top, bottom = MARGIN
    return left, top, WIDTH - left - right, HEIGHT - top - bottom


def _title(canvas: Canvas, text: str) -> None:
    canvas.text(WIDTH / 2.0, 22, text, size=14, anchor="middle")


def _log_values(rows: list[dict], column: str, path: Path) -> list[float]:
    values = []
    for row in rows:
        if row[column] <= 0.0:
            raise FigureDataError(
                f"{path}: column '{column}' must be positive for a log axis "
                f"(got {row[column]!r})"
            )
        values.append(math.log10(row[column]))
    return values


def _draw_spectrum(canvas: Canvas, rows: list[dict], spec: FigureSpec) -> None:
    xs = [row["j"] for row in rows]
    ys = [row["log2_mean_u2"] for row in rows]
    ses = [row["se"] for row in rows]
    slope = -2.0 * spec.c / 3.0
    anchor = statistics.median(y - slope * x for x, y in zip(xs, ys))
    guide = [(x, anchor + slope * x) for x in (min(xs), max(xs))]
    y_all = [y + s for y, s in zip(ys, ses)] + [y - s for y, s in zip(ys, ses)]
    y_all += [g for _, g in guide]
    panel = _Panel(
        canvas,
        _full_region(),
        _pad_range(min(xs), max(xs)),
        _pad_range(min(y_all), max(y_all)),
    )
    panel.frame()
    xt = _nice_ticks(panel.x_lo, panel.x_hi)
    yt = _nice_ticks(panel.y_lo, panel.y_hi)
    panel.x_axis(xt, [_fmt_tick(v) for v in xt], "shell index j")
    panel.y_axis(yt, [_fmt_tick(v) for v in yt], "log2 mean squared amplitude")
    panel.guide_line(guide[0], guide[1], f"slope {slope:g} guide")
    panel.error_bars(
        [(x, y - s, y + s) for x, y, s in zip(xs, ys, ses)]
    )
    panel.series(list(zip(xs, ys)))
    _title(canvas, "Energy spectrum")


def _draw_flux(canvas: Canvas, rows: list[dict], spec: FigureSpec) -> None:
    xs = [row["j"] for row in rows]
    ys = [row["flux_mean"] for row in rows]
    ses = [row["flux_se"] for row in rows]
    target = spec.sigma**2 / 2.0
    y_all = [y + s for y, s in zip(ys, ses)] + [y - s for y, s in zip(ys, ses)]
    y_all.append(target)
    panel = _Panel(
        canvas,
        _full_region(),
        _pad_range(min(xs), max(xs)),
        _pad_range(min(y_all), max(y_all)),
    )
    panel.frame()
    xt = _nice_ticks(panel.x_lo, panel.x_hi)
    yt = _nice_ticks(panel.y_lo, panel.y_hi)
    panel.x_axis(xt, [_fmt_tick(v) for v in xt], "shell index j")
    panel.y_axis(yt, [_fmt_tick(v) for v in yt], "mean energy flux past shell j")
    panel.hguide(target, f"sigma^2/2 = {target:g}")
    panel.error_bars(
        [(x, y - s, y + s) for x, y, s in zip(xs, ys, ses)]
    )
    panel.series(list(zip(xs, ys)))
    _title(canvas, "Energy flux plateau")


def _draw_anomaly(canvas: Canvas, rows: list[dict], spec: FigureSpec) -> None:
    rows = sorted(rows, key=lambda row: row["nu"])
    xs = _log_values(rows, "nu", spec.input_path)
    ys = [row["epsilon"] for row in rows]
    ses = [row["epsilon_se"] for row in rows]
    target = spec.sigma**2 / 2.0
    y_all = [y + s for y, s in zip(ys, ses)] + [y - s for y, s in zip(ys, ses)]
    y_all.append(target)
    x_lo, x_hi = _pad_range(min(xs), max(xs))
    panel = _Panel(
        canvas,
        _full_region(),
        (x_lo, x_hi),
        _pad_range(min(y_all), max(y_all)),
    )
    panel.frame()
    xt = _decade_ticks(x_lo, x_hi)
    yt = _nice_ticks(panel.y_lo, panel.y_hi)
    panel.x_axis([float(k) for k in xt], [f"1e{k}" for k in xt], "viscosity")
    panel.y_axis(yt, [_fmt_tick(v) for v in yt], "mean dissipation rate")
    panel.hguide(target, f"sigma^2/2 = {target:g}")
    panel.error_bars(
        [(x, y - s, y + s) for x, y, s in zip(xs, ys, ses)]
    )
    panel.series(list(zip(xs, ys)))
    _title(canvas, "Dissipation rate versus viscosity")


def _draw_control(canvas: Canvas, rows: list[dict], spec: FigureSpec) -> None:
    rows = sorted(rows, key=lambda row: row["cycle"])
    left, right, top, bottom = MARGIN
    gap = 46.0
    panel_h = (HEIGHT - top - bottom - gap) / 2.0
    xs = [row["cycle"] for row in rows]
    x_range = _pad_range(min(xs), max(xs))

    norm_log = _log_values(rows, "rho_norm", spec.input_path)
    upper = _Panel(
        canvas,
        (left, top, WIDTH - left - right, panel_h),
        x_range,
        _pad_range(min(norm_log), max(norm_log)),
    )
    upper.frame()
    yt = _decade_ticks(upper.y_lo, upper.y_hi)
    upper.y_axis([float(k) for k in yt], [f"1e{k}" for k in yt], "perturbation norm")
    xt = _nice_ticks(x_range[0], x_range[1])
    upper.x_axis(xt, [_fmt_tick(v) for v in xt], "")
    upper.series(list(zip(xs, norm_log)))

    energy = [row["control_energy"] for row in rows]
    lower = _Panel(
        canvas,
        (left, top + panel_h + gap, WIDTH - left - right, panel_h),
        x_range,
        _pad_range(min(energy), max(energy)),
    )
    lower.frame()
    yt2 = _nice_ticks(lower.y_lo, lower.y_hi, target=4)
    lower.y_axis(yt2, [_fmt_tick(v) for v in yt2], "cumulative control energy")
    lower.x_axis(xt, [_fmt_tick(v) for v in xt], "cycle")
    lower.series(list(zip(xs, energy)), color=ALT_COLOR)
    _title(canvas, "Controlled perturbation decay")


def _draw_foias_prodi(canvas: Canvas, rows: list[dict], spec: FigureSpec) -> None:
    rows = sorted(rows, key=lambda row: row["n_cut"])
    xs = [row["n_cut"] for row in rows]
    ys = _log_values(rows, "norm_mean", spec.input_path)
    bars = []
    for row, y in zip(rows, ys):
        lo = max(row["norm_mean"] - row["norm_se"], row["norm_mean"] * 1e-3)
        hi = row["norm_mean"] + row["norm_se"]
        bars.append((row["n_cut"], math.log10(lo), math.log10(hi)))
    y_all = ys + [b for _, b, _ in bars] + [b for _, _, b in bars]
    panel = _Panel(
        canvas,
        _full_region(),
        _pad_range(min(xs), max(xs)),
        _pad_range(min(y_all), max(y_all)),
    )
    panel.frame()
    xt = _nice_ticks(panel.x_lo, panel.x_hi)
    yt = _decade_ticks(panel.y_lo, panel.y_hi)
    panel.x_axis(xt, [_fmt_tick(v) for v in xt], "low-shell cutoff")
    panel.y_axis(
        [float(k) for k in yt],
        [f"1e{k}" for k in yt],
        "high-shell tangent norm",
    )
    panel.error_bars(bars)
    panel.series(list(zip(xs, ys)))
    _title(canvas, "High-shell tangent contraction")


_DRAWERS = {
    "spectrum": _draw_spectrum,
    "flux": _draw_flux,
    "anomaly": _draw_anomaly,
    "control": _draw_control,
    "foias_prodi": _draw_foias_prodi,
}


def render(spec: FigureSpec) -> Path:
    """Render one figure and return the written output path.

    Raises FigureDataError on schema or content problems with the input
    CSV and FigureFormatError when the output suffix is not ``.svg``.
    """
    out = Path(spec.output_path)
    if out.suffix.lower() != ".svg":
        raise FigureFormatError(
            f"output format {out.suffix or '(none)'!r} is not supported; "
            "write an .svg path"
        )
    rows = read_rows(Path(spec.input_path), HEADERS[spec.kind])
    canvas = Canvas(WIDTH, HEIGHT)
    _DRAWERS[spec.kind](canvas, rows, spec)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(canvas.to_bytes())
    return out
