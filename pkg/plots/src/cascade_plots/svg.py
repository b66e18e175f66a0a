"""Minimal deterministic SVG drawing surface.

Coordinates are emitted with a fixed two-decimal format and attributes
in a fixed order, so identical draw calls yield identical bytes; no
fonts are embedded and nothing depends on locale or environment.
"""

from __future__ import annotations

from typing import Iterable
from xml.sax.saxutils import escape

__all__ = ["Canvas"]


def _fmt(value: float) -> str:
    out = f"{float(value):.2f}"
    return "0.00" if out == "-0.00" else out


class Canvas:
    """Fixed-size canvas collecting shapes for a standalone SVG file."""

    def __init__(self, width: int = 640, height: int = 440) -> None:
        self.width = int(width)
        self.height = int(height)
        self._body: list[str] = []

    def line(
        self,
        x1: float,
        y1: float,
        x2: float,
        y2: float,
        *,
        stroke: str = "#333333",
        width: float = 1.0,
        dash: str | None = None,
    ) -> None:
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        self._body.append(
            f'<line x1="{_fmt(x1)}" y1="{_fmt(y1)}" x2="{_fmt(x2)}" '
            f'y2="{_fmt(y2)}" stroke="{stroke}" '
            f'stroke-width="{_fmt(width)}"{dash_attr} />'
        )

    def polyline(
        self,
        points: Iterable[tuple[float, float]],
        *,
        stroke: str = "#1f77b4",
        width: float = 1.5,
        dash: str | None = None,
    ) -> None:
        coords = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in points)
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        self._body.append(
            f'<polyline points="{coords}" fill="none" stroke="{stroke}" '
            f'stroke-width="{_fmt(width)}"{dash_attr} />'
        )

    def circle(self, cx: float, cy: float, r: float, *, fill: str = "#1f77b4") -> None:
        self._body.append(
            f'<circle cx="{_fmt(cx)}" cy="{_fmt(cy)}" r="{_fmt(r)}" fill="{fill}" />'
        )

    def text(
        self,
        x: float,
        y: float,
        content: str,
        *,
        size: int = 12,
        anchor: str = "start",
        fill: str = "#333333",
        rotate: bool = False,
    ) -> None:
        transform = (
            f' transform="rotate(-90 {_fmt(x)} {_fmt(y)})"' if rotate else ""
        )
        self._body.append(
            f'<text x="{_fmt(x)}" y="{_fmt(y)}" font-family="sans-serif" '
            f'font-size="{int(size)}" text-anchor="{anchor}" '
            f'fill="{fill}"{transform}>{escape(content)}</text>'
        )

    def to_bytes(self) -> bytes:
        head = (
            '<?xml version="1.0" encoding="UTF-8"?>\n'
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" '
            f'height="{self.height}" viewBox="0 0 {self.width} {self.height}">\n'
            f'<rect width="{self.width}" height="{self.height}" fill="#ffffff" />'
        )
        return ("\n".join([head, *self._body, "</svg>"]) + "\n").encode("utf-8")
