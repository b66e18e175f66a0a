"""Strict CSV ingestion for figure inputs.

Headers must match the producing tool's schemas exactly; a mismatch is
reported by naming every missing and unexpected column so the caller
can tell a stale file from a wrong one.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

__all__ = ["FigureError", "FigureDataError", "FigureFormatError", "read_rows"]


class FigureError(Exception):
    """Base class for everything the renderer can reject."""


class FigureDataError(FigureError):
    """Input CSV is missing, malformed, or does not match its schema."""


class FigureFormatError(FigureError):
    """Requested output format is not supported."""


def read_rows(path: Path, expected_header: str) -> list[dict[str, float]]:
    """Read ``path`` as numeric rows under an exact expected header.

    Returns one dict per data row keyed by column name.  Raises
    FigureDataError naming the offending columns on a header mismatch,
    the offending cell on a parse failure, and the file on missing or
    empty input.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise FigureDataError(f"{path}: cannot read input CSV ({exc})") from exc
    reader = csv.reader(io.StringIO(text))
    try:
        actual = next(reader)
    except StopIteration:
        raise FigureDataError(f"{path}: file is empty") from None
    expected = expected_header.split(",")
    if actual != expected:
        missing = [name for name in expected if name not in actual]
        extra = [name for name in actual if name not in expected]
        parts = []
        if missing:
            parts.append("missing column(s): " + ", ".join(missing))
        if extra:
            parts.append("unexpected column(s): " + ", ".join(extra))
        if not parts:
            parts.append("columns out of order")
        raise FigureDataError(
            f"{path}: header mismatch ({'; '.join(parts)}); "
            f"expected '{expected_header}'"
        )
    rows = []
    for line_no, cells in enumerate(reader, start=2):
        if not cells:
            continue
        if len(cells) != len(expected):
            raise FigureDataError(
                f"{path} line {line_no}: expected {len(expected)} cells, "
                f"got {len(cells)}"
            )
        row = {}
        for name, cell in zip(expected, cells):
            try:
                row[name] = float(cell)
            except ValueError:
                raise FigureDataError(
                    f"{path} line {line_no}: column '{name}': "
                    f"not a number: {cell!r}"
                ) from None
        rows.append(row)
    if not rows:
        raise FigureDataError(f"{path}: no data rows")
    return rows
