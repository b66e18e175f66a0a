"""Figure rendering for the shell-cascade workbench CSV outputs.

The package consumes the finalized CSV tables written by the `cascade`
command line tool and renders static SVG figures.  It computes no
statistics of its own and has no dependencies outside the standard
library; rendering is deterministic, so identical inputs produce
byte-identical files.
"""

from cascade_plots.csvio import FigureDataError, FigureError, FigureFormatError
from cascade_plots.figures import KINDS, FigureSpec, render

__all__ = [
    "FigureDataError",
    "FigureError",
    "FigureFormatError",
    "FigureSpec",
    "KINDS",
    "render",
]
