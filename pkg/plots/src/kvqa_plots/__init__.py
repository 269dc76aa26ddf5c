"""Paper-style figures from solver output directories.

This package only reads the CSV/JSON files written by the ``kvqa`` command
line tool; it never recomputes physics.
"""

__version__ = "0.1.0"

from .figures import FigureSpec, FigureError, render

__all__ = ["FigureSpec", "FigureError", "render"]
