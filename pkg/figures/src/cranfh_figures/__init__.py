"""Rendering of experiment-summary CSVs into the delay and timing figures."""

from cranfh_figures.render import FigureSpec, SchemaError, render_figures

__version__ = "0.1.0"

__all__ = ["FigureSpec", "SchemaError", "render_figures", "__version__"]
