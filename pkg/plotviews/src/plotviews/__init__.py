"""SVG figure rendering for edgecache harness CSV outputs."""

from plotviews.render import PlotSchemaError, PlotSpec, render

__all__ = ["PlotSchemaError", "PlotSpec", "render"]
