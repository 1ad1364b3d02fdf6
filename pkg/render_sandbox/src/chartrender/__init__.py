"""chartrender: rasterize chart-grammar documents, execute plot snippets."""

from .grammar import ChartDoc, GrammarError, load_path, load_text
from .renderer import render
from .sandbox import execute_snippet, render_spec, serve

__version__ = "0.1.0"

__all__ = [
    "ChartDoc",
    "GrammarError",
    "execute_snippet",
    "load_path",
    "load_text",
    "render",
    "render_spec",
    "serve",
    "__version__",
]
