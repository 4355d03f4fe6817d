"""Figure rendering for jumprev CSV outputs."""

from .render import KINDS, FigureSpec, SchemaError, main, render

__version__ = "0.1.0"
