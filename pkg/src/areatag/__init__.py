"""Hierarchical research-area classification of scientific texts with LLMs."""

__version__ = "0.1.0"

from .taxonomy import LabelPath, Level, Taxonomy, builtin_taxonomy, load_taxonomy, load_taxonomy_file

__all__ = [
    "LabelPath",
    "Level",
    "Taxonomy",
    "builtin_taxonomy",
    "load_taxonomy",
    "load_taxonomy_file",
]
