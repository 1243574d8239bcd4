"""Outlier-resistant multi-static positioning workbench."""

__version__ = "0.1.0"
