"""Radiomic liver-fibrosis screening pipeline with synthetic phantoms."""

__version__ = "0.1.0"
