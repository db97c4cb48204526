"""Hierarchical character-level language models for historical-language tagging and lemmatization."""

__version__ = "0.1.0"
