"""Corpus-to-store extraction for lexent: sentence segmentation, rule-based
tokenization, and contextual state extraction through a pluggable encoder."""

__version__ = "0.1.0"
