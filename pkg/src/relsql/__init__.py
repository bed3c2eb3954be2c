"""Relation-aware encoder and bottom-up beam decoder for text-to-SQL."""

__version__ = "0.1.0"
