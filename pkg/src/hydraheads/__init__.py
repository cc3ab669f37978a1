"""Pretrained dependency attention heads appended to a frozen transformer body."""

__version__ = "0.1.0"
