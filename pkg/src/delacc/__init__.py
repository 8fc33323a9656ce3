"""Campaign manager for delegated data-subject access requests."""

__version__ = "0.1.0"
