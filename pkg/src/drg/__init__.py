"""Deep random generator workbench."""

__version__ = "0.1.0"
