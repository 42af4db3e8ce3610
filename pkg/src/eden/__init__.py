"""Event detection and dating from longitudinal claims sequences."""

__version__ = "0.1.0"
