"""Interpolated traffic assignment: efficiency, fairness and enforcing tolls."""

__version__ = "0.1.0"
