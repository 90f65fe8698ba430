"""Desk-scale numerical laboratory for the emergence of classical CM motion in an N-atom body."""

__version__ = "0.1.0"
