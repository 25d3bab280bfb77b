"""Desk-scale numerical laboratory for the planar Monge-Ampere inverse source problem."""

__version__ = "0.1.0"
