"""Thin-layer reduction of PT-symmetric second-order operators."""

__version__ = "0.1.0"
