"""Simulator and analysis toolkit for distributed quantum computing over a photonic link."""

__version__ = "0.1.0"
