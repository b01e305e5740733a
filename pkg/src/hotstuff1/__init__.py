"""Simulation framework for the HotStuff-1 family of speculative BFT protocols."""

__version__ = "0.1.0"
