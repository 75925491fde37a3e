"""Simulation laboratory for quantum patch and batch GANs on small images."""

__version__ = "0.1.0"
