"""Diosi-Penrose self-energies, collapse dynamics and a Monte Carlo of a
SPAD-driven Mach-Zehnder collapse-time experiment."""

__version__ = "0.1.0"
