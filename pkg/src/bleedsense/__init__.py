"""Optical bleeding-rate sensing: spectral simulation, a tiny CNN classifier,
int8 deployment, duty-cycle energy accounting and a telemetry codec."""

__version__ = "0.1.0"
