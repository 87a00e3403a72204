"""Discrete-event simulation and key distillation for a heralded-photon polarization link."""

__version__ = "0.1.0"
