"""Simulation and calibration of non-equilibrium quasiparticle dynamics in
SFQ/qubit hybrid chips."""

__version__ = "0.1.0"
