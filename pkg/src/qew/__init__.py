"""Quantum-embedding workbench: active spaces, ADAPT-VQE, measurement, PT2 and NEB."""

__version__ = "0.1.0"
