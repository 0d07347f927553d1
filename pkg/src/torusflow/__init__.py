"""Coupled Brownian flows of area-preserving diffeomorphisms on the flat 2-torus.

Submodules
----------
spectrum  wave vectors, eigenfields, noise spectra and drift fields
flow      Euler-Maruyama evolution of coupled flows, monitors and export
metrics   distances between flows, Ito coefficients, stability constants and audits
rotation  angle process of a single particle pair
verify    Monte-Carlo estimators and scenario builders
cli       configuration-driven runs
"""
from . import flow, metrics, rotation, spectrum, verify
from ._kernels import BACKEND
from .flow import DiffeoState, evolve_coupled, evolve_ensemble
from .metrics import coefficients, extrinsic_distance, l2_distance, stability_constants
from .spectrum import SingleModeDrift, Spectrum, SpectrumError, WaveVector, ZeroDrift

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "DiffeoState", "SingleModeDrift", "Spectrum", "SpectrumError", "WaveVector",
    "ZeroDrift", "coefficients", "evolve_coupled", "evolve_ensemble", "extrinsic_distance",
    "flow", "l2_distance", "metrics", "rotation", "spectrum", "stability_constants", "verify",
]
