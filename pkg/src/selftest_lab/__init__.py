"""Numerical laboratory for parallel self-testing of EPR pairs.

Simulates n-fold parallel CHSH, tilted CHSH and magic-square strategies,
extracts the per-copy reflections a referee can certify, and measures how
close a strategy is to the ideal one under the SWAP isometry.
"""

from .extraction import ExtractionBundle, PremiseViolation, build_bundle
from .games import GameKind, GameSpec, tilt_params
from .isometry import CertificationReport, DegenerateJunkError, certify
from .strategies import NoiseModel, Strategy, correlation_table, ideal_strategy, parallel_compose, perturb

__all__ = [
    "CertificationReport",
    "DegenerateJunkError",
    "ExtractionBundle",
    "GameKind",
    "GameSpec",
    "NoiseModel",
    "PremiseViolation",
    "Strategy",
    "build_bundle",
    "certify",
    "correlation_table",
    "ideal_strategy",
    "parallel_compose",
    "perturb",
    "tilt_params",
]

__version__ = "0.1.0"
