"""Align-Deform-Subtract: disentangled pose, shape and appearance differences between object images."""

from .alignment import Correspondences, RansacConfig, estimate_affine, estimate_affine_ransac, estimate_tps
from .geometry import AffineTransform, TPSTransform, decompose_affine, recompose_affine
from .pipeline import DifferenceReport, PairInput, PipelineConfig, explain_pair

__version__ = "0.1.0"

__all__ = [
    "AffineTransform",
    "Correspondences",
    "DifferenceReport",
    "PairInput",
    "PipelineConfig",
    "RansacConfig",
    "TPSTransform",
    "decompose_affine",
    "estimate_affine",
    "estimate_affine_ransac",
    "estimate_tps",
    "explain_pair",
    "recompose_affine",
]
