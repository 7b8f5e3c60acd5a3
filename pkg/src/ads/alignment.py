"""Correspondence-based estimation of the aligning affine and TPS transforms."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateCorrespondencesError,
    IllPosedError,
    InvalidArgumentError,
    NoConsensusError,
)
from .geometry import LATTICE, AffineTransform, TPSTransform, cardinal_basis, tps_from_control_points

DEFAULT_TPS_LAMBDA = 1e-3


@dataclass(frozen=True, eq=False)
class Correspondences:
    """Paired ``(N, 2)`` source and target points in normalised coordinates."""

    source: np.ndarray
    target: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        src = np.asarray(self.source, dtype=np.float64).reshape(-1, 2)
        tgt = np.asarray(self.target, dtype=np.float64).reshape(-1, 2)
        if src.shape != tgt.shape:
            raise InvalidArgumentError(f"source/target shapes differ: {src.shape} vs {tgt.shape}")
        object.__setattr__(self, "source", src)
        object.__setattr__(self, "target", tgt)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=np.float64).ravel()
            if w.shape != (len(src),) or np.any(w < 0):
                raise InvalidArgumentError("weights must be nonnegative, one per pair")
            object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return len(self.source)

    def with_source(self, source: np.ndarray) -> "Correspondences":
        return Correspondences(source, self.target, self.weights)

    def subset(self, index) -> "Correspondences":
        w = None if self.weights is None else self.weights[index]
        return Correspondences(self.source[index], self.target[index], w)


@dataclass(frozen=True)
class RansacConfig:
    inlier_threshold: float = 0.05
    iterations: int = 512
    min_inliers: int | None = None  # None -> max(6, half the pairs)
    rng_seed: int = 0

    def __post_init__(self):
        if not self.inlier_threshold > 0:
            raise InvalidArgumentError("inlier_threshold must be positive")
        if self.iterations < 1:
            raise InvalidArgumentError("iterations must be at least 1")


def _weights(c: Correspondences) -> np.ndarray:
    return np.ones(len(c)) if c.weights is None else c.weights


def _check_affine_support(src: np.ndarray, w: np.ndarray) -> None:
    active = src[w > 0]
    if len(active) < 3:
        raise DegenerateCorrespondencesError(
            f"need at least 3 weighted correspondences, got {len(active)}"
        )
    centred = active - active.mean(axis=0)
    sv = np.linalg.svd(centred, compute_uv=False)
    scale = max(1.0, float(np.abs(active).max()))
    if sv[1] <= 1e-10 * scale:
        raise DegenerateCorrespondencesError("source points are collinear")


def estimate_affine(c: Correspondences) -> AffineTransform:
    """Weighted least-squares affine fit ``A p + t ~ q``."""
    w = _weights(c)
    _check_affine_support(c.source, w)
    sw = np.sqrt(w)[:, None]
    design = np.hstack([c.source, np.ones((len(c), 1))]) * sw
    coef, *_ = np.linalg.lstsq(design, c.target * sw, rcond=None)
    # coef rows: x-coefficient, y-coefficient, constant; columns: output axis
    return AffineTransform.from_matrix(coef[:2].T, coef[2])


def _affine_from_triplet(src: np.ndarray, tgt: np.ndarray) -> np.ndarray | None:
    design = np.hstack([src, np.ones((3, 1))])
    if abs(np.linalg.det(design)) < 1e-10:
        return None
    return np.linalg.solve(design, tgt)


def estimate_affine_ransac(c: Correspondences, cfg: RansacConfig = RansacConfig()) -> AffineTransform:
    """RANSAC over minimal 3-point samples, then a least-squares refit on inliers.

    Ties in consensus size keep the earliest iteration, so a fixed ``rng_seed``
    gives a reproducible result.
    """
    n = len(c)
    if n < 3:
        raise DegenerateCorrespondencesError(f"need at least 3 correspondences, got {n}")
    min_inliers = cfg.min_inliers if cfg.min_inliers is not None else max(6, n // 2)
    rng = np.random.default_rng(cfg.rng_seed)
    homog = np.hstack([c.source, np.ones((n, 1))])

    best = None
    for _ in range(cfg.iterations):
        idx = rng.choice(n, size=3, replace=False)
        coef = _affine_from_triplet(c.source[idx], c.target[idx])
        if coef is None:
            continue
        err = np.linalg.norm(homog @ coef - c.target, axis=1)
        inliers = err < cfg.inlier_threshold
        if best is None or inliers.sum() > best.sum():
            best = inliers

    if best is None or best.sum() < min_inliers:
        found = 0 if best is None else int(best.sum())
        raise NoConsensusError(f"best consensus has {found} inliers, need {min_inliers}")
    return estimate_affine(c.subset(best))


def estimate_tps(c: Correspondences, lam: float = DEFAULT_TPS_LAMBDA) -> TPSTransform:
    """Fit lattice control points so that ``tps(source) ~ target``.

    Minimises ``sum w_i |tps(p_i) - q_i|^2 + lam * |C - lattice|^2``. The spline
    is linear in the control points ``C``, so this is a ridge regression.
    Source points are expected in the affine-aligned frame.
    """
    if lam < 0:
        raise InvalidArgumentError("lambda must be nonnegative")
    if len(c) == 0:
        raise IllPosedError("no correspondences")
    w = _weights(c)
    basis = cardinal_basis(c.source.T)
    gram = basis.T @ (basis * w[:, None])
    rhs = basis.T @ (c.target * w[:, None])
    if lam == 0 and np.linalg.matrix_rank(gram) < 9:
        raise IllPosedError("TPS fit is rank deficient with lambda = 0; use lambda > 0")
    gram = gram + lam * np.eye(9)
    rhs = rhs + lam * LATTICE.T
    control = np.linalg.solve(gram, rhs)
    return tps_from_control_points(control.T)


def keypoint_distance(c: Correspondences) -> float:
    """Mean Euclidean distance between paired points."""
    if len(c) == 0:
        raise InvalidArgumentError("keypoint distance needs at least one pair")
    return float(np.linalg.norm(c.source - c.target, axis=1).mean())


# ---------------------------------------------------------------------------
# Keypoint files


def pixels_to_normalized(points: np.ndarray, width: int, height: int) -> np.ndarray:
    """Pixel coordinates (pixel centres at integers) to the [-1, 1] frame."""
    points = np.asarray(points, dtype=np.float64)
    size = np.array([width, height], dtype=np.float64)
    return -1.0 + 2.0 * (points + 0.5) / size


def normalized_to_pixels(points: np.ndarray, width: int, height: int) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    size = np.array([width, height], dtype=np.float64)
    return (points + 1.0) * size / 2.0 - 0.5


def correspondences_to_dict(c: Correspondences) -> dict:
    doc = {"pairs": [[s.tolist(), t.tolist()] for s, t in zip(c.source, c.target)]}
    if c.weights is not None:
        doc["weights"] = c.weights.tolist()
    return doc


def correspondences_from_dict(doc: dict, image_size: tuple[int, int] | None = None) -> Correspondences:
    """Parse a keypoint document.

    A document with ``"units": "pixels"`` is converted to normalised
    coordinates, which requires ``image_size = (width, height)``.
    """
    try:
        pairs = np.asarray(doc["pairs"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidArgumentError(f"malformed keypoint document: {exc}") from exc
    if pairs.ndim != 3 or pairs.shape[1:] != (2, 2):
        raise InvalidArgumentError(f"'pairs' must be a list of [[sx, sy], [tx, ty]], got shape {pairs.shape}")
    src, tgt = pairs[:, 0], pairs[:, 1]
    if doc.get("units", "normalized") == "pixels":
        if image_size is None:
            raise InvalidArgumentError("pixel-unit keypoints need the image size")
        src = pixels_to_normalized(src, *image_size)
        tgt = pixels_to_normalized(tgt, *image_size)
    return Correspondences(src, tgt, doc.get("weights"))


def save_keypoints(path, c: Correspondences) -> None:
    Path(path).write_text(json.dumps(correspondences_to_dict(c)) + "\n")


def load_keypoints(path, image_size: tuple[int, int] | None = None) -> Correspondences:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InvalidArgumentError(f"{path}: not valid JSON ({exc})") from exc
    return correspondences_from_dict(doc, image_size)
