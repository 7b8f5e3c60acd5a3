"""Affine and thin-plate-spline transforms and the measures derived from them.

Both transform families map *source* coordinates to *target* coordinates in
the normalised [-1, 1] frame. Warping an image therefore samples through the
inverse mapping (see :func:`inverse_affine_grid` and
:meth:`TPSTransform.inverse_grid`).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateControlPointsError, InvalidArgumentError, SingularTransformError
from .imaging import identity_grid

GRID_DIAGONAL = 2.0 * math.sqrt(2.0)
_DET_TOL = 1e-12


@dataclass(frozen=True)
class AffineTransform:
    """``x -> [[r11, r12], [r21, r22]] @ x + [tx, ty]``."""

    r11: float = 1.0
    r12: float = 0.0
    r21: float = 0.0
    r22: float = 1.0
    tx: float = 0.0
    ty: float = 0.0

    def __post_init__(self):
        values = self.params
        if not all(math.isfinite(v) for v in values):
            raise SingularTransformError(f"non-finite affine parameters {values}")
        if abs(self.det) < _DET_TOL:
            raise SingularTransformError(f"affine linear part is singular (det={self.det:g})")

    @classmethod
    def from_params(cls, params) -> "AffineTransform":
        values = [float(v) for v in params]
        if len(values) != 6:
            raise InvalidArgumentError(f"expected 6 affine parameters, got {len(values)}")
        return cls(*values)

    @classmethod
    def from_matrix(cls, matrix, translation=(0.0, 0.0)) -> "AffineTransform":
        m = np.asarray(matrix, dtype=np.float64)
        return cls(m[0, 0], m[0, 1], m[1, 0], m[1, 1], float(translation[0]), float(translation[1]))

    @property
    def params(self) -> list[float]:
        return [self.r11, self.r12, self.r21, self.r22, self.tx, self.ty]

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.r11, self.r12], [self.r21, self.r22]])

    @property
    def translation(self) -> np.ndarray:
        return np.array([self.tx, self.ty])

    @property
    def det(self) -> float:
        return self.r11 * self.r22 - self.r12 * self.r21

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map ``(N, 2)`` points."""
        points = np.asarray(points, dtype=np.float64)
        return points @ self.matrix.T + self.translation

    def apply_grid(self, grid: np.ndarray) -> np.ndarray:
        """Map a ``(2, N)`` coordinate grid."""
        return self.matrix @ np.asarray(grid, dtype=np.float64) + self.translation[:, None]

    def inverse(self) -> "AffineTransform":
        inv = np.linalg.inv(self.matrix)
        return AffineTransform.from_matrix(inv, -inv @ self.translation)


@dataclass(frozen=True)
class AffineDecomposition:
    """Rotation (degrees), shear, anisotropic scale and translation."""

    theta: float = 0.0
    shear: float = 0.0
    sx: float = 1.0
    sy: float = 1.0
    tx: float = 0.0
    ty: float = 0.0


@dataclass(frozen=True)
class PoseMeasures:
    s_hat: float
    t_hat: float
    theta_hat: float
    sx: float
    sy: float
    tx: float
    ty: float
    shear: float


@dataclass(frozen=True)
class MeasureSet:
    """The full set of disentangled difference measures for one pair."""

    s_hat: float
    t_hat: float
    theta_hat: float
    d_hat: float
    a_hat: float
    sx: float
    sy: float
    tx: float
    ty: float
    shear: float


def _wrap_degrees(angle: float) -> float:
    if angle <= -180.0:
        angle += 360.0
    elif angle > 180.0:
        angle -= 360.0
    return angle


def decompose_affine(t: AffineTransform) -> AffineDecomposition:
    """Factor the linear part as ``Rot(theta) @ Shear(b) @ Scale(sx, sy)``.

    ``sx`` is kept positive; a reflection shows up as ``sy < 0``.
    """
    if abs(t.det) < _DET_TOL:
        raise SingularTransformError("cannot decompose a singular affine transform")
    theta = math.atan2(t.r21, t.r11)
    c, s = math.cos(theta), math.sin(theta)
    sx = math.hypot(t.r11, t.r21)
    sy = -s * t.r12 + c * t.r22
    shear = (c * t.r12 + s * t.r22) / sy
    return AffineDecomposition(
        theta=_wrap_degrees(math.degrees(theta)), shear=shear, sx=sx, sy=sy, tx=t.tx, ty=t.ty
    )


def recompose_affine(d: AffineDecomposition) -> AffineTransform:
    if not d.sx > 0:
        raise InvalidArgumentError(f"sx must be positive, got {d.sx}")
    if d.sy == 0:
        raise InvalidArgumentError("sy must be nonzero")
    theta = math.radians(d.theta)
    c, s = math.cos(theta), math.sin(theta)
    rot = np.array([[c, -s], [s, c]])
    shear = np.array([[1.0, d.shear], [0.0, 1.0]])
    scale = np.diag([d.sx, d.sy])
    return AffineTransform.from_matrix(rot @ shear @ scale, (d.tx, d.ty))


def pose_measures(t: AffineTransform, pivot=(0.0, 0.0)) -> PoseMeasures:
    """Scale, translation and rotation measures of an aligning affine.

    The translation is the displacement of ``pivot`` under ``t``; with the
    default pivot at the grid origin this is the raw translation column.
    ``t_hat`` is that displacement's length divided by the full grid extent
    (2), so it reads as a proportion of the image.
    """
    d = decompose_affine(t)
    pivot = np.asarray(pivot, dtype=np.float64)
    moved = t.matrix @ pivot + t.translation - pivot
    tx, ty = float(moved[0]), float(moved[1])
    return PoseMeasures(
        s_hat=d.sx * d.sy,
        t_hat=math.hypot(tx, ty) / 2.0,
        theta_hat=d.theta,
        sx=d.sx,
        sy=d.sy,
        tx=tx,
        ty=ty,
        shear=d.shear,
    )


def affine_grid(t: AffineTransform, width: int, height: int) -> np.ndarray:
    """Forward-map the identity grid through ``t``."""
    return t.apply_grid(identity_grid(width, height))


def inverse_affine_grid(t: AffineTransform, width: int, height: int) -> np.ndarray:
    """Sampling grid that warps a source image into the target frame of ``t``."""
    return t.inverse().apply_grid(identity_grid(width, height))


# ---------------------------------------------------------------------------
# Thin-plate splines on the canonical 3x3 lattice.

# Column j is lattice point (x, y) = (j % 3 - 1, j // 3 - 1).
LATTICE = np.array(
    [[float(j % 3 - 1) for j in range(9)], [float(j // 3 - 1) for j in range(9)]]
)


def _kernel(r2: np.ndarray) -> np.ndarray:
    """U(r) = r^2 log r^2, written in terms of r^2; U(0) = 0."""
    r2 = np.asarray(r2, dtype=np.float64)
    safe = np.where(r2 > 0.0, r2, 1.0)
    return np.where(r2 > 0.0, r2 * np.log(safe), 0.0)


def _sq_dist_to_lattice(points: np.ndarray) -> np.ndarray:
    """``(9, N)`` squared distances from lattice points to ``(2, N)`` points."""
    diff = points[:, None, :] - LATTICE[:, :, None]
    return np.einsum("ijk,ijk->jk", diff, diff)


def _system_matrix() -> np.ndarray:
    k = _kernel(_sq_dist_to_lattice(LATTICE))
    p = np.vstack([np.ones(9), LATTICE]).T
    top = np.hstack([k, p])
    bottom = np.hstack([p.T, np.zeros((3, 3))])
    return np.vstack([top, bottom])


_SYSTEM_INV = np.linalg.inv(_system_matrix())
_IDENTITY_AFFINE_PART = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])


def cardinal_basis(points: np.ndarray) -> np.ndarray:
    """``(N, 9)`` matrix ``B`` with ``tps(points) = B @ control_points.T``.

    The interpolating spline is linear in the control point coordinates, so
    its value at any point is a fixed combination of them.
    """
    points = np.asarray(points, dtype=np.float64)
    feats = np.vstack([_kernel(_sq_dist_to_lattice(points)), np.ones(points.shape[1]), points])
    return feats.T @ _SYSTEM_INV[:, :9]


@dataclass(frozen=True, eq=False)
class TPSTransform:
    """Interpolating TPS sending each canonical lattice point to its control point.

    ``kernel_weights`` is ``(2, 9)`` and ``affine_part`` is ``(2, 3)`` holding
    ``[constant, x, y]`` coefficients per output axis.
    """

    control_points: np.ndarray
    kernel_weights: np.ndarray
    affine_part: np.ndarray

    def apply_grid(self, grid: np.ndarray) -> np.ndarray:
        grid = np.asarray(grid, dtype=np.float64)
        kern = _kernel(_sq_dist_to_lattice(grid))
        lin = self.affine_part[:, :1] + self.affine_part[:, 1:] @ grid
        return lin + self.kernel_weights @ kern

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.apply_grid(np.asarray(points, dtype=np.float64).T).T

    def jacobian(self, grid: np.ndarray) -> np.ndarray:
        """``(N, 2, 2)`` Jacobians at the columns of ``grid``."""
        grid = np.asarray(grid, dtype=np.float64)
        diff = grid[:, None, :] - LATTICE[:, :, None]
        r2 = np.einsum("ijk,ijk->jk", diff, diff)
        safe = np.where(r2 > 0.0, r2, 1.0)
        scale = np.where(r2 > 0.0, 2.0 * (np.log(safe) + 1.0), 0.0)
        grad = diff * scale[None]  # (2, 9, N): dU_j/dx_i
        jac = np.einsum("oj,ijn->noi", self.kernel_weights, grad)
        return jac + self.affine_part[:, 1:][None]

    def inverse_grid(self, grid: np.ndarray, max_iter: int = 30, tol: float = 1e-12) -> np.ndarray:
        """Solve ``tps(x) = g`` for every column ``g`` of ``grid`` by Newton's method.

        Columns that fail to converge come back as NaN, which warping treats as
        out of frame.
        """
        grid = np.asarray(grid, dtype=np.float64)
        x = 2.0 * grid - self.apply_grid(grid)
        for _ in range(max_iter):
            resid = self.apply_grid(x) - grid
            if np.max(np.abs(resid)) < tol:
                break
            jac = self.jacobian(x)
            det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
            ok = np.abs(det) > 1e-12
            safe_det = np.where(ok, det, 1.0)
            dx = (jac[:, 1, 1] * resid[0] - jac[:, 0, 1] * resid[1]) / safe_det
            dy = (-jac[:, 1, 0] * resid[0] + jac[:, 0, 0] * resid[1]) / safe_det
            x = x - np.where(ok, np.vstack([dx, dy]), 0.0)
        resid = np.abs(self.apply_grid(x) - grid).max(axis=0)
        return np.where(resid < 1e-6, x, np.nan)

    @property
    def side_condition_residual(self) -> float:
        """Largest violation of sum(w) = sum(w x) = sum(w y) = 0 over both axes."""
        p = np.vstack([np.ones(9), LATTICE])
        return float(np.abs(self.kernel_weights @ p.T).max())


def tps_from_control_points(control_points) -> TPSTransform:
    cp = np.array(control_points, dtype=np.float64)
    if cp.shape != (2, 9):
        raise DegenerateControlPointsError(f"control points must be 2x9, got {cp.shape}")
    if not np.isfinite(cp).all():
        raise DegenerateControlPointsError("control points must be finite")
    # Solve for the displacement from the lattice so the identity is exact.
    coef = _SYSTEM_INV @ np.vstack([(cp - LATTICE).T, np.zeros((3, 2))])
    return TPSTransform(
        control_points=cp,
        kernel_weights=coef[:9].T.copy(),
        affine_part=coef[9:].T + _IDENTITY_AFFINE_PART,
    )


def identity_tps() -> TPSTransform:
    return tps_from_control_points(LATTICE)


def tps_grid(t: TPSTransform, width: int, height: int) -> np.ndarray:
    return t.apply_grid(identity_grid(width, height))


def deformation_magnitude(t: TPSTransform, width: int, height: int) -> float:
    """Mean grid displacement of ``t`` divided by the grid diagonal."""
    grid = identity_grid(width, height)
    moved = t.apply_grid(grid)
    l21 = float(np.sqrt(((moved - grid) ** 2).sum(axis=0)).sum())
    return l21 / (GRID_DIAGONAL * grid.shape[1])


# ---------------------------------------------------------------------------
# Serialisation


def transforms_to_dict(affine: AffineTransform | None, tps: TPSTransform | None) -> dict:
    doc = {}
    if affine is not None:
        doc["affine"] = [float(v) for v in affine.params]
    if tps is not None:
        doc["tps_control_points"] = tps.control_points.tolist()
    return doc


def transforms_from_dict(doc: dict) -> tuple[AffineTransform | None, TPSTransform | None]:
    if not isinstance(doc, dict):
        raise InvalidArgumentError("transform document must be a JSON object")
    affine = tps = None
    if "affine" in doc:
        affine = AffineTransform.from_params(doc["affine"])
    if "tps_control_points" in doc:
        cp = np.asarray(doc["tps_control_points"], dtype=np.float64)
        if cp.shape != (2, 9):
            raise InvalidArgumentError(f"tps_control_points must be 2x9, got {cp.shape}")
        tps = tps_from_control_points(cp)
    if affine is None and tps is None:
        raise InvalidArgumentError("transform document has neither 'affine' nor 'tps_control_points'")
    return affine, tps


def save_transforms(path, affine: AffineTransform | None, tps: TPSTransform | None) -> None:
    Path(path).write_text(json.dumps(transforms_to_dict(affine, tps)) + "\n")


def load_transforms(path) -> tuple[AffineTransform | None, TPSTransform | None]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InvalidArgumentError(f"{path}: not valid JSON ({exc})") from exc
    return transforms_from_dict(doc)
