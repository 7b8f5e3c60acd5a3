"""Align -> Deform -> Subtract on a single source/target pair."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import imaging
from .alignment import (
    DEFAULT_TPS_LAMBDA,
    Correspondences,
    RansacConfig,
    estimate_affine,
    estimate_affine_ransac,
    estimate_tps,
    keypoint_distance,
)
from .errors import DegenerateMaskError, InvalidArgumentError
from .geometry import (
    AffineTransform,
    MeasureSet,
    PoseMeasures,
    TPSTransform,
    deformation_magnitude,
    identity_tps,
    pose_measures,
    transforms_to_dict,
)


@dataclass(frozen=True)
class PipelineConfig:
    tps_lambda: float = DEFAULT_TPS_LAMBDA
    use_ransac: bool = False
    ransac: RansacConfig = RansacConfig()
    fill: tuple = (0.0, 0.0, 0.0)
    emit_intermediates: bool = False


@dataclass(eq=False)
class PairInput:
    """A source image with its object mask, a target image, and how to align them.

    Supply ``correspondences`` to estimate the transforms, or ``affine`` /
    ``tps`` to import them. When both are present the imported transforms win
    and the correspondences only feed the residual diagnostics. A missing
    mask means the whole frame.
    """

    source: np.ndarray
    target: np.ndarray
    source_mask: np.ndarray | None = None
    correspondences: Correspondences | None = None
    affine: AffineTransform | None = None
    tps: TPSTransform | None = None

    def __post_init__(self):
        self.source = imaging.as_image(self.source)
        self.target = imaging.as_image(self.target)
        if self.source.shape != self.target.shape:
            raise InvalidArgumentError(
                f"source {self.source.shape} and target {self.target.shape} differ in size"
            )
        if self.source_mask is None:
            self.source_mask = np.ones(self.source.shape[:2], dtype=bool)
        self.source_mask = imaging.as_mask(self.source_mask)
        if self.source_mask.shape != self.source.shape[:2]:
            raise InvalidArgumentError("source mask does not match the source image")
        if self.correspondences is None and self.affine is None and self.tps is None:
            raise InvalidArgumentError("need correspondences or imported transform parameters")

    @property
    def size(self) -> tuple[int, int]:
        return self.source.shape[1], self.source.shape[0]


@dataclass(eq=False)
class DifferenceReport:
    measures: MeasureSet
    baseline_mse: float
    residual_keypoint_distance: float | None
    provenance: str
    affine: AffineTransform
    tps: TPSTransform
    pivot: tuple[float, float]
    intermediates: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        m = self.measures
        doc = {
            "s_hat": m.s_hat,
            "sx": m.sx,
            "sy": m.sy,
            "t_hat": m.t_hat,
            "tx": m.tx,
            "ty": m.ty,
            "theta_deg": m.theta_hat,
            "shear": m.shear,
            "d_hat": m.d_hat,
            "a_hat": m.a_hat,
            "mse_baseline": self.baseline_mse,
        }
        doc = {key: float(value) for key, value in doc.items()}
        doc["residual_kp"] = None if self.residual_keypoint_distance is None else float(self.residual_keypoint_distance)
        doc["provenance"] = self.provenance
        doc["pivot"] = [float(v) for v in self.pivot]
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def transforms_dict(self) -> dict:
        return transforms_to_dict(self.affine, self.tps)


def _fmt(value: float, digits: int) -> str:
    text = f"{value:.{digits}f}"
    return text[1:] if text.startswith("-") and float(text) == 0 else text


def summary_line(report: DifferenceReport) -> str:
    m = report.measures
    return (
        f"Align: ŝ = {_fmt(m.s_hat, 2)}, t̂ = {_fmt(m.t_hat, 2)}, θ̂ = {_fmt(m.theta_hat, 1)}°; "
        f"Deform: d̂ = {_fmt(m.d_hat, 2)}; Subtract: â = {_fmt(m.a_hat, 2)}"
    )


def mask_centroid(mask: np.ndarray) -> tuple[float, float]:
    """Centroid of the mask foreground in normalised coordinates."""
    if not mask.any():
        raise DegenerateMaskError("source mask has no foreground pixels")
    grid = imaging.identity_grid(mask.shape[1], mask.shape[0])
    sel = grid[:, mask.ravel()]
    return float(sel[0].mean()), float(sel[1].mean())


def deformed_grid(affine: AffineTransform, tps: TPSTransform, width: int, height: int) -> np.ndarray:
    """Sampling grid for ``T_tps(T_aff(source))`` in one resampling step."""
    ident = imaging.identity_grid(width, height)
    return affine.inverse().apply_grid(tps.inverse_grid(ident))


def _align_affine(inp: PairInput, cfg: PipelineConfig) -> AffineTransform:
    if inp.affine is not None:
        return inp.affine
    if inp.correspondences is None:
        return AffineTransform()
    if cfg.use_ransac:
        return estimate_affine_ransac(inp.correspondences, cfg.ransac)
    return estimate_affine(inp.correspondences)


def _align_tps(inp: PairInput, affine: AffineTransform, cfg: PipelineConfig) -> TPSTransform:
    if inp.tps is not None:
        return inp.tps
    if inp.correspondences is None:
        return identity_tps()
    aligned = inp.correspondences.with_source(affine.apply(inp.correspondences.source))
    return estimate_tps(aligned, cfg.tps_lambda)


def explain_pair(inp: PairInput, cfg: PipelineConfig = PipelineConfig()) -> DifferenceReport:
    """Quantify pose, shape and appearance differences between two images."""
    width, height = inp.size
    pivot = mask_centroid(inp.source_mask)

    # 1) Align
    affine = _align_affine(inp, cfg)
    pose: PoseMeasures = pose_measures(affine, pivot)

    # 2) Deform, on the affine-aligned frame
    tps = _align_tps(inp, affine, cfg)
    d_hat = deformation_magnitude(tps, width, height)

    # 3) Subtract, under the source mask carried through both warps
    grid = deformed_grid(affine, tps, width, height)
    deformed = imaging.warp(inp.source, grid, cfg.fill)
    deformed_mask = imaging.warp_mask(inp.source_mask, grid)
    if not deformed_mask.any():
        raise DegenerateMaskError("source object was warped entirely out of frame")
    a_hat = imaging.masked_mse(deformed, inp.target, deformed_mask)

    residual = None
    if inp.correspondences is not None and len(inp.correspondences):
        moved = tps.apply(affine.apply(inp.correspondences.source))
        residual = keypoint_distance(inp.correspondences.with_source(moved))

    imported = inp.affine is not None or inp.tps is not None
    report = DifferenceReport(
        measures=MeasureSet(
            s_hat=pose.s_hat,
            t_hat=pose.t_hat,
            theta_hat=pose.theta_hat,
            d_hat=d_hat,
            a_hat=a_hat,
            sx=pose.sx,
            sy=pose.sy,
            tx=pose.tx,
            ty=pose.ty,
            shear=pose.shear,
        ),
        baseline_mse=imaging.mse(inp.source, inp.target),
        residual_keypoint_distance=residual,
        provenance="imported" if imported else "estimated",
        affine=affine,
        tps=tps,
        pivot=pivot,
    )
    if cfg.emit_intermediates:
        aff_grid = affine.inverse().apply_grid(imaging.identity_grid(width, height))
        report.intermediates = {
            "aligned": imaging.warp(inp.source, aff_grid, cfg.fill),
            "aligned_mask": imaging.warp_mask(inp.source_mask, aff_grid),
            "deformed": deformed,
            "deformed_mask": deformed_mask,
            "heatmap": imaging.error_heatmap(deformed, inp.target, deformed_mask),
        }
    return report


def write_intermediates(report: DifferenceReport, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    inter = report.intermediates
    if not inter:
        return []
    written = []
    for name in ("aligned", "deformed"):
        path = out_dir / f"{name}.png"
        imaging.write_image(path, np.clip(inter[name], 0.0, 1.0))
        written.append(path)
    for name in ("aligned_mask", "deformed_mask"):
        path = out_dir / f"{name}.png"
        imaging.write_mask(path, inter[name])
        written.append(path)
    path = out_dir / "heatmap.png"
    imaging.write_image(path, imaging.render_heatmap(inter["heatmap"]))
    written.append(path)
    return written


@dataclass(frozen=True)
class RemovalDiagnostics:
    residual_pose: PoseMeasures
    residual_affine: AffineTransform
    initial_distance: float
    after_align_distance: float
    after_deform_distance: float


def removal_check(inp: PairInput, report: DifferenceReport) -> RemovalDiagnostics:
    """Re-estimate the affine between the aligned source and the target.

    If Align removed the pose difference, the re-estimated transform is the
    identity. Keypoint distances before and after each stage are returned too.
    """
    c = inp.correspondences
    if c is None or len(c) == 0:
        raise InvalidArgumentError("removal check needs correspondences")
    aligned = c.with_source(report.affine.apply(c.source))
    residual = estimate_affine(aligned)
    deformed = c.with_source(report.tps.apply(aligned.source))
    return RemovalDiagnostics(
        residual_pose=pose_measures(residual),
        residual_affine=residual,
        initial_distance=keypoint_distance(c),
        after_align_distance=keypoint_distance(aligned),
        after_deform_distance=keypoint_distance(deformed),
    )
