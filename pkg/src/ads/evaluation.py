"""Correlation of the ADS measures with ground truth, against a plain-MSE baseline.

For each ground-truth dimension the correlation table pairs a GT value with
the matching measure:

=========  ======================  ========================
dimension  ground truth            measure
=========  ======================  ========================
d          ``|d_tar - d_src|``     ``d_hat``
sx, sy     ``|log(s_tar/s_src)|``  ``|log s_hat_x|`` etc.
theta      ``|theta difference|``  ``|theta_hat|``
tx, ty     ``|t difference|``      ``|tx|``, ``|ty|``
a          ``|a_tar - a_src|``     ``a_hat``
=========  ======================  ========================

The MSE column correlates the same GT column with the plain image MSE. A
second, signed table pairs the signed GT with the signed measure for the
dimensions where both carry a sign.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import imaging
from .alignment import load_keypoints
from .errors import ADSError, DegenerateRangeError, InvalidArgumentError, UndefinedCorrelationError
from .pipeline import PairInput, PipelineConfig, explain_pair
from .synthscene import DatasetManifest, GroundTruthDifference, ManifestEntry, load_manifest

log = logging.getLogger(__name__)

DIMENSIONS = ("d", "sx", "sy", "theta", "tx", "ty", "a")
SIGNED_DIMENSIONS = ("sx", "sy", "theta", "tx", "ty")
MAX_FAILURE_RATE = 0.10


def pearson(x, y) -> float:
    """Sample Pearson correlation coefficient."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise InvalidArgumentError(f"series must be 1-D and equal length, got {x.shape} and {y.shape}")
    if len(x) < 2:
        raise InvalidArgumentError("need at least two observations")
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = float(xc @ xc)
    syy = float(yc @ yc)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError("correlation is undefined for a constant series")
    r = float(xc @ yc) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def standardize_unit(series) -> np.ndarray:
    """Min-max scale a series onto [0, 1]."""
    x = np.asarray(series, dtype=np.float64)
    lo, hi = x.min(), x.max()
    if hi == lo:
        raise DegenerateRangeError("cannot standardise a constant series")
    return (x - lo) / (hi - lo)


def _safe_log_abs(v: float) -> float:
    return abs(math.log(abs(v))) if v != 0 else math.inf


def magnitude_pair(dim: str, gt: GroundTruthDifference, report: dict) -> tuple[float, float]:
    """(GT, measure) pairing used in the main correlation table."""
    if dim == "d":
        return gt.d, report["d_hat"]
    if dim in ("sx", "sy"):
        return abs(math.log(getattr(gt, dim))), _safe_log_abs(report[dim])
    if dim == "theta":
        return abs(gt.theta), abs(report["theta_deg"])
    if dim in ("tx", "ty"):
        return abs(getattr(gt, dim)), abs(report[dim])
    if dim == "a":
        return gt.a, report["a_hat"]
    raise KeyError(dim)


def signed_pair(dim: str, gt: GroundTruthDifference, report: dict) -> tuple[float, float]:
    if dim in ("sx", "sy"):
        return math.log(getattr(gt, dim)), math.log(abs(report[dim]))
    if dim == "theta":
        return gt.theta, report["theta_deg"]
    return getattr(gt, dim), report[dim]


@dataclass
class PairRecord:
    index: int
    gt: GroundTruthDifference
    report: dict | None = None
    error: str | None = None

    def to_json(self) -> str:
        doc = {"index": self.index, "gt": asdict(self.gt)}
        if self.report is not None:
            doc["report"] = self.report
        else:
            doc["error"] = self.error
        return json.dumps(doc)


@dataclass
class EvaluationRun:
    manifest: str
    records: list[PairRecord]
    config: dict
    seed: int

    @property
    def ok(self) -> list[PairRecord]:
        return [r for r in self.records if r.report is not None]

    @property
    def failures(self) -> list[PairRecord]:
        return [r for r in self.records if r.report is None]

    @property
    def valid(self) -> bool:
        return len(self.failures) <= MAX_FAILURE_RATE * len(self.records)


@dataclass
class CorrelationRow:
    dimension: str
    r_mse: float
    r_ours: float
    n: int


@dataclass
class CorrelationTable:
    rows: list[CorrelationRow] = field(default_factory=list)

    def __getitem__(self, dim: str) -> CorrelationRow:
        for row in self.rows:
            if row.dimension == dim:
                return row
        raise KeyError(dim)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["dimension", "r_mse", "r_ours", "n"])
            for row in self.rows:
                writer.writerow([row.dimension, repr(row.r_mse), repr(row.r_ours), row.n])

    def format(self) -> str:
        labels = [row.dimension for row in self.rows]
        width = max(6, *(len(label) + 1 for label in labels))
        head = "      " + "".join(f"{label:>{width}}" for label in labels)
        mse = "MSE   " + "".join(f"{row.r_mse:>{width}.2f}" for row in self.rows)
        ours = "Ours  " + "".join(f"{row.r_ours:>{width}.2f}" for row in self.rows)
        return "\n".join([head, mse, ours])


def _correlate(x: np.ndarray, y: np.ndarray) -> float:
    try:
        return pearson(x, y)
    except (UndefinedCorrelationError, InvalidArgumentError):
        return math.nan


def correlation_tables(run: EvaluationRun) -> tuple[CorrelationTable, CorrelationTable]:
    """Build the magnitude table (7 rows) and the signed table."""
    ok = run.ok
    mse = np.array([r.report["mse_baseline"] for r in ok])
    tables = []
    for dims, pairing in ((DIMENSIONS, magnitude_pair), (SIGNED_DIMENSIONS, signed_pair)):
        table = CorrelationTable()
        for dim in dims:
            pairs = np.array([pairing(dim, r.gt, r.report) for r in ok]).reshape(-1, 2)
            table.rows.append(
                CorrelationRow(dim, _correlate(pairs[:, 0], mse), _correlate(pairs[:, 0], pairs[:, 1]), len(ok))
            )
        tables.append(table)
    return tables[0], tables[1]


def _std_or_nan(values: np.ndarray) -> np.ndarray:
    try:
        return standardize_unit(values)
    except DegenerateRangeError:
        return np.full(len(values), math.nan)


def write_scatter(run: EvaluationRun, out_dir: Path) -> list[Path]:
    """One CSV per dimension with raw and [0, 1]-standardised columns.

    Appearance also gets a log10 version; rows with a nonpositive value are
    left out of that file.
    """
    ok = run.ok
    mse = np.array([r.report["mse_baseline"] for r in ok])
    written = []
    for dim in DIMENSIONS:
        pairs = np.array([magnitude_pair(dim, r.gt, r.report) for r in ok]).reshape(-1, 2)
        columns = [pairs[:, 0], pairs[:, 1], mse]
        std_cols = [_std_or_nan(c) for c in columns] if len(ok) else [[], [], []]
        path = out_dir / f"scatter_{dim}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["index", "gt", "measure", "mse", "gt_std", "measure_std", "mse_std"])
            for i, rec in enumerate(ok):
                raw = [repr(float(c[i])) for c in columns]
                std = [repr(float(c[i])) for c in std_cols]
                writer.writerow([rec.index, *raw, *std])
        written.append(path)

    path = out_dir / "scatter_a_loglog.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["index", "log10_gt", "log10_measure", "log10_mse"])
        for rec, m in zip(ok, mse):
            values = (rec.gt.a, rec.report["a_hat"], m)
            if min(values) > 0:
                writer.writerow([rec.index, *(repr(math.log10(v)) for v in values)])
    written.append(path)
    return written


def _evaluate_entry(job: tuple[DatasetManifest, ManifestEntry, PipelineConfig]) -> PairRecord:
    manifest, entry, cfg = job
    record = PairRecord(entry.index, entry.gt)
    try:
        source = imaging.read_image(manifest.resolve(entry.source_image))
        target = imaging.read_image(manifest.resolve(entry.target_image))
        mask = imaging.read_mask(manifest.resolve(entry.source_mask))
        size = (source.shape[1], source.shape[0])
        corr = load_keypoints(manifest.resolve(entry.keypoints), size)
        record.report = explain_pair(PairInput(source, target, mask, corr), cfg).to_dict()
    except ADSError as exc:
        record.error = f"{type(exc).__name__}: {exc}"
    return record


def run_pairs(manifest: DatasetManifest, cfg: PipelineConfig, workers: int | None = None) -> list[PairRecord]:
    jobs = [(manifest, entry, cfg) for entry in manifest.entries]
    workers = workers or os.cpu_count() or 1
    if workers <= 1 or len(jobs) <= 1:
        return [_evaluate_entry(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        chunk = max(1, len(jobs) // (4 * workers))
        return list(pool.map(_evaluate_entry, jobs, chunksize=chunk))


@dataclass
class EvaluationResult:
    run: EvaluationRun
    table: CorrelationTable
    signed: CorrelationTable
    files: list[Path]


def evaluate(
    manifest,
    out_dir,
    cfg: PipelineConfig = PipelineConfig(),
    workers: int | None = None,
) -> EvaluationResult:
    """Run the pipeline over every manifest pair and write tables and scatter data.

    Pair failures are recorded with their cause and excluded from the
    correlations; the run is flagged invalid when more than 10% fail.
    """
    if not isinstance(manifest, DatasetManifest):
        manifest = load_manifest(manifest)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    records = run_pairs(manifest, cfg, workers)
    run = EvaluationRun(
        manifest=str(manifest.path),
        records=records,
        config={"tps_lambda": cfg.tps_lambda, "use_ransac": cfg.use_ransac, "ransac": asdict(cfg.ransac)},
        seed=cfg.ransac.rng_seed,
    )
    for rec in run.failures:
        log.warning("pair %d failed: %s", rec.index, rec.error)
    table, signed = correlation_tables(run)

    files = []
    path = out_dir / "reports.jsonl"
    path.write_text("".join(r.to_json() + "\n" for r in records))
    files.append(path)
    path = out_dir / "correlations.csv"
    table.to_csv(path)
    files.append(path)
    path = out_dir / "correlations_signed.csv"
    signed.to_csv(path)
    files.append(path)

    n_fail = len(run.failures)
    text = [table.format(), "", f"pairs: {len(run.ok)} evaluated, {n_fail} failed", "", "signed:", signed.format()]
    if not run.valid:
        text.append(f"\nINVALID RUN: {n_fail}/{len(records)} pairs failed")
    path = out_dir / "correlations.txt"
    path.write_text("\n".join(text) + "\n")
    files.append(path)

    path = out_dir / "run.json"
    summary = {
        "manifest": run.manifest,
        "pairs": len(records),
        "failures": [{"index": r.index, "error": r.error} for r in run.failures],
        "valid": run.valid,
        "config": run.config,
        "seed": run.seed,
    }
    path.write_text(json.dumps(summary, indent=2) + "\n")
    files.append(path)

    files.extend(write_scatter(run, out_dir))
    return EvaluationResult(run, table, signed, files)
