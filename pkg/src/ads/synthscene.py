"""Synthetic 2D objects with exactly known shape, pose, scale and appearance.

Each object is a closed blob with boundary radius
``r(phi) = R0 * (1 + amplitude * d * cos(harmonic * phi))`` in object
coordinates, mapped to the image by ``Scale(sx, sy)``, then ``Rot(theta)``,
then ``Translate(tx, ty)``. With the y axis pointing down, positive ``theta``
turns the object clockwise on screen. The fill colour interpolates two solid
colours and the background is a solid gray picked by ``background_seed``.
"""

from __future__ import annotations

import configparser
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .alignment import Correspondences, correspondences_to_dict
from .errors import InvalidArgumentError, InvalidDescriptorError, ManifestError
from .imaging import identity_grid, write_image, write_mask


@dataclass(frozen=True)
class SceneConfig:
    radius: float = 0.5
    harmonic: int = 3
    amplitude: float = 0.02
    n_keypoints: int = 12
    supersample: int = 4
    color_a0: tuple = (0.85, 0.25, 0.15)
    color_a1: tuple = (0.15, 0.45, 0.90)
    background_range: tuple = (0.05, 0.95)
    d_range: tuple = (-4.0, 4.0)
    scale_range: tuple = (0.7, 1.3)
    theta_range: tuple = (-18.0, 18.0)
    translation_range: tuple = (-0.4, 0.4)
    a_range: tuple = (0.0, 1.0)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = " ".join(repr(float(v)) for v in value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SceneConfig":
        parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
        parser.read_string("[scene]\n" + text)
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in parser["scene"].items():
            if key not in known:
                raise InvalidArgumentError(f"unknown scene config key {key!r}")
            default = getattr(cls, key)
            try:
                if isinstance(default, tuple):
                    kwargs[key] = tuple(float(v) for v in raw.split())
                elif isinstance(default, int):
                    kwargs[key] = int(raw)
                else:
                    kwargs[key] = float(raw)
            except ValueError as exc:
                raise InvalidArgumentError(f"bad value for {key!r}: {raw!r}") from exc
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "SceneConfig":
        return cls.from_text(Path(path).read_text())


@dataclass(frozen=True)
class SceneDescriptor:
    d: float = 0.0
    sx: float = 1.0
    sy: float = 1.0
    theta: float = 0.0  # degrees
    tx: float = 0.0
    ty: float = 0.0
    a: float = 0.0
    background_seed: int = 0

    def replace(self, **changes) -> "SceneDescriptor":
        return SceneDescriptor(**{**asdict(self), **changes})


@dataclass(frozen=True)
class GroundTruthDifference:
    d: float
    sx: float
    sy: float
    theta: float
    tx: float
    ty: float
    a: float


def gt_difference(src: SceneDescriptor, tar: SceneDescriptor) -> GroundTruthDifference:
    return GroundTruthDifference(
        d=abs(tar.d - src.d),
        sx=tar.sx / src.sx,
        sy=tar.sy / src.sy,
        theta=tar.theta - src.theta,
        tx=tar.tx - src.tx,
        ty=tar.ty - src.ty,
        a=abs(tar.a - src.a),
    )


def _check_descriptor(desc: SceneDescriptor, cfg: SceneConfig) -> None:
    if not (desc.sx > 0 and desc.sy > 0):
        raise InvalidDescriptorError(f"scales must be positive, got sx={desc.sx}, sy={desc.sy}")
    if not 0.0 <= desc.a <= 1.0:
        raise InvalidDescriptorError(f"appearance ratio must lie in [0, 1], got {desc.a}")
    if abs(cfg.amplitude * desc.d) >= 1.0:
        raise InvalidDescriptorError(f"shape coefficient d={desc.d} makes the boundary radius nonpositive")


def fill_color(a: float, cfg: SceneConfig = SceneConfig()) -> np.ndarray:
    return a * np.asarray(cfg.color_a1) + (1.0 - a) * np.asarray(cfg.color_a0)


def background_color(seed: int, cfg: SceneConfig = SceneConfig()) -> np.ndarray:
    lo, hi = cfg.background_range
    gray = np.random.default_rng(seed).uniform(lo, hi)
    return np.full(3, gray)


def _pose(desc: SceneDescriptor) -> tuple[np.ndarray, np.ndarray]:
    th = math.radians(desc.theta)
    rot = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    return rot @ np.diag([desc.sx, desc.sy]), np.array([desc.tx, desc.ty])


def boundary_radius(phi: np.ndarray, d: float, cfg: SceneConfig = SceneConfig()) -> np.ndarray:
    return cfg.radius * (1.0 + cfg.amplitude * d * np.cos(cfg.harmonic * phi))


def keypoints(desc: SceneDescriptor, cfg: SceneConfig = SceneConfig()) -> np.ndarray:
    """``(K, 2)`` boundary points at evenly spaced boundary angles."""
    phi = 2.0 * np.pi * np.arange(cfg.n_keypoints) / cfg.n_keypoints
    r = boundary_radius(phi, desc.d, cfg)
    obj = np.stack([r * np.cos(phi), r * np.sin(phi)], axis=1)
    lin, trans = _pose(desc)
    return obj @ lin.T + trans


def coverage(desc: SceneDescriptor, width: int, height: int, cfg: SceneConfig = SceneConfig()) -> np.ndarray:
    """Fraction of each pixel covered by the blob, from ``supersample**2`` point samples."""
    _check_descriptor(desc, cfg)
    ss = max(1, int(cfg.supersample))
    offsets = (np.arange(ss) + 0.5) / ss - 0.5
    ox, oy = np.meshgrid(offsets * 2.0 / width, offsets * 2.0 / height)
    centres = identity_grid(width, height)
    pts = centres[:, :, None] + np.stack([ox.ravel(), oy.ravel()])[:, None, :]

    lin, trans = _pose(desc)
    obj = np.einsum("ij,jnk->ink", np.linalg.inv(lin), pts - trans[:, None, None])
    rho = np.hypot(obj[0], obj[1])
    phi = np.arctan2(obj[1], obj[0])
    inside = rho <= boundary_radius(phi, desc.d, cfg)
    return inside.mean(axis=1).reshape(height, width)


def render(
    desc: SceneDescriptor, width: int, height: int, cfg: SceneConfig = SceneConfig()
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Render ``(image, mask, keypoints)`` for one object.

    The image blends fill and background by pixel coverage; the mask marks
    pixels at least half covered.
    """
    cov = coverage(desc, width, height, cfg)
    fg = fill_color(desc.a, cfg)
    bg = background_color(desc.background_seed, cfg)
    image = cov[:, :, None] * fg + (1.0 - cov[:, :, None]) * bg
    return np.clip(image, 0.0, 1.0), cov >= 0.5, keypoints(desc, cfg)


def sample_descriptor(rng: np.random.Generator, cfg: SceneConfig = SceneConfig()) -> SceneDescriptor:
    s = rng.uniform(*cfg.scale_range)
    return SceneDescriptor(
        d=rng.uniform(*cfg.d_range),
        sx=s,
        sy=s,
        theta=rng.uniform(*cfg.theta_range),
        tx=rng.uniform(*cfg.translation_range),
        ty=rng.uniform(*cfg.translation_range),
        a=rng.uniform(*cfg.a_range),
        background_seed=int(rng.integers(0, 2**31 - 1)),
    )


def image_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for image ``index``; independent of generation order."""
    return np.random.default_rng([seed, index])


def oracle_correspondences(src: SceneDescriptor, tar: SceneDescriptor, cfg: SceneConfig = SceneConfig()) -> Correspondences:
    return Correspondences(keypoints(src, cfg), keypoints(tar, cfg))


# ---------------------------------------------------------------------------
# Datasets


@dataclass(frozen=True)
class ManifestEntry:
    index: int
    source: SceneDescriptor
    target: SceneDescriptor
    source_image: str
    source_mask: str
    target_image: str
    keypoints: str
    gt: GroundTruthDifference
    n_keypoints: int = 12

    def to_json(self) -> str:
        doc = {
            "index": self.index,
            "source": asdict(self.source),
            "target": asdict(self.target),
            "source_image": self.source_image,
            "source_mask": self.source_mask,
            "target_image": self.target_image,
            "keypoints": self.keypoints,
            "n_keypoints": self.n_keypoints,
            "gt": asdict(self.gt),
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "ManifestEntry":
        doc = json.loads(text)
        return cls(
            index=int(doc["index"]),
            source=SceneDescriptor(**doc["source"]),
            target=SceneDescriptor(**doc["target"]),
            source_image=doc["source_image"],
            source_mask=doc["source_mask"],
            target_image=doc["target_image"],
            keypoints=doc["keypoints"],
            gt=GroundTruthDifference(**doc["gt"]),
            n_keypoints=int(doc.get("n_keypoints", 12)),
        )


@dataclass
class DatasetManifest:
    path: Path
    entries: list[ManifestEntry] = field(default_factory=list)

    @property
    def root(self) -> Path:
        return self.path.parent

    def resolve(self, relative: str) -> Path:
        return self.root / relative

    def __len__(self) -> int:
        return len(self.entries)


MANIFEST_NAME = "manifest.jsonl"
CONFIG_NAME = "scene_config.txt"


def write_scene(out_dir: Path, index: int, desc: SceneDescriptor, width: int, height: int, cfg: SceneConfig) -> tuple[str, str]:
    image, mask, _ = render(desc, width, height, cfg)
    img_rel = f"images/img_{index:05d}.png"
    mask_rel = f"masks/mask_{index:05d}.png"
    write_image(out_dir / img_rel, image)
    write_mask(out_dir / mask_rel, mask)
    return img_rel, mask_rel


def sample_pairs(
    n_images: int, pair_count: int, seed: int, cfg: SceneConfig = SceneConfig()
) -> list[tuple[int, int, SceneDescriptor, SceneDescriptor]]:
    """Draw ``n_images`` descriptors and pair them by a random perfect matching.

    Returns ``(source_id, target_id, source, target)`` tuples; no image is
    used twice.
    """
    if n_images < 2 or pair_count < 1:
        raise InvalidArgumentError("need at least 2 images and 1 pair")
    if 2 * pair_count > n_images:
        raise InvalidArgumentError(f"pair_count={pair_count} exceeds n_images/2 = {n_images / 2:g}")
    descriptors = [sample_descriptor(image_rng(seed, i), cfg) for i in range(n_images)]
    order = np.random.default_rng([seed, n_images, pair_count]).permutation(n_images)
    pairs = []
    for k in range(pair_count):
        si, ti = int(order[2 * k]), int(order[2 * k + 1])
        pairs.append((si, ti, descriptors[si], descriptors[ti]))
    return pairs


def write_dataset(
    out_dir,
    pairs,
    width: int,
    height: int,
    cfg: SceneConfig = SceneConfig(),
) -> DatasetManifest:
    """Render descriptor pairs and write images, masks, keypoints and the manifest.

    ``pairs`` holds ``(source_id, target_id, source, target)`` tuples or plain
    ``(source, target)`` tuples; the latter get ids ``2k`` and ``2k + 1``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pairs = [p if len(p) == 4 else (2 * k, 2 * k + 1, *p) for k, p in enumerate(pairs)]

    scenes = {}
    for si, ti, src, tar in pairs:
        scenes.setdefault(si, src)
        scenes.setdefault(ti, tar)
    rendered = {i: write_scene(out_dir, i, scenes[i], width, height, cfg) for i in sorted(scenes)}

    entries = []
    for k, (si, ti, src, tar) in enumerate(pairs):
        kp_rel = f"keypoints/pair_{k:05d}.json"
        kp_path = out_dir / kp_rel
        kp_path.parent.mkdir(parents=True, exist_ok=True)
        kp_path.write_text(json.dumps(correspondences_to_dict(oracle_correspondences(src, tar, cfg))) + "\n")
        entries.append(
            ManifestEntry(
                index=k,
                source=src,
                target=tar,
                source_image=rendered[si][0],
                source_mask=rendered[si][1],
                target_image=rendered[ti][0],
                keypoints=kp_rel,
                gt=gt_difference(src, tar),
                n_keypoints=cfg.n_keypoints,
            )
        )

    manifest_path = out_dir / MANIFEST_NAME
    manifest_path.write_text("".join(e.to_json() + "\n" for e in entries))
    (out_dir / CONFIG_NAME).write_text(cfg.to_text())
    return DatasetManifest(manifest_path, entries)


def sample_dataset(
    n_images: int,
    pair_count: int,
    seed: int,
    width: int,
    height: int,
    out_dir,
    cfg: SceneConfig = SceneConfig(),
) -> DatasetManifest:
    """Sample, render and pair a synthetic dataset under ``out_dir``.

    Output is byte-identical for identical arguments.
    """
    pairs = sample_pairs(n_images, pair_count, seed, cfg)
    return write_dataset(out_dir, pairs, width, height, cfg)


def load_manifest(path, check_files: bool = True) -> DatasetManifest:
    """Parse a JSON-lines manifest; errors name the offending line."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    manifest = DatasetManifest(path)
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            entry = ManifestEntry.from_json(line)
        except (ValueError, KeyError, TypeError) as exc:
            raise ManifestError(f"{path}:{lineno}: malformed manifest line ({exc})", line=lineno) from exc
        if check_files:
            for rel in (entry.source_image, entry.source_mask, entry.target_image, entry.keypoints):
                if not manifest.resolve(rel).is_file():
                    raise ManifestError(f"{path}:{lineno}: missing file {rel}", line=lineno)
        manifest.entries.append(entry)
    if not manifest.entries:
        raise ManifestError(f"{path}: manifest is empty")
    return manifest
