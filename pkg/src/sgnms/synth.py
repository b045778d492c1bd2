"""Synthetic occluded-scene generator.

Scenes are built from rectangular objects placed on a blank image: a configurable
fraction of objects come in overlapping pairs whose IoU is sampled from a target
range and realized exactly by construction, the rest are placed disjointly. Each
object then emits a handful of jittered detections with quality-dependent scores,
identity-based embeddings, and appearance descriptors, so the output exercises
every downstream stage (suppression, evaluation, embedding training) with known
ground truth.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .geometry import (
    Box,
    NoiseCoefficients,
    apply_noise,
    iou,
    max_mutual_iou,
    occlusion_level,
)
from .suppression import Detection
from .evaluation import GroundTruth, Scene
from . import kitti

__all__ = [
    "ConfigError",
    "PlacementFailure",
    "SceneStats",
    "SynthConfig",
    "generate_synthetic",
    "load_corpus",
    "parse_synth_config",
    "stats_csv",
    "write_corpus",
]

# object extents as fractions of the image, sampled uniformly
_WIDTH_FRACTION = (0.06, 0.18)
_HEIGHT_FRACTION = (0.15, 0.45)

CORPUS_META = "corpus.json"


class PlacementFailure(RuntimeError):
    """Raised when object placement cannot satisfy the layout constraints in budget."""


class ConfigError(ValueError):
    """Raised for unknown keys or unparseable values in a generator config."""


@dataclass(frozen=True)
class SynthConfig:
    """Generator knobs; ranges are inclusive (low, high) pairs.

    embedding_gap spaces the identity embeddings written for detections: object j
    gets embedding j * embedding_gap (plus optional noise), so the gap between
    neighbouring identities is controlled independently of any threshold function
    the embeddings will be gated with.
    """

    scene_count: int = 100
    objects_per_scene: tuple[int, int] = (2, 6)
    occluded_pair_fraction: float = 0.5
    pair_iou: tuple[float, float] = (0.55, 0.8)
    detections_per_object: tuple[int, int] = (1, 4)
    jitter_std: float = 0.05
    jitter_clip: float = 3.0
    score_base: float = 0.95
    score_iou_weight: float = 1.0
    score_noise_std: float = 0.02
    embedding_gap: float = 2.0
    embedding_noise_std: float = 0.0
    descriptor_noise_std: float = 0.05
    appearance_dim: int = 8
    image_width: float = 1242.0
    image_height: float = 375.0
    class_name: str = "Car"
    placement_budget: int = 1000
    seed: int = 0

    def __post_init__(self) -> None:
        def check(cond: bool, msg: str) -> None:
            if not cond:
                raise ConfigError(msg)

        check(self.scene_count >= 0, f"scene_count must be >= 0, got {self.scene_count}")
        lo, hi = self.objects_per_scene
        check(0 <= lo <= hi, f"bad objects_per_scene range ({lo}, {hi})")
        check(
            0.0 <= self.occluded_pair_fraction <= 1.0,
            f"occluded_pair_fraction must be in [0, 1], got {self.occluded_pair_fraction}",
        )
        plo, phi = self.pair_iou
        check(0.0 < plo <= phi < 1.0, f"bad pair_iou range ({plo}, {phi})")
        dlo, dhi = self.detections_per_object
        check(0 <= dlo <= dhi, f"bad detections_per_object range ({dlo}, {dhi})")
        check(self.jitter_std >= 0.0, f"jitter_std must be >= 0, got {self.jitter_std}")
        check(self.jitter_clip > 0.0, f"jitter_clip must be > 0, got {self.jitter_clip}")
        check(
            self.score_noise_std >= 0.0,
            f"score_noise_std must be >= 0, got {self.score_noise_std}",
        )
        check(self.embedding_gap > 0.0, f"embedding_gap must be > 0, got {self.embedding_gap}")
        check(
            self.embedding_noise_std >= 0.0,
            f"embedding_noise_std must be >= 0, got {self.embedding_noise_std}",
        )
        check(
            self.descriptor_noise_std >= 0.0,
            f"descriptor_noise_std must be >= 0, got {self.descriptor_noise_std}",
        )
        check(self.appearance_dim >= 1, f"appearance_dim must be >= 1, got {self.appearance_dim}")
        check(
            self.image_width > 0 and self.image_height > 0,
            f"image size must be positive, got {self.image_width} x {self.image_height}",
        )
        check(
            self.placement_budget >= 1,
            f"placement_budget must be >= 1, got {self.placement_budget}",
        )

    @property
    def descriptor_dim(self) -> int:
        return self.appearance_dim + 4


def _coerce_int_pair(raw: str) -> tuple[int, int]:
    parts = [p.strip() for p in raw.split(",")]
    if len(parts) != 2:
        raise ValueError(f"expected two comma-separated values, got {raw!r}")
    return int(parts[0]), int(parts[1])


def _coerce_float_pair(raw: str) -> tuple[float, float]:
    parts = [p.strip() for p in raw.split(",")]
    if len(parts) != 2:
        raise ValueError(f"expected two comma-separated values, got {raw!r}")
    return float(parts[0]), float(parts[1])


_COERCERS = {
    "scene_count": int,
    "objects_per_scene": _coerce_int_pair,
    "occluded_pair_fraction": float,
    "pair_iou": _coerce_float_pair,
    "detections_per_object": _coerce_int_pair,
    "jitter_std": float,
    "jitter_clip": float,
    "score_base": float,
    "score_iou_weight": float,
    "score_noise_std": float,
    "embedding_gap": float,
    "embedding_noise_std": float,
    "descriptor_noise_std": float,
    "appearance_dim": int,
    "image_width": float,
    "image_height": float,
    "class_name": str,
    "placement_budget": int,
    "seed": int,
}

assert set(_COERCERS) == {f.name for f in dataclasses.fields(SynthConfig)}


def parse_synth_config(text: str) -> SynthConfig:
    """Parse `key = value` lines; `#` starts a comment, unknown keys are errors."""
    overrides = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {line_no}: expected key = value, got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in _COERCERS:
            raise ConfigError(f"line {line_no}: unknown key {key!r}")
        try:
            overrides[key] = _COERCERS[key](raw)
        except ValueError as exc:
            raise ConfigError(f"line {line_no}: bad value for {key}: {exc}") from None
    return SynthConfig(**overrides)


@dataclass
class SceneStats:
    """Per-ground-truth occlusion summary of one generated scene."""

    scene_id: str
    mmiou: list[float]
    levels: list[str]


def stats_csv(stats: Sequence[SceneStats]) -> str:
    rows = ["scene_id,gt_index,mmiou,level"]
    for s in stats:
        for j, (v, level) in enumerate(zip(s.mmiou, s.levels)):
            rows.append(f"{s.scene_id},{j},{v:.6f},{level}")
    return "\n".join(rows) + "\n"


def _shifted_partner(box: Box, target_iou: float, axis: int, sign: int) -> Box:
    """Box of identical size whose IoU with `box` equals the target exactly.

    For same-size boxes shifted by d along one axis of extent L the IoU is
    (L - d) / (L + d), so d = L * (1 - u) / (1 + u) realizes IoU u.
    """
    extent = box.width() if axis == 0 else box.height()
    d = sign * extent * (1.0 - target_iou) / (1.0 + target_iou)
    if axis == 0:
        return Box(box.x1 + d, box.y1, box.x2 + d, box.y2)
    return Box(box.x1, box.y1 + d, box.x2, box.y2 + d)


def _in_bounds(box: Box, width: float, height: float) -> bool:
    return box.x1 >= 0 and box.y1 >= 0 and box.x2 <= width and box.y2 <= height


def _disjoint_from(box: Box, placed: Sequence[Box]) -> bool:
    return all(iou(box, other) == 0.0 for other in placed)


def _place_objects(
    rng: np.random.Generator, config: SynthConfig, n_objects: int
) -> list[Box]:
    """Place paired then single objects, rejecting layouts that violate the constraints."""
    width, height = config.image_width, config.image_height
    n_pairs = int(config.occluded_pair_fraction * n_objects / 2)
    boxes: list[Box] = []

    def sample_box() -> Box:
        w = rng.uniform(*_WIDTH_FRACTION) * width
        h = rng.uniform(*_HEIGHT_FRACTION) * height
        x1 = rng.uniform(0.0, width - w)
        y1 = rng.uniform(0.0, height - h)
        return Box(x1, y1, x1 + w, y1 + h)

    for _ in range(n_pairs):
        for _ in range(config.placement_budget):
            a = sample_box()
            u = rng.uniform(*config.pair_iou)
            axis = int(rng.integers(2))
            sign = 1 if rng.integers(2) else -1
            b = _shifted_partner(a, u, axis, sign)
            if not _in_bounds(b, width, height):
                continue
            if _disjoint_from(a, boxes) and _disjoint_from(b, boxes):
                boxes.append(a)
                boxes.append(b)
                break
        else:
            raise PlacementFailure(
                f"could not place occluded pair {len(boxes) // 2 + 1} "
                f"within {config.placement_budget} attempts"
            )
    for _ in range(n_objects - 2 * n_pairs):
        for _ in range(config.placement_budget):
            a = sample_box()
            if _disjoint_from(a, boxes):
                boxes.append(a)
                break
        else:
            raise PlacementFailure(
                f"could not place object {len(boxes) + 1} "
                f"within {config.placement_budget} attempts"
            )
    return boxes


def _normalized_geometry(box: Box, width: float, height: float) -> np.ndarray:
    cx = (box.x1 + box.x2) / 2
    cy = (box.y1 + box.y2) / 2
    return np.array([cx / width, cy / height, box.width() / width, box.height() / height])


def generate_synthetic(config: SynthConfig) -> tuple[list[Scene], list[SceneStats]]:
    """Generate the configured corpus; deterministic for a given config."""
    rng = np.random.default_rng(config.seed)
    width, height = config.image_width, config.image_height
    scenes: list[Scene] = []
    stats: list[SceneStats] = []
    for idx in range(config.scene_count):
        scene_id = f"{idx:06d}"
        lo, hi = config.objects_per_scene
        n_objects = int(rng.integers(lo, hi + 1))
        object_boxes = _place_objects(rng, config, n_objects)
        appearance = rng.normal(size=(n_objects, config.appearance_dim))

        gts = []
        mmious = []
        levels = []
        for j, box in enumerate(object_boxes):
            mmiou = max_mutual_iou(box, [b for k, b in enumerate(object_boxes) if k != j])
            level = occlusion_level(mmiou)
            occlusion_code = {"bare": 0, "partial": 1, "heavy": 2}[level.value]
            descriptor = np.concatenate(
                [appearance[j], _normalized_geometry(box, width, height)]
            )
            if config.descriptor_noise_std > 0:
                descriptor = descriptor + rng.normal(
                    0.0, config.descriptor_noise_std, descriptor.shape
                )
            gts.append(
                GroundTruth(
                    box=box,
                    class_id=0,
                    object_id=j,
                    truncation=0.0,
                    occlusion=occlusion_code,
                    ignore=False,
                    descriptor=descriptor,
                )
            )
            mmious.append(mmiou)
            levels.append(level.value)

        detections = []
        dlo, dhi = config.detections_per_object
        for j, box in enumerate(object_boxes):
            n_dets = int(rng.integers(dlo, dhi + 1))
            for _ in range(n_dets):
                coeffs = rng.normal(0.0, config.jitter_std, 4)
                bound = config.jitter_clip * config.jitter_std
                coeffs = np.clip(coeffs, -bound, bound)
                det_box = apply_noise(box, NoiseCoefficients(*coeffs))
                quality = iou(det_box, box)
                score = config.score_base - config.score_iou_weight * (1.0 - quality)
                score += rng.normal(0.0, config.score_noise_std)
                score = float(np.clip(score, 0.0, 1.0))
                embedding = j * config.embedding_gap
                if config.embedding_noise_std > 0:
                    embedding += rng.normal(0.0, config.embedding_noise_std)
                descriptor = np.concatenate(
                    [appearance[j], _normalized_geometry(det_box, width, height)]
                )
                if config.descriptor_noise_std > 0:
                    descriptor = descriptor + rng.normal(
                        0.0, config.descriptor_noise_std, descriptor.shape
                    )
                detections.append(
                    Detection(
                        box=det_box,
                        score=score,
                        embedding=float(embedding),
                        class_id=0,
                        object_id=j,
                        descriptor=descriptor,
                    )
                )
        scenes.append(
            Scene(
                id=scene_id,
                detections=detections,
                ground_truths=gts,
                image_size=(width, height),
            )
        )
        stats.append(SceneStats(scene_id, mmious, levels))
    return scenes, stats


def write_corpus(
    root: Union[str, Path],
    scenes: Sequence[Scene],
    stats: Sequence[SceneStats],
    config: SynthConfig,
) -> None:
    """Write a corpus directory: labels/, detections/ (+ .sge sidecars), descriptors/,
    stats.csv, and a corpus.json with the shared image size."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    class_names = {0: config.class_name}
    for scene in scenes:
        label_records = [
            kitti.ground_truth_to_record(g, class_names) for g in scene.ground_truths
        ]
        kitti.write_label_file(root / "labels" / f"{scene.id}.txt", label_records)
        det_records = [
            kitti.detection_to_record(d, class_names) for d in scene.detections
        ]
        embeddings = [d.embedding for d in scene.detections]
        kitti.write_detection_file(
            root / "detections" / f"{scene.id}.txt", det_records, embeddings
        )
        kitti.write_descriptor_file(
            root / "descriptors" / f"{scene.id}_det.txt",
            np.array([d.descriptor for d in scene.detections]).reshape(
                len(scene.detections), config.descriptor_dim
            ),
        )
        kitti.write_descriptor_file(
            root / "descriptors" / f"{scene.id}_gt.txt",
            np.array([g.descriptor for g in scene.ground_truths]).reshape(
                len(scene.ground_truths), config.descriptor_dim
            ),
        )
    (root / "stats.csv").write_text(stats_csv(stats))
    meta = {
        "class_name": config.class_name,
        "image_height": config.image_height,
        "image_width": config.image_width,
        "scene_count": len(scenes),
    }
    (root / CORPUS_META).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_corpus(root: Union[str, Path]) -> list[Scene]:
    """Load a corpus directory written by write_corpus.

    Identity of detections is not recoverable from files; descriptors and
    embeddings are re-attached when their files are present.
    """
    root = Path(root)
    meta_path = root / CORPUS_META
    if not meta_path.exists():
        raise FileNotFoundError(f"not a corpus directory (no {CORPUS_META}): {root}")
    meta = json.loads(meta_path.read_text())
    image_size = (float(meta["image_width"]), float(meta["image_height"]))
    detections_dir = root / "detections"
    scenes = kitti.load_scenes(
        root / "labels",
        detections_dir if detections_dir.is_dir() else None,
        image_size=image_size,
    )
    descriptors_dir = root / "descriptors"
    if descriptors_dir.is_dir():
        for scene in scenes:
            det_path = descriptors_dir / f"{scene.id}_det.txt"
            gt_path = descriptors_dir / f"{scene.id}_gt.txt"
            if det_path.exists():
                rows = kitti.read_descriptor_file(det_path)
                if len(rows) != len(scene.detections):
                    raise ValueError(
                        f"{det_path}: {len(rows)} descriptors for "
                        f"{len(scene.detections)} detections"
                    )
                for det, row in zip(scene.detections, rows):
                    det.descriptor = row
            if gt_path.exists():
                rows = kitti.read_descriptor_file(gt_path)
                if len(rows) != len(scene.ground_truths):
                    raise ValueError(
                        f"{gt_path}: {len(rows)} descriptors for "
                        f"{len(scene.ground_truths)} ground truths"
                    )
                for gt, row in zip(scene.ground_truths, rows):
                    gt.descriptor = row
    return scenes
