"""Semantics-geometry embeddings: the scalar embedding, its training losses, and a trainer.

An embedding is the dot product of a 4-component semantic feature with the box's
center-format geometry (x, y, w, h). Semantic features come from a learned linear
map over per-box appearance descriptors. Two losses shape the map: a group term
pulls each box's embedding toward the embedding of its assigned object, and a
separation term pushes embeddings of boxes over occluded objects at least a margin
away from the embedding of the occluding neighbour.

Both losses are piecewise linear in the weight matrix, so training uses plain
subgradient descent; at kinks (zero difference, hinge boundary) the subgradient
is taken as zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .geometry import Box, GeometricFeature, iou, to_geometric
from .suppression import Detection
from .evaluation import Scene

__all__ = [
    "BoxAssignment",
    "EmbeddingLossConfig",
    "EmbeddingTrainingScene",
    "LinearSemanticProvider",
    "NonFiniteLoss",
    "assign_boxes",
    "attach_provider_embeddings",
    "compute_sge",
    "embedding_loss_gradient",
    "group_loss",
    "load_provider",
    "normalized_geometry",
    "oracle_embeddings",
    "save_provider",
    "scene_losses",
    "separation_loss",
    "train_provider",
    "training_scene",
]

PROVIDER_HEADER = "sg-provider v1"


class NonFiniteLoss(RuntimeError):
    """Raised when training produces a non-finite or runaway loss."""


@dataclass(frozen=True)
class EmbeddingLossConfig:
    """Loss hyper-parameters.

    theta: IoU above which a box is assigned to its best-overlapping object.
    rho:   IoU with the second-best object above which a box counts as occluded.
    sigma: margin enforced between a box's embedding and the occluder's embedding.
    """

    theta: float = 0.7
    rho: float = 0.27
    sigma: float = 0.3

    def __post_init__(self) -> None:
        if not 0.0 < self.theta <= 1.0:
            raise ValueError(f"theta must be in (0, 1], got {self.theta}")
        if not 0.0 < self.rho <= 1.0:
            raise ValueError(f"rho must be in (0, 1], got {self.rho}")
        if self.sigma <= 0.0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class BoxAssignment:
    """Assignment of one box against a ground-truth set.

    primary_gt is the argmax-IoU ground truth when that IoU clears theta, else None.
    secondary_gt is the second-argmax ground truth regardless of the primary
    assignment. occluded marks boxes that are both assigned and overlap the
    secondary ground truth by more than rho. IoU ties break to the lower index.
    """

    primary_gt: Optional[int]
    secondary_gt: Optional[int]
    occluded: bool


GeometryLike = Union[GeometricFeature, Sequence[float], np.ndarray]


def _geometry_vector(g: GeometryLike) -> np.ndarray:
    if isinstance(g, GeometricFeature):
        return np.array(g.as_tuple(), dtype=float)
    arr = np.asarray(g, dtype=float)
    if arr.shape != (4,):
        raise ValueError(f"geometry must have 4 components, got shape {arr.shape}")
    return arr


def compute_sge(semantic: Union[Sequence[float], np.ndarray], g: GeometryLike) -> float:
    """Scalar embedding: dot product of the 4-vector semantic feature with (x, y, w, h)."""
    s = np.asarray(semantic, dtype=float)
    if s.shape != (4,):
        raise ValueError(f"semantic feature must have 4 components, got shape {s.shape}")
    return float(s @ _geometry_vector(g))


def assign_boxes(
    boxes: Sequence[Box], gts: Sequence[Box], config: EmbeddingLossConfig
) -> list[BoxAssignment]:
    """Assign each box a primary and secondary ground truth by IoU ranking."""
    out = []
    for box in boxes:
        overlaps = [iou(box, gt) for gt in gts]
        order = sorted(range(len(gts)), key=lambda j: (-overlaps[j], j))
        primary = order[0] if order and overlaps[order[0]] > config.theta else None
        secondary = order[1] if len(order) > 1 else None
        occluded = (
            primary is not None
            and secondary is not None
            and overlaps[secondary] > config.rho
        )
        out.append(BoxAssignment(primary, secondary, occluded))
    return out


def group_loss(
    embeddings: Sequence[float],
    gt_embeddings: Sequence[float],
    assignments: Sequence[BoxAssignment],
) -> float:
    """Sum of |e_box - e_object| over assigned boxes."""
    total = 0.0
    for e, a in zip(embeddings, assignments):
        if a.primary_gt is not None:
            total += abs(e - gt_embeddings[a.primary_gt])
    return total


def separation_loss(
    embeddings: Sequence[float],
    gt_embeddings: Sequence[float],
    assignments: Sequence[BoxAssignment],
    sigma: float,
) -> float:
    """Sum of hinge margins max(0, sigma - |e_box - e_occluder|) over occluded boxes."""
    total = 0.0
    for e, a in zip(embeddings, assignments):
        if a.occluded:
            total += max(0.0, sigma - abs(e - gt_embeddings[a.secondary_gt]))
    return total


def normalized_geometry(box: Box, image_size: tuple[float, float]) -> np.ndarray:
    """Center-format geometry scaled so coordinates are fractions of the image size."""
    w, h = image_size
    if w <= 0 or h <= 0:
        raise ValueError(f"image size must be positive, got {image_size}")
    g = to_geometric(box)
    return np.array([g.x / w, g.y / h, g.w / w, g.h / h])


@dataclass
class LinearSemanticProvider:
    """Linear map from a D-dim appearance descriptor to the 4-vector semantic feature."""

    weights: np.ndarray

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.ndim != 2 or self.weights.shape[0] != 4:
            raise ValueError(
                f"weights must have shape (4, D), got {self.weights.shape}"
            )

    @property
    def descriptor_dim(self) -> int:
        return self.weights.shape[1]

    def semantic_feature(self, descriptor: np.ndarray) -> np.ndarray:
        return self.weights @ np.asarray(descriptor, dtype=float)

    def embedding(self, descriptor: np.ndarray, g: GeometryLike) -> float:
        return compute_sge(self.semantic_feature(descriptor), g)


def save_provider(provider: LinearSemanticProvider, path: Union[str, Path]) -> None:
    """Write the weight matrix as text: a header line then one row per semantic component."""
    lines = [f"{PROVIDER_HEADER} dims={provider.descriptor_dim}"]
    for row in provider.weights:
        lines.append(" ".join(format(v, ".17g") for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_provider(path: Union[str, Path]) -> LinearSemanticProvider:
    text = Path(path).read_text()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty provider file")
    head = lines[0].split()
    if head[:2] != PROVIDER_HEADER.split() or len(head) != 3 or not head[2].startswith("dims="):
        raise ValueError(f"{path}: bad provider header {lines[0]!r}")
    try:
        dims = int(head[2][len("dims="):])
    except ValueError:
        raise ValueError(f"{path}: bad dims in header {lines[0]!r}") from None
    if len(lines) != 5:
        raise ValueError(f"{path}: expected 4 weight rows, got {len(lines) - 1}")
    rows = []
    for ln in lines[1:]:
        vals = [float(v) for v in ln.split()]
        if len(vals) != dims:
            raise ValueError(f"{path}: expected {dims} values per row, got {len(vals)}")
        rows.append(vals)
    return LinearSemanticProvider(np.array(rows))


@dataclass
class EmbeddingTrainingScene:
    """One scene flattened into arrays for the trainer.

    Geometry rows are center-format (x, y, w, h), already normalized by the image
    size. Descriptor rows align with the geometry rows.
    """

    boxes: list[Box]
    gt_boxes: list[Box]
    box_geometry: np.ndarray
    gt_geometry: np.ndarray
    box_descriptors: np.ndarray
    gt_descriptors: np.ndarray

    def __post_init__(self) -> None:
        n, m = len(self.boxes), len(self.gt_boxes)
        if self.box_geometry.shape != (n, 4):
            raise ValueError(f"box geometry shape {self.box_geometry.shape} != ({n}, 4)")
        if self.gt_geometry.shape != (m, 4):
            raise ValueError(f"gt geometry shape {self.gt_geometry.shape} != ({m}, 4)")
        if self.box_descriptors.shape[0] != n or self.gt_descriptors.shape[0] != m:
            raise ValueError("descriptor row count does not match box count")


def training_scene(scene: Scene) -> EmbeddingTrainingScene:
    """Flatten an evaluation scene for training; requires descriptors and an image size."""
    if scene.image_size is None:
        raise ValueError(f"scene {scene.id}: image size required for training")
    boxes = [d.box for d in scene.detections]
    gts = [g for g in scene.ground_truths if not g.ignore]
    gt_boxes = [g.box for g in gts]
    det_desc = []
    for d in scene.detections:
        if d.descriptor is None:
            raise ValueError(f"scene {scene.id}: detection missing descriptor")
        det_desc.append(np.asarray(d.descriptor, dtype=float))
    gt_desc = []
    for g in gts:
        if g.descriptor is None:
            raise ValueError(f"scene {scene.id}: ground truth missing descriptor")
        gt_desc.append(np.asarray(g.descriptor, dtype=float))
    dim = det_desc[0].shape[0] if det_desc else (gt_desc[0].shape[0] if gt_desc else 0)
    return EmbeddingTrainingScene(
        boxes=boxes,
        gt_boxes=gt_boxes,
        box_geometry=np.array(
            [normalized_geometry(b, scene.image_size) for b in boxes]
        ).reshape(len(boxes), 4),
        gt_geometry=np.array(
            [normalized_geometry(b, scene.image_size) for b in gt_boxes]
        ).reshape(len(gt_boxes), 4),
        box_descriptors=np.array(det_desc).reshape(len(boxes), dim),
        gt_descriptors=np.array(gt_desc).reshape(len(gt_boxes), dim),
    )


def _scene_embeddings(
    ts: EmbeddingTrainingScene, provider: LinearSemanticProvider
) -> tuple[np.ndarray, np.ndarray]:
    W = provider.weights
    e_box = np.einsum("nd,cd,nc->n", ts.box_descriptors, W, ts.box_geometry)
    e_gt = np.einsum("md,cd,mc->m", ts.gt_descriptors, W, ts.gt_geometry)
    return e_box, e_gt


def scene_losses(
    ts: EmbeddingTrainingScene,
    provider: LinearSemanticProvider,
    config: EmbeddingLossConfig,
    assignments: Optional[Sequence[BoxAssignment]] = None,
) -> tuple[float, float]:
    """(group, separation) loss of one scene under the given provider."""
    if assignments is None:
        assignments = assign_boxes(ts.boxes, ts.gt_boxes, config)
    e_box, e_gt = _scene_embeddings(ts, provider)
    return (
        group_loss(e_box, e_gt, assignments),
        separation_loss(e_box, e_gt, assignments, config.sigma),
    )


def embedding_loss_gradient(
    ts: EmbeddingTrainingScene,
    provider: LinearSemanticProvider,
    config: EmbeddingLossConfig,
    assignments: Optional[Sequence[BoxAssignment]] = None,
) -> np.ndarray:
    """Subgradient of (group + separation) loss with respect to the provider weights.

    d e / d W for an embedding e = (W d) . g is the rank-one matrix g d^T; each
    absolute-value or hinge term contributes a signed combination of the box's and
    the object's rank-one matrices. Terms sitting exactly at a kink contribute 0.
    """
    if assignments is None:
        assignments = assign_boxes(ts.boxes, ts.gt_boxes, config)
    e_box, e_gt = _scene_embeddings(ts, provider)
    grad = np.zeros_like(provider.weights)
    for i, a in enumerate(assignments):
        gi_di = np.outer(ts.box_geometry[i], ts.box_descriptors[i])
        if a.primary_gt is not None:
            j = a.primary_gt
            u = e_box[i] - e_gt[j]
            if u != 0.0:
                sign = 1.0 if u > 0 else -1.0
                grad += sign * (gi_di - np.outer(ts.gt_geometry[j], ts.gt_descriptors[j]))
        if a.occluded:
            k = a.secondary_gt
            u = e_box[i] - e_gt[k]
            if 0.0 < abs(u) < config.sigma:
                sign = 1.0 if u > 0 else -1.0
                grad -= sign * (gi_di - np.outer(ts.gt_geometry[k], ts.gt_descriptors[k]))
    return grad


def _corpus_losses(
    scenes: Sequence[EmbeddingTrainingScene],
    provider: LinearSemanticProvider,
    config: EmbeddingLossConfig,
    assignments: Sequence[Sequence[BoxAssignment]],
) -> tuple[float, float]:
    g_total = 0.0
    s_total = 0.0
    for ts, a in zip(scenes, assignments):
        g, s = scene_losses(ts, provider, config, a)
        g_total += g
        s_total += s
    return g_total, s_total


def train_provider(
    scenes: Sequence[EmbeddingTrainingScene],
    config: EmbeddingLossConfig = EmbeddingLossConfig(),
    *,
    learning_rate: float = 0.01,
    iterations: int = 2000,
    seed: int = 0,
    loss_log: Optional[list[tuple[int, float, float]]] = None,
    log_every: Optional[int] = None,
    progress: Optional[Callable[[int, float, float], None]] = None,
) -> LinearSemanticProvider:
    """Subgradient descent over scenes visited cyclically.

    Each step applies one scene's gradient scaled by the learning rate over
    max(1, number of boxes in the scene). Weights start at 0.1 * standard normal
    draws from the seeded generator, so runs are reproducible given (scenes, seed,
    learning rate, iterations). With 0 iterations the initial provider is returned.

    loss_log, when given, receives (iteration, group, separation) corpus losses at
    iteration 0, every log_every steps, and after the final step. Because
    subgradient steps on a piecewise-linear loss are not monotone, the returned
    provider is the logged checkpoint with the lowest corpus loss, which is never
    worse than the initial one. Raises NonFiniteLoss if the corpus loss becomes
    non-finite or grows past 1e9 times its initial value.
    """
    if not scenes:
        raise ValueError("training requires at least one scene")
    if iterations < 0:
        raise ValueError(f"iterations must be >= 0, got {iterations}")
    dims = {ts.box_descriptors.shape[1] for ts in scenes}
    dims |= {ts.gt_descriptors.shape[1] for ts in scenes}
    if len(dims) != 1:
        raise ValueError(f"descriptor dimensions differ across scenes: {sorted(dims)}")
    dim = dims.pop()
    rng = np.random.default_rng(seed)
    provider = LinearSemanticProvider(rng.standard_normal((4, dim)) * 0.1)
    assignments = [assign_boxes(ts.boxes, ts.gt_boxes, config) for ts in scenes]
    if log_every is None:
        log_every = max(1, iterations // 100)

    def checkpoint(step: int) -> tuple[float, float]:
        g, s = _corpus_losses(scenes, provider, config, assignments)
        if loss_log is not None:
            loss_log.append((step, g, s))
        if progress is not None:
            progress(step, g, s)
        return g, s

    g0, s0 = checkpoint(0)
    initial_total = g0 + s0
    if not np.isfinite(initial_total):
        raise NonFiniteLoss(f"initial loss is not finite: {initial_total}")
    best_total = initial_total
    best_weights = provider.weights.copy()
    for it in range(1, iterations + 1):
        scene_idx = (it - 1) % len(scenes)
        ts = scenes[scene_idx]
        grad = embedding_loss_gradient(ts, provider, config, assignments[scene_idx])
        provider.weights = provider.weights - learning_rate * grad / max(1, len(ts.boxes))
        if it % log_every == 0 or it == iterations:
            g, s = checkpoint(it)
            total = g + s
            if not np.isfinite(total) or total > 1e9 * (initial_total + 1.0):
                raise NonFiniteLoss(
                    f"loss diverged at iteration {it}: {total} (initial {initial_total})"
                )
            if total < best_total:
                best_total = total
                best_weights = provider.weights.copy()
    provider.weights = best_weights
    return provider


def oracle_embeddings(scene: Scene) -> list[float]:
    """Ground-truth-identity embeddings: each detection gets its object index as a float."""
    out = []
    for d in scene.detections:
        if d.object_id is None:
            raise ValueError(f"scene {scene.id}: detection has no object identity")
        out.append(float(d.object_id))
    return out


def attach_provider_embeddings(
    scene: Scene, provider: LinearSemanticProvider
) -> Scene:
    """Copy of the scene whose detections carry embeddings computed by the provider."""
    if scene.image_size is None:
        raise ValueError(f"scene {scene.id}: image size required to compute embeddings")
    dets = []
    for d in scene.detections:
        if d.descriptor is None:
            raise ValueError(f"scene {scene.id}: detection missing descriptor")
        e = provider.embedding(d.descriptor, normalized_geometry(d.box, scene.image_size))
        dets.append(
            Detection(
                box=d.box,
                score=d.score,
                embedding=e,
                class_id=d.class_id,
                object_id=d.object_id,
                descriptor=d.descriptor,
            )
        )
    return Scene(
        id=scene.id,
        detections=dets,
        ground_truths=scene.ground_truths,
        image_size=scene.image_size,
    )
