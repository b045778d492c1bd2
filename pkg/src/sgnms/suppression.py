"""Non-maximum suppression algorithms: greedy, linear soft rescoring, and embedding-gated."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .geometry import Box, iou

__all__ = [
    "Detection",
    "MissingEmbedding",
    "PhiFunction",
    "PhiKind",
    "SuppressionResult",
    "greedy_nms",
    "make_algorithm",
    "phi_eval",
    "sg_nms",
    "soft_nms_linear",
    "suppress_per_class",
]

DEFAULT_SCORE_FLOOR = 0.001


class MissingEmbedding(ValueError):
    """Raised when an embedding-gated suppression run receives a detection without an embedding."""


@dataclass(eq=False)
class Detection:
    """One detected box: geometry, confidence score in [0, 1], optional scalar embedding.

    `object_id` is the generating object's identity when known (synthetic data);
    `descriptor` is the region descriptor used to compute embeddings from a
    trained provider. Both are diagnostic and ignored by the suppression loops.
    """

    box: Box
    score: float
    embedding: Optional[float] = None
    class_id: int = 0
    object_id: Optional[int] = None
    descriptor: Optional[np.ndarray] = None


class PhiKind(enum.Enum):
    CONSTANT = "constant"
    LINEAR = "linear"
    SQUARE = "square"


@dataclass(frozen=True)
class PhiFunction:
    """Monotone map from overlap to the embedding-distance threshold that still suppresses.

    constant: t, linear: t*tau, square: t*tau^2. The parameter t must be positive.
    """

    kind: PhiKind
    t: float

    def __post_init__(self) -> None:
        if not self.t > 0:
            raise ValueError(f"phi threshold parameter must be positive, got {self.t}")

    def __call__(self, tau: float) -> float:
        if self.kind is PhiKind.CONSTANT:
            return self.t
        if self.kind is PhiKind.LINEAR:
            return self.t * tau
        return self.t * tau * tau


def phi_eval(phi: Callable[[float], float], tau: float) -> float:
    """Evaluate a phi threshold function at overlap `tau`."""
    return phi(tau)


@dataclass
class SuppressionResult:
    """Outcome of one suppression run.

    kept: (detection, final score) pairs, scores non-increasing.
    kept_indices: input indices aligned with `kept`.
    suppressed_by: input index of each removed detection -> input index of the pivot that removed it.
    """

    kept: list[tuple[Detection, float]] = field(default_factory=list)
    kept_indices: list[int] = field(default_factory=list)
    suppressed_by: dict[int, int] = field(default_factory=dict)


def _score_order(dets: Sequence[Detection]) -> list[int]:
    # equal scores: lower input index wins pivot selection
    return sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))


def greedy_nms(dets: Sequence[Detection], nt: float) -> SuppressionResult:
    """Classic NMS: keep the best-scoring box, drop everything overlapping it with IoU >= nt, repeat."""
    result = SuppressionResult()
    order = _score_order(dets)
    alive = [True] * len(dets)
    for pos, m in enumerate(order):
        if not alive[m]:
            continue
        alive[m] = False
        result.kept.append((dets[m], dets[m].score))
        result.kept_indices.append(m)
        for i in order[pos + 1 :]:
            if alive[i] and iou(dets[m].box, dets[i].box) >= nt:
                alive[i] = False
                result.suppressed_by[i] = m
    return result


def soft_nms_linear(
    dets: Sequence[Detection], nt: float, score_floor: float = DEFAULT_SCORE_FLOOR
) -> SuppressionResult:
    """Linear soft rescoring: overlapping boxes get score * (1 - IoU) instead of removal.

    Boxes whose decayed score falls below `score_floor` are dropped; survivors are
    returned sorted by decayed score. A floor of 0 disables dropping entirely.
    """
    result = SuppressionResult()
    scores = [d.score for d in dets]
    alive = set(range(len(dets)))
    while alive:
        m = min(alive, key=lambda i: (-scores[i], i))
        alive.discard(m)
        result.kept.append((dets[m], scores[m]))
        result.kept_indices.append(m)
        for i in sorted(alive):
            tau = iou(dets[m].box, dets[i].box)
            if tau >= nt:
                scores[i] *= 1.0 - tau
                if scores[i] < score_floor:
                    alive.discard(i)
                    result.suppressed_by[i] = m
    pairs = sorted(
        zip(result.kept_indices, result.kept), key=lambda p: (-p[1][1], p[0])
    )
    result.kept_indices = [p[0] for p in pairs]
    result.kept = [p[1] for p in pairs]
    return result


def sg_nms(
    dets: Sequence[Detection], nt: float, phi: Callable[[float], float]
) -> SuppressionResult:
    """Embedding-gated NMS: a box overlapping the pivot is suppressed only when its
    embedding is also close to the pivot's.

    Per round the best-scoring remaining box becomes the pivot; a remaining box with
    overlap tau is removed iff tau >= nt and |e_pivot - e_box| <= phi(tau). Suppressed
    boxes are removed outright (no rescoring); kept boxes retain their original scores.
    """
    for i, d in enumerate(dets):
        if d.embedding is None:
            raise MissingEmbedding(f"detection {i} has no embedding")
    result = SuppressionResult()
    order = _score_order(dets)
    alive = [True] * len(dets)
    for pos, m in enumerate(order):
        if not alive[m]:
            continue
        alive[m] = False
        result.kept.append((dets[m], dets[m].score))
        result.kept_indices.append(m)
        e_m = dets[m].embedding
        for i in order[pos + 1 :]:
            if not alive[i]:
                continue
            tau = iou(dets[m].box, dets[i].box)
            if tau >= nt and abs(e_m - dets[i].embedding) <= phi(tau):
                alive[i] = False
                result.suppressed_by[i] = m
    return result


def make_algorithm(
    name: str,
    *,
    nt: float,
    t: Optional[float] = None,
    score_floor: float = DEFAULT_SCORE_FLOOR,
) -> Callable[[Sequence[Detection]], SuppressionResult]:
    """Build a single-class suppression callable from an algorithm name.

    Names: greedy, soft, sg-constant, sg-linear, sg-square. The sg variants
    require the phi parameter `t`.
    """
    if name == "greedy":
        return lambda dets: greedy_nms(dets, nt)
    if name == "soft":
        return lambda dets: soft_nms_linear(dets, nt, score_floor)
    kinds = {
        "sg-constant": PhiKind.CONSTANT,
        "sg-linear": PhiKind.LINEAR,
        "sg-square": PhiKind.SQUARE,
    }
    if name not in kinds:
        raise ValueError(f"unknown suppression algorithm {name!r}")
    if t is None:
        raise ValueError(f"{name} requires the phi parameter t")
    phi = PhiFunction(kinds[name], t)
    return lambda dets: sg_nms(dets, nt, phi)


def suppress_per_class(
    dets: Sequence[Detection],
    algorithm: Callable[[Sequence[Detection]], SuppressionResult],
) -> SuppressionResult:
    """Partition detections by class, run `algorithm` per class, and merge.

    Boxes of different classes never suppress each other. The merged kept list is
    ordered by final score (ties: lower input index), and suppressed_by uses input indices.
    """
    by_class: dict[int, list[int]] = {}
    for i, d in enumerate(dets):
        by_class.setdefault(d.class_id, []).append(i)
    merged: list[tuple[int, Detection, float]] = []
    result = SuppressionResult()
    for class_id in sorted(by_class):
        indices = by_class[class_id]
        sub = algorithm([dets[i] for i in indices])
        for (det, score), local_idx in zip(sub.kept, sub.kept_indices):
            merged.append((indices[local_idx], det, score))
        for local_idx, local_pivot in sub.suppressed_by.items():
            result.suppressed_by[indices[local_idx]] = indices[local_pivot]
    merged.sort(key=lambda item: (-item[2], item[0]))
    result.kept_indices = [i for i, _, _ in merged]
    result.kept = [(d, s) for _, d, s in merged]
    return result
