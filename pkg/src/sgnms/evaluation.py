"""Detection evaluation: greedy matching, average precision, occlusion-binned recall, miss rate.

The matching protocol is the standard one: detections are visited in descending
score order and each may claim the unmatched same-class ground truth with the
highest IoU at or above the threshold. Ignore regions (e.g. DontCare areas) are
class-agnostic; detections whose only match is an ignore region are dropped from
scoring entirely, counting as neither true nor false positives.
"""

from __future__ import annotations

import enum
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import Box, iou, max_mutual_iou
from .suppression import Detection

__all__ = [
    "Counts",
    "DetMatch",
    "Difficulty",
    "EvalReport",
    "GroundTruth",
    "MatchResult",
    "Scene",
    "apply_difficulty",
    "average_precision",
    "evaluate",
    "kitti_difficulty_filter",
    "log_average_miss_rate",
    "match_detections",
    "recall_by_mmiou",
]

DEFAULT_BIN_EDGES = (0.0, 0.2, 0.5, 1.0)

# dataset-standard matching thresholds
KITTI_CAR_IOU = 0.7
KITTI_PEDESTRIAN_IOU = 0.5

# miss rate is sampled at 9 false-positives-per-image points, log-uniform in [0.01, 1]
FPPI_SAMPLES = 9
FPPI_RANGE = (1e-2, 1.0)


@dataclass(eq=False)
class GroundTruth:
    """Annotated object: box, class, identity within its scene, and difficulty attributes."""

    box: Box
    class_id: int = 0
    object_id: int = 0
    truncation: float = 0.0
    occlusion: int = 0
    ignore: bool = False
    descriptor: Optional[np.ndarray] = None


@dataclass(eq=False)
class Scene:
    """One image's worth of detections and ground truths."""

    id: str
    detections: list[Detection] = field(default_factory=list)
    ground_truths: list[GroundTruth] = field(default_factory=list)
    image_size: Optional[tuple[float, float]] = None


@dataclass
class DetMatch:
    """Outcome for one detection: 'tp' (with the matched GT index), 'fp', or 'ignored'."""

    kind: str
    gt_index: Optional[int] = None


@dataclass
class MatchResult:
    det_matches: list[DetMatch]
    gt_matched: list[bool]


@dataclass
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0


@dataclass
class EvalReport:
    """Evaluation harness output; `recall_by_bin` maps (low, high] MMIoU bins to recall."""

    ap: Optional[float] = None
    pr_curve: list[tuple[float, float]] = field(default_factory=list)
    recall_by_bin: dict[tuple[float, float], float] = field(default_factory=dict)
    lamr: Optional[float] = None
    counts: Counts = field(default_factory=Counts)

    def to_text(self) -> str:
        lines = []
        if self.ap is not None:
            lines.append(f"ap={self.ap:.6f}")
        if self.lamr is not None:
            lines.append(f"lamr={self.lamr:.6f}")
        lines.append(f"tp={self.counts.tp}")
        lines.append(f"fp={self.counts.fp}")
        lines.append(f"fn={self.counts.fn}")
        for (lo, hi), recall in sorted(self.recall_by_bin.items()):
            lines.append(f"recall[{lo:.3f},{hi:.3f}]={recall:.6f}")
        return "\n".join(lines) + "\n"

    def pr_curve_csv(self) -> str:
        rows = ["recall,precision"]
        rows += [f"{r:.6f},{p:.6f}" for r, p in self.pr_curve]
        return "\n".join(rows) + "\n"

    def recall_bins_csv(self) -> str:
        # two-column form: bin midpoint against recall, for plotting
        rows = ["mmiou,recall"]
        for (lo, hi), recall in sorted(self.recall_by_bin.items()):
            rows.append(f"{(lo + hi) / 2:.6f},{recall:.6f}")
        return "\n".join(rows) + "\n"


def thread_count() -> int:
    """Worker cap for scene fan-out; set SGNMS_THREADS to override."""
    env = os.environ.get("SGNMS_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return min(8, os.cpu_count() or 1)


def _match_all(scenes: Sequence[Scene], iou_threshold: float) -> list[MatchResult]:
    workers = thread_count()
    if workers <= 1 or len(scenes) < 4:
        return [match_detections(s, iou_threshold) for s in scenes]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda s: match_detections(s, iou_threshold), scenes))


def match_detections(scene: Scene, iou_threshold: float) -> MatchResult:
    """Greedy score-ordered matching of one scene's detections to its ground truths."""
    dets = scene.detections
    gts = scene.ground_truths
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    gt_matched = [False] * len(gts)
    matches: list[DetMatch] = [DetMatch("fp") for _ in dets]
    for i in order:
        det = dets[i]
        best_j = None
        best_iou = 0.0
        for j, gt in enumerate(gts):
            if gt.ignore or gt_matched[j] or gt.class_id != det.class_id:
                continue
            v = iou(det.box, gt.box)
            if v >= iou_threshold and v > best_iou:
                best_j = j
                best_iou = v
        if best_j is not None:
            gt_matched[best_j] = True
            matches[i] = DetMatch("tp", best_j)
            continue
        for j, gt in enumerate(gts):
            if gt.ignore and iou(det.box, gt.box) >= iou_threshold:
                matches[i] = DetMatch("ignored")
                break
    return MatchResult(matches, gt_matched)


def _pooled_ranking(
    scenes: Sequence[Scene], iou_threshold: float
) -> tuple[np.ndarray, int]:
    """Pool scored detections across scenes into one descending-score ranking.

    Returns the true-positive flag per ranked detection (ignored detections are
    dropped) and the number of non-ignored ground truths.
    """
    results = _match_all(scenes, iou_threshold)
    entries: list[tuple[float, int, int, bool]] = []
    n_gt = 0
    for s_idx, (scene, result) in enumerate(zip(scenes, results)):
        n_gt += sum(1 for g in scene.ground_truths if not g.ignore)
        for d_idx, (det, match) in enumerate(zip(scene.detections, result.det_matches)):
            if match.kind == "ignored":
                continue
            entries.append((det.score, s_idx, d_idx, match.kind == "tp"))
    entries.sort(key=lambda e: (-e[0], e[1], e[2]))
    flags = np.array([e[3] for e in entries], dtype=bool)
    return flags, n_gt


def average_precision(
    scenes: Sequence[Scene], iou_threshold: float
) -> tuple[float, list[tuple[float, float]], Counts]:
    """Average precision as the exact area under the monotone precision envelope.

    Detections of every class are pooled into a single ranking after class-aware
    matching. Returns (ap, pr_curve, counts); with no ground truths the AP is 0.
    """
    flags, n_gt = _pooled_ranking(scenes, iou_threshold)
    if flags.size == 0:
        return 0.0, [], Counts(tp=0, fp=0, fn=n_gt)
    tp_cum = np.cumsum(flags)
    fp_cum = np.cumsum(~flags)
    precision = tp_cum / (tp_cum + fp_cum)
    recall = tp_cum / n_gt if n_gt > 0 else np.zeros_like(precision)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev_recall = np.concatenate(([0.0], recall[:-1]))
    ap = float(np.sum((recall - prev_recall) * envelope)) if n_gt > 0 else 0.0
    curve = [(float(r), float(p)) for r, p in zip(recall, precision)]
    counts = Counts(tp=int(tp_cum[-1]), fp=int(fp_cum[-1]), fn=n_gt - int(tp_cum[-1]))
    return ap, curve, counts


def _bin_index(value: float, edges: Sequence[float]) -> Optional[int]:
    for k in range(len(edges) - 1):
        if value <= edges[k + 1] and (value > edges[k] or k == 0):
            return k
    return None


def recall_by_mmiou(
    scenes: Sequence[Scene],
    iou_threshold: float,
    bin_edges: Sequence[float] = DEFAULT_BIN_EDGES,
) -> dict[tuple[float, float], float]:
    """Recall stratified by each ground truth's max-mutual-IoU with same-class neighbours.

    Bins are half-open intervals (low, high]; an MMIoU of exactly 0 falls into the
    first bin. Uses the full detection set with no score cut. Empty bins are absent
    from the result rather than reported as 0/0.
    """
    edges = [float(e) for e in bin_edges]
    if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
        raise ValueError(f"bin edges must be strictly increasing, got {bin_edges}")
    if edges[0] != 0.0 or edges[-1] < 1.0:
        raise ValueError(f"bin edges must cover [0, 1], got {bin_edges}")
    results = _match_all(scenes, iou_threshold)
    totals = [0] * (len(edges) - 1)
    matched = [0] * (len(edges) - 1)
    for scene, result in zip(scenes, results):
        gts = scene.ground_truths
        for j, gt in enumerate(gts):
            if gt.ignore:
                continue
            others = [
                g.box
                for k, g in enumerate(gts)
                if k != j and not g.ignore and g.class_id == gt.class_id
            ]
            k = _bin_index(max_mutual_iou(gt.box, others), edges)
            if k is None:
                continue
            totals[k] += 1
            if result.gt_matched[j]:
                matched[k] += 1
    out: dict[tuple[float, float], float] = {}
    for k in range(len(edges) - 1):
        if totals[k] > 0:
            out[(edges[k], edges[k + 1])] = matched[k] / totals[k]
    return out


def log_average_miss_rate(scenes: Sequence[Scene], iou_threshold: float) -> float:
    """Log-average miss rate over log-spaced false-positives-per-image sample points.

    Each scene counts as one image. At each reference FPPI the miss rate of the
    highest-recall operating point with FPPI at or below the reference is taken;
    references below the lowest achievable FPPI fall back to the first operating
    point. The result is the geometric mean of the sampled miss rates (exactly 0
    when every sample is 0). A detector with no detections scores 1.0.
    """
    flags, n_gt = _pooled_ranking(scenes, iou_threshold)
    if n_gt == 0:
        return 0.0
    if flags.size == 0:
        return 1.0
    n_images = len(scenes)
    tp_cum = np.cumsum(flags)
    fp_cum = np.cumsum(~flags)
    fppi = fp_cum / n_images
    miss = 1.0 - tp_cum / n_gt
    refs = np.logspace(
        np.log10(FPPI_RANGE[0]), np.log10(FPPI_RANGE[1]), FPPI_SAMPLES
    )
    sampled = []
    for ref in refs:
        below = np.nonzero(fppi <= ref)[0]
        sampled.append(float(miss[below[-1]]) if below.size else float(miss[0]))
    sampled_arr = np.array(sampled)
    if np.all(sampled_arr == 0.0):
        return 0.0
    return float(np.exp(np.mean(np.log(np.maximum(sampled_arr, 1e-10)))))


class Difficulty(enum.Enum):
    EASY = "easy"
    MODERATE = "moderate"
    HARD = "hard"
    EXCLUDED = "excluded"


# KITTI devkit gates per difficulty: (min box height px, max occlusion code, max truncation)
_KITTI_GATES = (
    (Difficulty.EASY, 40.0, 0, 0.15),
    (Difficulty.MODERATE, 25.0, 1, 0.30),
    (Difficulty.HARD, 25.0, 2, 0.50),
)


def kitti_difficulty_filter(gt: GroundTruth) -> Difficulty:
    """Easiest KITTI difficulty level whose gates the ground truth passes, else EXCLUDED.

    Negative occlusion codes (unknown) always exclude.
    """
    height = gt.box.height()
    for level, min_height, max_occlusion, max_truncation in _KITTI_GATES:
        if (
            height >= min_height
            and 0 <= gt.occlusion <= max_occlusion
            and gt.truncation <= max_truncation
        ):
            return level
    return Difficulty.EXCLUDED


def apply_difficulty(scene: Scene, level: Difficulty) -> Scene:
    """Copy of the scene where ground truths harder than `level` become ignore regions.

    Follows the KITTI protocol: evaluating at a difficulty level scores only the
    objects at that level or easier; excluded and harder objects are neither
    rewarded nor penalized.
    """
    rank = {Difficulty.EASY: 0, Difficulty.MODERATE: 1, Difficulty.HARD: 2}
    if level not in rank:
        raise ValueError(f"cannot evaluate at level {level}")
    gts = []
    for gt in scene.ground_truths:
        difficulty = kitti_difficulty_filter(gt)
        drop = difficulty is Difficulty.EXCLUDED or rank[difficulty] > rank[level]
        if drop and not gt.ignore:
            gt = GroundTruth(
                box=gt.box,
                class_id=gt.class_id,
                object_id=gt.object_id,
                truncation=gt.truncation,
                occlusion=gt.occlusion,
                ignore=True,
                descriptor=gt.descriptor,
            )
        gts.append(gt)
    return Scene(
        id=scene.id,
        detections=scene.detections,
        ground_truths=gts,
        image_size=scene.image_size,
    )


def evaluate(
    scenes: Sequence[Scene],
    iou_threshold: float,
    *,
    with_ap: bool = True,
    with_lamr: bool = False,
    bin_edges: Optional[Sequence[float]] = None,
) -> EvalReport:
    """Run the selected metrics over a scene collection and assemble the report."""
    report = EvalReport()
    if with_ap:
        report.ap, report.pr_curve, report.counts = average_precision(
            scenes, iou_threshold
        )
    else:
        _, _, report.counts = average_precision(scenes, iou_threshold)
    if with_lamr:
        report.lamr = log_average_miss_rate(scenes, iou_threshold)
    if bin_edges is not None:
        report.recall_by_bin = recall_by_mmiou(scenes, iou_threshold, bin_edges)
    return report
