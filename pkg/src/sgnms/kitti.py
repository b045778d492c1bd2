"""KITTI-style label and detection file I/O.

Label lines carry 15 whitespace-separated fields, detection lines 16 (score
appended): type, truncation, occlusion, alpha, four bbox corners, three object
dimensions, three locations, rotation. Only type, truncation, occlusion, bbox and
score feed the toolkit's data model; the remaining fields ride along so files
round-trip. Embeddings live in a sidecar next to the detection file, one float
per line, named `<detection-file>.sge`.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .geometry import Box
from .suppression import Detection
from .evaluation import GroundTruth, Scene

__all__ = [
    "KittiLabelRecord",
    "MalformedLine",
    "SIDECAR_SUFFIX",
    "class_map_for",
    "detection_to_record",
    "format_kitti_line",
    "ground_truth_to_record",
    "format_sidecar",
    "load_scenes",
    "parse_kitti",
    "parse_sidecar",
    "read_kitti_file",
    "record_to_detection",
    "record_to_ground_truth",
    "scene_from_records",
    "write_detection_file",
    "write_kitti_file",
    "write_label_file",
]

IGNORE_TYPE = "DontCare"
SIDECAR_SUFFIX = ".sge"

# filler values for fields the toolkit does not model, matching KITTI's
# "unknown" conventions
_UNKNOWN_TRUNCATION = -1.0
_UNKNOWN_OCCLUSION = -1
_UNKNOWN_ALPHA = -10.0
_UNKNOWN_DIMENSIONS = (-1.0, -1.0, -1.0)
_UNKNOWN_LOCATION = (-1000.0, -1000.0, -1000.0)
_UNKNOWN_ROTATION = -10.0


class MalformedLine(ValueError):
    """A line that cannot be parsed; carries the 1-based line number and a reason."""

    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


@dataclass(frozen=True)
class KittiLabelRecord:
    """One parsed line; score is None for label lines and set for detection lines."""

    type: str
    truncation: float
    occlusion: int
    alpha: float
    bbox: Box
    dimensions: tuple[float, float, float]
    location: tuple[float, float, float]
    rotation_y: float
    score: Optional[float] = None

    @property
    def is_ignore(self) -> bool:
        return self.type == IGNORE_TYPE


def _parse_line(line_no: int, fields: list[str]) -> KittiLabelRecord:
    if len(fields) not in (15, 16):
        raise MalformedLine(
            line_no, f"expected 15 or 16 fields, got {len(fields)}"
        )
    try:
        values = [float(v) for v in fields[1:]]
    except ValueError as exc:
        raise MalformedLine(line_no, f"non-numeric field: {exc}") from None
    x1, y1, x2, y2 = values[3:7]
    if x2 < x1 or y2 < y1:
        raise MalformedLine(
            line_no, f"inverted bbox corners ({x1}, {y1}, {x2}, {y2})"
        )
    return KittiLabelRecord(
        type=fields[0],
        truncation=values[0],
        occlusion=int(values[1]),
        alpha=values[2],
        bbox=Box(x1, y1, x2, y2),
        dimensions=(values[7], values[8], values[9]),
        location=(values[10], values[11], values[12]),
        rotation_y=values[13],
        score=values[14] if len(values) == 15 else None,
    )


def parse_kitti(text: str) -> list[KittiLabelRecord]:
    """Parse file content; blank lines are skipped, anything else must be a valid record."""
    records = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields:
            continue
        records.append(_parse_line(line_no, fields))
    return records


def format_kitti_line(record: KittiLabelRecord) -> str:
    parts = [
        record.type,
        f"{record.truncation:.4f}",
        str(record.occlusion),
        f"{record.alpha:.4f}",
        f"{record.bbox.x1:.4f}",
        f"{record.bbox.y1:.4f}",
        f"{record.bbox.x2:.4f}",
        f"{record.bbox.y2:.4f}",
        f"{record.dimensions[0]:.4f}",
        f"{record.dimensions[1]:.4f}",
        f"{record.dimensions[2]:.4f}",
        f"{record.location[0]:.4f}",
        f"{record.location[1]:.4f}",
        f"{record.location[2]:.4f}",
        f"{record.rotation_y:.4f}",
    ]
    if record.score is not None:
        parts.append(f"{record.score:.4f}")
    return " ".join(parts)


def write_kitti_file(records: Iterable[KittiLabelRecord]) -> str:
    return "".join(format_kitti_line(r) + "\n" for r in records)


def format_sidecar(embeddings: Iterable[float]) -> str:
    return "".join(format(float(e), ".17g") + "\n" for e in embeddings)


def parse_sidecar(text: str) -> list[float]:
    values = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped:
            continue
        try:
            values.append(float(stripped))
        except ValueError:
            raise MalformedLine(line_no, f"non-numeric embedding {stripped!r}") from None
    return values


def read_kitti_file(path: Union[str, Path]) -> list[KittiLabelRecord]:
    path = Path(path)
    try:
        return parse_kitti(path.read_text())
    except MalformedLine as exc:
        raise MalformedLine(exc.line_no, f"{path}: {exc.reason}") from None


def write_label_file(path: Union[str, Path], records: Iterable[KittiLabelRecord]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(write_kitti_file(replace(r, score=None) for r in records))


def write_detection_file(
    path: Union[str, Path],
    records: Sequence[KittiLabelRecord],
    embeddings: Optional[Sequence[float]] = None,
) -> None:
    """Write detection records (which must carry scores) plus an optional sidecar."""
    path = Path(path)
    for r in records:
        if r.score is None:
            raise ValueError(f"{path}: detection record for {r.type} has no score")
    if embeddings is not None and len(embeddings) != len(records):
        raise ValueError(
            f"{path}: {len(embeddings)} embeddings for {len(records)} records"
        )
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(write_kitti_file(records))
    if embeddings is not None:
        sidecar_path(path).write_text(format_sidecar(embeddings))


def sidecar_path(detection_path: Union[str, Path]) -> Path:
    p = Path(detection_path)
    return p.with_name(p.name + SIDECAR_SUFFIX)


def class_map_for(records: Iterable[KittiLabelRecord]) -> dict[str, int]:
    """Stable mapping from type string to class id: sorted unique non-ignore types."""
    names = sorted({r.type for r in records if not r.is_ignore})
    return {name: i for i, name in enumerate(names)}


def record_to_ground_truth(
    record: KittiLabelRecord, object_id: int, class_map: dict[str, int]
) -> GroundTruth:
    return GroundTruth(
        box=record.bbox,
        class_id=class_map.get(record.type, -1),
        object_id=object_id,
        truncation=record.truncation,
        occlusion=record.occlusion,
        ignore=record.is_ignore,
    )


def record_to_detection(
    record: KittiLabelRecord,
    class_map: dict[str, int],
    embedding: Optional[float] = None,
) -> Detection:
    if record.score is None:
        raise ValueError(f"record for {record.type} has no score")
    return Detection(
        box=record.bbox,
        score=record.score,
        embedding=embedding,
        class_id=class_map.get(record.type, -1),
    )


def ground_truth_to_record(
    gt: GroundTruth, class_names: dict[int, str]
) -> KittiLabelRecord:
    return KittiLabelRecord(
        type=IGNORE_TYPE if gt.ignore else class_names.get(gt.class_id, "Unknown"),
        truncation=gt.truncation,
        occlusion=gt.occlusion,
        alpha=_UNKNOWN_ALPHA,
        bbox=gt.box,
        dimensions=_UNKNOWN_DIMENSIONS,
        location=_UNKNOWN_LOCATION,
        rotation_y=_UNKNOWN_ROTATION,
        score=None,
    )


def detection_to_record(det: Detection, class_names: dict[int, str]) -> KittiLabelRecord:
    return KittiLabelRecord(
        type=class_names.get(det.class_id, "Unknown"),
        truncation=_UNKNOWN_TRUNCATION,
        occlusion=_UNKNOWN_OCCLUSION,
        alpha=_UNKNOWN_ALPHA,
        bbox=det.box,
        dimensions=_UNKNOWN_DIMENSIONS,
        location=_UNKNOWN_LOCATION,
        rotation_y=_UNKNOWN_ROTATION,
        score=det.score,
    )


def scene_from_records(
    scene_id: str,
    label_records: Sequence[KittiLabelRecord],
    det_records: Sequence[KittiLabelRecord],
    class_map: dict[str, int],
    embeddings: Optional[Sequence[float]] = None,
    image_size: Optional[tuple[float, float]] = None,
) -> Scene:
    if embeddings is not None and len(embeddings) != len(det_records):
        raise ValueError(
            f"scene {scene_id}: {len(embeddings)} embeddings for "
            f"{len(det_records)} detections"
        )
    gts = [
        record_to_ground_truth(r, object_id=j, class_map=class_map)
        for j, r in enumerate(label_records)
    ]
    dets = [
        record_to_detection(
            r, class_map, embedding=embeddings[i] if embeddings is not None else None
        )
        for i, r in enumerate(det_records)
    ]
    return Scene(id=scene_id, detections=dets, ground_truths=gts, image_size=image_size)


def _record_files(path: Path) -> list[Path]:
    if path.is_file():
        return [path]
    if path.is_dir():
        return sorted(
            p for p in path.iterdir()
            if p.suffix == ".txt" and not p.name.endswith(SIDECAR_SUFFIX)
        )
    raise FileNotFoundError(f"no such file or directory: {path}")


def load_scenes(
    labels_path: Union[str, Path],
    detections_path: Optional[Union[str, Path]] = None,
    image_size: Optional[tuple[float, float]] = None,
) -> list[Scene]:
    """Load scenes from label and detection files or directories, paired by file stem.

    Every detection file must have a label file counterpart. Embedding sidecars
    are picked up when present. A missing sidecar leaves embeddings unset; NMS
    variants that need them reject such scenes later.
    """
    labels_path = Path(labels_path)
    label_files = {p.stem: p for p in _record_files(labels_path)}
    det_files: dict[str, Path] = {}
    if detections_path is not None:
        det_files = {p.stem: p for p in _record_files(Path(detections_path))}
        missing = sorted(set(det_files) - set(label_files))
        if missing:
            raise FileNotFoundError(
                f"detections without matching labels: {', '.join(missing[:5])}"
            )
    label_records = {stem: read_kitti_file(p) for stem, p in label_files.items()}
    det_records = {stem: read_kitti_file(p) for stem, p in det_files.items()}
    all_records = [r for rs in label_records.values() for r in rs]
    all_records += [r for rs in det_records.values() for r in rs]
    class_map = class_map_for(all_records)
    scenes = []
    for stem in sorted(label_files):
        dets = det_records.get(stem, [])
        embeddings = None
        if stem in det_files:
            sc = sidecar_path(det_files[stem])
            if sc.exists():
                embeddings = parse_sidecar(sc.read_text())
                if len(embeddings) != len(dets):
                    raise MalformedLine(
                        0,
                        f"{sc}: {len(embeddings)} embeddings for {len(dets)} detections",
                    )
        scenes.append(
            scene_from_records(
                stem,
                label_records[stem],
                dets,
                class_map,
                embeddings=embeddings,
                image_size=image_size,
            )
        )
    return scenes


def write_descriptor_file(path: Union[str, Path], descriptors: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = np.asarray(descriptors, dtype=float)
    lines = [" ".join(format(v, ".9g") for v in row) for row in rows]
    path.write_text("".join(ln + "\n" for ln in lines))


def read_descriptor_file(path: Union[str, Path]) -> np.ndarray:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        return np.zeros((0, 0))
    return np.array([[float(v) for v in ln.split()] for ln in lines])
