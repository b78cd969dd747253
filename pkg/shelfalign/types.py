from dataclasses import dataclass, field
from enum import Enum, IntEnum
from fractions import Fraction
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

# Sentinel group types. Reference planograms may not use them as product ids.
EMPTY_ID = "__empty__"
UNKNOWN_ID = "__unknown__"
GAP_ID = "__gap__"
SENTINEL_IDS = frozenset({EMPTY_ID, UNKNOWN_ID, GAP_ID})

# Short tokens used in tables: E/U on the detected side, A (ref gap) / D (det gap)
REF_GAP_TOKEN = "A"
DET_GAP_TOKEN = "D"
_DISPLAY_TOKENS = {EMPTY_ID: "E", UNKNOWN_ID: "U"}


def display_token(group_type: str) -> str:
    return _DISPLAY_TOKENS.get(group_type, group_type)


@dataclass(frozen=True)
class BoundingBox:
    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return max(0.0, self.width) * max(0.0, self.height)

    @property
    def center(self) -> Tuple[float, float]:
        return ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)

    def clamped(self, width: float, height: float) -> "BoundingBox":
        return BoundingBox(
            x0=min(max(self.x0, 0.0), width),
            y0=min(max(self.y0, 0.0), height),
            x1=min(max(self.x1, 0.0), width),
            y1=min(max(self.y1, 0.0), height),
        )

    def expanded(self, fraction: float) -> "BoundingBox":
        """Grow width and height by ``fraction``, split evenly between both sides."""
        dx = self.width * fraction / 2.0
        dy = self.height * fraction / 2.0
        return BoundingBox(self.x0 - dx, self.y0 - dy, self.x1 + dx, self.y1 + dy)

    def union(self, other: "BoundingBox") -> "BoundingBox":
        return BoundingBox(
            min(self.x0, other.x0), min(self.y0, other.y0),
            max(self.x1, other.x1), max(self.y1, other.y1),
        )

    def to_list(self) -> List[float]:
        return [float(self.x0), float(self.y0), float(self.x1), float(self.y1)]

    @classmethod
    def from_list(cls, values: List[float]) -> "BoundingBox":
        x0, y0, x1, y1 = values
        return cls(float(x0), float(y0), float(x1), float(y1))


class RoiPolarity(str, Enum):
    INCLUDE = "include"
    EXCLUDE = "exclude"


@dataclass(frozen=True)
class RoiMask:
    regions: Tuple[BoundingBox, ...] = ()
    polarity: RoiPolarity = RoiPolarity.EXCLUDE


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Row-major 8-bit intensity grid, shape (height, width)."""

    pixels: np.ndarray

    def __post_init__(self):
        if self.pixels.ndim != 2 or self.pixels.shape[0] == 0 or self.pixels.shape[1] == 0:
            raise ValueError(f"GrayImage needs a non-empty 2-D grid, got shape {self.pixels.shape}")
        if self.pixels.dtype != np.uint8:
            raise ValueError(f"GrayImage pixels must be uint8, got {self.pixels.dtype}")

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])


class DescriptorKind(IntEnum):
    BINARY = 0
    FLOAT = 1


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    orientation: float
    scale: int


@dataclass(frozen=True, eq=False)
class FeatureSet:
    """Keypoints and descriptors of one image, stored column-wise.

    Binary descriptors are packed bytes (N, bytes); float descriptors are (N, length).
    """

    source_width: int
    source_height: int
    kind: DescriptorKind
    xs: np.ndarray
    ys: np.ndarray
    orientations: np.ndarray
    scales: np.ndarray
    descriptors: np.ndarray

    def __len__(self) -> int:
        return int(self.xs.shape[0])

    @property
    def descriptor_length(self) -> int:
        return int(self.descriptors.shape[1])

    def keypoint(self, index: int) -> Keypoint:
        return Keypoint(
            x=float(self.xs[index]),
            y=float(self.ys[index]),
            orientation=float(self.orientations[index]),
            scale=int(self.scales[index]),
        )

    def subset(self, indices: np.ndarray) -> "FeatureSet":
        indices = np.asarray(indices, dtype=np.int64)
        return FeatureSet(
            source_width=self.source_width,
            source_height=self.source_height,
            kind=self.kind,
            xs=self.xs[indices],
            ys=self.ys[indices],
            orientations=self.orientations[indices],
            scales=self.scales[indices],
            descriptors=self.descriptors[indices],
        )

    @classmethod
    def empty(cls, width: int, height: int, kind: DescriptorKind = DescriptorKind.BINARY,
              length: int = 32) -> "FeatureSet":
        dtype = np.uint8 if kind == DescriptorKind.BINARY else np.float32
        return cls(
            source_width=width,
            source_height=height,
            kind=kind,
            xs=np.zeros(0, dtype=np.float32),
            ys=np.zeros(0, dtype=np.float32),
            orientations=np.zeros(0, dtype=np.float32),
            scales=np.zeros(0, dtype=np.uint8),
            descriptors=np.zeros((0, length), dtype=dtype),
        )


@dataclass(frozen=True)
class ProductModel:
    """One reference product: its id, model-image size (w_j, h_j) and features."""

    object_id: str
    width: int
    height: int
    features: FeatureSet


@dataclass(frozen=True)
class FeatureMatch:
    shelf_index: int
    model_index: int
    distance: float
    ratio: float


@dataclass(frozen=True, eq=False)
class VoteMatrix:
    object_id: str
    values: np.ndarray
    suppression_radius: float

    @property
    def width(self) -> int:
        return int(self.values.shape[1])

    @property
    def height(self) -> int:
        return int(self.values.shape[0])


@dataclass(frozen=True)
class CandidateCenter:
    object_id: str
    x: float
    y: float
    vote: float


@dataclass(frozen=True)
class DetectedObject:
    object_id: str
    center: Tuple[float, float]
    box: BoundingBox
    vote: float
    units: int = 1

    @property
    def is_real(self) -> bool:
        return self.object_id not in SENTINEL_IDS

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.object_id,
            "center": [float(self.center[0]), float(self.center[1])],
            "bbox": self.box.to_list(),
            "vote": float(self.vote),
        }


@dataclass(frozen=True)
class PlanogramEntry:
    group_type: str
    quantity: int
    box: Optional[BoundingBox] = None

    @property
    def token(self) -> str:
        return display_token(self.group_type)


@dataclass(frozen=True)
class Planogram:
    entries: Tuple[PlanogramEntry, ...]
    shelf_id: str = ""

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def total_quantity(self) -> int:
        return sum(entry.quantity for entry in self.entries)

    def tokens(self) -> List[Tuple[str, int]]:
        return [(entry.token, entry.quantity) for entry in self.entries]


class ComplianceLabel(str, Enum):
    MT = "MT"
    MI = "MI"
    ME = "ME"
    NM = "NM"


class Move(IntEnum):
    """Traceback direction of a score-matrix cell (rows: detected, columns: reference)."""

    DIAG = 0
    LEFT = 1  # from F(d, t-1): reference entry unmatched, 'D' on the detected side
    UP = 2    # from F(d-1, t): detected entry unmatched, 'A' on the reference side


@dataclass(frozen=True, eq=False)
class ScoreMatrix:
    values: np.ndarray
    moves: np.ndarray

    @property
    def score(self) -> int:
        return int(self.values[-1, -1])


@dataclass(frozen=True)
class AlignedPair:
    """One aligned column. ``None`` on a side is a gap ('A' for ref, 'D' for det)."""

    ref: Optional[PlanogramEntry]
    det: Optional[PlanogramEntry]
    label: ComplianceLabel

    def __post_init__(self):
        if self.ref is None and self.det is None:
            raise ValueError("an aligned pair cannot be a gap on both sides")

    @property
    def ref_token(self) -> Tuple[str, int]:
        return (REF_GAP_TOKEN, 0) if self.ref is None else (self.ref.token, self.ref.quantity)

    @property
    def det_token(self) -> Tuple[str, int]:
        return (DET_GAP_TOKEN, 0) if self.det is None else (self.det.token, self.det.quantity)


@dataclass(frozen=True)
class AlignmentOutcome:
    pairs: Tuple[AlignedPair, ...]
    mu: Fraction
    score: int

    @property
    def labels(self) -> List[ComplianceLabel]:
        return [pair.label for pair in self.pairs]


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    alpha: float
    tau_match: float
    tau_vote_scale: float
    new_detections: int
    mu: Fraction
    accepted: bool
    roi_regions: int


@dataclass(frozen=True)
class ComplianceReport:
    shelf_id: str
    final_mu: Fraction
    iterations_run: int
    outcome: AlignmentOutcome
    detections: Tuple[DetectedObject, ...]
    planogram: Planogram
    per_iteration: Tuple[IterationRecord, ...] = field(default_factory=tuple)


@dataclass(frozen=True)
class Metrics:
    precision: float
    recall: float
    f1: float
    true_positives: int
    false_positives: int
    false_negatives: int

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int) -> "Metrics":
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        return cls(precision, recall, f1, tp, fp, fn)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "true_positives": self.true_positives,
            "false_positives": self.false_positives,
            "false_negatives": self.false_negatives,
        }


@dataclass(frozen=True)
class GroundTruthBox:
    object_id: str
    box: BoundingBox


@dataclass(frozen=True)
class GroupLabel:
    """Expected label of one aligned group; ``group`` is a product id or 'A' for extras."""

    group: str
    label: ComplianceLabel


@dataclass(frozen=True)
class GroundTruth:
    boxes: Tuple[GroundTruthBox, ...]
    planogram: Planogram
    compliance_labels: Tuple[GroupLabel, ...]
