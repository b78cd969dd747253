"""Planogram formation from detections, and reference planogram files."""

import json
import logging
import math
from pathlib import Path
from typing import Any, Collection, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from shelfalign.errors import PlanogramValidationError, StackingConstraintError, describe_validation_error
from shelfalign.types import (
    DET_GAP_TOKEN,
    EMPTY_ID,
    GAP_ID,
    REF_GAP_TOKEN,
    SENTINEL_IDS,
    UNKNOWN_ID,
    BoundingBox,
    DetectedObject,
    Planogram,
    PlanogramEntry,
)

logger = logging.getLogger(__name__)

RESERVED_IDS = SENTINEL_IDS | {REF_GAP_TOKEN, DET_GAP_TOKEN, "E", "U"}
_SHORT_SENTINELS = {"E": EMPTY_ID, "U": UNKNOWN_ID}

# Stacked: horizontal intervals overlap at least this much, vertical ones at most this much
STACK_MIN_HORIZONTAL_OVERLAP = 0.5
STACK_MAX_VERTICAL_OVERLAP = 0.2


class ProductItem(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id: str = Field(min_length=1)
    quantity: int
    image: Optional[str] = None
    bbox: Optional[List[float]] = Field(None, min_length=4, max_length=4)


class PlanogramDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")

    shelf_id: str = ""
    products: List[ProductItem]


def _interval_overlap(a0: float, a1: float, b0: float, b1: float) -> float:
    """Overlap length relative to the shorter interval."""
    shorter = min(a1 - a0, b1 - b0)
    if shorter <= 0:
        return 0.0
    return max(0.0, min(a1, b1) - max(a0, b0)) / shorter


def is_stacked(a: BoundingBox, b: BoundingBox) -> bool:
    horizontal = _interval_overlap(a.x0, a.x1, b.x0, b.x1)
    vertical = _interval_overlap(a.y0, a.y1, b.y0, b.y1)
    return horizontal >= STACK_MIN_HORIZONTAL_OVERLAP and vertical <= STACK_MAX_VERTICAL_OVERLAP


def check_stacking(detections: Sequence[DetectedObject]) -> None:
    """Raise StackingConstraintError for the first stacked pair of different types."""
    real = [d for d in detections if d.is_real]
    for i, first in enumerate(real):
        for second in real[i + 1:]:
            if first.object_id != second.object_id and is_stacked(first.box, second.box):
                raise StackingConstraintError(first, second)


def _detection_order(detection: DetectedObject) -> Tuple[float, float, str, float]:
    # Equal x: the stronger (earlier detected) object goes first
    return (detection.center[0], -detection.vote, detection.object_id, detection.center[1])


def _units(detection: DetectedObject, mean_width: float, unknown_units_by_width: bool) -> int:
    if detection.object_id == UNKNOWN_ID and unknown_units_by_width and mean_width > 0:
        if detection.box.width > 2.0 * mean_width:
            return int(math.ceil(detection.box.width / mean_width))
    return detection.units


def form_planogram(detections: Sequence[DetectedObject], unknown_units_by_width: bool = False,
                   shelf_id: str = "") -> Planogram:
    """Sort detections left to right and merge runs of one type into groups."""
    check_stacking(detections)
    real_widths = [d.box.width for d in detections if d.is_real]
    mean_width = float(np.mean(real_widths)) if real_widths else 0.0

    entries: List[PlanogramEntry] = []
    for detection in sorted(detections, key=_detection_order):
        units = _units(detection, mean_width, unknown_units_by_width)
        if entries and entries[-1].group_type == detection.object_id:
            last = entries[-1]
            entries[-1] = PlanogramEntry(last.group_type, last.quantity + units, last.box.union(detection.box))
        else:
            entries.append(PlanogramEntry(detection.object_id, units, detection.box))

    logger.debug(f"Formed planogram with {len(entries)} groups from {len(detections)} detections")
    return Planogram(tuple(entries), shelf_id=shelf_id)


def _validated_entries(document: PlanogramDocument, known_ids: Optional[Collection[str]],
                       allow_sentinels: bool) -> List[PlanogramEntry]:
    if not document.products:
        raise PlanogramValidationError("planogram has no products")

    entries: List[PlanogramEntry] = []
    for index, item in enumerate(document.products):
        group_type = _SHORT_SENTINELS.get(item.id, item.id) if allow_sentinels else item.id
        if not allow_sentinels and group_type in RESERVED_IDS:
            raise PlanogramValidationError(f"products[{index}]: id {item.id!r} is reserved")
        if allow_sentinels and group_type in (REF_GAP_TOKEN, DET_GAP_TOKEN, GAP_ID):
            raise PlanogramValidationError(f"products[{index}]: gap tokens cannot appear in a planogram")
        if known_ids is not None and group_type not in SENTINEL_IDS and group_type not in known_ids:
            raise PlanogramValidationError(f"products[{index}]: unknown object id {item.id!r}")
        if item.quantity < 1:
            raise PlanogramValidationError(
                f"products[{index}]: quantity must be positive, got {item.quantity}"
            )
        if entries and entries[-1].group_type == group_type:
            raise PlanogramValidationError(
                f"products[{index}]: {item.id!r} repeats the previous group; merge them into one entry"
            )
        box = BoundingBox.from_list(item.bbox) if item.bbox is not None else None
        entries.append(PlanogramEntry(group_type, item.quantity, box))
    return entries


def planogram_from_dict(raw: Any, known_ids: Optional[Collection[str]] = None,
                        detected: bool = False) -> Planogram:
    """Build a planogram from its JSON shape.

    Detected planograms may contain the EMPTY/UNKNOWN ids (``__empty__``/``E``,
    ``__unknown__``/``U``); reference planograms may not.
    """
    try:
        document = PlanogramDocument.model_validate(raw)
    except ValidationError as e:
        raise PlanogramValidationError(f"invalid planogram: {describe_validation_error(e)}") from e
    entries = _validated_entries(document, known_ids, allow_sentinels=detected)
    return Planogram(tuple(entries), shelf_id=document.shelf_id)


def _read_document(path: Path) -> Any:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise PlanogramValidationError(f"{path}: not valid JSON: {e}") from e


def load_reference_with_images(path: Union[str, Path],
                               known_ids: Optional[Collection[str]] = None
                               ) -> Tuple[Planogram, Dict[str, Path]]:
    """Reference planogram plus its model image paths, resolved against the file's directory."""
    path = Path(path)
    raw = _read_document(path)
    try:
        planogram = planogram_from_dict(raw, known_ids=known_ids)
    except PlanogramValidationError as e:
        raise PlanogramValidationError(f"{path}: {e}") from e

    images: Dict[str, Path] = {}
    for item in raw["products"]:
        if item.get("image"):
            images.setdefault(item["id"], (path.parent / item["image"]).resolve())
    logger.info(f"Loaded reference planogram {planogram.shelf_id or path.name}: {planogram.tokens()}")
    return planogram, images


def load_reference(path: Union[str, Path], known_ids: Optional[Collection[str]] = None) -> Planogram:
    return load_reference_with_images(path, known_ids)[0]


def planogram_to_dict(planogram: Planogram) -> Dict[str, Any]:
    products = []
    for entry in planogram.entries:
        item: Dict[str, Any] = {"id": entry.group_type, "quantity": entry.quantity}
        if entry.box is not None:
            item["bbox"] = entry.box.to_list()
        products.append(item)
    return {"shelf_id": planogram.shelf_id, "products": products}
