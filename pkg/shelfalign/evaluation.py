"""Detection and compliance metrics, and a seeded synthetic shelf generator with exact ground truth."""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from shelfalign.alignment import align
from shelfalign.detection import iou
from shelfalign.errors import LayoutError, ShelfAlignError, describe_validation_error
from shelfalign.planogram import planogram_from_dict, planogram_to_dict
from shelfalign.types import (
    EMPTY_ID,
    REF_GAP_TOKEN,
    AlignmentOutcome,
    BoundingBox,
    ComplianceLabel,
    DetectedObject,
    GrayImage,
    GroundTruth,
    GroundTruthBox,
    GroupLabel,
    Metrics,
    Planogram,
    PlanogramEntry,
)

logger = logging.getLogger(__name__)

BACKGROUND_LEVEL = 128
EMPTY_SLOT_LEVEL = 15
SPRITE_HEIGHT = 120
SPRITE_WIDTHS = (70, 100)
MAX_JITTER = 5


def detection_metrics(detections: Sequence[DetectedObject], gt: GroundTruth, iou_thresh: float = 0.25) -> Metrics:
    """Greedy one-to-one matching by descending IoU; a matched pair counts only if ids agree."""
    if not 0.0 < iou_thresh <= 1.0:
        raise ValueError(f"IoU threshold must lie in (0, 1], got {iou_thresh}")
    real = sorted(
        (d for d in detections if d.is_real),
        key=lambda d: (d.object_id, d.box.to_list(), -d.vote),
    )
    pairs = []
    for i, detection in enumerate(real):
        for j, truth in enumerate(gt.boxes):
            overlap = iou(detection.box, truth.box)
            if overlap > iou_thresh or (overlap == 1.0 and iou_thresh == 1.0):
                pairs.append((overlap, i, j))
    pairs.sort(key=lambda item: (-item[0], item[1], item[2]))

    used_det, used_gt = set(), set()
    tp = fp = 0
    for _, i, j in pairs:
        if i in used_det or j in used_gt:
            continue
        used_det.add(i)
        used_gt.add(j)
        if real[i].object_id == gt.boxes[j].object_id:
            tp += 1
        else:
            fp += 1
    fp += len(real) - len(used_det)
    fn = len(gt.boxes) - len(used_gt)
    return Metrics.from_counts(tp, fp, fn)


def _group_keys(groups: Iterable[Optional[str]]) -> List[Tuple[int, int]]:
    """Slot keys: reference groups by order, extra groups by order within their stretch."""
    keys = []
    ref_seen = extra_seen = 0
    for group in groups:
        if group is None:
            keys.append((ref_seen, extra_seen + 1))
            extra_seen += 1
        else:
            ref_seen += 1
            extra_seen = 0
            keys.append((ref_seen, 0))
    return keys


def outcome_group_labels(outcome: AlignmentOutcome) -> List[GroupLabel]:
    return [
        GroupLabel(pair.ref.group_type if pair.ref is not None else REF_GAP_TOKEN, pair.label)
        for pair in outcome.pairs
    ]


def compliance_metrics(outcome: AlignmentOutcome, gt_labels: Sequence[GroupLabel]) -> Metrics:
    predicted_keys = _group_keys(pair.ref.group_type if pair.ref is not None else None for pair in outcome.pairs)
    expected_keys = _group_keys(None if item.group == REF_GAP_TOKEN else item.group for item in gt_labels)
    expected = {key: ComplianceLabel(item.label) for key, item in zip(expected_keys, gt_labels)}

    tp = fp = 0
    for key, pair in zip(predicted_keys, outcome.pairs):
        if expected.get(key) == pair.label:
            tp += 1
        else:
            fp += 1
    fn = len(set(expected) - set(predicted_keys))
    return Metrics.from_counts(tp, fp, fn)


def aggregate_metrics(results: Iterable[Metrics]) -> Metrics:
    """Micro-average: sum the counts, then recompute the ratios."""
    tp = fp = fn = 0
    for metrics in results:
        tp += metrics.true_positives
        fp += metrics.false_positives
        fn += metrics.false_negatives
    return Metrics.from_counts(tp, fp, fn)


def render_metrics_table(rows: Sequence[Tuple[str, Metrics]]) -> str:
    header = ("shelf", "P", "R", "F1", "TP", "FP", "FN")
    body = [
        (name, f"{m.precision:.4f}", f"{m.recall:.4f}", f"{m.f1:.4f}",
         str(m.true_positives), str(m.false_positives), str(m.false_negatives))
        for name, m in rows
    ]
    widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(w) if i == 0 else cell.rjust(w) for i, (cell, w) in enumerate(zip(row, widths)))
             for row in [header] + body]
    return "\n".join(lines) + "\n"


class _GroundTruthBoxItem(BaseModel):
    id: str
    bbox: List[float] = Field(min_length=4, max_length=4)


class _GroundTruthLabelItem(BaseModel):
    group: str
    label: ComplianceLabel


class GroundTruthDocument(BaseModel):
    model_config = ConfigDict(extra="ignore")

    boxes: List[_GroundTruthBoxItem] = Field(default_factory=list)
    labels: List[_GroundTruthLabelItem] = Field(default_factory=list)
    planogram: Optional[Dict[str, Any]] = None


def ground_truth_to_dict(gt: GroundTruth) -> Dict[str, Any]:
    return {
        "boxes": [{"id": item.object_id, "bbox": item.box.to_list()} for item in gt.boxes],
        "labels": [{"group": item.group, "label": item.label.value} for item in gt.compliance_labels],
        "planogram": planogram_to_dict(gt.planogram) if len(gt.planogram) else None,
    }


def ground_truth_from_dict(raw: Any) -> GroundTruth:
    try:
        document = GroundTruthDocument.model_validate(raw)
    except ValidationError as e:
        raise ShelfAlignError(f"invalid ground truth: {describe_validation_error(e)}") from e
    planogram = planogram_from_dict(document.planogram) if document.planogram else Planogram(())
    return GroundTruth(
        boxes=tuple(GroundTruthBox(item.id, BoundingBox.from_list(item.bbox)) for item in document.boxes),
        planogram=planogram,
        compliance_labels=tuple(GroupLabel(item.group, item.label) for item in document.labels),
    )


def load_ground_truth(path: Union[str, Path]) -> GroundTruth:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ShelfAlignError(f"{path}: not valid JSON: {e}") from e
    return ground_truth_from_dict(raw)


def detections_from_dicts(items: Sequence[Mapping[str, Any]]) -> List[DetectedObject]:
    return [
        DetectedObject(
            object_id=item["id"],
            center=(float(item["center"][0]), float(item["center"][1])),
            box=BoundingBox.from_list(item["bbox"]),
            vote=float(item.get("vote", 0.0)),
        )
        for item in items
    ]


class LayoutGroup(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id: str = Field(min_length=1)
    count: int = Field(ge=1)


class Insertion(BaseModel):
    """Something placed after reference group ``after`` (-1 for the left end)."""

    model_config = ConfigDict(extra="forbid")

    after: int = Field(ge=-1)
    id: Optional[str] = None
    count: int = Field(1, ge=1)


class Removal(BaseModel):
    model_config = ConfigDict(extra="forbid")

    group: int = Field(ge=0)
    count: int = Field(1, ge=1)


class Occlusion(BaseModel):
    model_config = ConfigDict(extra="forbid")

    item: int = Field(ge=0)
    fraction: float = Field(gt=0.0, le=0.5)


class Perturbations(BaseModel):
    model_config = ConfigDict(extra="forbid")

    gaps: List[Insertion] = Field(default_factory=list)
    foreign: List[Insertion] = Field(default_factory=list)
    remove: List[Removal] = Field(default_factory=list)
    swap: List[Tuple[int, int]] = Field(default_factory=list)
    stacked: List[int] = Field(default_factory=list)
    occlusion: List[Occlusion] = Field(default_factory=list)
    brightness: int = Field(0, ge=-100, le=100)
    jitter: int = Field(0, ge=0, le=MAX_JITTER)


class ShelfLayout(BaseModel):
    model_config = ConfigDict(extra="forbid")

    shelf_id: str = "synthetic"
    groups: List[LayoutGroup]
    spacing: int = Field(12, ge=0)
    margin: int = Field(8, ge=0)
    width: Optional[int] = Field(None, ge=1)
    seed: int = 0
    perturbations: Perturbations = Field(default_factory=Perturbations)

    @field_validator("groups")
    @classmethod
    def _groups_present(cls, value: List[LayoutGroup]) -> List[LayoutGroup]:
        if not value:
            raise ValueError("layout needs at least one product group")
        return value


def load_layout(path: Union[str, Path]) -> ShelfLayout:
    path = Path(path)
    try:
        return ShelfLayout.model_validate(json.loads(path.read_text(encoding="utf-8")))
    except json.JSONDecodeError as e:
        raise LayoutError(f"{path}: not valid JSON: {e}") from e
    except ValidationError as e:
        raise LayoutError(f"{path}: invalid layout: {describe_validation_error(e)}") from e


def random_product_sprite(seed: int, width: int, height: int = SPRITE_HEIGHT) -> GrayImage:
    """Textured rectangle sprite: a bright base with high-contrast random blocks."""
    rng = np.random.default_rng(seed)
    base = int(rng.integers(150, 231))
    pixels = np.full((height, width), base, dtype=np.uint8)
    pixels[:2, :] = pixels[-2:, :] = pixels[:, :2] = pixels[:, -2:] = 70
    for _ in range(int(rng.integers(14, 22))):
        w = int(rng.integers(6, max(7, width // 3)))
        h = int(rng.integers(6, max(7, height // 4)))
        x = int(rng.integers(3, max(4, width - w - 3)))
        y = int(rng.integers(3, max(4, height - h - 3)))
        level = int(rng.choice([rng.integers(70, base - 40 + 1), rng.integers(min(base + 40, 250), 251)]))
        pixels[y:y + h, x:x + w] = level
    return GrayImage(pixels)


def default_sprites(object_ids: Sequence[str], seed: int = 0) -> Dict[str, GrayImage]:
    rng = np.random.default_rng(seed)
    sprites = {}
    for index, object_id in enumerate(dict.fromkeys(object_ids)):
        width = int(rng.integers(SPRITE_WIDTHS[0], SPRITE_WIDTHS[1] + 1))
        sprites[object_id] = random_product_sprite(seed * 1009 + index + 1, width)
    return sprites


def reference_planogram(layout: ShelfLayout) -> Planogram:
    entries = []
    for group in layout.groups:
        if entries and entries[-1].group_type == group.id:
            raise LayoutError(f"adjacent layout groups share id {group.id!r}")
        entries.append(PlanogramEntry(group.id, group.count))
    return Planogram(tuple(entries), shelf_id=layout.shelf_id)


def _physical_slots(layout: ShelfLayout) -> List[List[str]]:
    """Left-to-right slots; each slot is a stack of ids (bottom first)."""
    groups = [[group.id, group.count] for group in layout.groups]
    p = layout.perturbations
    for removal in p.remove:
        if removal.group >= len(groups):
            raise LayoutError(f"remove refers to missing group {removal.group}")
        groups[removal.group][1] = max(0, groups[removal.group][1] - removal.count)

    blocks: List[List[List[str]]] = [[[gid] for _ in range(count)] for gid, count in groups]
    for index in p.stacked:
        if index >= len(blocks) or not blocks[index]:
            raise LayoutError(f"stacked refers to missing or empty group {index}")
        blocks[index][0].append(blocks[index][0][0])
    for first, second in p.swap:
        if max(first, second) >= len(blocks):
            raise LayoutError(f"swap refers to missing group ({first}, {second})")
        blocks[first], blocks[second] = blocks[second], blocks[first]

    inserted: Dict[int, List[List[str]]] = {}
    for gap in p.gaps:
        inserted.setdefault(gap.after, []).extend([[EMPTY_ID]] * gap.count)
    for item in p.foreign:
        if item.id is None:
            raise LayoutError("foreign insertion needs an id")
        inserted.setdefault(item.after, []).extend([[item.id]] * item.count)

    slots = [list(s) for s in inserted.get(-1, [])]
    for index, block in enumerate(blocks):
        slots.extend(block)
        slots.extend(list(s) for s in inserted.get(index, []))
    if not slots:
        raise LayoutError("layout places no products")
    return slots


def _true_planogram(slots: Sequence[Sequence[str]], shelf_id: str) -> Planogram:
    entries: List[PlanogramEntry] = []
    for stack in slots:
        group_type, units = stack[0], len(stack)
        if entries and entries[-1].group_type == group_type:
            entries[-1] = PlanogramEntry(group_type, entries[-1].quantity + units)
        else:
            entries.append(PlanogramEntry(group_type, units))
    return Planogram(tuple(entries), shelf_id=shelf_id)


def synth_shelf(layout: ShelfLayout, product_images: Mapping[str, GrayImage]) -> Tuple[GrayImage, GroundTruth]:
    """Composite a single-row shelf from product sprites, bottom aligned on a gray background."""
    slots = _physical_slots(layout)
    missing = sorted({sid for stack in slots for sid in stack if sid != EMPTY_ID} - set(product_images))
    if missing:
        raise LayoutError(f"no product image for {', '.join(missing)}")

    real_widths = [product_images[stack[0]].width for stack in slots if stack[0] != EMPTY_ID]
    slot_width = int(round(np.mean(real_widths))) if real_widths else SPRITE_WIDTHS[0]
    widths = [slot_width if stack[0] == EMPTY_ID else product_images[stack[0]].width for stack in slots]
    item_height = max(product_images[sid].height for stack in slots for sid in stack if sid != EMPTY_ID) \
        if real_widths else SPRITE_HEIGHT
    tallest = max(
        sum(product_images[sid].height for sid in stack) if stack[0] != EMPTY_ID else item_height
        for stack in slots
    )

    p = layout.perturbations
    needed = 2 * layout.margin + sum(widths) + layout.spacing * (len(slots) - 1) + 2 * p.jitter
    canvas_width = layout.width or needed
    if needed > canvas_width:
        raise LayoutError(f"products need {needed} px but the canvas is {canvas_width} px wide")

    rng = np.random.default_rng(layout.seed)
    canvas = np.full((tallest, canvas_width), BACKGROUND_LEVEL, dtype=np.int16)
    boxes: List[GroundTruthBox] = []
    x = layout.margin + p.jitter
    occluded = {o.item: o.fraction for o in p.occlusion}
    item_index = 0
    for stack, width in zip(slots, widths):
        offset = int(rng.integers(-p.jitter, p.jitter + 1)) if p.jitter else 0
        left = x + offset
        if stack[0] == EMPTY_ID:
            canvas[tallest - item_height:, left:left + width] = EMPTY_SLOT_LEVEL
        else:
            bottom = tallest
            for sid in stack:
                sprite = product_images[sid].pixels
                top = bottom - sprite.shape[0]
                canvas[top:bottom, left:left + sprite.shape[1]] = sprite
                if item_index in occluded:
                    cover = int(round(sprite.shape[1] * occluded[item_index]))
                    canvas[top:bottom, left + sprite.shape[1] - cover:left + sprite.shape[1]] = BACKGROUND_LEVEL
                boxes.append(GroundTruthBox(sid, BoundingBox(left, top, left + sprite.shape[1], bottom)))
                bottom = top
                item_index += 1
        x += width + layout.spacing

    if p.brightness:
        canvas += p.brightness
    image = GrayImage(np.clip(canvas, 0, 255).astype(np.uint8))

    reference = reference_planogram(layout)
    truth = _true_planogram(slots, layout.shelf_id)
    labels = outcome_group_labels(align(truth, reference))
    logger.info(f"Synthesized {layout.shelf_id}: {canvas_width}x{tallest}, {len(boxes)} products")
    return image, GroundTruth(boxes=tuple(boxes), planogram=reference, compliance_labels=tuple(labels))
