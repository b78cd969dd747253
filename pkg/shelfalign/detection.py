import logging
import math
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image, ImageDraw

from shelfalign import outputs
from shelfalign.config import EmptySpaceSettings
from shelfalign.types import (
    EMPTY_ID,
    UNKNOWN_ID,
    BoundingBox,
    CandidateCenter,
    DetectedObject,
    GrayImage,
)

logger = logging.getLogger(__name__)

OVERLAY_COLORS = {
    EMPTY_ID: (0, 0, 255),
    UNKNOWN_ID: (255, 0, 0),
}
DETECTED_COLOR = (0, 255, 0)


def fit_box(center: CandidateCenter, model_width: float, model_height: float, beta: float,
            shelf_width: float, shelf_height: float) -> BoundingBox:
    """Scaled model footprint around a center, clamped to the shelf."""
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    half_w = beta * model_width / 2.0
    half_h = beta * model_height / 2.0
    box = BoundingBox(center.x - half_w, center.y - half_h, center.x + half_w, center.y + half_h)
    return box.clamped(shelf_width, shelf_height)


def footprint_fraction(box: BoundingBox, model_width: float, model_height: float, beta: float) -> float:
    """Share of the scaled model footprint a (clamped) box still covers."""
    full = beta * model_width * beta * model_height
    return box.area / full if full > 0 else 0.0


def iou(a: BoundingBox, b: BoundingBox) -> float:
    inter_w = min(a.x1, b.x1) - max(a.x0, b.x0)
    inter_h = min(a.y1, b.y1) - max(a.y0, b.y0)
    if inter_w <= 0 or inter_h <= 0:
        return 0.0
    intersection = inter_w * inter_h
    union = a.area + b.area - intersection
    return intersection / union if union > 0 else 0.0


def suppress(candidates: Sequence[Tuple[CandidateCenter, BoundingBox]], overlap_thresh: float = 0.2,
             kept: Sequence[DetectedObject] = ()) -> List[DetectedObject]:
    """Greedy NMS by descending vote; ``kept`` detections are retained first and never displaced."""
    if not 0.0 < overlap_thresh < 1.0:
        raise ValueError(f"overlap threshold must lie in (0, 1), got {overlap_thresh}")

    ordered = sorted(candidates, key=lambda item: (-item[0].vote, item[0].object_id, item[0].x, item[0].y))
    survivors = list(kept)
    for center, box in ordered:
        if all(iou(box, other.box) <= overlap_thresh for other in survivors):
            survivors.append(DetectedObject(center.object_id, (center.x, center.y), box, center.vote))
    logger.debug(f"NMS kept {len(survivors) - len(kept)} of {len(candidates)} candidates")
    return survivors


def _covered_intervals(boxes: Sequence[BoundingBox]) -> List[Tuple[float, float]]:
    merged: List[List[float]] = []
    for x0, x1 in sorted((b.x0, b.x1) for b in boxes):
        if merged and x0 <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], x1)
        else:
            merged.append([x0, x1])
    return [(a, b) for a, b in merged]


def _uncovered_spans(boxes: Sequence[BoundingBox], width: float) -> List[Tuple[float, float]]:
    spans = []
    cursor = 0.0
    for x0, x1 in _covered_intervals(boxes):
        if x0 > cursor:
            spans.append((cursor, min(x0, width)))
        cursor = max(cursor, x1)
    if cursor < width:
        spans.append((cursor, width))
    return spans


def _dark_blocks(column_means: np.ndarray, start: float, stop: float, window: int, stride: int,
                 threshold: float) -> List[Tuple[int, int]]:
    """Merged runs of template windows whose mean intensity is below ``threshold``."""
    lo, hi = math.ceil(start), math.floor(stop)
    if hi - lo < window:
        return []
    starts = list(range(lo, hi - window + 1, stride))
    if starts[-1] != hi - window:
        starts.append(hi - window)

    sums = np.concatenate([[0.0], np.cumsum(column_means)])
    blocks: List[List[int]] = []
    for s in starts:
        if (sums[s + window] - sums[s]) / window < threshold:
            if blocks and s <= blocks[-1][1]:
                blocks[-1][1] = s + window
            else:
                blocks.append([s, s + window])
    return [(a, b) for a, b in blocks]


def _subtract(span: Tuple[float, float], blocks: Sequence[Tuple[float, float]]) -> List[Tuple[float, float]]:
    pieces = []
    cursor = span[0]
    for a, b in blocks:
        if a > cursor:
            pieces.append((cursor, a))
        cursor = max(cursor, b)
    if cursor < span[1]:
        pieces.append((cursor, span[1]))
    return pieces


def find_empty_and_unknown(img: GrayImage, detections: Sequence[DetectedObject],
                           settings: Optional[EmptySpaceSettings] = None,
                           tolerance: float = 0.2) -> List[DetectedObject]:
    """Label undetected horizontal spans as EMPTY (dark) or UNKNOWN (anything else)."""
    settings = settings or EmptySpaceSettings()
    width, height = float(img.width), float(img.height)
    real = [d for d in detections if d.is_real]
    if not real:
        whole = BoundingBox(0.0, 0.0, width, height)
        return [DetectedObject(UNKNOWN_ID, whole.center, whole, 0.0)]

    mean_width = float(np.mean([d.box.width for d in real]))
    band_height = float(np.median([d.box.height for d in real]))
    band_center = float(np.median([d.center[1] for d in real]))
    band_y0 = max(0.0, band_center - band_height / 2.0)
    band_y1 = min(height, band_center + band_height / 2.0)
    min_width = (1.0 - tolerance) * mean_width

    rows = slice(int(math.floor(band_y0)), max(int(math.ceil(band_y1)), int(math.floor(band_y0)) + 1))
    column_means = img.pixels[rows, :].astype(np.float64).mean(axis=0)
    window = max(1, int(round(mean_width * settings.window_fraction)))
    stride = max(1, int(round(mean_width * settings.stride_fraction)))

    found: List[DetectedObject] = []
    for span in _uncovered_spans([d.box for d in real], width):
        if span[1] - span[0] < min_width:
            continue
        dark = _dark_blocks(column_means, span[0], span[1], window, stride, settings.dark_threshold)
        empties = [(float(a), float(b)) for a, b in dark if b - a >= min_width]
        for a, b in empties:
            box = BoundingBox(a, band_y0, b, band_y1)
            found.append(DetectedObject(EMPTY_ID, box.center, box, 0.0))
        for a, b in _subtract(span, empties):
            if b - a >= min_width:
                box = BoundingBox(a, band_y0, b, band_y1)
                found.append(DetectedObject(UNKNOWN_ID, box.center, box, 0.0))

    found.sort(key=lambda d: d.box.x0)
    logger.debug(f"Empty/unknown scan: {len(found)} regions, mean object width {mean_width:.1f}")
    return found


def render_overlay(img: GrayImage, detections: Sequence[DetectedObject]) -> np.ndarray:
    """RGB copy of the shelf with green (detected), blue (empty) and red (unknown) boxes."""
    canvas = Image.fromarray(img.pixels).convert("RGB")
    draw = ImageDraw.Draw(canvas)
    for detection in detections:
        color = OVERLAY_COLORS.get(detection.object_id, DETECTED_COLOR)
        box = detection.box
        draw.rectangle(
            [box.x0, box.y0, max(box.x0, box.x1 - 1), max(box.y0, box.y1 - 1)],
            outline=color,
            width=2,
        )
    return np.asarray(canvas)


def save_overlay(img: GrayImage, detections: Sequence[DetectedObject], path: Union[str, Path]) -> Path:
    return outputs.write_png(path, render_overlay(img, detections))
