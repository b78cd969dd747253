import logging
from pathlib import Path
from typing import Tuple, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from shelfalign.errors import ImageFormatError
from shelfalign.types import BoundingBox, GrayImage, RoiMask, RoiPolarity

logger = logging.getLogger(__name__)

SUPPORTED_FORMATS = ("PNG", "JPEG")
# BT.709 luma
LUMA_WEIGHTS = np.array([0.2126, 0.7152, 0.0722], dtype=np.float64)


def to_gray(rgb: np.ndarray) -> np.ndarray:
    """Convert an (H, W, 3) uint8 array to luma, rounding half up."""
    luma = rgb[..., :3].astype(np.float64) @ LUMA_WEIGHTS
    return np.clip(np.floor(luma + 0.5), 0, 255).astype(np.uint8)


def load_image(path: Union[str, Path]) -> GrayImage:
    """Load a PNG or JPEG file as a grayscale image."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            if img.format not in SUPPORTED_FORMATS:
                raise ImageFormatError(f"{path}: unsupported image format {img.format}")
            img.load()
            if img.mode == "L":
                pixels = np.asarray(img, dtype=np.uint8).copy()
            elif img.mode in ("LA", "I;16", "I"):
                pixels = np.asarray(img.convert("L"), dtype=np.uint8).copy()
            else:
                pixels = to_gray(np.asarray(img.convert("RGB"), dtype=np.uint8))
    except UnidentifiedImageError as e:
        raise ImageFormatError(f"{path}: not a readable PNG or JPEG image") from e

    logger.debug(f"Loaded {path} as {pixels.shape[1]}x{pixels.shape[0]} grayscale")
    return GrayImage(pixels)


def image_size(path: Union[str, Path]) -> Tuple[int, int]:
    """(width, height) from the image header without decoding pixels."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            if img.format not in SUPPORTED_FORMATS:
                raise ImageFormatError(f"{path}: unsupported image format {img.format}")
            return img.size
    except UnidentifiedImageError as e:
        raise ImageFormatError(f"{path}: not a readable PNG or JPEG image") from e


def _pixel_span(lo: float, hi: float, limit: int) -> Tuple[int, int]:
    start = int(np.floor(max(lo, 0.0)))
    stop = int(np.ceil(min(hi, float(limit))))
    return min(start, limit), max(min(stop, limit), 0)


def box_pixel_slices(box: BoundingBox, width: int, height: int) -> Tuple[slice, slice]:
    """Row and column slices of the pixels a box touches, clamped to the image."""
    x_start, x_stop = _pixel_span(box.x0, box.x1, width)
    y_start, y_stop = _pixel_span(box.y0, box.y1, height)
    return slice(y_start, max(y_stop, y_start)), slice(x_start, max(x_stop, x_start))


def roi_pixel_mask(width: int, height: int, mask: RoiMask) -> np.ndarray:
    """Boolean (H, W) grid, True where pixels stay searchable."""
    if not mask.regions:
        return np.ones((height, width), dtype=bool)

    include = mask.polarity == RoiPolarity.INCLUDE
    grid = np.zeros((height, width), dtype=bool) if include else np.ones((height, width), dtype=bool)
    for region in mask.regions:
        rows, cols = box_pixel_slices(region, width, height)
        grid[rows, cols] = include
    return grid


def apply_roi(img: GrayImage, mask: RoiMask) -> GrayImage:
    """Zero every pixel outside the searchable region; dimensions are kept."""
    keep = roi_pixel_mask(img.width, img.height, mask)
    return GrayImage(np.where(keep, img.pixels, 0).astype(np.uint8))
