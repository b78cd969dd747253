import logging
import struct
from functools import lru_cache
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
from PIL import Image
from scipy import ndimage

from shelfalign import outputs
from shelfalign.config import ExtractorSettings
from shelfalign.errors import FeatureFileError
from shelfalign.types import DescriptorKind, FeatureSet, GrayImage

logger = logging.getLogger(__name__)

DESCRIPTOR_BITS = 256
ARC_LENGTH = 9
# Radius-3 Bresenham ring, clockwise from 12 o'clock, as (dx, dy)
RING_OFFSETS = np.array([
    (0, -3), (1, -3), (2, -2), (3, -1), (3, 0), (3, 1), (2, 2), (1, 3),
    (0, 3), (-1, 3), (-2, 2), (-3, 1), (-3, 0), (-3, -1), (-2, -2), (-1, -3),
])

FEATURE_MAGIC = b"SHFT"
FORMAT_VERSION = 2
_HEADER = struct.Struct("<4sHBHI")
_SOURCE_SIZE = struct.Struct("<II")


def _has_arc(flags: np.ndarray) -> np.ndarray:
    """True where ``flags`` (16, H, W) holds a contiguous circular run of ARC_LENGTH."""
    wrapped = np.concatenate([flags, flags[:ARC_LENGTH - 1]], axis=0)
    found = np.zeros(flags.shape[1:], dtype=bool)
    for start in range(len(RING_OFFSETS)):
        found |= wrapped[start:start + ARC_LENGTH].all(axis=0)
    return found


def corner_response(level: np.ndarray, threshold: int) -> np.ndarray:
    """Ring-test corner score per pixel (0 where the pixel is not a corner)."""
    h, w = level.shape
    response = np.zeros((h, w), dtype=np.int32)
    if h < 7 or w < 7:
        return response

    img = level.astype(np.int16)
    center = img[3:h - 3, 3:w - 3]
    ring = np.stack([img[3 + dy:h - 3 + dy, 3 + dx:w - 3 + dx] for dx, dy in RING_OFFSETS])
    brighter = ring > center + threshold
    darker = ring < center - threshold
    corner = _has_arc(brighter) | _has_arc(darker)

    diff = ring.astype(np.int32) - center
    bright_score = np.where(brighter, diff - threshold, 0).sum(axis=0)
    dark_score = np.where(darker, -diff - threshold, 0).sum(axis=0)
    response[3:h - 3, 3:w - 3] = np.where(corner, np.maximum(bright_score, dark_score), 0)
    return response


def detect_corners(level: np.ndarray, threshold: int, border: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Local maxima of the corner response at least ``border`` pixels from every edge."""
    response = corner_response(level, threshold)
    peaks = (response > 0) & (response == ndimage.maximum_filter(response, size=3, mode="constant"))
    peaks[:border, :] = False
    peaks[-border:, :] = False
    peaks[:, :border] = False
    peaks[:, -border:] = False
    ys, xs = np.nonzero(peaks)
    return xs, ys, response[ys, xs]


@lru_cache(maxsize=None)
def _disk_offsets(radius: int) -> Tuple[np.ndarray, np.ndarray]:
    r = np.arange(-radius, radius + 1)
    dx, dy = np.meshgrid(r, r)
    inside = dx ** 2 + dy ** 2 <= radius ** 2
    return dx[inside], dy[inside]


def centroid_orientation(level: np.ndarray, xs: np.ndarray, ys: np.ndarray, radius: int) -> np.ndarray:
    """Angle from each keypoint to the intensity centroid of its disk patch."""
    dx, dy = _disk_offsets(radius)
    patch = level[ys[:, None] + dy[None, :], xs[:, None] + dx[None, :]].astype(np.float64)
    m10 = (patch * dx[None, :]).sum(axis=1)
    m01 = (patch * dy[None, :]).sum(axis=1)
    return np.arctan2(m01, m10)


@lru_cache(maxsize=8)
def sampling_pattern(patch_size: int, seed: int) -> np.ndarray:
    """DESCRIPTOR_BITS point pairs (x1, y1, x2, y2), isotropic Gaussian inside the patch disk.

    Pairs stay two pixels inside the patch radius so steered points remain in the patch.
    """
    radius = patch_size // 2 - 2
    rng = np.random.default_rng(seed)
    pairs: List[np.ndarray] = []
    count = 0
    while count < DESCRIPTOR_BITS:
        candidates = np.rint(rng.normal(0.0, patch_size / 5.0, size=(4 * DESCRIPTOR_BITS, 4)))
        inside = ((candidates[:, :2] ** 2).sum(axis=1) <= radius ** 2) & \
                 ((candidates[:, 2:] ** 2).sum(axis=1) <= radius ** 2)
        distinct = np.any(candidates[:, :2] != candidates[:, 2:], axis=1)
        accepted = candidates[inside & distinct]
        pairs.append(accepted)
        count += len(accepted)
    return np.concatenate(pairs)[:DESCRIPTOR_BITS]


def steered_binary_descriptors(smoothed: np.ndarray, xs: np.ndarray, ys: np.ndarray,
                               angles: np.ndarray, pattern: np.ndarray) -> np.ndarray:
    """Pack 256 intensity comparisons per keypoint, pattern rotated by the keypoint angle."""
    cos = np.cos(angles)[:, None]
    sin = np.sin(angles)[:, None]

    def sample(px: np.ndarray, py: np.ndarray) -> np.ndarray:
        rx = np.rint(cos * px[None, :] - sin * py[None, :]).astype(np.int64)
        ry = np.rint(sin * px[None, :] + cos * py[None, :]).astype(np.int64)
        return smoothed[ys[:, None] + ry, xs[:, None] + rx]

    first = sample(pattern[:, 0], pattern[:, 1])
    second = sample(pattern[:, 2], pattern[:, 3])
    return np.packbits(first < second, axis=1)


def build_pyramid(pixels: np.ndarray, params: ExtractorSettings) -> List[Tuple[float, float, np.ndarray]]:
    """Levels as (x_scale, y_scale, pixels); levels smaller than one patch are dropped."""
    height, width = pixels.shape
    source = Image.fromarray(pixels)
    levels = []
    for level in range(params.levels):
        factor = params.scale_factor ** level
        w = int(round(width / factor))
        h = int(round(height / factor))
        if w < params.patch_size or h < params.patch_size:
            break
        arr = pixels if level == 0 else np.asarray(source.resize((w, h), Image.BILINEAR))
        levels.append((width / w, height / h, arr))
    return levels


def extract_features(img: GrayImage, params: Optional[ExtractorSettings] = None) -> FeatureSet:
    """Corner keypoints with oriented 256-bit binary descriptors over an image pyramid."""
    params = params or ExtractorSettings()
    border = params.patch_size // 2 + 1
    radius = params.patch_size // 2
    pattern = sampling_pattern(params.patch_size, params.pattern_seed)

    per_level = []
    for level_index, (sx, sy, level) in enumerate(build_pyramid(img.pixels, params)):
        xs, ys, scores = detect_corners(level, params.fast_threshold, border)
        if len(xs) == 0:
            continue
        angles = centroid_orientation(level, xs, ys, radius)
        smoothed = ndimage.gaussian_filter(level.astype(np.float32), sigma=params.smoothing_sigma) \
            if params.smoothing_sigma > 0 else level.astype(np.float32)
        descriptors = steered_binary_descriptors(smoothed, xs, ys, angles, pattern)
        per_level.append((
            scores,
            np.full(len(xs), level_index, dtype=np.int64),
            ys, xs,
            ((xs + 0.5) * sx - 0.5).clip(0, img.width - 1),
            ((ys + 0.5) * sy - 0.5).clip(0, img.height - 1),
            angles,
            descriptors,
        ))

    if not per_level:
        logger.debug(f"No keypoints in {img.width}x{img.height} image")
        return FeatureSet.empty(img.width, img.height, DescriptorKind.BINARY, DESCRIPTOR_BITS // 8)

    scores, levels, ys, xs, full_x, full_y, angles, descriptors = (
        np.concatenate(column) for column in zip(*per_level)
    )
    # strongest first; ties by level, row, column
    order = np.lexsort((xs, ys, levels, -scores))[:params.max_keypoints]

    features = FeatureSet(
        source_width=img.width,
        source_height=img.height,
        kind=DescriptorKind.BINARY,
        xs=full_x[order].astype(np.float32),
        ys=full_y[order].astype(np.float32),
        orientations=angles[order].astype(np.float32),
        scales=levels[order].astype(np.uint8),
        descriptors=descriptors[order],
    )
    logger.debug(f"Extracted {len(features)} keypoints from {img.width}x{img.height} image")
    return features


def _record_dtype(kind: DescriptorKind, length: int) -> np.dtype:
    payload = ("descriptor", "u1", (length,)) if kind == DescriptorKind.BINARY else ("descriptor", "<f4", (length,))
    return np.dtype([("x", "<f4"), ("y", "<f4"), ("orientation", "<f4"), ("scale", "u1"), payload])


def encode_features(features: FeatureSet) -> bytes:
    length = features.descriptor_length
    header = _HEADER.pack(FEATURE_MAGIC, FORMAT_VERSION, int(features.kind), length, len(features))
    size = _SOURCE_SIZE.pack(features.source_width, features.source_height)
    records = np.zeros(len(features), dtype=_record_dtype(features.kind, length))
    records["x"] = features.xs
    records["y"] = features.ys
    records["orientation"] = features.orientations
    records["scale"] = features.scales
    records["descriptor"] = features.descriptors
    return header + size + records.tobytes()


def export_features(features: FeatureSet, path: Union[str, Path]) -> Path:
    return outputs.write_bytes(path, encode_features(features))


def decode_features(data: bytes, source_size: Optional[Tuple[int, int]] = None,
                    require_source_size: bool = False) -> FeatureSet:
    """Parse a feature file.

    Version 2 headers carry the source image size. Version 1 files take ``source_size`` when given,
    otherwise the keypoint extents, unless ``require_source_size`` is set.
    """
    if len(data) < _HEADER.size:
        raise FeatureFileError("file shorter than the header")
    magic, version, kind_code, length, count = _HEADER.unpack_from(data, 0)
    if magic != FEATURE_MAGIC:
        raise FeatureFileError(f"bad magic {magic!r}")
    if version not in (1, 2):
        raise FeatureFileError(f"unsupported version {version}")
    try:
        kind = DescriptorKind(kind_code)
    except ValueError:
        raise FeatureFileError(f"unknown descriptor kind {kind_code}") from None
    if length == 0 and count > 0:
        raise FeatureFileError("descriptor length must be positive")

    offset = _HEADER.size
    width = height = None
    if version == 2:
        if len(data) < offset + _SOURCE_SIZE.size:
            raise FeatureFileError("truncated source-size header")
        width, height = _SOURCE_SIZE.unpack_from(data, offset)
        offset += _SOURCE_SIZE.size
    elif source_size is not None:
        width, height = source_size
    elif require_source_size:
        raise FeatureFileError("version 1 file carries no source image size; supply the model image")

    dtype = _record_dtype(kind, length)
    body = data[offset:]
    if len(body) != count * dtype.itemsize:
        whole = len(body) // dtype.itemsize
        raise FeatureFileError(
            f"descriptor payload does not match declared length {length} "
            f"({len(body)} bytes for {count} records)",
            record=min(whole, max(count - 1, 0)),
        )
    records = np.frombuffer(body, dtype=dtype, count=count)

    xs = records["x"].astype(np.float32)
    ys = records["y"].astype(np.float32)
    bad = ~(np.isfinite(xs) & np.isfinite(ys)) | (xs < 0) | (ys < 0)
    if width is not None:
        bad |= (xs >= width) | (ys >= height)
    if np.any(bad):
        index = int(np.flatnonzero(bad)[0])
        raise FeatureFileError(f"keypoint ({xs[index]}, {ys[index]}) out of bounds", record=index)

    if width is None:
        width = int(np.floor(xs.max())) + 1 if count else 1
        height = int(np.floor(ys.max())) + 1 if count else 1

    descriptors = records["descriptor"].reshape(count, length)
    descriptors = descriptors.astype(np.uint8 if kind == DescriptorKind.BINARY else np.float32)
    return FeatureSet(
        source_width=int(width),
        source_height=int(height),
        kind=kind,
        xs=xs,
        ys=ys,
        orientations=records["orientation"].astype(np.float32),
        scales=records["scale"].astype(np.uint8),
        descriptors=descriptors,
    )


def import_features(path: Union[str, Path], source_size: Optional[Tuple[int, int]] = None,
                    require_source_size: bool = False) -> FeatureSet:
    """Read a feature file (externally computed SIFT/SURF/AKAZE/BRISK sets included)."""
    path = Path(path)
    try:
        features = decode_features(path.read_bytes(), source_size, require_source_size)
    except FeatureFileError as e:
        error = FeatureFileError(f"{path}: {e}")
        error.record = e.record
        raise error from e
    logger.debug(f"Imported {len(features)} {features.kind.name.lower()} features from {path}")
    return features
