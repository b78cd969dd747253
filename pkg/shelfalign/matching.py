import logging
from typing import List

import numpy as np
from scipy.spatial.distance import cdist

from shelfalign.types import DescriptorKind, FeatureMatch, FeatureSet

logger = logging.getLogger(__name__)

_POPCOUNT = np.unpackbits(np.arange(256, dtype=np.uint8)[:, None], axis=1).sum(axis=1).astype(np.uint16)
_CHUNK_ROWS = 256


def matching_threshold(alpha: float) -> float:
    """Ratio-test threshold 1 - 0.15 * alpha."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    # (20 - 3a) / 20 is exact for the dyadic alphas the search produces
    return (20.0 - 3.0 * alpha) / 20.0


def hamming_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Bit distances between packed descriptor rows, shape (len(a), len(b))."""
    out = np.empty((a.shape[0], b.shape[0]), dtype=np.float64)
    for start in range(0, a.shape[0], _CHUNK_ROWS):
        block = np.bitwise_xor(a[start:start + _CHUNK_ROWS, None, :], b[None, :, :])
        out[start:start + _CHUNK_ROWS] = _POPCOUNT[block].sum(axis=2)
    return out


def descriptor_distances(shelf: FeatureSet, model: FeatureSet) -> np.ndarray:
    if shelf.kind != model.kind:
        raise ValueError(f"descriptor kind mismatch: shelf {shelf.kind.name} vs model {model.kind.name}")
    if len(shelf) and len(model) and shelf.descriptor_length != model.descriptor_length:
        raise ValueError(
            f"descriptor length mismatch: shelf {shelf.descriptor_length} vs model {model.descriptor_length}"
        )
    if shelf.kind == DescriptorKind.BINARY:
        return hamming_distances(shelf.descriptors, model.descriptors)
    return cdist(shelf.descriptors.astype(np.float64), model.descriptors.astype(np.float64))


def match_features(shelf: FeatureSet, model: FeatureSet, tau: float) -> List[FeatureMatch]:
    """Brute-force nearest model feature per shelf feature, kept when best/second-best < tau."""
    distances = descriptor_distances(shelf, model)
    if len(shelf) == 0 or len(model) == 0:
        return []

    rows = np.arange(len(shelf))
    best = np.argmin(distances, axis=1)
    best_distance = distances[rows, best]

    if len(model) == 1:
        ratio = np.zeros(len(shelf))
        accepted = best_distance == 0
    else:
        remaining = distances.copy()
        remaining[rows, best] = np.inf
        second_distance = remaining[rows, np.argmin(remaining, axis=1)]
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(second_distance > 0, best_distance / second_distance, 1.0)
        accepted = ratio < tau

    matches = [
        FeatureMatch(
            shelf_index=int(i),
            model_index=int(best[i]),
            distance=float(best_distance[i]),
            ratio=float(ratio[i]),
        )
        for i in np.flatnonzero(accepted)
    ]
    logger.debug(f"Ratio test at tau={tau:.4f} kept {len(matches)}/{len(shelf)} shelf features")
    return matches
