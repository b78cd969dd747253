import logging
import os

import hypothesis
import numpy as np
import pytest

from shelfalign.types import EMPTY_ID, UNKNOWN_ID, GrayImage, Planogram, PlanogramEntry

_SUPPRESSED = [hypothesis.HealthCheck.function_scoped_fixture]
hypothesis.settings.register_profile("default", max_examples=100, deadline=None, suppress_health_check=_SUPPRESSED)
hypothesis.settings.register_profile("fast", max_examples=10, deadline=None, suppress_health_check=_SUPPRESSED)
hypothesis.settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "default"))


def planogram(*tokens, shelf_id=""):
    """planogram(("o1", 3), ("U", 1)) with E/U shorthand for the sentinel groups."""
    names = {"E": EMPTY_ID, "U": UNKNOWN_ID}
    return Planogram(tuple(PlanogramEntry(names.get(t, t), q) for t, q in tokens), shelf_id=shelf_id)


@pytest.fixture
def reference_shelf():
    return planogram(("o1", 3), ("o2", 5), ("o3", 5), ("o4", 4), ("o5", 2))


@pytest.fixture
def first_pass_compliant():
    return planogram(("o1", 3), ("o2", 5), ("o3", 5), ("o4", 4), ("U", 1))


@pytest.fixture
def first_pass_partial():
    return planogram(("U", 1), ("o1", 2), ("o2", 6), ("o3", 3), ("E", 1), ("o4", 3), ("U", 1))


@pytest.fixture
def final_pass_partial():
    return planogram(("U", 1), ("o1", 3), ("o2", 6), ("o3", 3), ("E", 1), ("o4", 3), ("U", 1))


@pytest.fixture
def square_image():
    """64x64 mid-gray canvas with one bright 10x10 square at columns/rows 27..36."""
    pixels = np.full((64, 64), 60, dtype=np.uint8)
    pixels[27:37, 27:37] = 220
    return GrayImage(pixels)


def synthetic_shelf(groups, seed=0, **perturbations):
    """Synthetic shelf for ``groups`` [(id, count), ...]; returns (shelf, ground truth, models)."""
    from shelfalign.evaluation import ShelfLayout, default_sprites, synth_shelf

    layout = ShelfLayout.model_validate({
        "shelf_id": "synthetic",
        "groups": [{"id": object_id, "count": count} for object_id, count in groups],
        "seed": seed,
        "perturbations": perturbations,
    })
    ids = [object_id for object_id, _ in groups] + [item["id"] for item in perturbations.get("foreign", [])]
    sprites = default_sprites(ids, seed=seed)
    shelf, gt = synth_shelf(layout, sprites)
    return shelf, gt, sorted(sprites.items())


@pytest.fixture(autouse=True)
def _restore_root_logger():
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield
    root.handlers[:] = handlers
    root.setLevel(level)
