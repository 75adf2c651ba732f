"""Shared fixture: a directory of ten small deterministic sample images.

The set deliberately mixes formats, color modes, and aspect ratios so a
dump over it exercises RGB conversion, both resize branches, and the
center crop.
"""

import numpy as np
import pytest
from PIL import Image


def _save_sample(rng, index, directory):
    if index == 7:  # grayscale
        arr = rng.integers(0, 256, size=(70, 55)).astype(np.uint8)
        Image.fromarray(arr, mode="L").save(directory / f"img_{index:02d}.png")
    elif index == 8:  # alpha channel
        arr = rng.integers(0, 256, size=(48, 48, 4)).astype(np.uint8)
        Image.fromarray(arr, mode="RGBA").save(directory / f"img_{index:02d}.png")
    elif index == 9:  # wide, JPEG-encoded
        arr = rng.integers(0, 256, size=(50, 120, 3)).astype(np.uint8)
        Image.fromarray(arr, mode="RGB").save(directory / f"img_{index:02d}.jpg", quality=90)
    else:
        h = int(rng.integers(48, 97))
        w = int(rng.integers(48, 97))
        arr = rng.integers(0, 256, size=(h, w, 3)).astype(np.uint8)
        Image.fromarray(arr, mode="RGB").save(directory / f"img_{index:02d}.png")


@pytest.fixture(scope="session")
def sample_images(tmp_path_factory):
    directory = tmp_path_factory.mktemp("sample_images")
    rng = np.random.default_rng(0)
    for index in range(10):
        _save_sample(rng, index, directory)
    return directory
