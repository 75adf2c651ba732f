"""Session fixtures; the synthetic-data builders live in synth.py."""

import pytest

from synth import scene_corpus


@pytest.fixture(scope="session")
def acceptance_corpus():
    return scene_corpus()
