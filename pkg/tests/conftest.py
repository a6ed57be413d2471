import numpy as np
import pytest

from fewshot import scan_dataset, synth_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """8 classes x 12 images at 32px; enough for episode/pair sampling."""
    root = tmp_path_factory.mktemp("ds_small")
    synth_dataset(root, n_classes=8, per_class=12, image_size=32, seed=7)
    return str(root)


@pytest.fixture(scope="session")
def small_manifest(small_dataset):
    return scan_dataset(small_dataset, image_size=32)
