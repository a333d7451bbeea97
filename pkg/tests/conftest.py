import numpy as np
import pytest

from lumiflow.datagen import DatasetConfig, generate_dataset, load_manifest
from lumiflow.render import SceneConfig


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """A 14-sample mixed-task dataset at 32x32, shared across tests."""
    out = tmp_path_factory.mktemp("ds_small")
    cfg = DatasetConfig(n_samples=14, scene=SceneConfig(width=32, height=32))
    path = generate_dataset(cfg, seed=3, out_dir=str(out))
    return load_manifest(path)


@pytest.fixture(scope="session")
def lightmove_dataset(tmp_path_factory):
    """A 12-sample light-movement-only dataset at 32x32 for training tests."""
    out = tmp_path_factory.mktemp("ds_lightmove")
    cfg = DatasetConfig(
        n_samples=12,
        scene=SceneConfig(width=32, height=32),
        task_weights={"light_move": 1},
    )
    path = generate_dataset(cfg, seed=5, out_dir=str(out))
    return load_manifest(path)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


def random_linear_image(rng, h=8, w=8, scale=1.0):
    return rng.uniform(0.0, scale, size=(h, w, 3))
