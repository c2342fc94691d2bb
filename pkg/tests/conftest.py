import os

import numpy as np
import pytest

from zeus.data import generate_dataset
from zeus.nn import DimConfig
from zeus.train import RunConfig


def small_dims() -> DimConfig:
    """64px images -> 4x4 grid -> 16px masks; fast enough for unit tests."""
    return DimConfig(img_size=64, patch=16, embed_dim=32, text_dim=64, prompt_dim=32,
                     llm_dim=64, heads=4, depth_enc=2, mask_size=16, vlm_img_size=16)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """8 subjects, 2 modalities, 6 slices of 64x64; shared across tests."""
    root = tmp_path_factory.mktemp("data") / "small"
    generate_dataset(str(root), n_volumes=8, n_modalities=2, dims=(6, 64, 64), seed=11)
    return str(root)


@pytest.fixture(scope="session")
def small_dataset_m4(tmp_path_factory):
    """8 subjects, all 4 modalities; for fusion/ablation tests."""
    root = tmp_path_factory.mktemp("data") / "small4"
    generate_dataset(str(root), n_volumes=8, n_modalities=4, dims=(6, 64, 64), seed=13)
    return str(root)


def small_run_config(data_dir: str, runs_dir: str, **overrides) -> RunConfig:
    base = dict(dims=small_dims(), network="zeus", fusion="late", epochs=3,
                batch_size=8, data_dir=data_dir, runs_dir=runs_dir,
                dtype="float64", seed=0)
    base.update(overrides)
    return RunConfig(**base)


@pytest.fixture()
def rng():
    return np.random.default_rng(42)
