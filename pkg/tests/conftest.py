import hashlib
import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from compvid.denoiser import DenoiserSpec

settings.register_profile("deterministic", derandomize=True)
settings.load_profile("deterministic")
from compvid.layout import TokenGrid
from compvid.toydata import ToyDataConfig
from compvid.training import TrainConfig, train_toy

# recipe for the steering-experiment backbone: mostly two-square clips with
# position-free prompts, so layouts are the only spatial control channel
STEER_GRID = TokenGrid(2, 8, 8)
STEER_DATA = ToyDataConfig(grid=STEER_GRID, seed=0, two_square_prob=0.85)
STEER_TRAIN = TrainConfig(steps=3000, batch_size=8, lr=2e-3, seed=0)

HISTORY_KEY = "__loss_history__"


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "slow: needs the trained toy denoiser (first run trains for minutes)"
    )


@pytest.fixture(scope="session")
def trained_toy_model(tmp_path_factory):
    """Train (or load a cached copy of) the steering-experiment denoiser.

    The first run trains for a few minutes and caches weights plus the loss
    history under tests/.pytest_toy_cache/ keyed by the training recipe, so
    later suite runs start instantly. Set COMPVID_FORCE_RETRAIN=1 to ignore
    the cache.
    """
    spec = DenoiserSpec()
    recipe = repr((STEER_DATA, STEER_TRAIN, spec)).encode()
    digest = hashlib.blake2b(recipe, digest_size=8).hexdigest()
    cache_dir = Path(__file__).parent / ".pytest_toy_cache"
    cache_dir.mkdir(exist_ok=True)
    cache = cache_dir / f"steer_{digest}.npz"
    if cache.exists() and not os.environ.get("COMPVID_FORCE_RETRAIN"):
        with np.load(cache) as data:
            params = {k: data[k] for k in data.files if k != HISTORY_KEY}
            history = data[HISTORY_KEY].tolist()
    else:
        params, history = train_toy(STEER_DATA, spec, STEER_TRAIN)
        np.savez_compressed(cache, **params, **{HISTORY_KEY: np.array(history)})
    return params, history, STEER_GRID, STEER_DATA
