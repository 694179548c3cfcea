import os

# One BLAS thread: the forwards are small-matrix bound and the Monte Carlo
# layers parallelize with processes instead.
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

import numpy as np
import pytest
import threadpoolctl

threadpoolctl.threadpool_limits(1)

from attnsi.vit import ViTConfig, random_init


@pytest.fixture(scope="session")
def small_config():
    # 8x8 image, 2x2 patches: 16 patches, 4 layers, 32-dim embedding.
    return ViTConfig.from_arch("small", image_side=8, patch_size=2)


@pytest.fixture(scope="session")
def small_weights(small_config):
    return random_init(small_config, seed=11)


@pytest.fixture(scope="session")
def base_config():
    return ViTConfig.from_arch("base", image_side=16)


@pytest.fixture(scope="session")
def base_weights(base_config):
    return random_init(base_config, seed=5)
