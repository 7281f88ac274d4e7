from __future__ import annotations

import numpy as np
import pytest

from scenediff.embed import ToyEmbedderConfig, ToyJointEmbedder


@pytest.fixture(scope="session")
def embedder() -> ToyJointEmbedder:
    """Aligned embedder (no text/image rotation)."""
    return ToyJointEmbedder(ToyEmbedderConfig())


@pytest.fixture(scope="session")
def misaligned_embedder() -> ToyJointEmbedder:
    return ToyJointEmbedder(ToyEmbedderConfig(misalignment_seed=7))


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(0)
