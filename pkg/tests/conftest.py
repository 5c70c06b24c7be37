import numpy as np
import pytest

from netbend.generator import LayerDescriptor, ModelDescriptor, toy_descriptor


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_desc():
    return toy_descriptor()


@pytest.fixture
def small_desc():
    """Two tiny layers (8 and 16 px) so metric CNNs stay fast in tests."""
    return ModelDescriptor(
        layers=(
            LayerDescriptor(index=1, resolution=8, feature_count=6, cluster_count=2),
            LayerDescriptor(index=2, resolution=16, feature_count=4, cluster_count=2),
        ),
        latent_dim=16,
    )
