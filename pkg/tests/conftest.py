import numpy as np
import pytest

from icam.model import (ConvBlockSpec, Model, ModelSpec, build_fixture_model)


@pytest.fixture(scope="session")
def fixture_model():
    return build_fixture_model(7)


def make_gap_linear_model(c=4, h=6, w=6, classes=3, seed=0):
    """One identity 1x1 conv block, then GAP + linear.

    On strictly positive inputs the block output equals the input, so the
    gradient of any logit at the scoring point is exactly
    head.weight[c, k] / (h * w), constant over space. Handy for analytic
    gradient oracles.
    """
    spec = ModelSpec(input_shape=(c, h, w),
                     blocks=(ConvBlockSpec("block1", c, 1, 1, 0),),
                     num_classes=classes)
    rng = np.random.default_rng(seed)
    kernel = np.zeros((c, c, 1, 1))
    for i in range(c):
        kernel[i, i, 0, 0] = 1.0
    weights = {
        "block1.weight": kernel,
        "block1.bias": np.zeros(c),
        "head.weight": rng.normal(size=(classes, c)),
        "head.bias": rng.normal(size=classes),
    }
    return Model(spec, weights)


@pytest.fixture
def gap_linear_model():
    return make_gap_linear_model()
