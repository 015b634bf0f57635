import numpy as np
import pytest

from aresbench.data import DatasetSpec, generate_dataset
from aresbench.tensor import AvgPool2, Conv3x3, Dense, Network, Normalize, PatchEmbed, ReLU, check_shapes
from aresbench.zoo import ModelSpec, build_model


@pytest.fixture(scope="session")
def tiny_data():
    """16x16 shapes dataset, small enough for end-to-end tests."""
    return generate_dataset(DatasetSpec(class_count=4, image_shape=(3, 16, 16), train_size=64, test_size=32))


@pytest.fixture
def small_cnn():
    return build_model(ModelSpec("SmallCNN", (3, 8, 8), 3, 1, seed=5))


@pytest.fixture
def patch_mlp():
    return build_model(ModelSpec("PatchMLP", (3, 8, 8), 3, 1, seed=5))


def linear_model(weight, bias=None):
    """Single dense layer: logits = flatten(x) @ W + b."""
    weight = np.asarray(weight, dtype=np.float64)
    bias = np.zeros(weight.shape[1]) if bias is None else np.asarray(bias, dtype=np.float64)
    layer = Dense("fc", weight.shape[0], weight.shape[1])
    return Network([layer], {"fc.weight": weight, "fc.bias": bias})


class ConstantModel:
    """Predicts a fixed label per call order; used to hand-count corruption errors."""

    def __init__(self, fn):
        self.fn = fn

    def predict(self, x):
        return np.asarray(self.fn(x))

    def logits(self, x):
        raise NotImplementedError


LAYER_KINDS = ("conv", "relu", "pool", "dense", "patch", "normalize")


def random_params(layers, rng):
    params = {}
    for layer in layers:
        for key, shape in layer.param_shapes().items():
            params[key] = rng.standard_normal(shape) * 0.5
    return params


def layer_stack(kind):
    """A layer under test followed by a dense head so the loss is scalar."""
    if kind == "conv":
        body = [Conv3x3("conv", 2, 3)]
        shape = (2, 4, 4)
    elif kind == "relu":
        body = [ReLU("relu")]
        shape = (2, 4, 4)
    elif kind == "pool":
        body = [AvgPool2("pool")]
        shape = (2, 4, 4)
    elif kind == "dense":
        body = [Dense("dense", 2 * 4 * 4, 5)]
        shape = (2, 4, 4)
    elif kind == "patch":
        body = [PatchEmbed("embed", 2, 2, 3)]
        shape = (2, 4, 4)
    elif kind == "normalize":
        body = [Normalize("norm")]
        shape = (2, 4, 4)
    else:
        raise KeyError(kind)
    out = check_shapes(body, shape)
    return body + [Dense("head", int(np.prod(out)), 3)], shape


# verdict lines from test_acceptance.py, echoed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
