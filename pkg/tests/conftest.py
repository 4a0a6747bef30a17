import numpy as np
import pytest

from gradsign.engine import Batch, LayerSpec, NetworkSpec, ProgramBuilder


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def small_net():
    return NetworkSpec(3, (LayerSpec(5, "tanh"), LayerSpec(4, "relu"), LayerSpec(2, "identity")))


@pytest.fixture
def small_batch(rng):
    return Batch(rng.normal(size=(6, 3)), rng.integers(0, 2, size=6))


def scalar_linear_program(bias: bool = False):
    """y_hat = w * x (optionally + b); the 1-parameter toy used across tests."""
    b = ProgramBuilder(1)
    out = b.add_buffer(1)
    b.dense(0, out, "identity", bias, "w")
    return b.finish(out)


def random_mlp(rng, max_width=8, max_depth=3, input_dim=None, output_dim=None):
    depth = int(rng.integers(1, max_depth + 1))
    input_dim = input_dim or int(rng.integers(1, 5))
    widths = [int(rng.integers(1, max_width + 1)) for _ in range(depth - 1)]
    widths.append(output_dim or int(rng.integers(2, 5)))
    acts = [str(rng.choice(["relu", "tanh", "identity"])) for _ in range(depth)]
    layers = [LayerSpec(w, a, bias=True) for w, a in zip(widths, acts)]
    return NetworkSpec(input_dim, tuple(layers))
