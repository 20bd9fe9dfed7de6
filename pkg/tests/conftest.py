import numpy as np
import pytest

from neurobs.nn import Activation, NeuralNet, ShapedNN

ALL_ACTIVATIONS = [
    Activation.relu(),
    Activation.tanh(),
    Activation.leaky_relu(0.01),
    Activation.fal(0.5, 1.0),
]


def random_net(rng, in_dim=None, out_dim=None, max_layers=3, max_width=5,
               activation=None, scale=1.0):
    """Random residual network with bounded depth and width."""
    L = int(rng.integers(1, max_layers + 1))
    n0 = in_dim if in_dim is not None else int(rng.integers(1, max_width + 1))
    nout = out_dim if out_dim is not None else int(rng.integers(1, max_width + 1))
    widths = [n0] + [int(rng.integers(1, max_width + 1)) for _ in range(L)] + [nout]
    ws = [scale * rng.uniform(-1, 1, size=(widths[l + 1], widths[l])) for l in range(L + 1)]
    ws.append(scale * rng.uniform(-1, 1, size=(nout, n0)))
    act = activation if activation is not None else ALL_ACTIVATIONS[int(rng.integers(0, 4))]
    return NeuralNet(tuple(ws), act)


def random_shaped(rng, ambient, **kw):
    net = random_net(rng, **kw)
    t1 = rng.uniform(-1, 1, size=(net.input_dim, ambient))
    t2 = rng.uniform(-1, 1, size=(int(rng.integers(1, 4)), net.output_dim))
    return ShapedNN(net, t1, t2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
