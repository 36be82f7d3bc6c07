import numpy as np
import pytest

from lazyflow import EvaluationSet, TwoLayerNet, softplus


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_softplus_net(rng, width=8, dim=3, out=1, beta=20.0, std=0.6):
    net = TwoLayerNet(width=width, input_dim=dim, output_dim=out, activation=softplus(beta))
    w = net.random_params(rng, std)
    data = EvaluationSet(rng.standard_normal((6, dim)))
    return net, w, data


def finite_difference_jacobian(model, w, data, h=1e-5):
    """Central-difference Jacobian, the independent oracle for analytic ones."""
    w = np.asarray(w, dtype=float)
    cols = []
    for a in range(w.size):
        e = np.zeros_like(w)
        e[a] = h / 2
        cols.append((model.evaluate(w + e, data) - model.evaluate(w - e, data)) / h)
    return np.stack(cols, axis=-1)  # (n, k, p)
