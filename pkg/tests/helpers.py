"""Shared test utilities."""

import numpy as np

from ensmbo.nn import MlpModel


class QuadraticModel:
    """Analytic concave quadratic f(x) = -||x - t||^2 with exact gradients."""

    def __init__(self, target):
        self.target = np.asarray(target, dtype=np.float64)

    @property
    def input_dim(self):
        return self.target.shape[0]

    def forward(self, x):
        diff = np.asarray(x, dtype=np.float64) - self.target
        return -float(diff @ diff)

    def value_and_grad(self, x):
        diff = np.asarray(x, dtype=np.float64) - self.target
        return -float(diff @ diff), -2.0 * diff

    def input_gradient(self, x):
        return self.value_and_grad(x)[1]


def linear_model(w, b=0.0) -> MlpModel:
    """Single-layer MLP computing w @ x + b."""
    w = np.asarray(w, dtype=np.float64)
    return MlpModel(weights=[w.reshape(-1, 1)], biases=[np.array([float(b)])])


def random_mlp(rng, input_dim, hidden=(16, 16)) -> MlpModel:
    from ensmbo.nn import init_mlp

    return init_mlp(input_dim, hidden, rng)
