"""Digital neural network building blocks on top of the tensor engine."""

import numpy as np

from . import tensor as tc
from .tensor import Tensor


def he_init(rng, fan_in, shape):
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


class Dense:
    """Affine layer y = x W + b on real tensors."""

    def __init__(self, n_in, n_out, rng):
        self.W = Tensor(he_init(rng, n_in, (n_in, n_out)), requires_grad=True)
        self.b = Tensor(np.zeros(n_out), requires_grad=True)

    def __call__(self, x):
        return tc.add(tc.matmul(x, self.W), self.b)

    def params(self):
        return [self.W, self.b]


class Conv2d:
    """Valid 2-D convolution layer over (B, C, H, W) real tensors."""

    def __init__(self, c_in, c_out, kernel, rng):
        fan_in = c_in * kernel * kernel
        self.W = Tensor(he_init(rng, fan_in, (c_out, c_in, kernel, kernel)), requires_grad=True)
        self.b = Tensor(np.zeros(c_out), requires_grad=True)

    def __call__(self, x):
        return tc.conv2d(x, self.W, self.b)

    def params(self):
        return [self.W, self.b]


class MLP:
    """Dense stack with ReLU hidden activations and a linear output layer."""

    def __init__(self, n_in, hidden, n_out, rng):
        dims = [n_in] + list(hidden) + [n_out]
        self.layers = [Dense(dims[i], dims[i + 1], rng) for i in range(len(dims) - 1)]

    def __call__(self, x):
        for layer in self.layers[:-1]:
            x = tc.relu(layer(x))
        return self.layers[-1](x)

    def params(self):
        return [p for layer in self.layers for p in layer.params()]


def stack_real_imag(z, flatten_from=1):
    """(B, ...) complex tensor -> (B, 2 * prod(...)) real tensor."""
    b = z.shape[0]
    flat = tc.reshape(z, (b, -1))
    return tc.concat([tc.real(flat), tc.imag(flat)], axis=1)
