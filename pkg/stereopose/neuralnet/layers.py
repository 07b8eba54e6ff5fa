"""
Layers of the feedforward networks.

Layers do not own their parameters. Each layer knows the names of its
parameters and buffers and looks them up in the dictionaries of the
:class:`MlpModel <stereopose.neuralnet.network.MlpModel>` passed to it. This
keeps a model a plain collection of named arrays that can be copied, compared
and serialized without touching the layer objects.

All layers work on batches of shape ``(batch_size, features)``.
"""
import numpy as np


class ForwardContext:
    """Carries the evaluation mode through a forward pass.

    Attributes:
        train: Flag indicating training mode (batch statistics, dropout)
        rng: The random generator used for dropout masks
        batch_stats: Dictionary collecting the batch mean and unbiased
            variance of each batch normalization layer in training mode
    """

    def __init__(self, train=False, rng=None):
        self.train = train
        self.rng = rng
        self.batch_stats = dict()


class Linear:
    """A fully connected layer ``y = x W^T + b``.

    The weight matrix has shape ``(out_dim, in_dim)``, so each row holds the
    weights of one output neuron.
    """

    def __init__(self, name, in_dim, out_dim):
        self.name = name
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = name + ".weight"
        self.bias = name + ".bias"

    def init_params(self, rng, params, buffers):
        """Kaiming initialization of the weights, zero biases"""
        std = np.sqrt(2.0 / self.in_dim)
        params[self.weight] = rng.normal(0.0, std,
                                         size=(self.out_dim, self.in_dim))
        params[self.bias] = np.zeros(self.out_dim)

    def forward(self, model, x, ctx):
        weight = model.params[self.weight]
        bias = model.params[self.bias]
        return x @ weight.T + bias, x

    def backward(self, model, cache, dy, grads):
        x = cache
        grads[self.weight] = dy.T @ x
        grads[self.bias] = dy.sum(axis=0)
        return dy @ model.params[self.weight]


class BatchNorm:
    """Batch normalization over the batch axis.

    In training mode the batch mean and biased variance normalize the input.
    In evaluation mode the running statistics are used instead.
    """

    def __init__(self, name, dim, eps=1e-5):
        self.name = name
        self.dim = dim
        self.eps = eps
        self.gamma = name + ".gamma"
        self.beta = name + ".beta"
        self.running_mean = name + ".running_mean"
        self.running_var = name + ".running_var"

    def init_params(self, rng, params, buffers):
        params[self.gamma] = np.ones(self.dim)
        params[self.beta] = np.zeros(self.dim)
        buffers[self.running_mean] = np.zeros(self.dim)
        buffers[self.running_var] = np.ones(self.dim)

    def forward(self, model, x, ctx):
        gamma = model.params[self.gamma]
        beta = model.params[self.beta]
        if ctx.train:
            batch_size = x.shape[0]
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            inv_std = 1.0 / np.sqrt(var + self.eps)
            x_hat = (x - mean) * inv_std
            correction = batch_size / (batch_size - 1) if batch_size > 1 else 1
            ctx.batch_stats[self.name] = (mean, var * correction)
        else:
            inv_std = 1.0 / np.sqrt(model.buffers[self.running_var] + self.eps)
            x_hat = (x - model.buffers[self.running_mean]) * inv_std
        return gamma * x_hat + beta, (x_hat, inv_std, ctx.train)

    def backward(self, model, cache, dy, grads):
        x_hat, inv_std, train = cache
        gamma = model.params[self.gamma]
        grads[self.gamma] = (dy * x_hat).sum(axis=0)
        grads[self.beta] = dy.sum(axis=0)
        dx_hat = dy * gamma
        if not train:
            return dx_hat * inv_std
        batch_size = dy.shape[0]
        return (inv_std / batch_size) * (
            batch_size * dx_hat
            - dx_hat.sum(axis=0)
            - x_hat * (dx_hat * x_hat).sum(axis=0)
        )

    def update_running_stats(self, model, mean, var, momentum):
        running_mean = model.buffers[self.running_mean]
        running_var = model.buffers[self.running_var]
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * var


class ReLU:
    """Rectified linear unit"""

    name = "relu"

    def init_params(self, rng, params, buffers):
        pass

    def forward(self, model, x, ctx):
        mask = x > 0
        return x * mask, mask

    def backward(self, model, cache, dy, grads):
        return dy * cache


class Dropout:
    """Inverted dropout: surviving units are scaled by ``1/(1-rate)`` during
    training, so evaluation needs no rescaling."""

    name = "dropout"

    def __init__(self, rate):
        self.rate = rate

    def init_params(self, rng, params, buffers):
        pass

    def forward(self, model, x, ctx):
        if not ctx.train or self.rate == 0:
            return x, None
        if ctx.rng is None:
            raise ValueError("Dropout in training mode requires a generator")
        mask = (ctx.rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * mask, mask

    def backward(self, model, cache, dy, grads):
        if cache is None:
            return dy
        return dy * cache


class Sequential:
    """A chain of layers"""

    def __init__(self, layers):
        self.layers = list(layers)

    def init_params(self, rng, params, buffers):
        for layer in self.layers:
            layer.init_params(rng, params, buffers)

    def forward(self, model, x, ctx):
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(model, x, ctx)
            caches.append(cache)
        return x, caches

    def backward(self, model, cache, dy, grads):
        for layer, layer_cache in zip(reversed(self.layers), reversed(cache)):
            dy = layer.backward(model, layer_cache, dy, grads)
        return dy

    def walk(self):
        """Iterate over all leaf layers"""
        for layer in self.layers:
            if hasattr(layer, "walk"):
                yield from layer.walk()
            else:
                yield layer


class Residual(Sequential):
    """A chain of layers with an identity skip connection around it"""

    def forward(self, model, x, ctx):
        y, caches = super().forward(model, x, ctx)
        return y + x, caches

    def backward(self, model, cache, dy, grads):
        return super().backward(model, cache, dy, grads) + dy
