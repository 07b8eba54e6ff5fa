"""
Residual and plain multi-layer perceptrons.

The default topology is the residual lifting network::

    Linear(input, h) -> BN -> ReLU -> Dropout
    n x [ (Linear(h, h) -> BN -> ReLU -> Dropout) x 2  + identity ]
    Linear(h, output)

Setting :attr:`MlpConfig.hidden_dims` selects a plain stack of
``Linear -> [BN] -> ReLU -> Dropout`` layers of the given widths instead,
followed by the output layer.
"""
import copy
import enum
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from stereopose.neuralnet.layers import (
    BatchNorm,
    Dropout,
    ForwardContext,
    Linear,
    ReLU,
    Residual,
    Sequential,
)

#: Momentum of the running batch normalization statistics
BN_MOMENTUM = 0.1

#: Epsilon added to the variance in batch normalization
BN_EPS = 1e-5


class ShapeMismatchError(ValueError):
    """Raised when a batch does not match the input width of a network"""


class InvalidNetworkConfigError(ValueError):
    """Raised when a network configuration is invalid"""


class Mode(enum.Enum):
    """Evaluation mode of a forward pass"""

    TRAIN = "train"
    EVAL = "eval"


@dataclass(frozen=True)
class MlpConfig:
    """Configuration of a multi-layer perceptron.

    Attributes:
        input_dim: Width of the input
        output_dim: Width of the output
        hidden_dim: Width of the hidden layers of the residual topology
        n_residual_blocks: Number of residual blocks
        dropout_rate: Probability of dropping a unit during training
        max_norm: Upper bound on the norm of each weight row
        seed: Seed for the weight initialization
        batch_norm: Flag indicating whether hidden layers are batch
            normalized
        hidden_dims: If non-empty, the widths of a plain (non-residual) stack
            of hidden layers
    """

    input_dim: int
    output_dim: int
    hidden_dim: int = 1024
    n_residual_blocks: int = 2
    dropout_rate: float = 0.5
    max_norm: float = 1.0
    seed: int = 0
    batch_norm: bool = True
    hidden_dims: Tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims",
                           tuple(int(dim) for dim in self.hidden_dims))
        dims = (self.input_dim, self.output_dim, self.hidden_dim)
        if any(dim < 1 for dim in dims + self.hidden_dims):
            raise InvalidNetworkConfigError("All dimensions must be >= 1")
        if self.n_residual_blocks < 0:
            raise InvalidNetworkConfigError("Negative number of blocks")
        if not 0 <= self.dropout_rate < 1:
            raise InvalidNetworkConfigError("Dropout rate must be in [0, 1)")
        if not self.max_norm > 0:
            raise InvalidNetworkConfigError("max_norm must be positive")

    def to_dict(self):
        data = asdict(self)
        data["hidden_dims"] = list(self.hidden_dims)
        return data

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


def _hidden_unit(name, in_dim, out_dim, config):
    layers = [Linear(name + ".linear", in_dim, out_dim)]
    if config.batch_norm:
        layers.append(BatchNorm(name + ".bn", out_dim, eps=BN_EPS))
    layers.append(ReLU())
    layers.append(Dropout(config.dropout_rate))
    return layers


def build_layers(config: MlpConfig) -> Sequential:
    """Create the layer structure described by the configuration"""

    layers = []
    if config.hidden_dims:
        in_dim = config.input_dim
        for index, dim in enumerate(config.hidden_dims):
            layers.extend(_hidden_unit("hidden%d" % index, in_dim, dim, config))
            in_dim = dim
        layers.append(Linear("head", in_dim, config.output_dim))
        return Sequential(layers)

    hidden = config.hidden_dim
    layers.extend(_hidden_unit("stem", config.input_dim, hidden, config))
    for block in range(config.n_residual_blocks):
        inner = []
        for unit in range(2):
            inner.extend(_hidden_unit("block%d.%d" % (block, unit),
                                      hidden, hidden, config))
        layers.append(Residual(inner))
    layers.append(Linear("head", hidden, config.output_dim))
    return Sequential(layers)


class MlpModel:
    """The parameters and batch normalization statistics of a network.

    Attributes:
        config: The :class:`MlpConfig`
        params: Dictionary of trainable arrays by name
        buffers: Dictionary of non-trainable arrays (running statistics)
    """

    def __init__(self, config: MlpConfig,
                 params: Dict[str, np.ndarray],
                 buffers: Dict[str, np.ndarray]):
        self.config = config
        self.params = params
        self.buffers = buffers
        self.network = build_layers(config)

        expected_params = dict()
        expected_buffers = dict()
        self.network.init_params(_ShapeRecorder(), expected_params,
                                 expected_buffers)
        for actual, expected in ((params, expected_params),
                                 (buffers, expected_buffers)):
            if set(actual) != set(expected):
                raise InvalidNetworkConfigError(
                    "Tensor names do not match the configuration"
                )
            for name, value in expected.items():
                if np.shape(actual[name]) != np.shape(value):
                    raise InvalidNetworkConfigError(
                        "Tensor %r has shape %r, expected %r"
                        % (name, np.shape(actual[name]), np.shape(value))
                    )

    @property
    def weight_names(self) -> List[str]:
        """The names of all linear weight matrices"""
        return [
            layer.weight
            for layer in self.network.walk()
            if isinstance(layer, Linear)
        ]

    @property
    def batch_norm_layers(self) -> List[BatchNorm]:
        return [
            layer
            for layer in self.network.walk()
            if isinstance(layer, BatchNorm)
        ]

    def copy(self):
        """Create an independent copy of this model"""
        return MlpModel(self.config, copy.deepcopy(self.params),
                        copy.deepcopy(self.buffers))


class _ShapeRecorder:
    """Stand-in generator used to learn the expected tensor shapes"""

    @staticmethod
    def normal(loc, scale, size):
        return np.empty(size)


def init_kaiming(config: MlpConfig) -> MlpModel:
    """Create a model with Kaiming-initialized weights.

    Weights are drawn from ``Normal(0, sqrt(2/fan_in))``, biases are zero,
    batch normalization scales are one and shifts zero, and the running
    statistics start at mean zero and variance one. The result only depends
    on the configuration, including its seed.
    """

    rng = np.random.default_rng(config.seed)
    params = dict()
    buffers = dict()
    build_layers(config).init_params(rng, params, buffers)
    return MlpModel(config, params, buffers)


@dataclass
class ForwardCache:
    """Intermediate values of a training-mode forward pass

    Attributes:
        layer_caches: The caches of the layers, as needed by :func:`backward`
        batch_stats: Batch mean and unbiased variance per batch normalization
            layer
    """

    layer_caches: list
    batch_stats: Dict[str, Tuple[np.ndarray, np.ndarray]] = field(
        default_factory=dict
    )


def _check_batch(model, batch):
    batch = np.asarray(batch, dtype=float)
    if batch.ndim != 2 or batch.shape[1] != model.config.input_dim:
        raise ShapeMismatchError(
            "Expected a batch of width %d, got shape %r"
            % (model.config.input_dim, batch.shape)
        )
    return batch


def forward(model: MlpModel, batch, mode: Mode = Mode.EVAL,
            rng: Optional[np.random.Generator] = None):
    """Evaluate the network on a batch.

    In evaluation mode the output is deterministic, the running statistics
    are used for batch normalization and dropout is disabled. In training mode
    the batch statistics are used and dropout masks are drawn from ``rng``.
    Neither mode modifies the model; use :func:`update_running_stats` to fold
    the batch statistics of a training pass into the model.

    Args:
        model: The model
        batch: Array of shape ``(batch_size, input_dim)``
        mode: The evaluation mode
        rng: The random generator for dropout (training mode only)

    Returns:
        A tuple of the output of shape ``(batch_size, output_dim)`` and a
        :class:`ForwardCache` (``None`` in evaluation mode)

    Raises:
        ShapeMismatchError: if the batch width does not match the input
            width of the network
    """

    batch = _check_batch(model, batch)
    ctx = ForwardContext(train=(mode == Mode.TRAIN), rng=rng)
    output, caches = model.network.forward(model, batch, ctx)
    if mode == Mode.EVAL:
        return output, None
    return output, ForwardCache(caches, ctx.batch_stats)


def predict(model: MlpModel, batch):
    """Evaluation-mode forward pass returning only the output"""
    return forward(model, batch, Mode.EVAL)[0]


def backward(model: MlpModel, cache: ForwardCache, d_output):
    """Determine the gradients of all parameters.

    Args:
        model: The model used in the forward pass
        cache: The cache returned by the training-mode forward pass
        d_output: Gradient of the loss with respect to the output

    Returns:
        Dictionary of gradients by parameter name
    """

    grads = dict()
    model.network.backward(model, cache.layer_caches,
                           np.asarray(d_output, dtype=float), grads)
    return grads


def update_running_stats(model: MlpModel, cache: ForwardCache,
                         momentum=BN_MOMENTUM):
    """Fold the batch statistics of a training pass into the running
    statistics of the model"""
    for layer in model.batch_norm_layers:
        if layer.name in cache.batch_stats:
            mean, var = cache.batch_stats[layer.name]
            layer.update_running_stats(model, mean, var, momentum)
