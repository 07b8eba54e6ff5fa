"""
The Adam optimizer with L2 weight decay and a max-norm constraint.
"""
from dataclasses import asdict, dataclass, field
from typing import Dict

import numpy as np


@dataclass(frozen=True)
class TrainConfig:
    """Configuration of the training procedure.

    Attributes:
        lr0: Initial learning rate
        lr_decay: Factor applied to the learning rate after each epoch
        beta1: Decay of the first moment estimate
        beta2: Decay of the second moment estimate
        eps: Term added to the denominator of the update
        weight_decay: L2 penalty added to the gradients
        batch_size: Number of samples per batch
        epochs: Number of passes over the data
        seed: Seed for shuffling and dropout masks
    """

    lr0: float = 1e-3
    lr_decay: float = 0.96
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    weight_decay: float = 1e-4
    batch_size: int = 64
    epochs: int = 200
    seed: int = 0

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ValueError("Learning rate must be positive")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("Learning rate decay must be in (0, 1]")
        if self.batch_size < 1:
            raise ValueError("Batch size must be at least 1")
        if self.epochs < 0:
            raise ValueError("Number of epochs must not be negative")

    def learning_rate(self, epoch):
        """The learning rate in the given (0-based) epoch"""
        return self.lr0 * self.lr_decay ** epoch

    def to_dict(self):
        return asdict(self)


@dataclass
class AdamState:
    """First and second moment estimates by parameter name"""

    first: Dict[str, np.ndarray] = field(default_factory=dict)
    second: Dict[str, np.ndarray] = field(default_factory=dict)


def apply_max_norm(model, max_norm=None):
    """Rescale every weight row whose norm exceeds ``max_norm`` to norm
    exactly ``max_norm``.

    Args:
        model: The model, modified in place
        max_norm: The bound (default: the ``max_norm`` of the model config)
    """
    max_norm = model.config.max_norm if max_norm is None else max_norm
    for name in model.weight_names:
        weight = model.params[name]
        norms = np.linalg.norm(weight, axis=1, keepdims=True)
        excess = norms > max_norm
        if np.any(excess):
            scale = np.where(excess, max_norm / np.where(excess, norms, 1.0),
                             1.0)
            weight *= scale


def adam_step(model, grads, state: AdamState, step, learning_rate,
              config: TrainConfig):
    """Perform a single Adam update followed by the max-norm projection.

    Weight decay is added to the gradient before the moment estimates are
    updated. The model and the state are updated in place.

    Args:
        model: The model to update
        grads: Dictionary of gradients by parameter name
        state: The moment estimates
        step: The 1-based index of this update
        learning_rate: The learning rate for this update
        config: Provides the moment decays, epsilon and weight decay

    Returns:
        The updated model and state
    """

    if step < 1:
        raise ValueError("Step index must be at least 1")
    bias1 = 1.0 - config.beta1 ** step
    bias2 = 1.0 - config.beta2 ** step
    for name, grad in grads.items():
        param = model.params[name]
        if config.weight_decay:
            grad = grad + config.weight_decay * param
        first = state.first.get(name)
        if first is None:
            first = state.first[name] = np.zeros_like(param)
            state.second[name] = np.zeros_like(param)
        second = state.second[name]
        first *= config.beta1
        first += (1.0 - config.beta1) * grad
        second *= config.beta2
        second += (1.0 - config.beta2) * grad * grad
        param -= learning_rate * (first / bias1) / (
            np.sqrt(second / bias2) + config.eps
        )
    apply_max_norm(model)
    return model, state
