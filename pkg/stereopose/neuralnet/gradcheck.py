"""
Finite-difference verification of the analytic gradients.
"""
from typing import Callable, Dict, Tuple

import numpy as np

from stereopose.neuralnet.network import MlpModel, Mode, backward, forward

DEFAULT_STEP = 1e-5


def get_central_diff_weights(order):
    """Determine the weights for central differentiation"""

    if order == 3:
        return np.array([-1, 0, 1]) / 2.0
    if order == 5:
        return np.array([1, -8, 0, 8, -1]) / 12.0
    if order == 7:
        return np.array([-1, 9, -45, 0, 45, -9, 1]) / 60.0
    if order == 9:
        return np.array([3, -32, 168, -672, 0, 672, -168, 32, -3]) / 840.0
    raise ValueError("Unsupported interpolation order %r" % order)


def numerical_gradient(function: Callable[[], float], array: np.ndarray,
                       step=DEFAULT_STEP, order=3) -> np.ndarray:
    """Estimate the gradient of a scalar function with respect to the
    elements of an array by central differences.

    The function is called without arguments and must read ``array``, which
    is perturbed in place and restored afterwards.
    """

    weights = get_central_diff_weights(order)
    half_offset = order // 2
    grad = np.zeros_like(array)
    flat = array.reshape(-1)
    flat_grad = grad.reshape(-1)
    for index in range(flat.size):
        original = flat[index]
        for k, weight in enumerate(weights):
            if weight == 0:
                continue
            flat[index] = original + (k - half_offset) * step
            flat_grad[index] += weight * function()
        flat[index] = original
        flat_grad[index] /= step
    return grad


def relative_error(analytic, numeric):
    """Norm-wise relative error between two gradient estimates"""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / scale)


GradientPairs = Dict[str, Tuple[np.ndarray, np.ndarray]]


def check_gradients(model: MlpModel, batch, weights, seed=0,
                    step=DEFAULT_STEP) -> GradientPairs:
    """Compare the backpropagated gradients of ``sum(output * weights)`` with
    finite differences in training mode.

    The dropout generator is re-seeded for every evaluation so that all
    evaluations see the same masks.

    Returns:
        Dictionary of ``(analytic, numeric)`` gradient pairs by parameter name
    """

    batch = np.asarray(batch, dtype=float)
    weights = np.asarray(weights, dtype=float)

    def loss():
        output, _ = forward(model, batch, Mode.TRAIN,
                            np.random.default_rng(seed))
        return float(np.sum(output * weights))

    _, cache = forward(model, batch, Mode.TRAIN, np.random.default_rng(seed))
    analytic = backward(model, cache, weights)
    return {
        name: (analytic[name],
               numerical_gradient(loss, model.params[name], step))
        for name in model.params
    }
