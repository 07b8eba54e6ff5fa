"""
Loss functions returning the loss value and its gradient with respect to the
network output.
"""
import numpy as np
from scipy.special import log_softmax, softmax


def mse_loss(prediction, target):
    """Mean squared error over all elements"""
    residual = np.asarray(prediction) - np.asarray(target)
    return float(np.mean(residual ** 2)), 2.0 * residual / residual.size


def softmax_cross_entropy(logits, labels):
    """Mean cross entropy of the softmax of ``logits`` against integer class
    labels"""
    logits = np.asarray(logits, dtype=float)
    labels = np.asarray(labels, dtype=int)
    batch = np.arange(logits.shape[0])
    loss = -np.mean(log_softmax(logits, axis=1)[batch, labels])
    grad = softmax(logits, axis=1)
    grad[batch, labels] -= 1.0
    return float(loss), grad / logits.shape[0]


LOSSES = {
    "mse": mse_loss,
    "cross_entropy": softmax_cross_entropy,
}
