"""
Mini-batch training loop.
"""
import logging
import warnings
from dataclasses import dataclass, field
from typing import List

import numpy as np
from tqdm import tqdm

from stereopose.neuralnet.losses import LOSSES
from stereopose.neuralnet.network import (
    MlpModel,
    Mode,
    ShapeMismatchError,
    backward,
    forward,
    update_running_stats,
)
from stereopose.neuralnet.optim import AdamState, TrainConfig, adam_step

logger = logging.getLogger(__name__)


class EmptyDatasetError(ValueError):
    """Raised when training is requested on an empty dataset"""


@dataclass
class TrainingHistory:
    """Mean training loss and learning rate of each epoch"""

    losses: List[float] = field(default_factory=list)
    learning_rates: List[float] = field(default_factory=list)

    def append(self, loss, learning_rate):
        self.losses.append(float(loss))
        self.learning_rates.append(float(learning_rate))

    def __len__(self):
        return len(self.losses)

    def to_dict(self):
        return {"losses": list(self.losses),
                "learning_rates": list(self.learning_rates)}

    @classmethod
    def from_dict(cls, data):
        return cls(list(data.get("losses", [])),
                   list(data.get("learning_rates", [])))


@dataclass
class TrainingResult:
    """The trained model and its loss history"""

    model: MlpModel
    history: TrainingHistory


def train(model: MlpModel, inputs, targets, config: TrainConfig,
          loss="mse", progress=False) -> TrainingResult:
    """Train a copy of the model with Adam.

    The samples are shuffled every epoch with a generator derived from
    ``config.seed``; dropout masks come from an independent generator derived
    from the same seed, so training is deterministic. The learning rate of
    epoch ``e`` is ``lr0 * lr_decay**e``.

    Args:
        model: The initial model; it is not modified
        inputs: Array of shape ``(n, input_dim)``
        targets: Array of shape ``(n, output_dim)``, or integer labels of
            shape ``(n,)`` for the cross-entropy loss
        config: The training configuration
        loss: Name of the loss function, ``"mse"`` or ``"cross_entropy"``
        progress: Flag indicating whether to show a progress bar

    Returns:
        A :class:`TrainingResult` with the trained model and the mean
        training-mode loss of each epoch

    Raises:
        EmptyDatasetError: if there are no samples, or if the model uses batch
            normalization and no batch can hold two samples
        ShapeMismatchError: if inputs and targets differ in length
    """

    inputs = np.asarray(inputs, dtype=float)
    targets = np.asarray(targets)
    if inputs.shape[0] == 0:
        raise EmptyDatasetError("Cannot train on an empty dataset")
    if targets.shape[0] != inputs.shape[0]:
        raise ShapeMismatchError(
            "Got %d inputs but %d targets" % (inputs.shape[0],
                                              targets.shape[0])
        )
    smallest_batch = min(inputs.shape[0], config.batch_size)
    if model.batch_norm_layers and smallest_batch < 2:
        raise EmptyDatasetError(
            "Batch normalization needs batches of at least two samples"
        )
    loss_function = LOSSES[loss]

    model = model.copy()
    history = TrainingHistory()
    state = AdamState()
    shuffle_seed, dropout_seed = np.random.SeedSequence(config.seed).spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_seed)
    dropout_rng = np.random.default_rng(dropout_seed)
    uses_batch_norm = bool(model.batch_norm_layers)
    num_samples = inputs.shape[0]
    step = 0

    epochs = tqdm(range(config.epochs), disable=not progress, desc="Train",
                  unit="epoch")
    for epoch in epochs:
        learning_rate = config.learning_rate(epoch)
        order = shuffle_rng.permutation(num_samples)
        batch_losses = []
        for start in range(0, num_samples, config.batch_size):
            indices = order[start:start + config.batch_size]
            if uses_batch_norm and indices.size < 2:
                warnings.warn("Skipping a batch of size 1 in batch-norm "
                              "training")
                continue
            output, cache = forward(model, inputs[indices], Mode.TRAIN,
                                    dropout_rng)
            batch_loss, d_output = loss_function(output, targets[indices])
            grads = backward(model, cache, d_output)
            step += 1
            adam_step(model, grads, state, step, learning_rate, config)
            update_running_stats(model, cache)
            batch_losses.append(batch_loss)

        epoch_loss = float(np.mean(batch_losses)) if batch_losses else np.nan
        history.append(epoch_loss, learning_rate)
        epochs.set_postfix(loss=epoch_loss)
        logger.info("epoch %d: loss %.6g, lr %.3g", epoch, epoch_loss,
                    learning_rate)

    return TrainingResult(model=model, history=history)
