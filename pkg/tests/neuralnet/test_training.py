"""Tests for ``stereopose.neuralnet.training`` and the loss functions"""
import numpy as np
import pytest
from numpy import testing as npt

from stereopose.neuralnet import (
    EmptyDatasetError,
    MlpConfig,
    ShapeMismatchError,
    TrainConfig,
    TrainingHistory,
    init_kaiming,
    mse_loss,
    predict,
    softmax_cross_entropy,
    train,
)
from stereopose.neuralnet.gradcheck import numerical_gradient


def regression_data(count=64, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(count, 8)), 0.5 * rng.normal(size=(count, 4))


def test_memorization():
    """Test that a wide network memorizes a small random dataset"""

    inputs, targets = regression_data()
    model = init_kaiming(MlpConfig(input_dim=8, output_dim=4, hidden_dim=256,
                                   n_residual_blocks=1, dropout_rate=0.0,
                                   max_norm=4.0))
    config = TrainConfig(lr0=1e-2, lr_decay=0.99, weight_decay=0.0,
                         batch_size=64, epochs=500)

    result = train(model, inputs, targets, config)

    assert len(result.history) == 500
    assert result.history.losses[-1] < 1e-3
    assert result.history.losses[-1] < result.history.losses[0]


def test_training_is_deterministic():
    """Test that the same data and seeds give identical weights"""

    inputs, targets = regression_data(40)
    model = init_kaiming(MlpConfig(input_dim=8, output_dim=4, hidden_dim=16,
                                   n_residual_blocks=1))
    config = TrainConfig(batch_size=8, epochs=3, seed=4)

    first = train(model, inputs, targets, config)
    second = train(model, inputs, targets, config)

    for name in first.model.params:
        npt.assert_array_equal(first.model.params[name],
                               second.model.params[name])
    assert first.history.losses == second.history.losses


def test_zero_epochs():
    """Test that no epochs leave the model unchanged"""

    inputs, targets = regression_data(10)
    model = init_kaiming(MlpConfig(input_dim=8, output_dim=4, hidden_dim=16))
    result = train(model, inputs, targets, TrainConfig(epochs=0))

    assert len(result.history) == 0
    for name, value in model.params.items():
        npt.assert_array_equal(result.model.params[name], value)


def test_training_does_not_modify_input_model():
    """Test that training works on a copy"""

    inputs, targets = regression_data(16)
    model = init_kaiming(MlpConfig(input_dim=8, output_dim=4, hidden_dim=16))
    head = model.params["head.weight"].copy()
    result = train(model, inputs, targets, TrainConfig(epochs=2,
                                                       batch_size=4))

    npt.assert_array_equal(model.params["head.weight"], head)
    assert not np.array_equal(result.model.params["head.weight"], head)
    assert result.history.learning_rates == pytest.approx([1e-3, 0.96e-3])


def test_single_sample_batches_are_skipped():
    """Test that batch normalization skips batches of one sample"""

    inputs, targets = regression_data(5)
    model = init_kaiming(MlpConfig(input_dim=8, output_dim=4, hidden_dim=8))
    with pytest.warns(UserWarning):
        train(model, inputs, targets, TrainConfig(epochs=1, batch_size=2))


def test_training_errors():
    """Test the input checks of the training loop"""

    model = init_kaiming(MlpConfig(input_dim=8, output_dim=4, hidden_dim=8))
    with pytest.raises(EmptyDatasetError):
        train(model, np.zeros((0, 8)), np.zeros((0, 4)), TrainConfig())
    with pytest.raises(ShapeMismatchError):
        train(model, np.zeros((3, 8)), np.zeros((2, 4)), TrainConfig())


def test_batch_norm_needs_two_samples():
    """Test that batch normalization refuses training without any batch of
    two samples"""

    inputs, targets = regression_data(1)
    model = init_kaiming(MlpConfig(input_dim=8, output_dim=4, hidden_dim=8))
    with pytest.raises(EmptyDatasetError):
        train(model, inputs, targets, TrainConfig(epochs=1))

    inputs, targets = regression_data(6)
    with pytest.raises(EmptyDatasetError):
        train(model, inputs, targets, TrainConfig(epochs=1, batch_size=1))

    plain = init_kaiming(MlpConfig(input_dim=8, output_dim=4, hidden_dim=8,
                                   batch_norm=False))
    result = train(plain, inputs[:1], targets[:1], TrainConfig(epochs=3))
    assert len(result.history) == 3
    assert np.all(np.isfinite(result.history.losses))


def test_classification_training():
    """Test training a classifier with the cross-entropy loss"""

    rng = np.random.default_rng(7)
    labels = rng.integers(0, 3, size=60)
    centers = np.array([(2, 0), (-2, 0), (0, 2)])
    inputs = centers[labels] + 0.3 * rng.normal(size=(60, 2))
    model = init_kaiming(MlpConfig(input_dim=2, output_dim=3,
                                   hidden_dims=(16,), batch_norm=False,
                                   dropout_rate=0.0, max_norm=4.0))

    result = train(model, inputs, labels,
                   TrainConfig(lr0=1e-2, lr_decay=1.0, batch_size=20,
                               epochs=100),
                   loss="cross_entropy")

    predicted = np.argmax(predict(result.model, inputs), axis=1)
    assert np.mean(predicted == labels) > 0.9


def test_history_dict():
    """Test the dictionary representation of a training history"""

    history = TrainingHistory()
    history.append(np.float64(0.5), 1e-3)

    assert history.to_dict() == {"losses": [0.5], "learning_rates": [1e-3]}
    assert TrainingHistory.from_dict(history.to_dict()) == history
    assert TrainingHistory.from_dict({}) == TrainingHistory()


def test_mse_loss():
    """Test the mean squared error and its gradient"""

    prediction = np.array([[1.0, 2.0], [3.0, 5.0]])
    target = np.array([[1.0, 0.0], [3.0, 4.0]])
    loss, grad = mse_loss(prediction, target)

    assert loss == pytest.approx(5 / 4)
    npt.assert_allclose(grad, [[0, 1], [0, 0.5]])


def test_cross_entropy_gradient():
    """Test the cross-entropy gradient against finite differences"""

    rng = np.random.default_rng(1)
    logits = rng.normal(size=(4, 3))
    labels = np.array([0, 2, 1, 2])
    loss, grad = softmax_cross_entropy(logits, labels)

    numeric = numerical_gradient(
        lambda: softmax_cross_entropy(logits, labels)[0], logits
    )
    assert loss > 0
    npt.assert_allclose(grad, numeric, atol=1e-8)

    confident = np.array([[100.0, 0.0, 0.0]])
    assert softmax_cross_entropy(confident, [0])[0] == pytest.approx(0)
