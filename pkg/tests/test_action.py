"""Tests for ``stereopose.action``"""
from dataclasses import replace

import numpy as np
import pytest
from fixtures.lifters import constant_network
from numpy import testing as npt

from stereopose.action import (
    ACTION_CLASSES,
    SEQUENCE_LENGTH,
    ActionConfig,
    ActionModel,
    ActionSequence,
    SingleClassError,
    ablate_depth,
    accuracy,
    classify,
    classify_batch,
    gen_motion_dataset,
    load_action_model,
    read_sequences,
    rest_pose,
    save_action_model,
    shuffle_labels,
    split_sequences,
    train_action,
    write_sequences,
)
from stereopose.dataset import ParseError
from stereopose.lifting import ModelKindError, ViewSynthModel, save_lifter
from stereopose.neuralnet import ShapeMismatchError, TrainConfig
from stereopose.skeleton import H36M_16, Pose3D, bone_lengths

SMALL_CONFIG = ActionConfig(hidden_dims=(32,), dropout_rate=0.0, epochs=3,
                            n_per_class=4, seed=3)
QUICK_TRAINING = TrainConfig(batch_size=8, epochs=3, seed=3)


@pytest.fixture(scope="module", name="small_model")
def fixture_small_model():
    sequences = gen_motion_dataset(3, 4, SMALL_CONFIG)
    return train_action(sequences, QUICK_TRAINING, SMALL_CONFIG), sequences


def wrist_depth(sequences, class_name):
    """Mean depth of both wrists at the peak of the motion"""
    index = ACTION_CLASSES.index(class_name)
    wrists = [H36M_16.index("left_wrist"), H36M_16.index("right_wrist")]
    depths = [seq.joints[SEQUENCE_LENGTH // 2, wrists, 2]
              for seq in sequences if seq.label == index]
    return float(np.mean(depths))


def test_rest_pose():
    """Test that the rest pose has mid-range bone lengths"""

    joints = rest_pose()
    assert joints.shape == (16, 3)
    npt.assert_array_equal(joints[H36M_16.root_index], (0, 0, 0))
    lengths = bone_lengths(Pose3D(joints))
    assert np.all(lengths > 0)


def test_gen_motion_dataset():
    """Test the size, labels and determinism of generated sequences"""

    sequences = gen_motion_dataset(7, 3)

    assert len(sequences) == 3 * len(ACTION_CLASSES)
    assert [seq.label for seq in sequences] == [
        label for label in range(5) for _ in range(3)
    ]
    assert len({seq.id for seq in sequences}) == len(sequences)
    for seq in sequences:
        assert seq.joints.shape == (SEQUENCE_LENGTH, 16, 3)
        npt.assert_array_equal(seq.joints[:, 0], 0)

    again = gen_motion_dataset(7, 3)
    for first, second in zip(sequences, again):
        assert first.joints.tobytes() == second.joints.tobytes()
    other = gen_motion_dataset(8, 3)
    assert other[0].joints.tobytes() != sequences[0].joints.tobytes()


def test_gen_motion_dataset_needs_sequences():
    """Test that at least one sequence per class is requested"""

    with pytest.raises(ValueError):
        gen_motion_dataset(0, 0)


def test_push_and_pull_differ_in_depth():
    """Test that the arm motions of push and pull point in opposite
    directions of depth"""

    sequences = gen_motion_dataset(1, 10, ActionConfig(noise_mm=0.0))

    assert wrist_depth(sequences, "push") < -200
    assert wrist_depth(sequences, "pull") > 200


def test_ablate_depth():
    """Test replacing the depth by a constant"""

    sequence = gen_motion_dataset(2, 1)[0]
    ablated = ablate_depth(sequence)

    npt.assert_array_equal(ablated.joints[..., 2], 0)
    npt.assert_array_equal(ablated.joints[..., :2], sequence.joints[..., :2])
    assert (ablated.id, ablated.label) == (sequence.id, sequence.label)


def test_shuffle_labels():
    """Test that shuffling permutes the labels"""

    sequences = gen_motion_dataset(2, 20)
    shuffled = shuffle_labels(sequences, seed=4)

    assert sorted(seq.label for seq in shuffled) == sorted(
        seq.label for seq in sequences
    )
    assert [seq.label for seq in shuffled] != [seq.label for seq in sequences]
    assert shuffled[0].frames == sequences[0].frames


def test_split_sequences():
    """Test the deterministic id split"""

    sequences = gen_motion_dataset(2, 20)
    train_set, test_set = split_sequences(sequences, 0.2)

    assert len(train_set) + len(test_set) == len(sequences)
    assert {seq.id for seq in train_set}.isdisjoint(
        {seq.id for seq in test_set}
    )
    assert [seq.id for seq in split_sequences(sequences, 0.2)[1]] == [
        seq.id for seq in test_set
    ]


def test_sequence_length_check():
    """Test that sequences need the full number of frames"""

    joints = np.zeros((SEQUENCE_LENGTH - 1, 16, 3))
    with pytest.raises(ValueError):
        ActionSequence.from_array("short", joints, 0)


@pytest.mark.parametrize("changes", [dict(n_classes=1), dict(n_classes=6),
                                     dict(n_per_class=0)])
def test_invalid_action_config(changes):
    """Test that invalid configurations are rejected"""

    with pytest.raises(ValueError):
        ActionConfig(**changes)


def test_train_action(small_model):
    """Test training and applying a small classifier"""

    model, sequences = small_model

    assert model.class_names == ACTION_CLASSES
    assert len(model.history) == 3
    probabilities = classify_batch(model, sequences)
    assert probabilities.shape == (len(sequences), 5)
    npt.assert_allclose(probabilities.sum(axis=1), 1.0)
    npt.assert_allclose(classify(model, sequences[0]), probabilities[0])
    assert 0 <= accuracy(model, sequences) <= 1


def test_train_action_needs_two_classes():
    """Test that a single class cannot be learned"""

    sequences = [seq for seq in gen_motion_dataset(2, 3) if seq.label == 0]
    with pytest.raises(SingleClassError):
        train_action(sequences, QUICK_TRAINING)


def test_accuracy_needs_sequences(small_model):
    """Test that accuracy is undefined on an empty set"""

    with pytest.raises(ValueError):
        accuracy(small_model[0], [])


def test_action_model_dimensions(small_model):
    """Test the dimension check of action models"""

    model, _ = small_model
    with pytest.raises(ShapeMismatchError):
        ActionModel(model.network, ("a", "b"))


def test_sequence_files(tmp_path):
    """Test writing and reading sequence files"""

    sequences = gen_motion_dataset(5, 2)
    path = tmp_path / "motions.jsonl"

    assert write_sequences(path, sequences) == len(sequences)
    restored = read_sequences(path)
    assert [seq.id for seq in restored] == [seq.id for seq in sequences]
    assert [seq.label for seq in restored] == [seq.label for seq in sequences]
    npt.assert_array_equal(restored[3].joints, sequences[3].joints)


def test_sequence_file_errors(tmp_path):
    """Test that malformed sequence lines name their line"""

    path = tmp_path / "motions.jsonl"
    write_sequences(path, gen_motion_dataset(5, 1))
    with open(path, "a", encoding="utf-8") as stream:
        stream.write('{"id": "x", "label": 0, "frames": [[1, 2]]}\n')

    with pytest.raises(ParseError) as info:
        read_sequences(path)
    assert info.value.line_number == 6


def test_action_model_files(tmp_path, small_model):
    """Test saving and loading a classifier"""

    model, sequences = small_model
    path = tmp_path / "action.json"
    save_action_model(path, model)
    restored = load_action_model(path)

    assert restored.class_names == model.class_names
    assert restored.history.losses == model.history.losses
    npt.assert_allclose(classify_batch(restored, sequences),
                        classify_batch(model, sequences))


def test_load_action_model_kind(tmp_path):
    """Test that other models are not taken for classifiers"""

    path = tmp_path / "view.json"
    network = constant_network(32, np.zeros(32))
    save_lifter(path, ViewSynthModel(network, H36M_16))
    with pytest.raises(ModelKindError):
        load_action_model(path)


@pytest.mark.slow
def test_classifier_accuracy():
    """Test that the classifier learns the synthetic actions, and that it
    fails on shuffled labels and without depth"""

    config = ActionConfig()
    training = TrainConfig(epochs=config.epochs, seed=config.seed)
    train_set, test_set = split_sequences(
        gen_motion_dataset(0, config.n_per_class, config), config.test_fraction
    )

    model = train_action(train_set, training, config)
    assert accuracy(model, test_set) >= 0.9

    shuffled = train_action(shuffle_labels(train_set), training, config)
    assert accuracy(shuffled, test_set) <= 0.5

    flat = [ablate_depth(seq) for seq in train_set]
    ablated = train_action(flat, training, config)
    assert accuracy(ablated, [ablate_depth(seq) for seq in test_set]) < 0.9


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(5))
def test_depth_helps_classification(seed):
    """Test that removing depth lowers the accuracy for every seed"""

    config = replace(ActionConfig(), seed=seed)
    training = TrainConfig(epochs=config.epochs, seed=seed)
    train_set, test_set = split_sequences(
        gen_motion_dataset(seed, config.n_per_class, config),
        config.test_fraction
    )

    full = accuracy(train_action(train_set, training, config), test_set)
    ablated = accuracy(
        train_action([ablate_depth(seq) for seq in train_set], training,
                     config),
        [ablate_depth(seq) for seq in test_set],
    )
    assert full > ablated
