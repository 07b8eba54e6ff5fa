"""
Action classification from sequences of root-relative 3D poses.

Synthetic motions stand in for recorded action clips. Each class moves a set
of joints away from a standing rest pose along a class-specific direction,
following a smooth raise-and-return profile. ``push`` and ``pull`` only
differ in the sign of the depth motion of the arms, so they can only be told
apart with correct depth.
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy.special import softmax

from stereopose.dataset import ParseError, split_of
from stereopose.lifting import ModelKindError
from stereopose.neuralnet import (
    MlpConfig,
    MlpModel,
    ShapeMismatchError,
    TrainConfig,
    TrainingHistory,
    init_kaiming,
    load_model,
    predict,
    save_model,
    train,
)
from stereopose.skeleton import (
    DEFAULT_SCALE_MM,
    H36M_16,
    Frame,
    JointSchema,
    Pose3D,
    SchemaMismatchError,
    get_schema,
    root_align_array,
)
from stereopose.synthgen import CANONICAL_DIRECTIONS, DEFAULT_BONE_LENGTH_RANGES

logger = logging.getLogger(__name__)

#: Number of frames of a sequence
SEQUENCE_LENGTH = 25

#: Displacements in millimeters at full motion, by class and joint name
ACTION_MOTIONS: Dict[str, Dict[str, Tuple[float, float, float]]] = {
    "arm_raise": {
        "left_elbow": (120.0, -250.0, 0.0),
        "left_wrist": (150.0, -500.0, 0.0),
        "right_elbow": (-120.0, -250.0, 0.0),
        "right_wrist": (-150.0, -500.0, 0.0),
    },
    "squat": {
        "left_knee": (0.0, -150.0, -250.0),
        "left_ankle": (0.0, -350.0, 0.0),
        "right_knee": (0.0, -150.0, -250.0),
        "right_ankle": (0.0, -350.0, 0.0),
    },
    "wave": {
        "right_elbow": (-200.0, -250.0, 0.0),
        "right_wrist": (-250.0, -550.0, 0.0),
    },
    "push": {
        "left_elbow": (0.0, -150.0, -250.0),
        "left_wrist": (0.0, -300.0, -450.0),
        "right_elbow": (0.0, -150.0, -250.0),
        "right_wrist": (0.0, -300.0, -450.0),
    },
    "pull": {
        "left_elbow": (0.0, -150.0, 250.0),
        "left_wrist": (0.0, -300.0, 450.0),
        "right_elbow": (0.0, -150.0, 250.0),
        "right_wrist": (0.0, -300.0, 450.0),
    },
}

#: Amplitude of the sideways oscillation of the waving hand, in millimeters
WAVE_AMPLITUDE_MM = 150.0

ACTION_CLASSES = tuple(ACTION_MOTIONS)


class SingleClassError(ValueError):
    """Raised when a classifier would be trained on fewer than two classes"""


@dataclass(frozen=True)
class ActionConfig:
    """Configuration of the synthetic motions and the action classifier.

    Attributes:
        n_classes: Number of classes, taken from the start of
            :data:`ACTION_CLASSES`
        n_per_class: Number of generated sequences per class
        noise_mm: Standard deviation of the joint noise
        hidden_dims: Widths of the hidden layers of the classifier
        dropout_rate: Dropout rate of the classifier
        max_norm: Max-norm bound of the classifier weights
        epochs: Number of training epochs
        test_fraction: Share of sequences held out for evaluation
        seed: Seed of the generator and the network initialization
    """

    n_classes: int = 5
    n_per_class: int = 100
    noise_mm: float = 10.0
    hidden_dims: Tuple[int, ...] = (512, 256)
    dropout_rate: float = 0.3
    max_norm: float = 4.0
    epochs: int = 40
    test_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))
        if not 2 <= self.n_classes <= len(ACTION_CLASSES):
            raise ValueError("Number of classes must be in [2, %d]"
                             % len(ACTION_CLASSES))
        if self.n_per_class < 1:
            raise ValueError("At least one sequence per class is required")

    @property
    def class_names(self):
        return ACTION_CLASSES[:self.n_classes]


@dataclass(frozen=True, eq=False)
class ActionSequence:
    """A labeled sequence of root-relative 3D poses.

    Attributes:
        id: Identifier of the sequence
        frames: Exactly :data:`SEQUENCE_LENGTH` root-relative poses
        label: The class index
    """

    id: str
    frames: Tuple[Pose3D, ...]
    label: int

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        if len(self.frames) != SEQUENCE_LENGTH:
            raise ValueError("A sequence needs exactly %d frames, got %d"
                             % (SEQUENCE_LENGTH, len(self.frames)))
        schema = self.frames[0].schema
        for frame in self.frames:
            if frame.schema != schema:
                raise SchemaMismatchError("Frames use different schemas")
            if frame.frame != Frame.ROOT_RELATIVE:
                raise ValueError("Frames must be root-relative")

    @property
    def schema(self) -> JointSchema:
        return self.frames[0].schema

    @property
    def joints(self) -> np.ndarray:
        """The joints of all frames, shape ``(frames, N, 3)``"""
        return np.stack([frame.joints for frame in self.frames])

    @classmethod
    def from_array(cls, seq_id, joints, label, schema=H36M_16):
        return cls(
            seq_id,
            tuple(Pose3D(frame, schema, Frame.ROOT_RELATIVE)
                  for frame in joints),
            int(label),
        )


@dataclass(frozen=True, eq=False)
class ActionModel:
    """Classifier over flattened sequences (``frames * N * 3`` inputs)"""

    network: MlpModel
    class_names: Tuple[str, ...]
    schema: JointSchema = H36M_16
    scale_mm: float = DEFAULT_SCALE_MM
    history: TrainingHistory = field(default_factory=TrainingHistory)

    def __post_init__(self):
        expected = (SEQUENCE_LENGTH * self.schema.num_joints * 3,
                    len(self.class_names))
        actual = (self.network.config.input_dim,
                  self.network.config.output_dim)
        if actual != expected:
            raise ShapeMismatchError(
                "Classifier has dimensions %r, expected %r"
                % (actual, expected)
            )


def rest_pose(schema=H36M_16, scale=1.0):
    """A root-relative standing pose with mid-range bone lengths"""
    joints = np.zeros((schema.num_joints, 3))
    for joint in schema.topological_order[1:]:
        name = schema.joint_names[joint]
        length = scale * np.mean(DEFAULT_BONE_LENGTH_RANGES[name])
        joints[joint] = (joints[schema.parents[joint]]
                         + length * np.asarray(CANONICAL_DIRECTIONS[name]))
    return joints


def _motion_profile(rng):
    """Smooth raise-and-return profile in ``[0, 1]`` over the frames"""
    frequency = rng.uniform(0.8, 1.2)
    phase = rng.uniform(-0.3, 0.3)
    t = np.arange(SEQUENCE_LENGTH) / SEQUENCE_LENGTH
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * frequency * t + phase))


def _motion(rng, class_name, schema):
    displacement = np.zeros((SEQUENCE_LENGTH, schema.num_joints, 3))
    profile = _motion_profile(rng) * rng.uniform(0.8, 1.2)
    for name, offset in ACTION_MOTIONS[class_name].items():
        displacement[:, schema.index(name)] = np.outer(profile, offset)
    if class_name == "wave":
        t = np.arange(SEQUENCE_LENGTH) / SEQUENCE_LENGTH
        swing = WAVE_AMPLITUDE_MM * np.sin(
            6.0 * np.pi * t + rng.uniform(0.0, 2.0 * np.pi)
        )
        displacement[:, schema.index("right_wrist"), 0] += swing * profile
    return displacement


def generate_sequence(rng, label, config=ActionConfig(), schema=H36M_16,
                      seq_id=""):
    """Generate one noisy sequence of the given class"""
    class_name = config.class_names[label]
    joints = rest_pose(schema, rng.uniform(0.9, 1.1))[np.newaxis]
    joints = joints + _motion(rng, class_name, schema)
    joints = joints + rng.normal(0.0, config.noise_mm, size=joints.shape)
    joints = root_align_array(joints, schema.root_index)
    return ActionSequence.from_array(seq_id, joints, label, schema)


def gen_motion_dataset(seed, n_per_class,
                       config=ActionConfig()) -> List[ActionSequence]:
    """Generate ``n_per_class`` labeled sequences for each class.

    The result only depends on the seed and the configuration.

    Raises:
        ValueError: if ``n_per_class`` is less than 1
    """

    if n_per_class < 1:
        raise ValueError("At least one sequence per class is required")
    rng = np.random.default_rng(seed)
    sequences = []
    for label, class_name in enumerate(config.class_names):
        for index in range(n_per_class):
            sequences.append(generate_sequence(
                rng, label, config,
                seq_id="%s-%d-%05d" % (class_name, seed, index),
            ))
    return sequences


def ablate_depth(sequence: ActionSequence, depth=0.0) -> ActionSequence:
    """Replace the depth of every joint by a constant"""
    joints = sequence.joints.copy()
    joints[..., 2] = depth
    joints = root_align_array(joints, sequence.schema.root_index)
    return ActionSequence.from_array(sequence.id, joints, sequence.label,
                                     sequence.schema)


def shuffle_labels(sequences: Sequence[ActionSequence], seed=0):
    """Randomly permute the labels among the sequences"""
    labels = np.random.default_rng(seed).permutation(
        [sequence.label for sequence in sequences]
    )
    return [
        ActionSequence(sequence.id, sequence.frames, int(label))
        for sequence, label in zip(sequences, labels)
    ]


def split_sequences(sequences: Sequence[ActionSequence],
                    test_fraction=0.2):
    """Deterministically split sequences by id into training and test
    sequences"""
    train_set, test_set = [], []
    for sequence in sequences:
        if split_of(sequence.id, test_fraction) == "test":
            test_set.append(sequence)
        else:
            train_set.append(sequence)
    return train_set, test_set


def _features(sequences, scale_mm):
    return np.stack([
        sequence.joints.ravel() / scale_mm for sequence in sequences
    ])


def train_action(sequences: Sequence[ActionSequence],
                 train_config: TrainConfig,
                 config=ActionConfig(),
                 progress=False) -> ActionModel:
    """Train a classifier with softmax cross-entropy on flattened,
    normalized sequences.

    Raises:
        SingleClassError: if fewer than two classes occur
    """

    labels = np.array([sequence.label for sequence in sequences], dtype=int)
    if len(np.unique(labels)) < 2:
        raise SingleClassError("Training needs at least two classes")
    schema = sequences[0].schema
    inputs = _features(sequences, DEFAULT_SCALE_MM)
    network = init_kaiming(MlpConfig(
        input_dim=inputs.shape[1],
        output_dim=config.n_classes,
        hidden_dims=config.hidden_dims,
        batch_norm=False,
        dropout_rate=config.dropout_rate,
        max_norm=config.max_norm,
        seed=config.seed,
    ))
    logger.info("Training action classifier on %d sequences", len(labels))
    result = train(network, inputs, labels, train_config,
                   loss="cross_entropy", progress=progress)
    return ActionModel(result.model, config.class_names, schema,
                       DEFAULT_SCALE_MM, result.history)


def classify_batch(model: ActionModel,
                   sequences: Sequence[ActionSequence]) -> np.ndarray:
    """Class probabilities of several sequences, shape ``(n, classes)``"""
    for sequence in sequences:
        if sequence.schema != model.schema:
            raise ShapeMismatchError(
                "Sequence %s uses schema %r, model expects %r"
                % (sequence.id, sequence.schema.name, model.schema.name)
            )
    logits = predict(model.network, _features(sequences, model.scale_mm))
    return softmax(logits, axis=1)


def classify(model: ActionModel, sequence: ActionSequence) -> np.ndarray:
    """The class distribution of a sequence

    Raises:
        ShapeMismatchError: if the sequence does not fit the model
    """
    return classify_batch(model, [sequence])[0]


def accuracy(model: ActionModel, sequences: Sequence[ActionSequence]):
    """Fraction of sequences whose most probable class is their label"""
    if not sequences:
        raise ValueError("Cannot evaluate on an empty set of sequences")
    predicted = np.argmax(classify_batch(model, sequences), axis=1)
    labels = np.array([sequence.label for sequence in sequences])
    return float(np.mean(predicted == labels))


def sequence_to_dict(sequence: ActionSequence, class_names=ACTION_CLASSES):
    return {
        "id": sequence.id,
        "label": sequence.label,
        "class_name": class_names[sequence.label],
        "schema": sequence.schema.name,
        "frames": sequence.joints.tolist(),
    }


def write_sequences(path, sequences: Sequence[ActionSequence],
                    class_names=ACTION_CLASSES) -> int:
    """Write sequences as JSON lines, one sequence per line"""
    with open(path, "w", encoding="utf-8") as stream:
        for sequence in sequences:
            stream.write(json.dumps(sequence_to_dict(sequence, class_names),
                                    separators=(",", ":"), allow_nan=False))
            stream.write("\n")
    return len(sequences)


def read_sequences(path) -> List[ActionSequence]:
    """Read sequences written by :func:`write_sequences`

    Raises:
        ParseError: naming the line of the first malformed sequence
    """
    sequences = []
    with open(path, "r", encoding="utf-8") as stream:
        for line_number, line in enumerate(stream, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
                sequences.append(ActionSequence.from_array(
                    str(data["id"]), np.asarray(data["frames"], dtype=float),
                    int(data["label"]), get_schema(data.get("schema",
                                                            H36M_16.name)),
                ))
            except (KeyError, ValueError, TypeError) as error:
                raise ParseError(line_number, "%s: %s"
                                 % (type(error).__name__, error)) from error
    return sequences


def save_action_model(path, model: ActionModel):
    save_model(path, model.network, {
        "kind": "action",
        "class_names": list(model.class_names),
        "schema": model.schema.name,
        "scale_mm": float(model.scale_mm),
        "history": model.history.to_dict(),
    })


def load_action_model(path) -> ActionModel:
    network, metadata = load_model(path)
    if metadata.get("kind") != "action":
        raise ModelKindError("%s does not hold an action classifier" % path)
    return ActionModel(
        network,
        tuple(metadata["class_names"]),
        get_schema(metadata.get("schema", H36M_16.name)),
        metadata.get("scale_mm", DEFAULT_SCALE_MM),
        TrainingHistory.from_dict(metadata.get("history", {})),
    )
