"""
The two learned stages of the label generator.

The view synthesis network maps a normalized left-view 2D pose to the 2D pose
seen by a virtual camera shifted along the x-axis. The reconstruction network
maps the concatenation of the left and the (synthesized) right view to a
normalized root-relative 3D pose. A monocular variant, which only sees the
left view, is provided for comparison.

Network inputs are flattened joint arrays in joint-major order
(``u_0, v_0, u_1, v_1, ...``). Stereo inputs are the left block followed by
the right block.
"""
import enum
import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from stereopose.dataset import split_fraction
from stereopose.neuralnet import (
    EmptyDatasetError,
    MlpConfig,
    MlpModel,
    TrainConfig,
    TrainingHistory,
    init_kaiming,
    load_model,
    predict,
    save_model,
    train,
)
from stereopose.skeleton import (
    DEFAULT_CROP_SIZE,
    DEFAULT_SCALE_MM,
    H36M_16,
    Frame,
    JointSchema,
    Pose2D,
    Pose3D,
    SchemaMismatchError,
    denormalize_pixels,
    get_schema,
    normalize_pixels,
    register_schema,
    root_align_array,
)
from stereopose.synthgen import TrainingPair

logger = logging.getLogger(__name__)

#: Share of samples held out from training for evaluation
HOLDOUT_FRACTION = 0.1


class ReconInput(enum.Enum):
    """The views seen by a reconstruction network"""

    STEREO = "stereo"
    MONOCULAR = "monocular"


class TrainingMode(enum.Enum):
    """Source of the right view used to train the reconstruction network"""

    TEACHER_FORCED = "teacher-forced"
    SELF_SYNTHESIZED = "self-synthesized"


class ModelKindError(ValueError):
    """Raised when a model file holds a different kind of network than
    expected"""


class MissingViewModelError(ValueError):
    """Raised when a stereo input needs a view synthesis model but none is
    given"""


def _require_view_model(view_model):
    if view_model is None:
        raise MissingViewModelError(
            "Stereo reconstruction needs a view synthesis model"
        )


@dataclass(frozen=True)
class LifterArchitecture:
    """Hyperparameters shared by the lifting networks"""

    hidden_dim: int = 1024
    n_residual_blocks: int = 2
    dropout_rate: float = 0.5
    max_norm: float = 1.0
    seed: int = 0
    crop_size: float = DEFAULT_CROP_SIZE
    scale_mm: float = DEFAULT_SCALE_MM
    batch_norm: bool = True

    def mlp_config(self, input_dim, output_dim) -> MlpConfig:
        return MlpConfig(
            input_dim=input_dim,
            output_dim=output_dim,
            hidden_dim=self.hidden_dim,
            n_residual_blocks=self.n_residual_blocks,
            dropout_rate=self.dropout_rate,
            max_norm=self.max_norm,
            seed=self.seed,
            batch_norm=self.batch_norm,
        )


def _check_dims(network, schema, input_width, output_width, kind):
    num_joints = schema.num_joints
    expected = (input_width * num_joints, output_width * num_joints)
    actual = (network.config.input_dim, network.config.output_dim)
    if actual != expected:
        raise SchemaMismatchError(
            "%s network has dimensions %r, schema %r requires %r"
            % (kind, actual, schema.name, expected)
        )


@dataclass(frozen=True, eq=False)
class ViewSynthModel:
    """Network mapping the left view to the right view (``2N -> 2N``)"""

    network: MlpModel
    schema: JointSchema = H36M_16
    crop_size: float = DEFAULT_CROP_SIZE
    history: TrainingHistory = field(default_factory=TrainingHistory)

    def __post_init__(self):
        _check_dims(self.network, self.schema, 2, 2, "View synthesis")


@dataclass(frozen=True, eq=False)
class ReconModel:
    """Network mapping 2D views to a root-relative 3D pose (``4N -> 3N`` for
    stereo input, ``2N -> 3N`` for monocular input)"""

    network: MlpModel
    schema: JointSchema = H36M_16
    input: ReconInput = ReconInput.STEREO
    crop_size: float = DEFAULT_CROP_SIZE
    scale_mm: float = DEFAULT_SCALE_MM
    history: TrainingHistory = field(default_factory=TrainingHistory)

    def __post_init__(self):
        width = 4 if self.input == ReconInput.STEREO else 2
        _check_dims(self.network, self.schema, width, 3, "Reconstruction")


@dataclass(frozen=True)
class PairArrays:
    """Training pairs stacked into arrays

    Attributes:
        schema: The common joint schema
        left: Left-view pixels, shape ``(n, N, 2)``
        right: Right-view pixels, shape ``(n, N, 2)``
        pose3d: Root-relative poses in millimeters, shape ``(n, N, 3)``
    """

    schema: JointSchema
    left: np.ndarray
    right: np.ndarray
    pose3d: np.ndarray

    def __len__(self):
        return self.left.shape[0]

    def subset(self, mask):
        return PairArrays(self.schema, self.left[mask], self.right[mask],
                          self.pose3d[mask])


def stack_pairs(pairs: Iterable[TrainingPair]) -> PairArrays:
    """Stack training pairs into arrays

    Raises:
        EmptyDatasetError: if there are no pairs
        SchemaMismatchError: if the pairs use different schemas
    """

    pairs = list(pairs)
    if not pairs:
        raise EmptyDatasetError("No training pairs given")
    schema = pairs[0].schema
    for pair in pairs:
        if pair.schema != schema:
            raise SchemaMismatchError(
                "Training pairs mix schemas %r and %r"
                % (schema.name, pair.schema.name)
            )
    return PairArrays(
        schema=schema,
        left=np.stack([pair.left2d.joints for pair in pairs]),
        right=np.stack([pair.right2d.joints for pair in pairs]),
        pose3d=np.stack([pair.pose3d.joints for pair in pairs]),
    )


def holdout_mask(keys: Sequence, fraction=HOLDOUT_FRACTION) -> np.ndarray:
    """Select the held-out share of samples by hashing their keys (record ids
    or indices)"""
    return np.array(
        [split_fraction("holdout:%s" % key) < fraction for key in keys],
        dtype=bool,
    )


def _as_arrays(pairs):
    if isinstance(pairs, PairArrays):
        return pairs
    return stack_pairs(pairs)


def _flatten(array):
    return array.reshape(array.shape[0], -1)


def train_view_synthesis(pairs, train_config: TrainConfig,
                         architecture=LifterArchitecture(),
                         progress=False) -> ViewSynthModel:
    """Train the view synthesis network on normalized 2D coordinates.

    Args:
        pairs: Iterable of :class:`TrainingPair` or a :class:`PairArrays`
        train_config: The training configuration
        architecture: The network hyperparameters
        progress: Flag indicating whether to show a progress bar

    Raises:
        EmptyDatasetError: if there are no pairs
        SchemaMismatchError: if the pairs use different schemas
    """

    data = _as_arrays(pairs)
    num_joints = data.schema.num_joints
    network = init_kaiming(architecture.mlp_config(2 * num_joints,
                                                   2 * num_joints))
    inputs = _flatten(normalize_pixels(data.left, architecture.crop_size))
    targets = _flatten(normalize_pixels(data.right, architecture.crop_size))
    logger.info("Training view synthesis on %d pairs", len(data))
    result = train(network, inputs, targets, train_config, progress=progress)
    return ViewSynthModel(result.model, data.schema, architecture.crop_size,
                          result.history)


def predict_right_batch(model: ViewSynthModel, left) -> np.ndarray:
    """Predict normalized right views for an array of normalized left views
    of shape ``(n, N, 2)``"""
    left = np.asarray(left, dtype=float)
    output = predict(model.network, _flatten(left))
    return output.reshape(left.shape)


def predict_right(model: ViewSynthModel, left: Pose2D) -> Pose2D:
    """Predict the normalized right view of a normalized left-view pose

    Raises:
        SchemaMismatchError: if the schema of the pose differs from that of
            the model
    """
    if left.schema != model.schema:
        raise SchemaMismatchError(
            "Pose uses schema %r, model expects %r"
            % (left.schema.name, model.schema.name)
        )
    return Pose2D(predict_right_batch(model, left.joints[np.newaxis])[0],
                  model.schema)


def _train_recon(data, inputs, train_config, architecture, recon_input,
                 progress):
    num_joints = data.schema.num_joints
    network = init_kaiming(
        architecture.mlp_config(inputs.shape[1], 3 * num_joints)
    )
    targets = _flatten(data.pose3d / architecture.scale_mm)
    logger.info("Training %s reconstruction on %d pairs", recon_input.value,
                len(data))
    result = train(network, inputs, targets, train_config, progress=progress)
    return ReconModel(result.model, data.schema, recon_input,
                      architecture.crop_size, architecture.scale_mm,
                      result.history)


def train_reconstruction(pairs, view_model: ViewSynthModel,
                         train_config: TrainConfig,
                         mode=TrainingMode.SELF_SYNTHESIZED,
                         architecture=LifterArchitecture(),
                         progress=False) -> ReconModel:
    """Train the stereo reconstruction network.

    The input of each sample is the normalized left view followed by the
    normalized right view. In teacher-forced mode the right view is the
    ground truth of the pair, in self-synthesized mode it is predicted by
    ``view_model``. The view synthesis network is never modified.

    Raises:
        EmptyDatasetError: if there are no pairs
        SchemaMismatchError: if the pairs and the view model use different
            schemas
        MissingViewModelError: if no view model is given in self-synthesized
            mode
    """

    data = _as_arrays(pairs)
    if view_model is not None and view_model.schema != data.schema:
        raise SchemaMismatchError("View model and pairs use different schemas")
    left = normalize_pixels(data.left, architecture.crop_size)
    if TrainingMode(mode) == TrainingMode.TEACHER_FORCED:
        right = normalize_pixels(data.right, architecture.crop_size)
    else:
        _require_view_model(view_model)
        right = predict_right_batch(view_model, left)
    inputs = np.concatenate((_flatten(left), _flatten(right)), axis=1)
    return _train_recon(data, inputs, train_config, architecture,
                        ReconInput.STEREO, progress)


def train_monocular(pairs, train_config: TrainConfig,
                    architecture=LifterArchitecture(),
                    progress=False) -> ReconModel:
    """Train a reconstruction network on the left view only"""
    data = _as_arrays(pairs)
    inputs = _flatten(normalize_pixels(data.left, architecture.crop_size))
    return _train_recon(data, inputs, train_config, architecture,
                        ReconInput.MONOCULAR, progress)


def predict_coarse_batch(view_model: Optional[ViewSynthModel],
                         recon_model: ReconModel, left) -> np.ndarray:
    """Predict root-relative 3D poses in millimeters for an array of left
    views in crop coordinates of shape ``(n, N, 2)``.

    The root joint of every result is exactly at the origin. The view model
    is ignored (and may be ``None``) for monocular reconstruction models.

    Raises:
        MissingViewModelError: if a stereo model is given no view model
    """

    left = np.asarray(left, dtype=float)
    left_norm = normalize_pixels(left, recon_model.crop_size)
    inputs = _flatten(left_norm)
    if recon_model.input == ReconInput.STEREO:
        _require_view_model(view_model)
        right_norm = predict_right_batch(view_model, left_norm)
        inputs = np.concatenate((inputs, _flatten(right_norm)), axis=1)
    output = predict(recon_model.network, inputs)
    joints = output.reshape(left.shape[:-1] + (3,)) * recon_model.scale_mm
    return root_align_array(joints, recon_model.schema.root_index)


def predict_coarse(view_model: Optional[ViewSynthModel],
                   recon_model: ReconModel, left: Pose2D) -> Pose3D:
    """Predict the coarse root-relative 3D pose of a left view in crop
    coordinates.

    Raises:
        SchemaMismatchError: if the schemas of the pose and the models differ
        MissingViewModelError: if a stereo model is given no view model
    """

    models = [recon_model]
    if recon_model.input == ReconInput.STEREO:
        _require_view_model(view_model)
        models.append(view_model)
    for model in models:
        if model.schema != left.schema:
            raise SchemaMismatchError(
                "Pose uses schema %r, model expects %r"
                % (left.schema.name, model.schema.name)
            )
    joints = predict_coarse_batch(view_model, recon_model,
                                  left.joints[np.newaxis])[0]
    return Pose3D(joints, left.schema, Frame.ROOT_RELATIVE)


def right_view_pixels(view_model: ViewSynthModel, left) -> np.ndarray:
    """Predict right views in crop coordinates from left views in crop
    coordinates, shape ``(n, N, 2)``"""
    left_norm = normalize_pixels(left, view_model.crop_size)
    return denormalize_pixels(predict_right_batch(view_model, left_norm),
                              view_model.crop_size)


def _schema_metadata(schema):
    data = {"schema": schema.name}
    if schema != H36M_16:
        data["schema_table"] = schema.to_dict()
    return data


def save_lifter(path, model, extra_metadata=None):
    """Write a view synthesis or reconstruction model to a file.

    The schema, normalization constants and training history are stored in
    the metadata of the model file.
    """

    metadata = _schema_metadata(model.schema)
    metadata["crop_size"] = float(model.crop_size)
    metadata["history"] = model.history.to_dict()
    if isinstance(model, ViewSynthModel):
        metadata["kind"] = "viewsynth"
    else:
        metadata["kind"] = "recon"
        metadata["input"] = model.input.value
        metadata["scale_mm"] = float(model.scale_mm)
    metadata.update(extra_metadata or {})
    save_model(path, model.network, metadata)


def load_lifter(path, kind=None):
    """Read a model written by :func:`save_lifter`

    Args:
        path: The model file
        kind: The expected kind (``"viewsynth"`` or ``"recon"``), or ``None``
            to accept both

    Raises:
        OSError: if the file cannot be read
        ModelFormatError: if the file does not hold a valid model
        ModelKindError: if the file holds a different kind of model
    """

    network, metadata = load_model(path)
    actual = metadata.get("kind")
    if actual not in ("viewsynth", "recon") or (kind and actual != kind):
        raise ModelKindError(
            "%s holds a %r model, expected %r" % (path, actual, kind)
        )
    if "schema_table" in metadata:
        register_schema(JointSchema.from_dict(metadata["schema_table"]))
    schema = get_schema(metadata.get("schema", H36M_16.name))
    history = TrainingHistory.from_dict(metadata.get("history", {}))
    crop_size = metadata.get("crop_size", DEFAULT_CROP_SIZE)
    if actual == "viewsynth":
        return ViewSynthModel(network, schema, crop_size, history)
    return ReconModel(
        network,
        schema,
        ReconInput(metadata.get("input", ReconInput.STEREO.value)),
        crop_size,
        metadata.get("scale_mm", DEFAULT_SCALE_MM),
        history,
    )
