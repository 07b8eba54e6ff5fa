"""
Deterministic generator for synthetic 2D/3D training pairs.

Poses are sampled on the kinematic tree of a :class:`JointSchema`: each bone
gets a length drawn from a configured range (mirrored limbs share their
length) and a direction drawn within a cone around the direction of a
canonical standing pose. The whole body is then rotated by a random yaw and
placed in front of the camera.

The intrinsics of the configuration describe the camera in crop coordinates,
so the generated 2D poses are directly in the ``crop_size`` square. The pelvis
is placed on the ray through the principal point (plus an optional jitter), as
a cropped in-the-wild person would be.

Every random draw comes from a generator seeded by ``(seed, record_index)``,
so any record can be regenerated independently of the others.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterator, Tuple

import numpy as np
from scipy.spatial.transform import Rotation
from tqdm import tqdm

from stereopose.dataset import DatasetRecord, PathOrStream, write_records
from stereopose.geometry import (
    DEFAULT_SHIFT_MM,
    IDENTITY_CROP,
    CameraIntrinsics,
    NonPositiveDepthError,
    back_project,
    project,
    shift_project,
)
from stereopose.skeleton import (
    DEFAULT_CROP_SIZE,
    H36M_16,
    Frame,
    JointSchema,
    Pose2D,
    Pose3D,
    root_align,
)

logger = logging.getLogger(__name__)

#: Number of attempts to find a pose fitting into the crop
RETRY_BUDGET = 100

#: Bone length ranges in millimeters, keyed by the name of the child joint
DEFAULT_BONE_LENGTH_RANGES = {
    "right_hip": (120.0, 150.0),
    "right_knee": (400.0, 470.0),
    "right_ankle": (380.0, 450.0),
    "left_hip": (120.0, 150.0),
    "left_knee": (400.0, 470.0),
    "left_ankle": (380.0, 450.0),
    "spine": (200.0, 260.0),
    "neck": (220.0, 280.0),
    "head_top": (180.0, 230.0),
    "left_shoulder": (130.0, 170.0),
    "left_elbow": (260.0, 310.0),
    "left_wrist": (230.0, 270.0),
    "right_shoulder": (130.0, 170.0),
    "right_elbow": (260.0, 310.0),
    "right_wrist": (230.0, 270.0),
}

#: Swing limits (half-angle of the direction cone) in radians, keyed by the
#: name of the child joint
DEFAULT_JOINT_ANGLE_RANGES = {
    "right_hip": 0.15,
    "right_knee": 0.6,
    "right_ankle": 0.5,
    "left_hip": 0.15,
    "left_knee": 0.6,
    "left_ankle": 0.5,
    "spine": 0.25,
    "neck": 0.2,
    "head_top": 0.3,
    "left_shoulder": 0.2,
    "left_elbow": 1.4,
    "left_wrist": 1.4,
    "right_shoulder": 0.2,
    "right_elbow": 1.4,
    "right_wrist": 1.4,
}

#: Bone directions of a person standing upright and facing the camera.
#: The person's left side appears on the right of the image.
CANONICAL_DIRECTIONS = {
    "right_hip": (-1.0, 0.0, 0.0),
    "right_knee": (0.0, 1.0, 0.0),
    "right_ankle": (0.0, 1.0, 0.0),
    "left_hip": (1.0, 0.0, 0.0),
    "left_knee": (0.0, 1.0, 0.0),
    "left_ankle": (0.0, 1.0, 0.0),
    "spine": (0.0, -1.0, 0.0),
    "neck": (0.0, -1.0, 0.0),
    "head_top": (0.0, -1.0, 0.0),
    "left_shoulder": (1.0, 0.0, 0.0),
    "left_elbow": (0.0, 1.0, 0.0),
    "left_wrist": (0.0, 1.0, 0.0),
    "right_shoulder": (-1.0, 0.0, 0.0),
    "right_elbow": (0.0, 1.0, 0.0),
    "right_wrist": (0.0, 1.0, 0.0),
}


class InvalidSynthConfigError(ValueError):
    """Raised when a generator configuration is inconsistent"""


class GenerationExhaustedError(RuntimeError):
    """Raised when no valid pose could be found within the retry budget"""


def _default_intrinsics():
    return CameraIntrinsics(
        fx=230.0, fy=230.0, cx=DEFAULT_CROP_SIZE / 2, cy=DEFAULT_CROP_SIZE / 2
    )


@dataclass(frozen=True)
class SynthConfig:
    """Configuration of the synthetic pair generator.

    Attributes:
        seed: The base seed
        bone_length_ranges: ``(min, max)`` bone length in millimeters keyed by
            child joint name. Mirrored bones must have equal ranges.
        joint_angle_ranges: Half-angle of the direction cone in radians keyed
            by child joint name
        root_depth_range: ``(min, max)`` depth of the pelvis in millimeters
        yaw_range: ``(min, max)`` rotation of the body about the vertical
            axis, in radians
        tilt_limit: Maximum forward/sideways tilt of the body, in radians
        root_jitter_px: Maximum offset of the pelvis from the principal point
            in the image, in pixels
        intrinsics: The camera intrinsics in crop coordinates
        crop_size: The side of the square crop in pixels
        dx: The shift of the virtual right camera in millimeters
        schema: The joint schema
    """

    seed: int = 0
    bone_length_ranges: Dict[str, Tuple[float, float]] = field(
        default_factory=lambda: dict(DEFAULT_BONE_LENGTH_RANGES)
    )
    joint_angle_ranges: Dict[str, float] = field(
        default_factory=lambda: dict(DEFAULT_JOINT_ANGLE_RANGES)
    )
    root_depth_range: Tuple[float, float] = (2000.0, 6000.0)
    yaw_range: Tuple[float, float] = (-math.pi / 4, math.pi / 4)
    tilt_limit: float = 0.1
    root_jitter_px: float = 0.0
    intrinsics: CameraIntrinsics = field(default_factory=_default_intrinsics)
    crop_size: float = DEFAULT_CROP_SIZE
    dx: float = DEFAULT_SHIFT_MM
    schema: JointSchema = H36M_16

    def __post_init__(self):
        self.validate()

    def validate(self):
        """Check the configuration for consistency

        Raises:
            InvalidSynthConfigError: if the configuration is inconsistent
        """
        schema = self.schema
        for child, _ in schema.bones:
            name = schema.joint_names[child]
            if name not in self.bone_length_ranges:
                raise InvalidSynthConfigError("No length range for %r" % name)
            if name not in self.joint_angle_ranges:
                raise InvalidSynthConfigError("No angle range for %r" % name)
            if name not in CANONICAL_DIRECTIONS:
                raise InvalidSynthConfigError(
                    "No canonical direction for %r" % name
                )
            low, high = self.bone_length_ranges[name]
            if not 0 <= low <= high:
                raise InvalidSynthConfigError(
                    "Invalid length range for %r: %r" % (name, (low, high))
                )
            if self.joint_angle_ranges[name] < 0:
                raise InvalidSynthConfigError(
                    "Negative angle range for %r" % name
                )
        for left, right in schema.left_right_pairs:
            left_range = self.bone_length_ranges[schema.joint_names[left]]
            right_range = self.bone_length_ranges[schema.joint_names[right]]
            if tuple(left_range) != tuple(right_range):
                raise InvalidSynthConfigError(
                    "Mirrored bones %r and %r need equal length ranges"
                    % (schema.joint_names[left], schema.joint_names[right])
                )
        depth_low, depth_high = self.root_depth_range
        if not 0 < depth_low <= depth_high:
            raise InvalidSynthConfigError(
                "Invalid root depth range %r" % (self.root_depth_range,)
            )
        if not self.yaw_range[0] <= self.yaw_range[1]:
            raise InvalidSynthConfigError("Invalid yaw range")
        if self.tilt_limit < 0 or self.root_jitter_px < 0:
            raise InvalidSynthConfigError("Limits must not be negative")
        if not self.crop_size > 0:
            raise InvalidSynthConfigError("Crop size must be positive")


@dataclass(frozen=True, eq=False)
class TrainingPair:
    """A synthetic training sample.

    Attributes:
        left2d: The left-view 2D pose in crop coordinates
        right2d: The right-view 2D pose in crop coordinates
        pose3d: The root-relative 3D pose
        pose3d_abs: The absolute 3D pose
        intrinsics: The intrinsics of the crop
    """

    left2d: Pose2D
    right2d: Pose2D
    pose3d: Pose3D
    pose3d_abs: Pose3D
    intrinsics: CameraIntrinsics

    @property
    def schema(self):
        return self.left2d.schema


def record_rng(seed, index) -> np.random.Generator:
    """The random generator for the record with the given index"""
    return np.random.default_rng([int(seed), int(index)])


def _perpendicular_axis(rng, direction):
    """A random unit vector perpendicular to the given unit vector"""
    while True:
        candidate = np.cross(direction, rng.normal(size=3))
        norm = np.linalg.norm(candidate)
        if norm > 1e-6:
            return candidate / norm


def _sample_bone_lengths(rng, cfg: SynthConfig):
    schema = cfg.schema
    lengths = np.zeros(schema.num_joints)
    for child, _ in schema.bones:
        low, high = cfg.bone_length_ranges[schema.joint_names[child]]
        lengths[child] = rng.uniform(low, high)
    # Left limbs take the length of their right counterpart
    for left, right in schema.left_right_pairs:
        lengths[left] = lengths[right]
    return lengths


def _sample_directions(rng, cfg: SynthConfig):
    schema = cfg.schema
    directions = np.zeros((schema.num_joints, 3))
    for child, _ in schema.bones:
        name = schema.joint_names[child]
        canonical = np.asarray(CANONICAL_DIRECTIONS[name])
        angle = rng.uniform(0.0, cfg.joint_angle_ranges[name])
        axis = _perpendicular_axis(rng, canonical)
        directions[child] = Rotation.from_rotvec(angle * axis).apply(canonical)
    return directions


def _sample_body_rotation(rng, cfg: SynthConfig):
    yaw = rng.uniform(*cfg.yaw_range)
    tilt = rng.uniform(-cfg.tilt_limit, cfg.tilt_limit, size=2)
    # Yaw about the vertical (y) axis, tilt about x and z
    return Rotation.from_euler("yxz", [yaw, tilt[0], tilt[1]])


def _sample_root(rng, cfg: SynthConfig):
    depth = rng.uniform(*cfg.root_depth_range)
    k = cfg.intrinsics
    jitter = rng.uniform(-cfg.root_jitter_px, cfg.root_jitter_px, size=2)
    pixel = (k.cx + jitter[0], k.cy + jitter[1])
    return back_project(pixel, depth, k)


def _sample_joints(rng, cfg: SynthConfig):
    schema = cfg.schema
    lengths = _sample_bone_lengths(rng, cfg)
    directions = _sample_body_rotation(rng, cfg).apply(
        _sample_directions(rng, cfg)
    )
    joints = np.zeros((schema.num_joints, 3))
    joints[schema.root_index] = _sample_root(rng, cfg)
    for joint in schema.topological_order[1:]:
        parent = schema.parents[joint]
        joints[joint] = joints[parent] + lengths[joint] * directions[joint]
    return joints


def _fits_crop(joints, cfg: SynthConfig):
    if np.any(joints[:, 2] <= 0):
        return False
    pixels = project(joints, cfg.intrinsics)
    return bool(np.all((pixels >= 0) & (pixels <= cfg.crop_size)))


def sample_pose3(rng: np.random.Generator, cfg: SynthConfig) -> Pose3D:
    """Sample an absolute 3D pose whose projection fits into the crop.

    Args:
        rng: The random generator to draw from
        cfg: The generator configuration

    Returns:
        A :class:`Pose3D` in the absolute frame

    Raises:
        GenerationExhaustedError: if no fitting pose was found within
            :data:`RETRY_BUDGET` attempts
    """

    for _ in range(RETRY_BUDGET):
        joints = _sample_joints(rng, cfg)
        if _fits_crop(joints, cfg):
            return Pose3D(joints, cfg.schema, Frame.ABSOLUTE)
    raise GenerationExhaustedError(
        "No pose fitting into the crop after %d attempts" % RETRY_BUDGET
    )


def generate_pair(rng: np.random.Generator, cfg: SynthConfig) -> TrainingPair:
    """Sample a pose and derive its stereo 2D views and root-relative pose

    Raises:
        GenerationExhaustedError: if no fitting pose could be sampled
    """

    pose_abs = sample_pose3(rng, cfg)
    try:
        left = project(pose_abs.joints, cfg.intrinsics)
        right = shift_project(pose_abs.joints, cfg.intrinsics, cfg.dx)
    except NonPositiveDepthError as error:
        raise GenerationExhaustedError(str(error)) from error
    return TrainingPair(
        left2d=Pose2D(left, cfg.schema),
        right2d=Pose2D(right, cfg.schema),
        pose3d=root_align(pose_abs),
        pose3d_abs=pose_abs,
        intrinsics=cfg.intrinsics,
    )


def generate_pairs(cfg: SynthConfig, count, start=0) -> Iterator[TrainingPair]:
    """Lazily generate ``count`` pairs, starting at record index ``start``"""
    for index in range(start, start + count):
        yield generate_pair(record_rng(cfg.seed, index), cfg)


def record_id(cfg: SynthConfig, index):
    """The id of the generated record with the given index"""
    return "synth-%d-%08d" % (cfg.seed, index)


def pair_to_record(pair: TrainingPair, rec_id, dx) -> DatasetRecord:
    """Represent a training pair as a dataset record.

    The right view and the shift are kept in the ``meta`` data of the record.
    """
    return DatasetRecord(
        id=rec_id,
        source="synthgen",
        schema_name=pair.schema.name,
        crop=IDENTITY_CROP,
        intrinsics=pair.intrinsics,
        joints2d=pair.left2d.joints,
        joints3d_rel=pair.pose3d.joints,
        joints3d_abs=pair.pose3d_abs.joints,
        meta={"joints2d_right": pair.right2d.joints.tolist(), "dx": float(dx)},
    )


def pair_from_record(record: DatasetRecord) -> TrainingPair:
    """Recover a training pair from a record written by
    :func:`generate_dataset`

    Raises:
        KeyError: if the record lacks the right view or the 3D pose
    """
    if record.joints3d_rel is None or record.joints3d_abs is None:
        raise KeyError("Record %r carries no 3D pose" % record.id)
    schema = record.schema
    return TrainingPair(
        left2d=Pose2D(record.joints2d, schema),
        right2d=Pose2D(record.meta["joints2d_right"], schema),
        pose3d=Pose3D(record.joints3d_rel, schema, Frame.ROOT_RELATIVE),
        pose3d_abs=Pose3D(record.joints3d_abs, schema, Frame.ABSOLUTE),
        intrinsics=record.intrinsics,
    )


@dataclass(frozen=True)
class GenerationSummary:
    """Summary of a call to :func:`generate_dataset`"""

    count: int
    seed: int

    def to_dict(self):
        return {"count": self.count, "seed": self.seed}


def generate_dataset(cfg: SynthConfig,
                     count,
                     out: PathOrStream,
                     progress=False) -> GenerationSummary:
    """Generate a dataset file of synthetic training pairs.

    Records are produced and written one at a time, so memory use does not
    depend on ``count``.

    Args:
        cfg: The generator configuration
        count: The number of records, at least 1
        out: The path or text stream to write to
        progress: Flag indicating whether to show a progress bar

    Returns:
        A :class:`GenerationSummary`

    Raises:
        ValueError: if ``count`` is less than 1
        GenerationExhaustedError: if a record could not be generated
        DatasetWriteError: if writing a record failed
    """

    if count < 1:
        raise ValueError("At least one record must be generated")

    records = (
        pair_to_record(pair, record_id(cfg, index), cfg.dx)
        for index, pair in enumerate(generate_pairs(cfg, count))
    )
    written = write_records(out, tqdm(records, total=count,
                                      disable=not progress, desc="Generate",
                                      unit="rec"))
    logger.info("Generated %d synthetic records with seed %d", written,
                cfg.seed)
    return GenerationSummary(count=written, seed=cfg.seed)
