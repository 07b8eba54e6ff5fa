"""
Joint schemas and pose containers.

A :class:`JointSchema` describes the kinematic tree of a skeleton. Poses are
immutable values holding an ``(N, 2)`` array of pixel coordinates
(:class:`Pose2D`) or an ``(N, 3)`` array of millimeter coordinates
(:class:`Pose3D`). Three-dimensional poses carry an explicit :class:`Frame`
tag telling whether they are given in absolute camera coordinates or relative
to the root joint.
"""
import enum
from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

#: Default side length of the square crop, in pixels
DEFAULT_CROP_SIZE = 256.0

#: Default scale for normalizing root-relative 3D coordinates, in millimeters
DEFAULT_SCALE_MM = 1000.0


class InvalidSchemaError(ValueError):
    """Raised when a joint schema does not describe a valid tree"""


class SchemaMismatchError(ValueError):
    """Raised when poses or models with incompatible schemas are combined"""


class FrameMismatchError(ValueError):
    """Raised when a pose is given in the wrong coordinate frame"""


class InvalidPoseError(ValueError):
    """Raised when the joint array of a pose is not valid"""


class Frame(enum.Enum):
    """Coordinate frame of a 3D pose"""

    ABSOLUTE = "absolute"
    ROOT_RELATIVE = "root_relative"


@dataclass(frozen=True)
class JointSchema:
    """Describes the joints of a skeleton and their kinematic tree.

    Attributes:
        name: The identifier of the schema
        joint_names: The labels of the joints
        parents: The index of the parent of each joint. The parent of the
            root joint is the root joint itself.
        root_index: The index of the root joint (pelvis)
        head_top_index: The index of the head-top joint
        neck_index: The index of the neck joint
        left_right_pairs: Pairs of indices of mirrored joints, left joint
            first
    """

    name: str
    joint_names: Tuple[str, ...]
    parents: Tuple[int, ...]
    root_index: int
    head_top_index: int
    neck_index: int
    left_right_pairs: Tuple[Tuple[int, int], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "joint_names", tuple(self.joint_names))
        object.__setattr__(
            self, "parents", tuple(int(parent) for parent in self.parents)
        )
        object.__setattr__(
            self,
            "left_right_pairs",
            tuple((int(left), int(right))
                  for left, right in self.left_right_pairs),
        )

        num_joints = len(self.joint_names)
        if num_joints < 2:
            raise InvalidSchemaError("A schema needs at least two joints")
        if len(self.parents) != num_joints:
            raise InvalidSchemaError(
                "Schema %r has %d joints but %d parents"
                % (self.name, num_joints, len(self.parents))
            )
        indices = (self.root_index, self.head_top_index, self.neck_index)
        if any(not 0 <= index < num_joints for index in indices):
            raise InvalidSchemaError("Schema %r has invalid special joints"
                                     % self.name)
        if self.head_top_index == self.neck_index:
            raise InvalidSchemaError("Head-top and neck must differ")
        if self.parents[self.root_index] != self.root_index:
            raise InvalidSchemaError("The root must be its own parent")
        for pair in self.left_right_pairs:
            if any(not 0 <= index < num_joints for index in pair):
                raise InvalidSchemaError("Invalid left/right pair %r" % (pair,))

        # Every joint must reach the root without running into a cycle
        for joint in range(num_joints):
            visited = set()
            current = joint
            while current != self.root_index:
                if current in visited or not 0 <= current < num_joints:
                    raise InvalidSchemaError(
                        "Joint %r does not lead to the root"
                        % self.joint_names[joint]
                    )
                visited.add(current)
                current = self.parents[current]

    @property
    def num_joints(self):
        """The number of joints"""
        return len(self.joint_names)

    @property
    def bones(self):
        """The list of ``(child, parent)`` index pairs, excluding the root"""
        return [
            (child, parent)
            for child, parent in enumerate(self.parents)
            if child != self.root_index
        ]

    @property
    def topological_order(self):
        """Joint indices ordered such that each parent precedes its
        children"""
        order = [self.root_index]
        pending = [j for j in range(self.num_joints) if j != self.root_index]
        while pending:
            ready = [j for j in pending if self.parents[j] in order]
            order.extend(ready)
            pending = [j for j in pending if j not in ready]
        return order

    def index(self, joint_name):
        """Determine the index of the joint with the given name"""
        return self.joint_names.index(joint_name)

    def mirror_of(self, joint):
        """Return the index of the mirrored joint, or ``None`` if the joint
        is not part of a left/right pair"""
        for left, right in self.left_right_pairs:
            if joint == left:
                return right
            if joint == right:
                return left
        return None

    def to_dict(self):
        """Represent the schema as a dictionary with the full joint table"""
        return {
            "name": self.name,
            "joint_names": list(self.joint_names),
            "parents": list(self.parents),
            "root_index": self.root_index,
            "head_top_index": self.head_top_index,
            "neck_index": self.neck_index,
            "left_right_pairs": [list(pair) for pair in self.left_right_pairs],
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            name=data["name"],
            joint_names=tuple(data["joint_names"]),
            parents=tuple(data["parents"]),
            root_index=int(data["root_index"]),
            head_top_index=int(data["head_top_index"]),
            neck_index=int(data["neck_index"]),
            left_right_pairs=tuple(
                tuple(pair) for pair in data.get("left_right_pairs", ())
            ),
        )


H36M_16 = JointSchema(
    name="h36m16",
    joint_names=(
        "pelvis",
        "right_hip",
        "right_knee",
        "right_ankle",
        "left_hip",
        "left_knee",
        "left_ankle",
        "spine",
        "neck",
        "head_top",
        "left_shoulder",
        "left_elbow",
        "left_wrist",
        "right_shoulder",
        "right_elbow",
        "right_wrist",
    ),
    parents=(0, 0, 1, 2, 0, 4, 5, 0, 7, 8, 8, 10, 11, 8, 13, 14),
    root_index=0,
    head_top_index=9,
    neck_index=8,
    left_right_pairs=((4, 1), (5, 2), (6, 3), (10, 13), (11, 14), (12, 15)),
)

_SCHEMAS: Dict[str, JointSchema] = {H36M_16.name: H36M_16}


def register_schema(schema: JointSchema):
    """Make a schema available for lookup by name"""
    _SCHEMAS[schema.name] = schema


def get_schema(name) -> JointSchema:
    """Look up a registered schema by name

    Raises:
        SchemaMismatchError: if no schema of that name is known
    """
    try:
        return _SCHEMAS[name]
    except KeyError:
        raise SchemaMismatchError("Unknown joint schema %r" % name) from None


def _frozen_joints(joints, width, schema):
    joints = np.array(joints, dtype=float)
    if joints.shape != (schema.num_joints, width):
        raise SchemaMismatchError(
            "Expected joints of shape %r for schema %r, got %r"
            % ((schema.num_joints, width), schema.name, joints.shape)
        )
    if not np.all(np.isfinite(joints)):
        raise InvalidPoseError("Joint coordinates must be finite")
    joints.setflags(write=False)
    return joints


@dataclass(frozen=True, eq=False)
class Pose2D:
    """A 2D pose in pixel (or normalized) image coordinates.

    Attributes:
        joints: Array of shape ``(N, 2)``
        schema: The joint schema
    """

    joints: np.ndarray
    schema: JointSchema = field(default=H36M_16)

    def __post_init__(self):
        object.__setattr__(
            self, "joints", _frozen_joints(self.joints, 2, self.schema)
        )


@dataclass(frozen=True, eq=False)
class Pose3D:
    """A 3D pose in millimeters (or normalized units).

    Attributes:
        joints: Array of shape ``(N, 3)``
        schema: The joint schema
        frame: Whether the joints are absolute camera coordinates or relative
            to the root joint. Root-relative poses have their root joint at
            exactly ``(0, 0, 0)``.
    """

    joints: np.ndarray
    schema: JointSchema = field(default=H36M_16)
    frame: Frame = Frame.ABSOLUTE

    def __post_init__(self):
        object.__setattr__(
            self, "joints", _frozen_joints(self.joints, 3, self.schema)
        )
        if (self.frame == Frame.ROOT_RELATIVE
                and np.any(self.joints[self.schema.root_index] != 0)):
            raise InvalidPoseError(
                "Root-relative pose must have its root at the origin"
            )

    @property
    def root(self):
        """The coordinates of the root joint"""
        return self.joints[self.schema.root_index]

    def translated(self, offset):
        """Return a copy of this pose translated by the given offset.

        The result is in the absolute frame, as translation moves the root.
        """
        return Pose3D(self.joints + np.asarray(offset, dtype=float),
                      self.schema, Frame.ABSOLUTE)


def require_frame(pose: Pose3D, frame: Frame):
    """Check that the pose is given in the expected frame

    Raises:
        FrameMismatchError: if the frame differs
    """
    if pose.frame != frame:
        raise FrameMismatchError(
            "Expected a pose in the %s frame, got %s"
            % (frame.value, pose.frame.value)
        )


def require_same_schema(*items):
    """Check that all given poses or models share a single schema

    Raises:
        SchemaMismatchError: if the schemas differ
    """
    schemas = {item.schema for item in items}
    if len(schemas) > 1:
        raise SchemaMismatchError(
            "Incompatible schemas: %s"
            % ", ".join(sorted(schema.name for schema in schemas))
        )


def root_align_array(joints, root_index=0):
    """Translate an array of poses of shape ``(..., N, 3)`` such that the
    root joint is at the origin."""
    joints = np.asarray(joints, dtype=float)
    return joints - joints[..., root_index:root_index + 1, :]


def root_align(pose: Pose3D) -> Pose3D:
    """Translate a pose such that its root joint is at the origin.

    The operation is idempotent and the root joint of the result is exactly
    ``(0, 0, 0)``.
    """
    return Pose3D(
        root_align_array(pose.joints, pose.schema.root_index),
        pose.schema,
        Frame.ROOT_RELATIVE,
    )


def bone_lengths(pose: Pose3D, schema: JointSchema = None):
    """Determine the Euclidean length of each bone.

    Args:
        pose: The pose
        schema: The schema providing the bones (default: the schema of the
            pose)

    Returns:
        An array with the length of each bone in the order of
        :attr:`JointSchema.bones`
    """
    schema = schema or pose.schema
    bones = np.array(schema.bones)
    return np.linalg.norm(
        pose.joints[bones[:, 0]] - pose.joints[bones[:, 1]], axis=-1
    )


def normalize_pixels(pixels, crop_size=DEFAULT_CROP_SIZE):
    """Map crop pixel coordinates into the range ``[-1, 1]``"""
    return 2.0 * np.asarray(pixels, dtype=float) / crop_size - 1.0


def denormalize_pixels(values, crop_size=DEFAULT_CROP_SIZE):
    """Inverse of :func:`normalize_pixels`"""
    return (np.asarray(values, dtype=float) + 1.0) * crop_size / 2.0


def normalize2d(pose: Pose2D, crop_size=DEFAULT_CROP_SIZE) -> Pose2D:
    """Normalize a pose in crop coordinates to the range ``[-1, 1]``.

    Raises:
        ValueError: if the crop size is not positive
    """
    if not crop_size > 0:
        raise ValueError("Crop size must be positive")
    return Pose2D(normalize_pixels(pose.joints, crop_size), pose.schema)


def denormalize2d(pose: Pose2D, crop_size=DEFAULT_CROP_SIZE) -> Pose2D:
    """Inverse of :func:`normalize2d`"""
    if not crop_size > 0:
        raise ValueError("Crop size must be positive")
    return Pose2D(denormalize_pixels(pose.joints, crop_size), pose.schema)


def normalize3d(pose: Pose3D, scale_mm=DEFAULT_SCALE_MM) -> Pose3D:
    """Scale a root-relative pose into normalized units.

    Raises:
        FrameMismatchError: if the pose is not root-relative
        ValueError: if the scale is not positive
    """
    require_frame(pose, Frame.ROOT_RELATIVE)
    if not scale_mm > 0:
        raise ValueError("Scale must be positive")
    return Pose3D(pose.joints / scale_mm, pose.schema, Frame.ROOT_RELATIVE)


def denormalize3d(pose: Pose3D, scale_mm=DEFAULT_SCALE_MM) -> Pose3D:
    """Inverse of :func:`normalize3d`"""
    require_frame(pose, Frame.ROOT_RELATIVE)
    if not scale_mm > 0:
        raise ValueError("Scale must be positive")
    return Pose3D(pose.joints * scale_mm, pose.schema, Frame.ROOT_RELATIVE)
