"""
Geometric search for the absolute depth of a pose.

Given the ground-truth 2D pose and a coarse root-relative 3D pose, each 2D
joint is lifted along its viewing ray to the depth ``z_i + dz``, where ``z_i``
is the coarse relative depth of the joint and ``dz`` a global offset. The
offset is chosen such that the lifted joints agree best with the coarse pose
in x and y. The lifted pose projects exactly onto the 2D input for any
offset.

With ``a_i = (u_i - cx) / fx`` and ``b_i = (v_i - cy) / fy`` the loss is::

    loss(dz) = sum_i (a_i (z_i + dz) - x_i)^2 + (b_i (z_i + dz) - y_i)^2

which is a convex quadratic in ``dz``. In the ``root`` residual frame the
lifted pose is root-aligned before comparison, which replaces ``a_i`` by
``a_i - a_root`` (and ``b_i`` likewise) in the terms depending on ``dz``.
"""
import enum
from dataclasses import dataclass

import numpy as np

from stereopose.geometry import CameraIntrinsics, project
from stereopose.skeleton import (
    Frame,
    Pose2D,
    Pose3D,
    require_frame,
    require_same_schema,
    root_align,
)

#: Tolerance below which scanned losses count as equal
TIE_TOLERANCE = 1e-12


class GeometricSearchError(RuntimeError):
    """Base class for failures of the geometric search on a single pose"""


class NoValidDepthError(GeometricSearchError):
    """Raised when every candidate offset leaves a joint at non-positive
    depth"""


class DegenerateProjectionError(GeometricSearchError):
    """Raised when the loss does not depend on the depth offset"""


class SearchMode(enum.Enum):
    """Strategy for minimizing the loss"""

    SCAN = "scan"
    CLOSED_FORM = "closed-form"


class ResidualFrame(enum.Enum):
    """Frame in which lifted and coarse poses are compared"""

    CAMERA = "camera"
    ROOT = "root"


@dataclass(frozen=True)
class SearchConfig:
    """Configuration of the geometric search.

    Attributes:
        step_mm: Increment of the scanned offsets
        z_max_mm: Largest scanned offset
        mode: Scan the offsets or use the closed-form minimizer
        residual_frame: Compare in camera coordinates or after root alignment
    """

    step_mm: float = 1.0
    z_max_mm: float = 10000.0
    mode: SearchMode = SearchMode.SCAN
    residual_frame: ResidualFrame = ResidualFrame.CAMERA

    def __post_init__(self):
        object.__setattr__(self, "mode", SearchMode(self.mode))
        object.__setattr__(self, "residual_frame",
                           ResidualFrame(self.residual_frame))
        if not self.step_mm > 0:
            raise ValueError("Step must be positive")
        if not self.z_max_mm > self.step_mm:
            raise ValueError("Maximum offset must exceed the step")

    @property
    def candidates(self):
        """The scanned offsets ``0, step, 2 step, ..., z_max``"""
        count = int(np.floor(self.z_max_mm / self.step_mm + 1e-9)) + 1
        return np.arange(count) * self.step_mm


@dataclass(frozen=True, eq=False)
class RefinedPose:
    """Result of the geometric search.

    Attributes:
        pose_abs: The lifted pose in absolute camera coordinates
        pose_rel: The lifted pose, root-aligned
        delta_z: The chosen depth offset in millimeters
        residual: The loss at the chosen offset in square millimeters
    """

    pose_abs: Pose3D
    pose_rel: Pose3D
    delta_z: float
    residual: float


@dataclass(frozen=True)
class _Terms:
    """The loss written as ``sum (offset + slope * dz)^2`` over x and y
    residuals of all joints"""

    ray_x: np.ndarray
    ray_y: np.ndarray
    depth: np.ndarray
    offset: np.ndarray
    slope: np.ndarray

    def losses(self, deltas):
        residuals = self.offset + self.slope * np.asarray(deltas)[..., None]
        return np.sum(residuals ** 2, axis=-1)


def _terms(coarse: Pose3D, gt2d: Pose2D, k: CameraIntrinsics,
           residual_frame=ResidualFrame.CAMERA) -> _Terms:
    require_frame(coarse, Frame.ROOT_RELATIVE)
    require_same_schema(coarse, gt2d)
    ray_x = (gt2d.joints[:, 0] - k.cx) / k.fx
    ray_y = (gt2d.joints[:, 1] - k.cy) / k.fy
    depth = coarse.joints[:, 2]
    x, y = coarse.joints[:, 0], coarse.joints[:, 1]
    if ResidualFrame(residual_frame) == ResidualFrame.ROOT:
        root = coarse.schema.root_index
        offset_x = ray_x * depth - ray_x[root] * depth[root] - x
        offset_y = ray_y * depth - ray_y[root] * depth[root] - y
        slope_x = ray_x - ray_x[root]
        slope_y = ray_y - ray_y[root]
    else:
        offset_x = ray_x * depth - x
        offset_y = ray_y * depth - y
        slope_x, slope_y = ray_x, ray_y
    return _Terms(
        ray_x=ray_x,
        ray_y=ray_y,
        depth=depth,
        offset=np.concatenate((offset_x, offset_y)),
        slope=np.concatenate((slope_x, slope_y)),
    )


def _unconstrained_minimizer(terms: _Terms):
    denominator = np.sum(terms.slope ** 2)
    if denominator == 0:
        raise DegenerateProjectionError(
            "All joints lie on the reference ray; the loss does not depend "
            "on the depth offset"
        )
    return -np.sum(terms.slope * terms.offset) / denominator


def closed_form_delta_z(coarse: Pose3D, gt2d: Pose2D, k: CameraIntrinsics,
                        residual_frame=ResidualFrame.CAMERA) -> float:
    """Determine the loss-minimizing non-negative depth offset analytically.

    Returns:
        ``max(0, sum_i a_i (x_i - a_i z_i) + b_i (y_i - b_i z_i) /
        sum_i a_i^2 + b_i^2)``

    Raises:
        DegenerateProjectionError: if the denominator is zero
        FrameMismatchError: if the coarse pose is not root-relative
        SchemaMismatchError: if the poses use different schemas
    """
    return float(max(0.0, _unconstrained_minimizer(
        _terms(coarse, gt2d, k, residual_frame)
    )))


def loss_curve(coarse: Pose3D, gt2d: Pose2D, k: CameraIntrinsics,
               cfg=SearchConfig()):
    """Evaluate the loss at every scanned offset.

    Offsets leaving a joint at non-positive depth have infinite loss.

    Returns:
        A tuple of the offsets and the corresponding losses
    """

    terms = _terms(coarse, gt2d, k, cfg.residual_frame)
    deltas = cfg.candidates
    losses = terms.losses(deltas)
    valid = np.all(terms.depth[None, :] + deltas[:, None] > 0, axis=1)
    return deltas, np.where(valid, losses, np.inf)


def _lift(terms: _Terms, delta_z, schema):
    depth = terms.depth + delta_z
    joints = np.stack((terms.ray_x * depth, terms.ray_y * depth, depth),
                      axis=-1)
    return Pose3D(joints, schema, Frame.ABSOLUTE)


def refine(coarse: Pose3D, gt2d: Pose2D, k: CameraIntrinsics,
           cfg=SearchConfig()) -> RefinedPose:
    """Lift the ground-truth 2D pose to absolute 3D using the relative depths
    of the coarse pose.

    In scan mode the offsets ``0, step, ..., z_max`` are evaluated in
    ascending order and the first offset whose loss is within
    :data:`TIE_TOLERANCE` of the minimum is chosen. In closed-form mode the
    analytic minimizer is clipped to the smallest valid scanned offset and
    ``z_max``.

    Args:
        coarse: The coarse root-relative 3D pose in millimeters
        gt2d: The 2D pose in crop coordinates
        k: The intrinsics of the crop
        cfg: The search configuration

    Returns:
        The :class:`RefinedPose`

    Raises:
        NoValidDepthError: if every candidate offset leaves a joint at
            non-positive depth
        DegenerateProjectionError: if the loss does not depend on the offset
        FrameMismatchError: if the coarse pose is not root-relative
        SchemaMismatchError: if the poses use different schemas
    """

    terms = _terms(coarse, gt2d, k, cfg.residual_frame)
    minimizer = _unconstrained_minimizer(terms)

    deltas = cfg.candidates
    valid = np.all(terms.depth[None, :] + deltas[:, None] > 0, axis=1)
    if not np.any(valid):
        raise NoValidDepthError(
            "No offset up to %g mm puts all joints in front of the camera"
            % cfg.z_max_mm
        )

    if cfg.mode == SearchMode.SCAN:
        losses = np.where(valid, terms.losses(deltas), np.inf)
        best = np.min(losses)
        index = int(np.argmax(losses <= best + TIE_TOLERANCE))
        delta_z = float(deltas[index])
    else:
        lowest = deltas[np.argmax(valid)]
        delta_z = float(np.clip(minimizer, lowest, cfg.z_max_mm))

    pose_abs = _lift(terms, delta_z, coarse.schema)
    return RefinedPose(
        pose_abs=pose_abs,
        pose_rel=root_align(pose_abs),
        delta_z=delta_z,
        residual=float(terms.losses(delta_z)),
    )


def reprojection_error(pose_abs: Pose3D, gt2d: Pose2D,
                       k: CameraIntrinsics) -> float:
    """Largest pixel distance between the projected pose and the 2D pose

    Raises:
        NonPositiveDepthError: if a joint has non-positive depth
    """
    pixels = project(pose_abs.joints, k)
    return float(np.max(np.linalg.norm(pixels - gt2d.joints, axis=-1)))
