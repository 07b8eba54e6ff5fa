"""
Pinhole camera geometry.

All coordinates are double precision. Points in camera coordinates are given
in millimeters, with the x-axis pointing right, the y-axis pointing down and
the z-axis pointing away from the camera. Image coordinates are given in
pixels.

The functions in this module accept single points (shape ``(3,)`` or
``(2,)``) as well as arrays of points (shape ``(..., 3)`` or ``(..., 2)``) and
always return ``numpy`` arrays of the corresponding shape.
"""
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from stereopose.skeleton import Frame, Pose2D, require_frame

#: Default horizontal shift of the virtual right camera, in millimeters
DEFAULT_SHIFT_MM = 500.0


class NonPositiveDepthError(ValueError):
    """Raised when a point lies behind or on the camera plane"""


class InvalidIntrinsicsError(ValueError):
    """Raised when camera intrinsics are not finite or have non-positive
    focal lengths"""


class InvalidCropError(ValueError):
    """Raised when a crop transform has a non-positive scale"""


class Point3(NamedTuple):
    """A point in camera coordinates, in millimeters"""

    x: float
    y: float
    z: float


class Pixel2(NamedTuple):
    """A point in image coordinates, in pixels"""

    u: float
    v: float


@dataclass(frozen=True)
class CameraIntrinsics:
    """Intrinsic parameters of a pinhole camera without skew.

    Attributes:
        fx: The horizontal focal length in pixels
        fy: The vertical focal length in pixels
        cx: The horizontal coordinate of the principal point in pixels
        cy: The vertical coordinate of the principal point in pixels
    """

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        values = (self.fx, self.fy, self.cx, self.cy)
        if not all(np.isfinite(value) for value in values):
            raise InvalidIntrinsicsError(
                "Camera intrinsics must be finite, got %r" % (values,)
            )
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidIntrinsicsError(
                "Focal lengths must be positive, got fx=%r, fy=%r"
                % (self.fx, self.fy)
            )

    @property
    def matrix(self):
        """The 3x3 intrinsic matrix"""
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def to_dict(self):
        """Represent the intrinsics as a dictionary of floats"""
        return {
            "fx": float(self.fx),
            "fy": float(self.fy),
            "cx": float(self.cx),
            "cy": float(self.cy),
        }

    @classmethod
    def from_dict(cls, data):
        """Create intrinsics from a dictionary as produced by
        :meth:`to_dict`"""
        return cls(
            fx=float(data["fx"]),
            fy=float(data["fy"]),
            cx=float(data["cx"]),
            cy=float(data["cy"]),
        )


@dataclass(frozen=True)
class CropTransform:
    """An affine transform from a source image into a square crop.

    A pixel ``(u, v)`` of the source image is mapped to
    ``((u - x0) * scale, (v - y0) * scale)`` in the crop.

    Attributes:
        x0: Horizontal coordinate of the crop origin in the source image
        y0: Vertical coordinate of the crop origin in the source image
        scale: The resize factor from source pixels to crop pixels
    """

    x0: float = 0.0
    y0: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.scale) or self.scale <= 0:
            raise InvalidCropError(
                "Crop scale must be positive, got %r" % self.scale
            )
        if not (np.isfinite(self.x0) and np.isfinite(self.y0)):
            raise InvalidCropError("Crop origin must be finite")

    def apply(self, pixels):
        """Map source pixels into the crop"""
        pixels = np.asarray(pixels, dtype=float)
        return (pixels - (self.x0, self.y0)) * self.scale

    def invert(self, pixels):
        """Map crop pixels back into the source image"""
        pixels = np.asarray(pixels, dtype=float)
        return pixels / self.scale + (self.x0, self.y0)

    def to_dict(self):
        return {
            "x0": float(self.x0),
            "y0": float(self.y0),
            "s": float(self.scale),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            x0=float(data["x0"]), y0=float(data["y0"]), scale=float(data["s"])
        )


IDENTITY_CROP = CropTransform()


def _check_depth(depth):
    depth = np.asarray(depth, dtype=float)
    if np.any(~(depth > 0)):
        raise NonPositiveDepthError(
            "Depth must be positive, minimum was %r" % np.min(depth)
        )


def project(points, intrinsics: CameraIntrinsics):
    """Project points in camera coordinates onto the image plane.

    Args:
        points: A point or an array of points of shape ``(..., 3)``, in
            millimeters
        intrinsics: The camera intrinsics

    Returns:
        An array of shape ``(..., 2)`` with the pixel coordinates, or a
        :class:`Pixel2` for a single point

    Raises:
        NonPositiveDepthError: if any point has a depth of zero or less
    """

    points = np.asarray(points, dtype=float)
    depth = points[..., 2]
    _check_depth(depth)
    u = intrinsics.fx * points[..., 0] / depth + intrinsics.cx
    v = intrinsics.fy * points[..., 1] / depth + intrinsics.cy
    if points.ndim == 1:
        return Pixel2(float(u), float(v))
    return np.stack((u, v), axis=-1)


def back_project(pixels, depth, intrinsics: CameraIntrinsics):
    """Lift pixels to camera coordinates at the given depth.

    This is the exact inverse of :func:`project` at the same depth.

    Args:
        pixels: A pixel or an array of pixels of shape ``(..., 2)``
        depth: The depth (scalar or broadcastable to ``(...)``), in
            millimeters
        intrinsics: The camera intrinsics

    Returns:
        An array of shape ``(..., 3)`` with the camera coordinates, or a
        :class:`Point3` for a single pixel

    Raises:
        NonPositiveDepthError: if any depth is zero or less
    """

    pixels = np.asarray(pixels, dtype=float)
    depth = np.broadcast_to(np.asarray(depth, dtype=float), pixels.shape[:-1])
    _check_depth(depth)
    x = (pixels[..., 0] - intrinsics.cx) * depth / intrinsics.fx
    y = (pixels[..., 1] - intrinsics.cy) * depth / intrinsics.fy
    if pixels.ndim == 1:
        return Point3(float(x), float(y), float(depth))
    return np.stack((x, y, depth), axis=-1)


def disparity(depth, intrinsics: CameraIntrinsics, dx=DEFAULT_SHIFT_MM):
    """Horizontal pixel offset between the left view and a view shifted by
    ``dx`` millimeters along the x-axis, for points at the given depth."""

    depth = np.asarray(depth, dtype=float)
    _check_depth(depth)
    return intrinsics.fx * dx / depth


def synthesize_right_view(pose3_abs, intrinsics: CameraIntrinsics,
                          dx=DEFAULT_SHIFT_MM):
    """Determine the 2D pose seen by a camera shifted along the x-axis.

    Each joint is moved by ``dx`` along the x-axis and re-projected with the
    same intrinsics. The vertical coordinate is exactly that of the left view,
    and the horizontal coordinate is offset by the disparity ``fx*dx/z``.

    Args:
        pose3_abs: A :class:`Pose3D <stereopose.skeleton.Pose3D>` in absolute
            camera coordinates
        intrinsics: The camera intrinsics
        dx: The shift of the virtual camera in millimeters (default: 500)

    Returns:
        The right-view :class:`Pose2D <stereopose.skeleton.Pose2D>`

    Raises:
        NonPositiveDepthError: if any joint has a depth of zero or less
        FrameMismatchError: if the pose is not in absolute coordinates
    """

    require_frame(pose3_abs, Frame.ABSOLUTE)
    right = shift_project(pose3_abs.joints, intrinsics, dx)
    return Pose2D(right, pose3_abs.schema)


def shift_project(points, intrinsics: CameraIntrinsics, dx=DEFAULT_SHIFT_MM):
    """Array version of :func:`synthesize_right_view`.

    Args:
        points: Array of shape ``(..., 3)`` in absolute camera coordinates
        intrinsics: The camera intrinsics
        dx: The shift of the virtual camera in millimeters

    Returns:
        Array of shape ``(..., 2)`` with the right-view pixels
    """

    points = np.asarray(points, dtype=float)
    right = np.array(project(points, intrinsics))
    right[..., 0] += disparity(points[..., 2], intrinsics, dx)
    return right


def adjust_intrinsics_for_crop(intrinsics: CameraIntrinsics,
                               crop: CropTransform) -> CameraIntrinsics:
    """Determine the intrinsics of a camera that directly produces crop
    coordinates.

    Projecting a point with the original intrinsics and applying the crop
    transform gives the same result as projecting it with the adjusted
    intrinsics.

    Raises:
        InvalidCropError: if the crop scale is not positive
    """

    if not crop.scale > 0:
        raise InvalidCropError(
            "Crop scale must be positive, got %r" % crop.scale
        )
    return CameraIntrinsics(
        fx=intrinsics.fx * crop.scale,
        fy=intrinsics.fy * crop.scale,
        cx=(intrinsics.cx - crop.x0) * crop.scale,
        cy=(intrinsics.cy - crop.y0) * crop.scale,
    )
