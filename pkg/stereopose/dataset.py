"""
Keypoint dataset records and their JSON-lines file format.

Each line of a dataset file is one self-contained JSON object describing a
:class:`DatasetRecord`. Floats are written with their shortest round-trip
representation, so reading and re-writing a file is byte-stable. Keys not
known to this module are preserved on rewrite.

The module also provides the square-crop bookkeeping used to bring in-the-wild
keypoints into ``256x256`` crop coordinates and a deterministic train/test
split by record id.
"""
import contextlib
import hashlib
import io
import json
import logging
import os
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, Optional, Tuple, Union

import numpy as np
from tqdm import tqdm

from stereopose.geometry import CameraIntrinsics, CropTransform
from stereopose.skeleton import (
    DEFAULT_CROP_SIZE,
    H36M_16,
    JointSchema,
    Pose2D,
    get_schema,
    register_schema,
)

logger = logging.getLogger(__name__)

#: Margin factor between the person bounding box and the square crop
CROP_MARGIN = 1.2

#: Default fraction of records assigned to the test split
DEFAULT_TEST_FRACTION = 0.2

_BUILTIN_SCHEMAS = {H36M_16.name}

_KNOWN_KEYS = (
    "id",
    "source",
    "schema",
    "schema_table",
    "crop",
    "intrinsics",
    "joints2d",
    "joints3d_rel",
    "joints3d_abs",
    "delta_z",
    "meta",
)

PathOrStream = Union[str, Path, io.TextIOBase]


class ParseError(RuntimeError):
    """Raised when a dataset file contains a malformed line

    Attributes:
        line_number: The 1-based number of the offending line
    """

    def __init__(self, line_number, message):
        super().__init__("line %d: %s" % (line_number, message))
        self.line_number = line_number


class DatasetWriteError(RuntimeError):
    """Raised when writing a record fails

    Attributes:
        record_index: The 0-based index of the record that could not be
            written
    """

    def __init__(self, record_index, message):
        super().__init__("record %d: %s" % (record_index, message))
        self.record_index = record_index


class EmptyBBoxError(ValueError):
    """Raised when a bounding box has no positive area"""


def _optional_array(value, width, num_joints):
    if value is None:
        return None
    array = np.array(value, dtype=float)
    if array.shape != (num_joints, width):
        raise ValueError(
            "Expected an array of shape %r, got %r"
            % ((num_joints, width), array.shape)
        )
    if not np.all(np.isfinite(array)):
        raise ValueError("Joint coordinates must be finite")
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class DatasetRecord:
    """One sample of a keypoint dataset.

    Attributes:
        id: Unique identifier of the record
        source: Free-form tag naming the origin of the record
        schema_name: Name of the joint schema
        crop: The transform from the source image into crop coordinates
        intrinsics: The camera intrinsics in the source image frame, or
            ``None`` if unknown
        joints2d: Array of shape ``(N, 2)`` in crop coordinates
        joints3d_rel: Optional root-relative 3D pose in millimeters
        joints3d_abs: Optional absolute 3D pose in millimeters
        delta_z: Optional depth offset found by the geometric search
        meta: Free key-value data
        extra: Unknown top-level keys read from a file, preserved on rewrite
    """

    id: str
    joints2d: np.ndarray
    source: str = "unknown"
    schema_name: str = H36M_16.name
    crop: CropTransform = field(default_factory=CropTransform)
    intrinsics: Optional[CameraIntrinsics] = None
    joints3d_rel: Optional[np.ndarray] = None
    joints3d_abs: Optional[np.ndarray] = None
    delta_z: Optional[float] = None
    meta: Dict[str, Any] = field(default_factory=dict)
    extra: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        num_joints = self.schema.num_joints
        object.__setattr__(
            self, "joints2d", _optional_array(self.joints2d, 2, num_joints)
        )
        object.__setattr__(
            self,
            "joints3d_rel",
            _optional_array(self.joints3d_rel, 3, num_joints),
        )
        object.__setattr__(
            self,
            "joints3d_abs",
            _optional_array(self.joints3d_abs, 3, num_joints),
        )
        if self.delta_z is not None:
            delta_z = float(self.delta_z)
            if not np.isfinite(delta_z):
                raise ValueError("delta_z must be finite")
            object.__setattr__(self, "delta_z", delta_z)

    @property
    def schema(self) -> JointSchema:
        """The joint schema of this record"""
        return get_schema(self.schema_name)

    @property
    def pose2d(self) -> Pose2D:
        """The 2D pose in crop coordinates"""
        return Pose2D(self.joints2d, self.schema)

    def replace(self, **changes):
        """Return a copy of this record with the given fields replaced"""
        return replace(self, **changes)

    def to_dict(self):
        """Represent the record as a JSON-compatible dictionary"""
        data = {
            "id": self.id,
            "source": self.source,
            "schema": self.schema_name,
        }
        if self.schema_name not in _BUILTIN_SCHEMAS:
            data["schema_table"] = self.schema.to_dict()
        data["crop"] = self.crop.to_dict()
        data["intrinsics"] = (
            self.intrinsics.to_dict() if self.intrinsics is not None else None
        )
        data["joints2d"] = self.joints2d.tolist()
        data["joints3d_rel"] = (
            self.joints3d_rel.tolist() if self.joints3d_rel is not None
            else None
        )
        data["joints3d_abs"] = (
            self.joints3d_abs.tolist() if self.joints3d_abs is not None
            else None
        )
        data["delta_z"] = self.delta_z
        data["meta"] = _jsonable(self.meta)
        for key, value in self.extra.items():
            data[key] = value
        return data

    def to_json(self):
        """Serialize the record as a single line of JSON (without newline)"""
        return json.dumps(self.to_dict(), separators=(",", ":"),
                          allow_nan=False)

    @classmethod
    def from_dict(cls, data):
        """Create a record from a dictionary as produced by :meth:`to_dict`

        Raises:
            KeyError, ValueError, TypeError: if the dictionary is malformed
        """
        if "schema_table" in data:
            register_schema(JointSchema.from_dict(data["schema_table"]))
        intrinsics = data.get("intrinsics")
        crop = data.get("crop")
        delta_z = data.get("delta_z")
        return cls(
            id=str(data["id"]),
            source=str(data.get("source", "unknown")),
            schema_name=str(data.get("schema", H36M_16.name)),
            crop=CropTransform.from_dict(crop) if crop else CropTransform(),
            intrinsics=(
                CameraIntrinsics.from_dict(intrinsics) if intrinsics else None
            ),
            joints2d=data["joints2d"],
            joints3d_rel=data.get("joints3d_rel"),
            joints3d_abs=data.get("joints3d_abs"),
            delta_z=float(delta_z) if delta_z is not None else None,
            meta=dict(data.get("meta") or {}),
            extra={
                key: value
                for key, value in data.items()
                if key not in _KNOWN_KEYS
            },
        )


def _jsonable(value):
    """Convert numpy values nested in dictionaries and lists to plain Python
    values"""
    if isinstance(value, dict):
        return {str(key): _jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(item) for item in value]
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    return value


def parse_record(line, line_number=0) -> DatasetRecord:
    """Parse a single line of a dataset file

    Raises:
        ParseError: if the line is not a valid record
    """
    try:
        data = json.loads(line)
        if not isinstance(data, dict):
            raise ValueError("Expected a JSON object")
        return DatasetRecord.from_dict(data)
    except (KeyError, ValueError, TypeError) as error:
        raise ParseError(line_number, "%s: %s"
                         % (type(error).__name__, error)) from error


def iter_records(source: PathOrStream) -> Iterator[Tuple[int, DatasetRecord]]:
    """Stream the records of a dataset file together with their line
    numbers.

    Blank lines are skipped.

    Args:
        source: A path or an open text stream

    Raises:
        ParseError: naming the line number of the first malformed line
    """
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as stream:
            yield from iter_records(stream)
        return
    for line_number, line in enumerate(source, start=1):
        line = line.strip()
        if not line:
            continue
        yield line_number, parse_record(line, line_number)


def read_records(source: PathOrStream) -> Iterator[DatasetRecord]:
    """Stream the records of a dataset file, skipping blank lines"""
    for _, record in iter_records(source):
        yield record


def write_records(sink: PathOrStream,
                  records: Iterable[DatasetRecord],
                  progress=False,
                  total=None) -> int:
    """Stream records into a dataset file.

    Args:
        sink: A path or an open text stream
        records: The records to write; consumed lazily
        progress: Flag indicating whether to show a progress bar
        total: The expected number of records for the progress bar

    Returns:
        The number of records written

    A file given by path is written to a temporary file next to it, which
    replaces the target only after all records were written. A failure
    while producing the records leaves an existing target untouched.

    Raises:
        DatasetWriteError: naming the index of the record that failed
    """
    if isinstance(sink, (str, Path)):
        path = Path(sink)
        try:
            stream = tempfile.NamedTemporaryFile(
                "w", encoding="utf-8", dir=path.parent, prefix=path.name + ".",
                suffix=".tmp", delete=False
            )
        except OSError as error:
            raise DatasetWriteError(0, str(error)) from error
        try:
            with stream:
                count = write_records(stream, records, progress, total)
            try:
                os.replace(stream.name, path)
            except OSError as error:
                raise DatasetWriteError(count, str(error)) from error
        except BaseException:
            with contextlib.suppress(OSError):
                os.unlink(stream.name)
            raise
        return count

    count = 0
    for record in tqdm(records, disable=not progress, total=total,
                       desc="Write", unit="rec"):
        try:
            sink.write(record.to_json())
            sink.write("\n")
        except (OSError, ValueError) as error:
            raise DatasetWriteError(count, str(error)) from error
        count += 1
    return count


@dataclass(frozen=True)
class BoundingBox:
    """An axis-aligned rectangle in pixel coordinates"""

    u_min: float
    v_min: float
    u_max: float
    v_max: float

    @property
    def width(self):
        return self.u_max - self.u_min

    @property
    def height(self):
        return self.v_max - self.v_min

    @property
    def center(self):
        return (0.5 * (self.u_min + self.u_max),
                0.5 * (self.v_min + self.v_max))

    @classmethod
    def around(cls, pixels):
        """The tightest box around the given pixels"""
        pixels = np.asarray(pixels, dtype=float)
        u_min, v_min = pixels.min(axis=0)
        u_max, v_max = pixels.max(axis=0)
        return cls(u_min, v_min, u_max, v_max)


def crop_pose_2d(pose: Pose2D,
                 bbox: BoundingBox,
                 crop_size=DEFAULT_CROP_SIZE,
                 margin=CROP_MARGIN) -> Tuple[Pose2D, CropTransform]:
    """Map a pose from the source image into a square crop centered on the
    person.

    The crop has a side of ``margin`` times the larger side of the bounding
    box, is centered on the bounding box center and is resized to
    ``crop_size`` pixels.

    Args:
        pose: The pose in source image coordinates
        bbox: The bounding box of the person
        crop_size: The side length of the resized crop
        margin: The ratio between crop side and bounding box side

    Returns:
        The pose in crop coordinates and the applied transform

    Raises:
        EmptyBBoxError: if the bounding box has no positive area
    """

    if not (bbox.width > 0 and bbox.height > 0):
        raise EmptyBBoxError("Bounding box %r has no positive area" % (bbox,))
    side = margin * max(bbox.width, bbox.height)
    center_u, center_v = bbox.center
    transform = CropTransform(
        x0=center_u - side / 2, y0=center_v - side / 2, scale=crop_size / side
    )
    return Pose2D(transform.apply(pose.joints), pose.schema), transform


def split_fraction(record_id) -> float:
    """Map a record id to a pseudo-random number in ``[0, 1)``"""
    digest = hashlib.blake2b(str(record_id).encode("utf-8"),
                             digest_size=8).digest()
    return int.from_bytes(digest, "big") / 2.0 ** 64


def split_of(record_id, test_fraction=DEFAULT_TEST_FRACTION) -> str:
    """Assign a record to the ``"train"`` or ``"test"`` split by its id"""
    return "test" if split_fraction(record_id) < test_fraction else "train"


def filter_split(records: Iterable[DatasetRecord],
                 split="all",
                 test_fraction=DEFAULT_TEST_FRACTION):
    """Lazily restrict records to the given split (``"train"``, ``"test"``
    or ``"all"``)"""
    if split not in ("train", "test", "all"):
        raise ValueError("Unknown split %r" % split)
    for record in records:
        if split == "all" or split_of(record.id, test_fraction) == split:
            yield record
