"""
End-to-end labeling of keypoint datasets and validation of labeled files.

Labeling reads records in chunks, predicts the coarse 3D poses of a chunk in
one batched forward pass and refines every record by the geometric search.
Records are written in input order. A record for which the search fails is
written unchanged apart from a ``failed`` flag and an ``error`` message in its
``meta`` data; the other records are not affected.
"""
import itertools
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, List, Optional

import numpy as np

from stereopose.dataset import (
    DEFAULT_TEST_FRACTION,
    DatasetRecord,
    filter_split,
    iter_records,
    read_records,
    write_records,
)
from stereopose.geometry import (
    CameraIntrinsics,
    NonPositiveDepthError,
    adjust_intrinsics_for_crop,
    project,
)
from stereopose.geosearch import (
    GeometricSearchError,
    SearchConfig,
    refine,
)
from stereopose.lifting import ReconModel, ViewSynthModel, predict_coarse_batch
from stereopose.skeleton import (
    DEFAULT_CROP_SIZE,
    Frame,
    InvalidPoseError,
    Pose3D,
    SchemaMismatchError,
    root_align_array,
)

logger = logging.getLogger(__name__)

#: Focal length of the virtual camera assumed for records without
#: intrinsics, in crop pixels
VIRTUAL_FOCAL_PX = 1150.0

#: Tolerance of the crop bounds check, in pixels
BOUNDS_TOLERANCE_PX = 1.0

#: Tolerance of the reprojection check, in pixels
REPROJECTION_TOLERANCE_PX = 1e-3

#: Tolerance of the consistency between absolute and relative poses, in mm
ROOT_TOLERANCE_MM = 1e-6

#: Tolerance of the stereo consistency check, in pixels
STEREO_TOLERANCE_PX = 1e-6


@dataclass(frozen=True)
class LabelConfig:
    """Configuration of the labeling pipeline.

    Attributes:
        chunk_size: Number of records predicted in one batch
        virtual_focal_px: Focal length of the camera assumed for records
            without intrinsics, in crop pixels
        crop_size: The side of the crop; the virtual principal point is its
            center
    """

    chunk_size: int = 256
    virtual_focal_px: float = VIRTUAL_FOCAL_PX
    crop_size: float = DEFAULT_CROP_SIZE

    def __post_init__(self):
        if self.chunk_size < 1:
            raise ValueError("Chunk size must be at least 1")
        if not self.virtual_focal_px > 0:
            raise ValueError("Virtual focal length must be positive")

    def virtual_intrinsics(self) -> CameraIntrinsics:
        center = self.crop_size / 2
        return CameraIntrinsics(self.virtual_focal_px, self.virtual_focal_px,
                                center, center)


@dataclass(frozen=True)
class LabelSummary:
    """Outcome of labeling a dataset"""

    total: int
    labeled: int
    failed: int
    wall_time: float

    def to_dict(self):
        return {
            "total": self.total,
            "labeled": self.labeled,
            "failed": self.failed,
            "wall_time": self.wall_time,
        }


@dataclass(frozen=True)
class Violation:
    """A record that breaks an invariant of the dataset format.

    Attributes:
        record_id: The id of the record
        line_number: The line of the record in the file (0 if unknown)
        kind: One of ``bounds``, ``reprojection``, ``root_consistency``,
            ``stereo`` and ``intrinsics``
        message: Details of the violation
    """

    record_id: str
    line_number: int
    kind: str
    message: str

    def to_dict(self):
        return {
            "id": self.record_id,
            "line": self.line_number,
            "kind": self.kind,
            "message": self.message,
        }


def crop_intrinsics(record: DatasetRecord,
                    label_config=LabelConfig()) -> CameraIntrinsics:
    """The intrinsics mapping camera coordinates to the crop of a record.

    Records without intrinsics use the virtual intrinsics stored in their
    meta data or, if there are none, the virtual camera of the label
    configuration.
    """
    if record.intrinsics is not None:
        return adjust_intrinsics_for_crop(record.intrinsics, record.crop)
    stored = record.meta.get("virtual_intrinsics")
    if stored is not None:
        return CameraIntrinsics.from_dict(stored)
    return label_config.virtual_intrinsics()


def _clear_failure(meta):
    meta = dict(meta)
    meta.pop("failed", None)
    meta.pop("error", None)
    return meta


def refine_record(record: DatasetRecord, coarse: Pose3D,
                  cfg=SearchConfig(),
                  label_config=LabelConfig()) -> DatasetRecord:
    """Refine a coarse pose against the 2D pose of a record.

    Returns:
        A copy of the record with ``joints3d_rel``, ``joints3d_abs`` and
        ``delta_z`` filled in, or, if the search fails, a copy flagged as
        failed in its meta data
    """

    k = crop_intrinsics(record, label_config)
    meta = _clear_failure(record.meta)
    if record.intrinsics is None:
        meta["virtual_intrinsics"] = k.to_dict()
    try:
        refined = refine(coarse, record.pose2d, k, cfg)
    except GeometricSearchError as error:
        logger.warning("Labeling record %s failed: %s", record.id, error)
        meta["failed"] = True
        meta["error"] = str(error)
        return record.replace(meta=meta)
    return record.replace(
        joints3d_rel=refined.pose_rel.joints,
        joints3d_abs=refined.pose_abs.joints,
        delta_z=refined.delta_z,
        meta=meta,
    )


def label_record(record: DatasetRecord, view_model: ViewSynthModel,
                 recon_model: ReconModel, cfg=SearchConfig(),
                 label_config=LabelConfig()) -> DatasetRecord:
    """Predict the coarse 3D pose of a record and refine it"""
    return next(label_records([record], view_model, recon_model, cfg,
                              label_config))


def _chunks(iterable, size):
    iterator = iter(iterable)
    while True:
        chunk = list(itertools.islice(iterator, size))
        if not chunk:
            return
        yield chunk


def label_records(records: Iterable[DatasetRecord],
                  view_model: Optional[ViewSynthModel],
                  recon_model: ReconModel,
                  cfg=SearchConfig(),
                  label_config=LabelConfig()) -> Iterator[DatasetRecord]:
    """Lazily label a stream of records, preserving their order"""

    schema = recon_model.schema
    for chunk in _chunks(records, label_config.chunk_size):
        for record in chunk:
            if record.schema != schema:
                raise SchemaMismatchError(
                    "Record %s uses schema %r, model expects %r"
                    % (record.id, record.schema_name, schema.name)
                )
        left = np.stack([record.joints2d for record in chunk])
        coarse = predict_coarse_batch(view_model, recon_model, left)
        for record, joints in zip(chunk, coarse):
            yield refine_record(
                record, Pose3D(joints, schema, Frame.ROOT_RELATIVE), cfg,
                label_config
            )


def _check_distinct(in_path, out_path):
    if not isinstance(in_path, (str, Path)):
        return
    if not isinstance(out_path, (str, Path)):
        return
    if Path(in_path).resolve() == Path(out_path).resolve():
        raise ValueError("Input and output are the same file: %s" % in_path)


class _Counter:
    """Counts labeled and failed records passing through"""

    def __init__(self):
        self.labeled = 0
        self.failed = 0

    def count(self, records):
        for record in records:
            if record.meta.get("failed"):
                self.failed += 1
            else:
                self.labeled += 1
            yield record


def label_dataset(in_path, out_path, view_model: Optional[ViewSynthModel],
                  recon_model: ReconModel, cfg=SearchConfig(),
                  label_config=LabelConfig(), progress=False, split="all",
                  test_fraction=DEFAULT_TEST_FRACTION) -> LabelSummary:
    """Label every record of a dataset file.

    Args:
        in_path: The input dataset (path or text stream)
        out_path: The output dataset (path or text stream)
        view_model: The view synthesis model (unused by monocular
            reconstruction models)
        recon_model: The reconstruction model
        cfg: The search configuration
        label_config: The labeling configuration
        progress: Flag indicating whether to show a progress bar
        split: Restrict labeling to the ``"train"`` or ``"test"`` split, or
            label ``"all"`` records
        test_fraction: The share of records in the test split

    Returns:
        A :class:`LabelSummary`

    Raises:
        ParseError: naming the line of the first malformed record
        OSError: if a file cannot be opened
        ValueError: if input and output name the same file
    """

    _check_distinct(in_path, out_path)
    start = time.perf_counter()
    counter = _Counter()
    records = filter_split(read_records(in_path), split, test_fraction)
    labeled = label_records(records, view_model, recon_model, cfg,
                            label_config)
    write_records(out_path, counter.count(labeled), progress=progress)
    summary = LabelSummary(
        total=counter.labeled + counter.failed,
        labeled=counter.labeled,
        failed=counter.failed,
        wall_time=time.perf_counter() - start,
    )
    logger.info("Labeled %d of %d records in %.1f s", summary.labeled,
                summary.total, summary.wall_time)
    return summary


def refine_dataset(in_path, out_path, cfg=SearchConfig(),
                   label_config=LabelConfig(), progress=False, split="all",
                   test_fraction=DEFAULT_TEST_FRACTION) -> LabelSummary:
    """Run the geometric search on records that already carry a coarse
    root-relative pose in ``joints3d_rel``.

    Records without a coarse pose are flagged as failed.
    """
    _check_distinct(in_path, out_path)

    def refined(records):
        for record in records:
            if record.joints3d_rel is None:
                meta = _clear_failure(record.meta)
                meta["failed"] = True
                meta["error"] = "no coarse pose"
                logger.warning("Record %s has no coarse pose", record.id)
                yield record.replace(meta=meta)
                continue
            try:
                coarse = Pose3D(record.joints3d_rel, record.schema,
                                Frame.ROOT_RELATIVE)
            except InvalidPoseError:
                coarse = Pose3D(
                    root_align_array(record.joints3d_rel,
                                     record.schema.root_index),
                    record.schema, Frame.ROOT_RELATIVE,
                )
            yield refine_record(record, coarse, cfg, label_config)

    start = time.perf_counter()
    counter = _Counter()
    records = filter_split(read_records(in_path), split, test_fraction)
    write_records(out_path, counter.count(refined(records)),
                  progress=progress)
    return LabelSummary(
        total=counter.labeled + counter.failed,
        labeled=counter.labeled,
        failed=counter.failed,
        wall_time=time.perf_counter() - start,
    )


def _check_stereo(record, k, violations, line_number):
    right = record.meta.get("joints2d_right")
    dx = record.meta.get("dx")
    # Searched depths only approximate the depth the right view was drawn at
    if record.delta_z is not None:
        return
    if right is None or dx is None or record.joints3d_abs is None:
        return
    right = np.asarray(right, dtype=float)
    if right.shape != record.joints2d.shape:
        violations.append(Violation(record.id, line_number, "stereo",
                                    "right view has shape %r"
                                    % (right.shape,)))
        return
    v_error = np.max(np.abs(right[:, 1] - record.joints2d[:, 1]))
    expected = k.fx * dx / record.joints3d_abs[:, 2]
    u_error = np.max(np.abs(right[:, 0] - record.joints2d[:, 0] - expected))
    if v_error > STEREO_TOLERANCE_PX or u_error > STEREO_TOLERANCE_PX:
        violations.append(Violation(
            record.id, line_number, "stereo",
            "right view deviates by %.3g px (v) and %.3g px (disparity)"
            % (v_error, u_error),
        ))


def validate_record(record: DatasetRecord, line_number=0,
                    label_config=LabelConfig()) -> List[Violation]:
    """Check a record against the invariants of the dataset format"""

    violations = []
    low = -BOUNDS_TOLERANCE_PX
    high = label_config.crop_size + BOUNDS_TOLERANCE_PX
    if np.any((record.joints2d < low) | (record.joints2d > high)):
        violations.append(Violation(record.id, line_number, "bounds",
                                    "2D joints leave the crop"))

    if record.joints3d_abs is not None:
        if record.intrinsics is None and \
                "virtual_intrinsics" not in record.meta:
            violations.append(Violation(
                record.id, line_number, "intrinsics",
                "absolute pose without intrinsics cannot be checked",
            ))
        else:
            k = crop_intrinsics(record, label_config)
            try:
                error = np.max(np.linalg.norm(
                    project(record.joints3d_abs, k) - record.joints2d,
                    axis=-1,
                ))
            except NonPositiveDepthError as depth_error:
                violations.append(Violation(record.id, line_number,
                                            "reprojection", str(depth_error)))
            else:
                if error > REPROJECTION_TOLERANCE_PX:
                    violations.append(Violation(
                        record.id, line_number, "reprojection",
                        "absolute pose reprojects %.3g px off" % error,
                    ))
                _check_stereo(record, k, violations, line_number)

    if record.joints3d_rel is not None:
        root = record.schema.root_index
        reference = (
            root_align_array(record.joints3d_abs, root)
            if record.joints3d_abs is not None
            else root_align_array(record.joints3d_rel, root)
        )
        deviation = np.max(np.abs(reference - record.joints3d_rel))
        if deviation > ROOT_TOLERANCE_MM:
            violations.append(Violation(
                record.id, line_number, "root_consistency",
                "relative pose deviates by %.3g mm" % deviation,
            ))
    return violations


def validate_dataset(path, label_config=LabelConfig()) -> List[Violation]:
    """Check every record of a dataset file

    Returns:
        The list of violations, empty if the dataset is clean

    Raises:
        ParseError: naming the line of the first malformed record
    """
    violations = []
    for line_number, record in iter_records(path):
        violations.extend(validate_record(record, line_number, label_config))
    return violations