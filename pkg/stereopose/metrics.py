"""
Evaluation metrics for 2D and 3D poses.

Single-pose metrics take :class:`Pose2D`/:class:`Pose3D` values. Dataset-level
reports average the per-sample metric over all samples and keep the per-joint
averages alongside.
"""
from dataclasses import dataclass
from typing import Iterable, List, Optional, Tuple

import numpy as np

from stereopose.skeleton import (
    JointSchema,
    Pose2D,
    Pose3D,
    require_same_schema,
    root_align_array,
)

#: Default ratio between the PCKh threshold and the head segment
PCKH_ALPHA = 0.5

#: Default 3D PCK threshold in millimeters
PCK3D_THRESHOLD_MM = 150.0

#: Default number of thresholds of the 3D AUC
AUC_STEPS = 31


class ZeroHeadSegmentError(ValueError):
    """Raised when the head segment of a ground-truth pose has zero length"""


def joint_position_errors(pred: Pose3D, gt: Pose3D) -> np.ndarray:
    """Euclidean distance of each joint after root alignment of both poses

    Raises:
        SchemaMismatchError: if the poses use different schemas
    """
    require_same_schema(pred, gt)
    root = gt.schema.root_index
    return np.linalg.norm(
        root_align_array(pred.joints, root) - root_align_array(gt.joints, root),
        axis=-1,
    )


def mpjpe_protocol1(pred: Pose3D, gt: Pose3D) -> float:
    """Mean per-joint position error after root alignment, in millimeters.

    No rotation or scale is fitted.

    Raises:
        SchemaMismatchError: if the poses use different schemas
    """
    return float(np.mean(joint_position_errors(pred, gt)))


def head_segment_length(gt: Pose2D, schema: Optional[JointSchema] = None):
    schema = schema or gt.schema
    return float(np.linalg.norm(gt.joints[schema.head_top_index]
                                - gt.joints[schema.neck_index]))


def pckh_hits(pred: Pose2D, gt: Pose2D, schema: Optional[JointSchema] = None,
              alpha=PCKH_ALPHA) -> np.ndarray:
    """Flags telling for each joint whether it lies within ``alpha`` times the
    head segment of the ground truth

    Raises:
        SchemaMismatchError: if the poses use different schemas
        ZeroHeadSegmentError: if head-top and neck of the ground truth
            coincide
    """
    require_same_schema(pred, gt)
    head = head_segment_length(gt, schema)
    if head == 0:
        raise ZeroHeadSegmentError("Head segment of the ground truth is zero")
    distances = np.linalg.norm(pred.joints - gt.joints, axis=-1)
    return distances <= alpha * head


def pckh(pred: Pose2D, gt: Pose2D, schema: Optional[JointSchema] = None,
         alpha=PCKH_ALPHA) -> float:
    """Fraction of joints within ``alpha`` times the head segment (head-top
    to neck) of the ground truth"""
    return float(np.mean(pckh_hits(pred, gt, schema, alpha)))


def auc_thresholds(threshold_mm=PCK3D_THRESHOLD_MM, n_steps=AUC_STEPS):
    """The thresholds ``threshold/n, 2 threshold/n, ..., threshold``"""
    return np.linspace(threshold_mm / n_steps, threshold_mm, n_steps)


def pck3d_auc_from_errors(errors, threshold_mm=PCK3D_THRESHOLD_MM,
                          n_auc_steps=AUC_STEPS):
    """PCK and AUC of an array of per-joint errors in millimeters.

    Thresholds are inclusive.
    """
    errors = np.asarray(errors, dtype=float)
    pck = float(np.mean(errors <= threshold_mm))
    thresholds = auc_thresholds(threshold_mm, n_auc_steps)
    auc = float(np.mean([np.mean(errors <= thr) for thr in thresholds]))
    return {"pck": pck, "auc": auc}


def pck3d_auc(pred: Pose3D, gt: Pose3D, threshold_mm=PCK3D_THRESHOLD_MM,
              n_auc_steps=AUC_STEPS):
    """Percentage of correct 3D joints and the area under the PCK curve.

    Both poses are root-aligned. The AUC is the mean PCK over
    ``n_auc_steps`` thresholds uniformly spaced in ``(0, threshold_mm]``.

    Returns:
        Dictionary with the keys ``pck`` and ``auc``

    Raises:
        SchemaMismatchError: if the poses use different schemas
    """
    return pck3d_auc_from_errors(joint_position_errors(pred, gt),
                                 threshold_mm, n_auc_steps)


@dataclass(frozen=True, eq=False)
class MetricReport:
    """A dataset-level metric.

    Attributes:
        metric: The kind of metric (e.g. ``"mpjpe"``)
        name: A label distinguishing reports of the same kind
        value: The mean of the per-sample metric
        per_joint: The per-joint means
        count: The number of samples
        joint_names: The names of the joints of ``per_joint``
    """

    metric: str
    name: str
    value: float
    per_joint: np.ndarray
    count: int
    joint_names: Tuple[str, ...] = ()

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("A report needs at least one sample")
        if len(self.per_joint) != len(self.joint_names):
            raise ValueError("Got %d per-joint values for %d joints"
                             % (len(self.per_joint), len(self.joint_names)))

    def rows(self) -> List[Tuple[str, str, float, int]]:
        """CSV rows ``(metric, name, value, count)``: the overall value
        followed by one row per joint"""
        rows = [(self.metric, self.name, float(self.value), self.count)]
        for joint, value in zip(self.joint_names, self.per_joint):
            rows.append((self.metric, "%s/%s" % (self.name, joint),
                         float(value), self.count))
        return rows


def _report(metric, name, per_sample, per_joint, schema):
    if not per_sample:
        raise ValueError("Cannot report %s on an empty dataset" % metric)
    return MetricReport(
        metric=metric,
        name=name,
        value=float(np.mean(per_sample)),
        per_joint=np.mean(per_joint, axis=0),
        count=len(per_sample),
        joint_names=schema.joint_names,
    )


def mpjpe_report(samples: Iterable[Tuple[Pose3D, Pose3D]],
                 name="all") -> MetricReport:
    """Mean of the per-sample MPJPE over ``(pred, gt)`` pairs"""
    per_sample, per_joint, schema = [], [], None
    for pred, gt in samples:
        errors = joint_position_errors(pred, gt)
        per_sample.append(np.mean(errors))
        per_joint.append(errors)
        schema = gt.schema
    return _report("mpjpe", name, per_sample, per_joint, schema)


def pckh_report(samples: Iterable[Tuple[Pose2D, Pose2D]], alpha=PCKH_ALPHA,
                name="all") -> MetricReport:
    """Mean of the per-sample PCKh over ``(pred, gt)`` pairs"""
    per_sample, per_joint, schema = [], [], None
    for pred, gt in samples:
        hits = pckh_hits(pred, gt, alpha=alpha)
        per_sample.append(np.mean(hits))
        per_joint.append(hits)
        schema = gt.schema
    return _report("pckh", name, per_sample, per_joint, schema)


def pck3d_reports(samples: Iterable[Tuple[Pose3D, Pose3D]],
                  threshold_mm=PCK3D_THRESHOLD_MM, n_auc_steps=AUC_STEPS,
                  name="all") -> Tuple[MetricReport, MetricReport]:
    """Means of the per-sample 3D PCK and AUC over ``(pred, gt)`` pairs"""
    thresholds = auc_thresholds(threshold_mm, n_auc_steps)
    pck, auc, pck_joints, auc_joints, schema = [], [], [], [], None
    for pred, gt in samples:
        errors = joint_position_errors(pred, gt)
        hits = errors <= threshold_mm
        curve = np.mean(errors[None, :] <= thresholds[:, None], axis=0)
        pck.append(np.mean(hits))
        auc.append(np.mean(curve))
        pck_joints.append(hits)
        auc_joints.append(curve)
        schema = gt.schema
    return (_report("pck3d", name, pck, pck_joints, schema),
            _report("auc3d", name, auc, auc_joints, schema))
