"""
CSV reports and static plots.

Every CSV written by this module has the columns ``metric,name,value,count``.
"""
import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from stereopose.experiments import LifterEvaluation  # noqa: E402
from stereopose.metrics import MetricReport  # noqa: E402
from stereopose.neuralnet import TrainingHistory  # noqa: E402

CSV_HEADER = ("metric", "name", "value", "count")

Row = Tuple[str, str, float, int]


@dataclass(frozen=True)
class ReportConfig:
    """Configuration of the ``report`` command.

    Attributes:
        dx_values: Shifts of the virtual camera compared by the ablation
        train_pairs: Size of the synthetic corpus of each experiment
        histogram_bins: Number of bins of the per-joint error histograms
        histogram_max_mm: Upper edge of the last regular histogram bin; larger
            errors fall into an overflow bin
        keypoint_noise_px: Noise added to the 2D input in evaluations
    """

    dx_values: Tuple[float, ...] = (250.0, 500.0, 750.0)
    train_pairs: int = 20000
    histogram_bins: int = 20
    histogram_max_mm: float = 200.0
    keypoint_noise_px: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "dx_values",
                           tuple(float(dx) for dx in self.dx_values))
        if self.histogram_bins < 1 or not self.histogram_max_mm > 0:
            raise ValueError("Invalid histogram layout")


def write_rows(sink, rows: Iterable[Row]):
    """Write rows under the common header to a path or text stream"""
    if isinstance(sink, (str, Path)):
        with open(sink, "w", encoding="utf-8", newline="") as stream:
            return write_rows(stream, rows)
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    count = 0
    for metric, name, value, number in rows:
        writer.writerow((metric, name, repr(float(value)), int(number)))
        count += 1
    return count


def rows_to_text(rows: Iterable[Row]) -> str:
    stream = io.StringIO()
    write_rows(stream, rows)
    return stream.getvalue()


def metric_rows(reports: Iterable[MetricReport]):
    for report in reports:
        yield from report.rows()


def evaluation_rows(evaluations: Iterable[LifterEvaluation]):
    """Overall values of evaluations, one row per report, plus the number of
    failed searches"""
    for evaluation in evaluations:
        for report in evaluation.reports:
            yield report.rows()[0]
        if evaluation.refined is not None or evaluation.failed:
            yield ("search_failures", evaluation.name,
                   float(evaluation.failed), evaluation.coarse.count)


def loss_curve_rows(label, history: TrainingHistory):
    """One row per epoch with the mean training loss"""
    for epoch, loss in enumerate(history.losses):
        yield ("loss", "%s/epoch%d" % (label, epoch), loss, 1)


def histogram_edges(bins, max_mm):
    """Bin edges ``0, ..., max_mm`` followed by an overflow edge"""
    return np.append(np.linspace(0.0, max_mm, bins + 1), np.inf)


def histogram_rows(errors, joint_names: Sequence[str], bins=20,
                   max_mm=200.0, label="error"):
    """Per-joint error histograms.

    Args:
        errors: Array of shape ``(samples, N)`` with per-joint errors in mm
        joint_names: The names of the joints
        bins: Number of regular bins
        max_mm: Upper edge of the last regular bin
        label: Prefix of the row names

    Yields:
        Rows with the share of samples in each bin as value and the number of
        samples in the bin as count
    """
    errors = np.asarray(errors, dtype=float)
    edges = histogram_edges(bins, max_mm)
    for joint, name in enumerate(joint_names):
        counts, _ = np.histogram(errors[:, joint], bins=edges)
        for low, high, number in zip(edges[:-1], edges[1:], counts):
            yield ("histogram", "%s/%s/[%g,%g)" % (label, name, low, high),
                   number / errors.shape[0], int(number))


def plot_loss_curves(histories: Dict[str, TrainingHistory], path):
    """Plot the training loss of several models over the epochs as SVG"""
    fig = plt.figure()
    for label, history in histories.items():
        plt.plot(np.arange(len(history)), history.losses, label=label)
    plt.xlabel("Epoch")
    plt.ylabel("Training loss")
    plt.yscale("log")
    plt.legend()
    plt.tight_layout()
    plt.savefig(path, format="svg")
    plt.close(fig)


def plot_error_histogram(errors, path, bins=20, max_mm=200.0):
    """Plot the distribution of all joint errors as SVG"""
    fig = plt.figure()
    plt.hist(np.clip(np.ravel(errors), 0.0, max_mm), bins=bins,
             range=(0.0, max_mm))
    plt.xlabel("Joint error (mm)")
    plt.ylabel("Joints")
    plt.tight_layout()
    plt.savefig(path, format="svg")
    plt.close(fig)


def plot_dx_ablation(dx_values, mpjpe_values, path):
    """Plot MPJPE over the shift of the virtual camera as SVG"""
    fig = plt.figure()
    plt.plot(dx_values, mpjpe_values, marker="o")
    plt.xlabel("Shift of the virtual camera (mm)")
    plt.ylabel("MPJPE (mm)")
    plt.tight_layout()
    plt.savefig(path, format="svg")
    plt.close(fig)
