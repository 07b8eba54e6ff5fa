"""
Comparative experiments on synthetic corpora.

All experiments generate a corpus with the synthetic pair generator, hold out
a share of it by record-id hash, train the lifting networks on the rest and
evaluate on the held-out pairs:

* stereo versus monocular reconstruction under the same budget,
* reconstruction with and without the geometric search,
* the shift ``dx`` of the virtual right camera,
* ground-truth versus noisy 2D input keypoints.
"""
import logging
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence

import numpy as np

from stereopose.geometry import CameraIntrinsics
from stereopose.geosearch import GeometricSearchError, SearchConfig, refine
from stereopose.lifting import (
    LifterArchitecture,
    PairArrays,
    ReconInput,
    ReconModel,
    TrainingMode,
    ViewSynthModel,
    holdout_mask,
    predict_coarse_batch,
    right_view_pixels,
    stack_pairs,
    train_monocular,
    train_reconstruction,
    train_view_synthesis,
)
from stereopose.metrics import MetricReport, mpjpe_report, pckh_report
from stereopose.neuralnet import TrainConfig
from stereopose.skeleton import Frame, Pose2D, Pose3D
from stereopose.synthgen import SynthConfig, generate_pairs, record_id

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Corpus:
    """A synthetic corpus split into training and held-out pairs"""

    train: PairArrays
    test: PairArrays
    intrinsics: CameraIntrinsics


@dataclass(frozen=True)
class LifterEvaluation:
    """Held-out results of one trained configuration.

    Attributes:
        name: Label of the configuration
        coarse: MPJPE of the network output (without geometric search)
        refined: MPJPE after the geometric search, if it was run
        view_pckh: PCKh of the synthesized right views, for stereo models
        failed: Number of held-out samples on which the search failed
    """

    name: str
    coarse: MetricReport
    refined: Optional[MetricReport] = None
    view_pckh: Optional[MetricReport] = None
    failed: int = 0

    @property
    def reports(self) -> List[MetricReport]:
        return [report for report in (self.coarse, self.refined,
                                      self.view_pckh)
                if report is not None]


def make_corpus(synth_config: SynthConfig, count) -> Corpus:
    """Generate ``count`` pairs and hold out a share of them by record id"""
    pairs = stack_pairs(generate_pairs(synth_config, count))
    mask = holdout_mask([record_id(synth_config, index)
                         for index in range(count)])
    return Corpus(train=pairs.subset(~mask), test=pairs.subset(mask),
                  intrinsics=synth_config.intrinsics)


def add_keypoint_noise(pixels, noise_px, seed=0):
    """Add Gaussian noise of the given standard deviation to keypoints"""
    pixels = np.asarray(pixels, dtype=float)
    if noise_px == 0:
        return pixels
    rng = np.random.default_rng(seed)
    return pixels + rng.normal(0.0, noise_px, size=pixels.shape)


def evaluate_lifters(view_model: Optional[ViewSynthModel],
                     recon_model: ReconModel,
                     test: PairArrays,
                     intrinsics: CameraIntrinsics,
                     search_config: Optional[SearchConfig] = None,
                     keypoint_noise_px=0.0,
                     seed=0,
                     name="stereo") -> LifterEvaluation:
    """Evaluate trained lifting networks on held-out pairs.

    Args:
        view_model: The view synthesis model (``None`` for monocular
            reconstruction)
        recon_model: The reconstruction model
        test: The held-out pairs
        intrinsics: The crop intrinsics of the pairs
        search_config: If given, the geometric search is run on every sample
            and the refined poses are evaluated as well
        keypoint_noise_px: Standard deviation of noise added to the 2D input
        seed: Seed of the keypoint noise
        name: Label of the evaluation
    """

    schema = test.schema
    left = add_keypoint_noise(test.left, keypoint_noise_px, seed)
    coarse = predict_coarse_batch(view_model, recon_model, left)
    truth = [Pose3D(joints, schema, Frame.ROOT_RELATIVE)
             for joints in test.pose3d]
    coarse_poses = [Pose3D(joints, schema, Frame.ROOT_RELATIVE)
                    for joints in coarse]
    evaluation = LifterEvaluation(
        name=name,
        coarse=mpjpe_report(zip(coarse_poses, truth), name + "/coarse"),
    )

    if view_model is not None and recon_model.input == ReconInput.STEREO:
        right = right_view_pixels(view_model, left)
        evaluation = replace(evaluation, view_pckh=pckh_report(
            ((Pose2D(pred, schema), Pose2D(gt, schema))
             for pred, gt in zip(right, test.right)),
            name=name + "/viewsynth",
        ))

    if search_config is not None:
        refined, failed = [], 0
        for pose, pixels, gt in zip(coarse_poses, left, truth):
            try:
                result = refine(pose, Pose2D(pixels, schema), intrinsics,
                                search_config)
            except GeometricSearchError:
                failed += 1
                continue
            refined.append((result.pose_rel, gt))
        if refined:
            evaluation = replace(
                evaluation,
                refined=mpjpe_report(refined, name + "/refined"),
                failed=failed,
            )
        else:
            evaluation = replace(evaluation, failed=failed)
    logger.info("%s: coarse MPJPE %.1f mm", name, evaluation.coarse.value)
    return evaluation


def train_stereo(corpus: Corpus, train_config: TrainConfig,
                 architecture=LifterArchitecture(),
                 mode=TrainingMode.SELF_SYNTHESIZED, progress=False):
    """Train view synthesis and stereo reconstruction on a corpus"""
    view_model = train_view_synthesis(corpus.train, train_config,
                                      architecture, progress)
    recon_model = train_reconstruction(corpus.train, view_model,
                                       train_config, mode, architecture,
                                       progress)
    return view_model, recon_model


def stereo_vs_monocular(corpus: Corpus, train_config: TrainConfig,
                        architecture=LifterArchitecture(),
                        search_config: Optional[SearchConfig] = None,
                        keypoint_noise_px=0.0,
                        progress=False) -> List[LifterEvaluation]:
    """Compare stereo and monocular reconstruction trained with the same
    budget and seeds"""
    view_model, stereo = train_stereo(corpus, train_config, architecture,
                                      progress=progress)
    monocular = train_monocular(corpus.train, train_config, architecture,
                                progress)
    return [
        evaluate_lifters(view_model, stereo, corpus.test, corpus.intrinsics,
                         search_config, keypoint_noise_px, name="stereo"),
        evaluate_lifters(None, monocular, corpus.test, corpus.intrinsics,
                         search_config, keypoint_noise_px, name="monocular"),
    ]


def dx_ablation(synth_config: SynthConfig, dx_values: Sequence[float],
                count, train_config: TrainConfig,
                architecture=LifterArchitecture(),
                progress=False) -> List[LifterEvaluation]:
    """Train and evaluate the stereo pipeline (without geometric search) for
    each shift of the virtual right camera"""
    evaluations = []
    for dx in dx_values:
        corpus = make_corpus(replace(synth_config, dx=float(dx)), count)
        view_model, recon_model = train_stereo(corpus, train_config,
                                               architecture,
                                               progress=progress)
        evaluations.append(evaluate_lifters(
            view_model, recon_model, corpus.test, corpus.intrinsics,
            name="dx=%g" % dx,
        ))
    return evaluations


def relative_spread(values) -> float:
    """Difference between the largest and smallest value relative to the
    smallest"""
    values = np.asarray(values, dtype=float)
    return float((values.max() - values.min()) / values.min())
