"""Tests for ``stereopose.experiments``"""
import time

import numpy as np
import pytest
from fixtures.lifters import (
    QUICK_TRAINING,
    TINY_ARCHITECTURE,
    oracle_lifters,
)
from fixtures.poses import synth_config, synth_pairs, synth_records
from numpy import testing as npt

from stereopose.experiments import (
    add_keypoint_noise,
    dx_ablation,
    evaluate_lifters,
    make_corpus,
    relative_spread,
    stereo_vs_monocular,
    train_stereo,
)
from stereopose.geosearch import SearchConfig
from stereopose.labeling import LabelConfig, label_records
from stereopose.lifting import LifterArchitecture, stack_pairs
from stereopose.neuralnet import TrainConfig

DESK_ARCHITECTURE = LifterArchitecture(hidden_dim=256, n_residual_blocks=2,
                                       dropout_rate=0.1, max_norm=2.0, seed=0)
DESK_TRAINING = TrainConfig(lr0=1e-3, lr_decay=0.96, batch_size=64,
                            epochs=50, seed=0)


def test_make_corpus():
    """Test the deterministic holdout of a generated corpus"""

    cfg = synth_config(seed=12)
    corpus = make_corpus(cfg, 100)

    assert len(corpus.train) + len(corpus.test) == 100
    assert 0 < len(corpus.test) < 50
    assert corpus.intrinsics == cfg.intrinsics
    again = make_corpus(cfg, 100)
    npt.assert_array_equal(corpus.test.left, again.test.left)


def test_add_keypoint_noise():
    """Test the Gaussian keypoint noise"""

    pixels = np.full((2000, 16, 2), 128.0)

    npt.assert_array_equal(add_keypoint_noise(pixels, 0.0), pixels)
    noisy = add_keypoint_noise(pixels, 2.0, seed=3)
    npt.assert_array_equal(noisy, add_keypoint_noise(pixels, 2.0, seed=3))
    assert np.std(noisy - pixels) == pytest.approx(2.0, rel=0.02)


def test_relative_spread():
    """Test the relative difference of ablation results"""

    assert relative_spread([42.2, 42.0, 42.3]) == pytest.approx(0.3 / 42.0)
    assert relative_spread([5.0]) == 0.0


def test_evaluate_exact_lifters():
    """Test the evaluation of lifters reproducing the ground truth"""

    pair = synth_pairs(1, seed=14)[0]
    view_model, recon_model = oracle_lifters(pair)
    evaluation = evaluate_lifters(view_model, recon_model, stack_pairs([pair]),
                                  synth_config(seed=14).intrinsics,
                                  SearchConfig(), name="oracle")

    assert evaluation.coarse.value == pytest.approx(0.0, abs=1e-6)
    assert evaluation.refined.value < 1.0
    assert evaluation.view_pckh.value == 1.0
    assert evaluation.failed == 0
    assert [report.name for report in evaluation.reports] == [
        "oracle/coarse", "oracle/refined", "oracle/viewsynth"
    ]


def test_stereo_vs_monocular():
    """Test the comparison harness on a tiny corpus"""

    corpus = make_corpus(synth_config(seed=15), 100)
    evaluations = stereo_vs_monocular(corpus, QUICK_TRAINING,
                                      TINY_ARCHITECTURE, SearchConfig())

    assert [evaluation.name for evaluation in evaluations] == [
        "stereo", "monocular"
    ]
    stereo, monocular = evaluations
    assert stereo.view_pckh is not None
    assert monocular.view_pckh is None
    for evaluation in evaluations:
        assert evaluation.coarse.count == len(corpus.test)
        assert evaluation.refined is not None or evaluation.failed > 0


def test_dx_ablation():
    """Test the shift ablation harness on tiny corpora"""

    evaluations = dx_ablation(synth_config(seed=16), [250, 500], 100,
                              QUICK_TRAINING, TINY_ARCHITECTURE)

    assert [evaluation.name for evaluation in evaluations] == [
        "dx=250", "dx=500"
    ]
    assert all(evaluation.refined is None for evaluation in evaluations)
    assert all(evaluation.coarse.value > 0 for evaluation in evaluations)


@pytest.mark.slow
def test_desk_scale_lifting():
    """Test view synthesis accuracy, the benefit of the stereo input and of
    the geometric search on a desk-scale corpus"""

    corpus = make_corpus(synth_config(seed=0), 20000)
    stereo, monocular = stereo_vs_monocular(
        corpus, DESK_TRAINING, DESK_ARCHITECTURE, SearchConfig()
    )

    assert stereo.view_pckh.value >= 0.95
    assert stereo.coarse.value <= monocular.coarse.value
    assert stereo.refined.value <= stereo.coarse.value


@pytest.mark.slow
def test_desk_scale_dx_ablation():
    """Test that the shift of the virtual camera barely matters"""

    evaluations = dx_ablation(synth_config(seed=0), [250, 500, 750], 20000,
                              DESK_TRAINING, DESK_ARCHITECTURE)
    values = [evaluation.coarse.value for evaluation in evaluations]

    assert relative_spread(values) < 0.1


@pytest.mark.slow
def test_labeling_throughput():
    """Test labeling ten thousand records within a minute"""

    records = synth_records(10000, seed=18)
    corpus = make_corpus(synth_config(seed=18), 200)
    view_model, recon_model = train_stereo(corpus, QUICK_TRAINING,
                                           TINY_ARCHITECTURE)

    start = time.perf_counter()
    labeled = list(label_records(records, view_model, recon_model,
                                 SearchConfig(), LabelConfig()))
    elapsed = time.perf_counter() - start

    assert len(labeled) == 10000
    assert elapsed < 60.0
