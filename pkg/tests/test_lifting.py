"""Tests for ``stereopose.lifting``"""
import numpy as np
import pytest
from fixtures.lifters import (
    MEMORIZING_ARCHITECTURE,
    MEMORIZING_TRAINING,
    QUICK_TRAINING,
    TINY_ARCHITECTURE,
    constant_network,
    oracle_lifters,
)
from fixtures.poses import TWO_JOINTS, synth_pairs
from numpy import testing as npt

from stereopose.lifting import (
    LifterArchitecture,
    MissingViewModelError,
    ModelKindError,
    ReconInput,
    ReconModel,
    TrainingMode,
    ViewSynthModel,
    holdout_mask,
    load_lifter,
    predict_coarse,
    predict_coarse_batch,
    predict_right,
    predict_right_batch,
    right_view_pixels,
    save_lifter,
    stack_pairs,
    train_monocular,
    train_reconstruction,
    train_view_synthesis,
)
from stereopose.metrics import mpjpe_protocol1
from stereopose.neuralnet import (
    EmptyDatasetError,
    TrainConfig,
    fingerprint,
    predict,
)
from stereopose.skeleton import (
    Frame,
    Pose2D,
    SchemaMismatchError,
    normalize2d,
    normalize_pixels,
    root_align_array,
)


@pytest.fixture(scope="module")
def pairs():
    return synth_pairs(48, seed=21)


@pytest.fixture(scope="module")
def view_model(pairs):
    return train_view_synthesis(pairs, QUICK_TRAINING, TINY_ARCHITECTURE)


def test_stack_pairs(pairs):
    """Test stacking pairs into arrays"""

    data = stack_pairs(pairs)

    assert len(data) == 48
    assert data.left.shape == (48, 16, 2)
    assert data.pose3d.shape == (48, 16, 3)
    subset = data.subset(np.arange(48) < 10)
    assert len(subset) == 10
    npt.assert_array_equal(subset.right[3], pairs[3].right2d.joints)

    with pytest.raises(EmptyDatasetError):
        stack_pairs([])


def test_train_view_synthesis(pairs, view_model):
    """Test the shape and determinism of the view synthesis network"""

    assert view_model.network.config.input_dim == 32
    assert view_model.network.config.output_dim == 32
    assert len(view_model.history) == QUICK_TRAINING.epochs

    again = train_view_synthesis(pairs, QUICK_TRAINING, TINY_ARCHITECTURE)
    assert fingerprint(again.network) == fingerprint(view_model.network)


def test_predict_right(pairs, view_model):
    """Test the prediction of single right views"""

    left = normalize2d(pairs[0].left2d)
    first = predict_right(view_model, left)
    second = predict_right(view_model, left)

    npt.assert_array_equal(first.joints, second.joints)

    rng = np.random.default_rng(0)
    extreme = Pose2D(rng.choice([-1.0, 1.0], size=(16, 2)))
    assert np.all(np.isfinite(predict_right(view_model, extreme).joints))

    with pytest.raises(SchemaMismatchError):
        predict_right(view_model, Pose2D(np.zeros((2, 2)), TWO_JOINTS))


def test_memorized_right_view():
    """Test that a memorized right view is reproduced within half a pixel"""

    pairs = synth_pairs(4, seed=22)
    model = train_view_synthesis(pairs, MEMORIZING_TRAINING,
                                 MEMORIZING_ARCHITECTURE)
    right = right_view_pixels(model, np.stack([p.left2d.joints
                                               for p in pairs]))

    for predicted, pair in zip(right, pairs):
        assert np.max(np.linalg.norm(predicted - pair.right2d.joints,
                                     axis=-1)) < 0.5


def test_train_reconstruction_keeps_view_model(pairs, view_model):
    """Test that training the reconstruction leaves the view model alone"""

    before = fingerprint(view_model.network)
    recon = train_reconstruction(pairs, view_model, QUICK_TRAINING,
                                 TrainingMode.SELF_SYNTHESIZED,
                                 TINY_ARCHITECTURE)

    assert fingerprint(view_model.network) == before
    assert recon.input == ReconInput.STEREO
    assert recon.network.config.input_dim == 64
    assert recon.network.config.output_dim == 48

    again = train_reconstruction(pairs, view_model, QUICK_TRAINING,
                                 TrainingMode.SELF_SYNTHESIZED,
                                 TINY_ARCHITECTURE)
    assert fingerprint(again.network) == fingerprint(recon.network)

    forced = train_reconstruction(pairs, None, QUICK_TRAINING,
                                  TrainingMode.TEACHER_FORCED,
                                  TINY_ARCHITECTURE)
    assert fingerprint(forced.network) != fingerprint(recon.network)


def test_train_monocular(pairs):
    """Test the monocular reconstruction network"""

    model = train_monocular(pairs, QUICK_TRAINING, TINY_ARCHITECTURE)
    coarse = predict_coarse_batch(None, model,
                                  np.stack([p.left2d.joints for p in pairs]))

    assert model.input == ReconInput.MONOCULAR
    assert model.network.config.input_dim == 32
    assert coarse.shape == (48, 16, 3)


def test_stereo_input_order(pairs, view_model):
    """Test that the reconstruction network sees the left view before the
    synthesized right view"""

    recon = train_reconstruction(pairs, view_model, QUICK_TRAINING,
                                 architecture=TINY_ARCHITECTURE)
    left = np.stack([p.left2d.joints for p in pairs[:8]])
    left_norm = normalize_pixels(left, recon.crop_size)
    right_norm = predict_right_batch(view_model, left_norm)
    left_flat = left_norm.reshape(len(left), -1)
    right_flat = right_norm.reshape(len(left), -1)

    ordered = predict(recon.network, np.concatenate((left_flat, right_flat),
                                                    axis=1))
    swapped = predict(recon.network, np.concatenate((right_flat, left_flat),
                                                    axis=1))
    expected = root_align_array(ordered.reshape(-1, 16, 3) * recon.scale_mm)

    npt.assert_allclose(predict_coarse_batch(view_model, recon, left),
                        expected)
    assert not np.allclose(ordered, swapped)


def test_stereo_models_need_view_model(pairs, view_model):
    """Test that stereo reconstruction without a view model is refused"""

    with pytest.raises(MissingViewModelError):
        train_reconstruction(pairs, None, QUICK_TRAINING,
                             TrainingMode.SELF_SYNTHESIZED, TINY_ARCHITECTURE)

    recon = train_reconstruction(pairs, view_model, QUICK_TRAINING,
                                 architecture=TINY_ARCHITECTURE)
    with pytest.raises(MissingViewModelError):
        predict_coarse(None, recon, pairs[0].left2d)
    with pytest.raises(MissingViewModelError):
        predict_coarse_batch(None, recon, pairs[0].left2d.joints[np.newaxis])


def test_single_pair_with_batch_norm(pairs):
    """Test that a single pair cannot train a batch-normalized network"""

    with pytest.raises(EmptyDatasetError):
        train_view_synthesis(pairs[:1], QUICK_TRAINING, TINY_ARCHITECTURE)


def test_predict_coarse(pairs, view_model):
    """Test that coarse poses are finite and root-relative"""

    recon = train_reconstruction(pairs, view_model, QUICK_TRAINING,
                                 architecture=TINY_ARCHITECTURE)
    pose = predict_coarse(view_model, recon, pairs[0].left2d)

    assert pose.frame == Frame.ROOT_RELATIVE
    npt.assert_array_equal(pose.root, (0, 0, 0))
    assert np.all(np.isfinite(pose.joints))

    with pytest.raises(SchemaMismatchError):
        predict_coarse(view_model, recon, Pose2D(np.zeros((2, 2)), TWO_JOINTS))


def test_memorized_coarse_pose():
    """Test that a memorized sample is reconstructed within 5 mm"""

    pairs = synth_pairs(4, seed=23)
    view_model = train_view_synthesis(pairs, MEMORIZING_TRAINING,
                                      MEMORIZING_ARCHITECTURE)
    recon = train_reconstruction(pairs, view_model, MEMORIZING_TRAINING,
                                 TrainingMode.SELF_SYNTHESIZED,
                                 MEMORIZING_ARCHITECTURE)

    for pair in pairs:
        coarse = predict_coarse(view_model, recon, pair.left2d)
        assert mpjpe_protocol1(coarse, pair.pose3d) < 5.0


def test_oracle_lifters_reproduce_pair():
    """Test the constant networks used as memorizing models"""

    pair = synth_pairs(1, seed=24)[0]
    view_model, recon_model = oracle_lifters(pair)

    coarse = predict_coarse(view_model, recon_model, pair.left2d)
    npt.assert_allclose(coarse.joints, pair.pose3d.joints, atol=1e-9)
    npt.assert_allclose(right_view_pixels(view_model, pair.left2d.joints),
                        pair.right2d.joints, atol=1e-9)


def test_model_dimension_checks():
    """Test that models check their network against the schema"""

    with pytest.raises(SchemaMismatchError):
        ViewSynthModel(constant_network(32, np.zeros(30)))
    with pytest.raises(SchemaMismatchError):
        ReconModel(constant_network(32, np.zeros(48)))
    ReconModel(constant_network(32, np.zeros(48)), input=ReconInput.MONOCULAR)


def test_save_and_load_lifters(tmp_path, pairs, view_model):
    """Test storing the lifting networks with their metadata"""

    recon = train_monocular(pairs, QUICK_TRAINING, TINY_ARCHITECTURE)
    view_path = tmp_path / "view.json"
    recon_path = tmp_path / "recon.json"
    save_lifter(view_path, view_model)
    save_lifter(recon_path, recon, {"mode": "monocular"})

    loaded_view = load_lifter(view_path, "viewsynth")
    loaded_recon = load_lifter(recon_path)

    assert isinstance(loaded_view, ViewSynthModel)
    assert fingerprint(loaded_view.network) == fingerprint(view_model.network)
    assert loaded_view.history == view_model.history
    assert isinstance(loaded_recon, ReconModel)
    assert loaded_recon.input == ReconInput.MONOCULAR
    assert loaded_recon.scale_mm == 1000.0

    with pytest.raises(ModelKindError):
        load_lifter(view_path, "recon")


def test_lifters_with_custom_schema(tmp_path):
    """Test that models of unregistered schemas carry their joint table"""

    view_model = ViewSynthModel(constant_network(4, np.zeros(4)), TWO_JOINTS)
    path = tmp_path / "two.json"
    save_lifter(path, view_model)

    assert load_lifter(path).schema == TWO_JOINTS


def test_holdout_mask():
    """Test the hash-based selection of held-out samples"""

    keys = ["synth-0-%08d" % index for index in range(3000)]
    mask = holdout_mask(keys)

    npt.assert_array_equal(mask, holdout_mask(keys))
    assert mask.mean() == pytest.approx(0.1, abs=0.03)


@pytest.mark.slow
def test_zero_shift_view_synthesis_is_identity():
    """Test that a network trained without camera shift reproduces the left
    view within two pixels on held-out poses"""

    architecture = LifterArchitecture(hidden_dim=256, n_residual_blocks=1,
                                      dropout_rate=0.0, max_norm=10.0,
                                      batch_norm=False, seed=4)
    config = TrainConfig(lr0=1e-3, lr_decay=0.99, weight_decay=0.0,
                         batch_size=64, epochs=300, seed=4)
    model = train_view_synthesis(synth_pairs(2000, seed=25, dx=0.0), config,
                                 architecture)

    left = np.stack([p.left2d.joints for p in synth_pairs(200, seed=26,
                                                          dx=0.0)])
    right = right_view_pixels(model, left)

    assert np.mean(np.linalg.norm(right - left, axis=-1)) < 2.0
