"""Tests for ``stereopose.geosearch``"""
import numpy as np
import pytest
from fixtures.poses import (
    CROP_INTRINSICS,
    TWO_JOINTS,
    random_joints,
    synth_config,
    synth_pairs,
)
from numpy import testing as npt

from stereopose.geometry import CameraIntrinsics, project
from stereopose.geosearch import (
    DegenerateProjectionError,
    GeometricSearchError,
    NoValidDepthError,
    ResidualFrame,
    SearchConfig,
    SearchMode,
    closed_form_delta_z,
    loss_curve,
    refine,
    reprojection_error,
)
from stereopose.skeleton import (
    Frame,
    FrameMismatchError,
    Pose2D,
    Pose3D,
    SchemaMismatchError,
)

K_1000 = CameraIntrinsics(fx=1000, fy=1000, cx=0, cy=0)


def two_joint_problem(coarse_joint, pixel):
    """A root at the principal point and one joint with the given coarse
    position and pixel"""
    coarse = Pose3D([(0, 0, 0), coarse_joint], TWO_JOINTS, Frame.ROOT_RELATIVE)
    gt2d = Pose2D([(0, 0), pixel], TWO_JOINTS)
    return coarse, gt2d


@pytest.mark.parametrize("frame", list(ResidualFrame))
@pytest.mark.parametrize("mode", list(SearchMode))
def test_two_joint_example(frame, mode):
    """Test the search on a hand-evaluated example"""

    coarse, gt2d = two_joint_problem((300, 0, 0), (100, 0))
    cfg = SearchConfig(mode=mode, residual_frame=frame)

    result = refine(coarse, gt2d, K_1000, cfg)

    assert closed_form_delta_z(coarse, gt2d, K_1000, frame) == pytest.approx(
        3000, abs=1e-9
    )
    assert result.delta_z == pytest.approx(3000, abs=1e-9)
    npt.assert_allclose(result.pose_abs.joints, [(0, 0, 3000), (300, 0, 3000)],
                        atol=1e-9)
    npt.assert_allclose(result.pose_rel.joints, [(0, 0, 0), (300, 0, 0)],
                        atol=1e-9)
    assert result.residual == pytest.approx(0, abs=1e-12)
    assert reprojection_error(result.pose_abs, gt2d, K_1000) <= 1e-6


@pytest.mark.parametrize("frame", list(ResidualFrame))
def test_synthetic_round_trip(frame):
    """Test that the exact relative pose recovers the absolute pose"""

    cfg = synth_config(seed=31)
    for pair in synth_pairs(10, seed=31):
        scanned = refine(pair.pose3d, pair.left2d, cfg.intrinsics,
                         SearchConfig(residual_frame=frame))
        exact = refine(pair.pose3d, pair.left2d, cfg.intrinsics,
                       SearchConfig(mode=SearchMode.CLOSED_FORM,
                                    residual_frame=frame))

        npt.assert_allclose(scanned.pose_abs.joints, pair.pose3d_abs.joints,
                            atol=1.0)
        npt.assert_allclose(exact.pose_abs.joints, pair.pose3d_abs.joints,
                            atol=1e-6)
        assert exact.delta_z == pytest.approx(pair.pose3d_abs.root[2])
        for result in (scanned, exact):
            assert reprojection_error(result.pose_abs, pair.left2d,
                                      cfg.intrinsics) <= 1e-6
            npt.assert_array_equal(result.pose_rel.root, (0, 0, 0))


@pytest.mark.parametrize("mode", list(SearchMode))
def test_refine_keeps_relative_depths(mode):
    """Test that the refined pose keeps the depth differences of a noisy
    coarse pose"""

    cfg = synth_config(seed=32)
    rng = np.random.default_rng(32)
    for pair in synth_pairs(5, seed=32):
        noisy = pair.pose3d.joints + rng.normal(scale=20.0, size=(16, 3))
        noisy -= noisy[0]
        coarse = Pose3D(noisy, pair.pose3d.schema, Frame.ROOT_RELATIVE)
        result = refine(coarse, pair.left2d, cfg.intrinsics,
                        SearchConfig(mode=mode))

        shift = result.pose_abs.joints[:, 2] - coarse.joints[:, 2]
        npt.assert_allclose(shift, result.delta_z, atol=1e-9)
        depth = result.pose_abs.joints[:, 2]
        npt.assert_allclose(depth[:, None] - depth[None, :],
                            noisy[:, None, 2] - noisy[None, :, 2], atol=1e-9)


def test_degenerate_projection():
    """Test that joints on the principal ray give no information"""

    coarse, gt2d = two_joint_problem((0, 0, 100), (0, 0))

    with pytest.raises(DegenerateProjectionError):
        refine(coarse, gt2d, K_1000)
    with pytest.raises(DegenerateProjectionError):
        closed_form_delta_z(coarse, gt2d, K_1000)
    assert issubclass(DegenerateProjectionError, GeometricSearchError)


def test_closed_form_clamps_at_zero():
    """Test that negative minimizers are clamped to zero"""

    coarse, gt2d = two_joint_problem((50, 0, 100), (1000, 0))

    assert closed_form_delta_z(coarse, gt2d, K_1000) == 0.0

    # Offset zero puts the root on the camera plane
    result = refine(coarse, gt2d, K_1000,
                    SearchConfig(mode=SearchMode.CLOSED_FORM))
    assert result.delta_z == 1.0


def test_closed_form_clips_to_maximum():
    """Test that the closed-form search respects the scan range"""

    coarse, gt2d = two_joint_problem((300, 0, 0), (100, 0))
    result = refine(coarse, gt2d, K_1000,
                    SearchConfig(z_max_mm=2000, mode="closed-form"))

    assert result.delta_z == 2000


def test_scan_ties_take_smallest_offset():
    """Test that equal losses select the smallest offset"""

    # Unconstrained minimizer at 1.5, losses at 1 and 2 are equal
    coarse, gt2d = two_joint_problem((101.5, 0, 100), (1000, 0))
    deltas, losses = loss_curve(coarse, gt2d, K_1000)

    assert losses[1] == losses[2]
    assert refine(coarse, gt2d, K_1000).delta_z == 1.0


def test_loss_curve():
    """Test the scanned loss values"""

    coarse, gt2d = two_joint_problem((300, 0, 0), (100, 0))
    deltas, losses = loss_curve(coarse, gt2d, K_1000,
                                SearchConfig(step_mm=10, z_max_mm=5000))

    assert deltas.shape == (501,)
    assert deltas[-1] == 5000
    assert losses[0] == np.inf
    assert np.argmin(losses) == 300
    npt.assert_allclose(losses[1:], (0.1 * deltas[1:] - 300) ** 2)


def test_no_valid_depth():
    """Test that poses reaching beyond the scan range fail"""

    coarse, gt2d = two_joint_problem((0, 0, -20000), (100, 0))

    with pytest.raises(NoValidDepthError):
        refine(coarse, gt2d, K_1000)
    _, losses = loss_curve(coarse, gt2d, K_1000)
    assert np.all(np.isinf(losses))


def test_input_checks():
    """Test the frame and schema checks of the search"""

    coarse, gt2d = two_joint_problem((300, 0, 0), (100, 0))

    with pytest.raises(FrameMismatchError):
        refine(Pose3D(coarse.joints + 1, TWO_JOINTS), gt2d, K_1000)
    with pytest.raises(SchemaMismatchError):
        refine(coarse, Pose2D(np.zeros((16, 2))), K_1000)


def test_reprojection_error():
    """Test the maximum pixel distance"""

    joints = np.array([(0, 0, 2000), (100, 50, 2000)], dtype=float)
    pose = Pose3D(joints, TWO_JOINTS)
    gt2d = Pose2D(project(joints, K_1000), TWO_JOINTS)

    assert reprojection_error(pose, gt2d, K_1000) == 0
    shifted = Pose3D(joints + (10, 0, 0), TWO_JOINTS)
    assert reprojection_error(shifted, gt2d, K_1000) == pytest.approx(5.0)


@pytest.mark.parametrize(
    "changes",
    [dict(step_mm=0), dict(z_max_mm=0.5), dict(mode="bisect"),
     dict(residual_frame="world")],
)
def test_invalid_search_config(changes):
    """Test that invalid search configurations are rejected"""

    with pytest.raises(ValueError):
        SearchConfig(**changes)


def test_search_config_candidates():
    """Test the scanned offsets"""

    cfg = SearchConfig(step_mm=0.5, z_max_mm=2)
    npt.assert_allclose(cfg.candidates, (0, 0.5, 1, 1.5, 2))
    assert SearchConfig(mode="closed-form").mode == SearchMode.CLOSED_FORM


def random_instances(count, seed):
    """Noisy coarse poses with the projections of the exact poses"""
    rng = np.random.default_rng(seed)
    for _ in range(count):
        truth = random_joints(rng, spread=250.0)
        depth = rng.uniform(2000.0, 6000.0)
        pixels = project(truth + (0, 0, depth), CROP_INTRINSICS)
        coarse = truth + rng.normal(scale=20.0, size=truth.shape)
        coarse -= coarse[0]
        yield (Pose3D(coarse, frame=Frame.ROOT_RELATIVE), Pose2D(pixels))


def test_scan_agrees_with_closed_form():
    """Test that the scanned offset lies within one step of the clamped
    minimizer on random instances"""

    scan_cfg = SearchConfig()
    exact_cfg = SearchConfig(mode=SearchMode.CLOSED_FORM)
    for coarse, gt2d in random_instances(1000, seed=41):
        scanned = refine(coarse, gt2d, CROP_INTRINSICS, scan_cfg)
        exact = refine(coarse, gt2d, CROP_INTRINSICS, exact_cfg)

        assert abs(scanned.delta_z - exact.delta_z) <= scan_cfg.step_mm
        assert exact.residual <= scanned.residual + 1e-6
        for result in (scanned, exact):
            assert reprojection_error(result.pose_abs, gt2d,
                                      CROP_INTRINSICS) <= 1e-6


def test_exact_input_recovery():
    """Test that exact relative poses recover generated absolute poses within
    the scan step"""

    cfg = synth_config(seed=43)
    for pair in synth_pairs(1000, seed=43):
        result = refine(pair.pose3d, pair.left2d, cfg.intrinsics)
        npt.assert_allclose(result.pose_abs.joints, pair.pose3d_abs.joints,
                            atol=1.0)
