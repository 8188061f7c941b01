"""
Tests for reconstruction metrics and coherence diagnostics
"""

import math
from dataclasses import replace

import numpy as np
import pytest

import pynrsfm.metrics as metrics
from pynrsfm.checkpoint import Checkpoint
from pynrsfm.config import ModelDims
from pynrsfm.exceptions import ContractError, SchemaError, ShapeError
from pynrsfm.landmarks import LandmarkDataset, LandmarkFrame
from pynrsfm.linalg import random_semiorthonormal_3x2
from pynrsfm.metrics import (
    RAW,
    AlignmentPolicy,
    camera_frame,
    coherence_error_correlation,
    coherence_report,
    comparable_shapes,
    evaluate,
    mean_point_distance,
    reconstruct_dataset,
    reprojection_error,
    reprojection_error_ratio,
    shape_error_ratio,
)
from pynrsfm.model import ForwardResult
from pynrsfm.training import init_params

# 90° about the x axis
QUARTER_TURN = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])


def _result(shape, camera):
    """A non-degenerate forward result carrying only a shape and camera"""
    return ForwardResult(codes=[], psi_n=np.zeros(1), camera_raw=camera, camera=camera,
                         shape=shape, loss=0.0)


class TestShapeErrorRatio:
    """Test the normalized 3D error"""

    def test_identical_shapes(self, rng):
        gt = [rng.standard_normal((6, 3)) for _ in range(3)]
        assert shape_error_ratio([g.copy() for g in gt], gt) == pytest.approx(0.0, abs=1e-12)

    def test_raw_hand_value(self):
        """Ŝ = 2·S with no alignment → ratio 0.5"""
        s = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-1.0, -1.0, 0.0]])
        assert shape_error_ratio([s], [2.0 * s], RAW) == pytest.approx(0.5)

    def test_rescale_removes_global_scale(self, rng):
        gt = [rng.standard_normal((6, 3)) for _ in range(2)]
        assert shape_error_ratio([3.0 * g for g in gt], gt) == pytest.approx(0.0, abs=1e-12)

    def test_reflection_resolved(self, rng):
        gt = rng.standard_normal((6, 3))
        flipped = gt * np.array([1.0, 1.0, -1.0])
        assert shape_error_ratio([flipped], [gt]) == pytest.approx(0.0, abs=1e-12)
        assert shape_error_ratio([flipped], [gt], RAW) > 0.1

    def test_translation_removed_by_centering(self, rng):
        gt = rng.standard_normal((6, 3))
        policy = AlignmentPolicy(resolve_reflection=False, rescale=False)
        assert shape_error_ratio([gt + 5.0], [gt], policy) == pytest.approx(0.0, abs=1e-12)

    def test_zero_reconstruction(self, rng):
        """A zero reconstruction scores exactly 1"""
        gt = rng.standard_normal((6, 3))
        assert shape_error_ratio([np.zeros((6, 3))], [gt]) == pytest.approx(1.0)

    def test_zero_ground_truth(self):
        with pytest.raises(ContractError):
            shape_error_ratio([np.ones((4, 3))], [np.zeros((4, 3))])

    def test_no_frames(self):
        with pytest.raises(ContractError):
            shape_error_ratio([], [])

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeError):
            shape_error_ratio([rng.standard_normal((5, 3))], [rng.standard_normal((6, 3))])

    def test_order_invariant(self, rng):
        gt = [rng.standard_normal((6, 3)) for _ in range(7)]
        recon = [g + 0.3 * rng.standard_normal((6, 3)) for g in gt]
        order = rng.permutation(7)
        shuffled = shape_error_ratio([recon[i] for i in order], [gt[i] for i in order])
        assert shuffled == pytest.approx(shape_error_ratio(recon, gt), rel=1e-12)
        assert mean_point_distance([recon[i] for i in order], [gt[i] for i in order]) == \
            pytest.approx(mean_point_distance(recon, gt), rel=1e-12)


class TestMeanPointDistance:
    def test_raw_hand_value(self):
        """Every point off by (0, 0, 1) → distance 1"""
        gt = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        assert mean_point_distance([gt + [0.0, 0.0, 1.0]], [gt], RAW) == pytest.approx(1.0)

    def test_identical(self, rng):
        gt = [rng.standard_normal((6, 3))]
        assert mean_point_distance(gt, gt) == pytest.approx(0.0, abs=1e-12)


class TestReprojection:
    """Test 2D reprojection errors"""

    def test_exact_projection(self, rng):
        shape = rng.standard_normal((5, 3))
        camera = random_semiorthonormal_3x2(rng)
        assert reprojection_error(shape @ camera, shape, camera) == pytest.approx(0.0, abs=1e-12)

    def test_ratio(self):
        w = np.array([[3.0, 0.0], [0.0, 4.0]])
        assert reprojection_error_ratio(w, np.zeros((2, 3)), np.eye(3, 2)) == pytest.approx(1.0)

    def test_zero_frame(self):
        assert reprojection_error_ratio(np.zeros((2, 2)), np.zeros((2, 3)), np.eye(3, 2)) == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            reprojection_error(np.zeros((3, 2)), np.zeros((4, 3)), np.eye(3, 2))


class TestCameraFrame:
    """Test comparison in camera coordinates"""

    def test_image_columns_are_projection(self, rng):
        shape = rng.standard_normal((5, 3))
        camera = random_semiorthonormal_3x2(rng)
        np.testing.assert_allclose(camera_frame(shape, camera)[:, :2], shape @ camera,
                                   rtol=0, atol=1e-12)

    def test_preserves_norm(self, rng):
        shape = rng.standard_normal((5, 3))
        camera = random_semiorthonormal_3x2(rng)
        assert np.linalg.norm(camera_frame(shape, camera)) == pytest.approx(np.linalg.norm(shape))

    def test_canonical_rotation_cancels(self, rng):
        """S·R seen through Rᵀ·M is the same camera-frame shape as S through M"""
        shape = rng.standard_normal((5, 3))
        camera = random_semiorthonormal_3x2(rng)
        np.testing.assert_allclose(camera_frame(shape @ QUARTER_TURN, QUARTER_TURN.T @ camera),
                                   camera_frame(shape, camera), rtol=0, atol=1e-12)

    def test_bad_camera(self, rng):
        with pytest.raises(ShapeError):
            camera_frame(rng.standard_normal((5, 3)), np.eye(3))

    def test_comparable_shapes_skips_and_falls_back(self, rng):
        shape = rng.standard_normal((4, 3))
        camera = random_semiorthonormal_3x2(rng)
        frames = [
            LandmarkFrame("cam", shape @ camera, shape, camera),
            LandmarkFrame("nocam", shape @ camera, shape),
            LandmarkFrame("nogt", shape @ camera),
        ]
        degenerate = replace(_result(shape, camera), camera=None, degenerate=True)
        results = [_result(shape, camera), _result(shape, camera), _result(shape, camera)]
        recon, gt = comparable_shapes(frames, results)
        assert len(recon) == len(gt) == 2
        np.testing.assert_allclose(gt[0], camera_frame(shape, camera))
        np.testing.assert_array_equal(gt[1], shape)
        assert comparable_shapes(frames[:1], [degenerate]) == ([], [])


class TestEvaluate:
    """Test dataset-level evaluation"""

    @pytest.fixture
    def params(self):
        return init_params(ModelDims(p=6, layers=(6, 3)), seed=2)

    def test_fields_with_ground_truth(self, params, planted_dataset):
        report = evaluate(params, planted_dataset)
        assert report.frames_evaluated + report.frames_degenerate == len(planted_dataset)
        assert report.shape_error_ratio is not None
        assert report.mean_point_distance is not None
        assert report.reprojection_error >= 0.0
        assert 0.0 <= report.coherence_final_dict <= 1.0

    def test_without_ground_truth(self, params, planted_dataset):
        bare = LandmarkDataset(tuple(replace(f, gt_shape=None, gt_camera=None)
                                     for f in planted_dataset))
        report = evaluate(params, bare)
        assert report.shape_error_ratio is None
        assert "shape_error_ratio" not in report.to_text()
        assert "coherence_final_dict" in report.to_text()

    def test_degenerate_frames_excluded(self, params, planted_dataset):
        report = evaluate(replace(params, cam_coeffs=np.zeros(3)), planted_dataset)
        assert report.frames_evaluated == 0
        assert report.frames_degenerate == len(planted_dataset)
        assert report.reprojection_error is None

    def test_accepts_checkpoint(self, params, planted_dataset):
        a = evaluate(params, planted_dataset)
        b = evaluate(Checkpoint(params), planted_dataset)
        assert a == b

    def test_threads_agree(self, params, planted_dataset):
        assert evaluate(params, planted_dataset) == evaluate(params, planted_dataset, threads=3)

    def test_landmark_count_mismatch(self, params):
        dataset = LandmarkDataset((LandmarkFrame("a", np.zeros((4, 2))),))
        with pytest.raises(SchemaError):
            reconstruct_dataset(params, dataset)

    def test_empty_dataset(self, params):
        assert reconstruct_dataset(params, LandmarkDataset(())) == []

    def test_ground_truth_reconstructor_scores_zero(self, params, planted_dataset, monkeypatch):
        monkeypatch.setattr(metrics, "reconstruct_dataset", lambda source, dataset, threads=1: [
            _result(f.gt_shape, f.gt_camera) for f in dataset
        ])
        report = evaluate(params, planted_dataset)
        assert report.shape_error_ratio == pytest.approx(0.0, abs=1e-12)
        assert report.mean_point_distance == pytest.approx(0.0, abs=1e-12)
        assert report.reprojection_error_ratio == pytest.approx(0.0, abs=1e-12)
        assert report.frames_evaluated == len(planted_dataset)

    def test_rotated_canonical_frame_scores_zero(self, params, planted_dataset, monkeypatch):
        """Shapes in another canonical frame, with cameras to match, are exact reconstructions"""
        monkeypatch.setattr(metrics, "reconstruct_dataset", lambda source, dataset, threads=1: [
            _result(f.gt_shape @ QUARTER_TURN, QUARTER_TURN.T @ f.gt_camera) for f in dataset
        ])
        report = evaluate(params, planted_dataset)
        assert report.shape_error_ratio == pytest.approx(0.0, abs=1e-12)
        assert report.reprojection_error_ratio == pytest.approx(0.0, abs=1e-12)
        canonical = shape_error_ratio([g @ QUARTER_TURN for g in planted_dataset.gt_shapes()],
                                      planted_dataset.gt_shapes())
        assert canonical > 0.1

    def test_own_reconstructions_score_zero(self, params, planted_dataset):
        """A dataset whose ground truth is the model's own output evaluates to zero error"""
        results = reconstruct_dataset(params, planted_dataset)
        own = LandmarkDataset(tuple(
            LandmarkFrame(f.id, f.w, r.shape, r.camera)
            for f, r in zip(planted_dataset, results)
            if not r.degenerate and np.any(r.shape - r.shape.mean(axis=0))
        ))
        assert len(own) > 0
        report = evaluate(params, own)
        assert report.shape_error_ratio == pytest.approx(0.0, abs=1e-9)
        assert report.mean_point_distance == pytest.approx(0.0, abs=1e-9)
        assert report.frames_degenerate == 0

    def test_order_invariant(self, params, planted_dataset):
        order = np.random.default_rng(3).permutation(len(planted_dataset))
        shuffled = planted_dataset.subset([int(i) for i in order])
        a = evaluate(params, planted_dataset).to_dict()
        b = evaluate(params, shuffled).to_dict()
        for key, value in a.items():
            if value is None:
                assert b[key] is None
            else:
                assert b[key] == pytest.approx(value, rel=1e-12), key

    def test_zero_column_gives_nan_coherence(self, params, planted_dataset):
        d2 = params.dicts[0].copy()
        d2[:, 1] = 0.0
        report = evaluate(params.with_dict(2, d2), planted_dataset)
        assert math.isnan(report.coherence_final_dict)
        assert report.frames_evaluated + report.frames_degenerate == len(planted_dataset)
        assert "coherence_final_dict = nan" in report.to_text()


class TestCoherenceReport:
    """Test the coherence diagnostics"""

    def test_duplicated_column(self, small_params):
        d2 = small_params.dicts[0].copy()
        d2[:, 1] = d2[:, 0]
        report = coherence_report(small_params.with_dict(2, d2))
        assert report.final == pytest.approx(1.0)
        assert report.layers[-1] == report.final
        assert len(report.layers) == 2
        assert report.correlation is None

    def test_to_text(self, small_params):
        text = coherence_report(small_params).to_text()
        assert text.startswith("coherence_final_dict = ")
        assert "coherence_layer_1 = " in text
        assert "coherence_composed = " in text

    def test_checkpoint_correlation(self, small_params):
        checkpoint = Checkpoint(
            small_params,
            coherence_history=[(1, 0.9), (2, 0.8), (3, 0.7)],
            shape_error_history=[(1, 0.5), (2, 0.4), (3, 0.3)],
        )
        report = coherence_report(checkpoint)
        assert report.correlation == pytest.approx(1.0)
        assert "coherence_error_correlation" in report.to_dict()


class TestCoherenceErrorCorrelation:
    def test_anticorrelated(self):
        value = coherence_error_correlation([(1, 0.1), (2, 0.2), (3, 0.3)],
                                            [(1, 0.3), (2, 0.2), (3, 0.1)])
        assert value == pytest.approx(-1.0)

    def test_matches_steps_only(self):
        value = coherence_error_correlation([(1, 0.1), (2, 0.2), (5, 0.9)],
                                            [(1, 0.3), (2, 0.5)])
        assert value == pytest.approx(1.0)

    def test_too_few_pairs(self):
        assert coherence_error_correlation([(1, 0.1)], [(1, 0.2)]) is None

    def test_constant_series(self):
        assert coherence_error_correlation([(1, 0.5), (2, 0.5)], [(1, 0.1), (2, 0.2)]) is None

    def test_nan_skipped(self):
        assert coherence_error_correlation([(1, float("nan")), (2, 0.5)],
                                           [(1, 0.1), (2, 0.2)]) is None
