"""
Tests for the block-sparse auto-encoder
"""

from dataclasses import replace
from itertools import islice

import numpy as np
import pytest

from pynrsfm.exceptions import ShapeError
from pynrsfm.linalg import BlockMatrix, explicit_kron_transpose, random_semiorthonormal_3x2
from pynrsfm.metrics import reprojection_error
from pynrsfm.model import (
    ModelParams,
    d1_from_sharp,
    decode,
    encode,
    forward,
    forward_batch,
    frame_executor,
    readout,
    reconstruct,
    sharp_from_d1,
)
from pynrsfm.sparse_coding import IstaConfig, block_ista


def _single_layer(rng, p=4, k=3, d1_sharp=None, b=None):
    return ModelParams(
        d1_sharp=rng.standard_normal((p, 3 * k)) if d1_sharp is None else d1_sharp,
        dicts=(),
        enc_thresholds=(np.zeros(k) if b is None else b,),
        dec_thresholds=(),
        code_readout=rng.standard_normal((k, 6 * k)),
        cam_coeffs=rng.standard_normal(k),
    )


class TestDictionaryLayout:
    """Test the D₁ ↔ D₁♯ reshape"""

    def test_round_trip(self, rng):
        sharp = rng.standard_normal((5, 12))
        np.testing.assert_array_equal(sharp_from_d1(d1_from_sharp(sharp)), sharp)

    def test_columns_are_vectorized_shapes(self, rng):
        """Column j of D₁ reshaped to p×3 is the j-th p×3 slice of D₁♯"""
        sharp = rng.standard_normal((5, 12))
        d1 = d1_from_sharp(sharp)
        assert d1.shape == (15, 4)
        for j in range(4):
            np.testing.assert_array_equal(d1[:, j].reshape(5, 3), sharp[:, 3 * j:3 * j + 3])


class TestModelParams:
    """Test the parameter container"""

    def test_names_order(self, small_params):
        assert small_params.names() == [
            "d1_sharp", "dict_2", "enc_b_1", "enc_b_2", "dec_b_2", "code_readout", "cam_coeffs",
        ]

    def test_dims(self, small_params, small_dims):
        assert small_params.dims == small_dims

    def test_dict_round_trip(self, small_params):
        restored = ModelParams.from_dict(small_params.to_dict())
        for name, value in small_params.to_dict().items():
            np.testing.assert_array_equal(restored.to_dict()[name], value)

    def test_read_only(self, small_params):
        with pytest.raises(ValueError):
            small_params.d1_sharp[0, 0] = 1.0

    def test_rejects_bad_readout(self, small_params):
        with pytest.raises(ShapeError, match="code_readout"):
            replace(small_params, code_readout=np.zeros((4, 4)))

    def test_rejects_bad_dictionary_chain(self, small_params):
        with pytest.raises(ShapeError, match="dict_2"):
            small_params.with_dict(2, np.zeros((5, 4)))

    def test_rejects_threshold_count(self, small_params):
        with pytest.raises(ShapeError, match="enc_b_1"):
            replace(small_params, enc_thresholds=(np.zeros(3), np.zeros(4)))

    def test_clamp_thresholds(self, small_params):
        negative = replace(small_params, enc_thresholds=(-np.ones(8), np.ones(4)))
        clamped = negative.clamp_thresholds()
        assert np.all(clamped.enc_thresholds[0] == 0.0)
        np.testing.assert_array_equal(clamped.enc_thresholds[1], np.ones(4))

    def test_composed_dictionary(self, small_params):
        np.testing.assert_allclose(small_params.composed_dictionary(),
                                   small_params.d1() @ small_params.dicts[0])
        assert small_params.final_dictionary() is small_params.dicts[-1]

    def test_single_layer_final_dictionary(self, rng):
        params = _single_layer(rng)
        np.testing.assert_array_equal(params.final_dictionary(), params.d1())

    def test_is_finite(self, small_params):
        assert small_params.is_finite()
        assert not replace(small_params, cam_coeffs=np.full(4, np.inf)).is_finite()

    def test_with_dict_feeds_encoder_and_decoder(self, small_params, rng):
        """A replaced D₂ is the one both the encoder and the decoder use"""
        new = rng.standard_normal(small_params.dicts[0].shape)
        swapped = small_params.with_dict(2, new)
        w = rng.standard_normal((5, 2))
        codes = encode(w, swapped)
        np.testing.assert_array_equal(codes[0].flat, encode(w, small_params)[0].flat)
        pre = explicit_kron_transpose(new) @ codes[0].flat
        expected = np.maximum(pre - np.repeat(swapped.enc_thresholds[1], 3)[:, None], 0.0)
        np.testing.assert_allclose(codes[1].flat, expected, rtol=0, atol=1e-12)

        psi = rng.standard_normal(4)
        psi_1 = np.maximum(new @ psi - swapped.dec_thresholds[0], 0.0)
        s = decode(psi, swapped)[0]
        np.testing.assert_allclose(s, swapped.d1() @ psi_1, rtol=0, atol=1e-12)
        assert not np.allclose(s, decode(psi, small_params)[0])


class TestEncode:
    """Test the encoder"""

    def test_saturation(self, rng):
        """Huge thresholds give a zero code"""
        params = _single_layer(rng, b=np.full(3, 1e6))
        (code,) = encode(rng.standard_normal((4, 2)), params)
        np.testing.assert_array_equal(code.flat, np.zeros((9, 2)))

    def test_equals_one_block_ista_iteration(self, rng):
        """Nonnegative inputs: layer 1 is bitwise one relaxed block-ISTA step with α = 1"""
        for _ in range(20):
            d1_sharp = np.abs(rng.standard_normal((6, 12)))
            w = np.abs(rng.standard_normal((6, 2)))
            b = rng.uniform(0.0, 1.0, size=4)
            params = _single_layer(rng, p=6, k=4, d1_sharp=d1_sharp, b=b)
            (code,) = encode(w, params)
            step = block_ista(d1_sharp, w, IstaConfig(alpha=1.0, thresholds=b, max_iters=1),
                              mode="relaxed")
            assert np.array_equal(code.flat, step.code.flat)

    def test_deeper_layer_is_block_ista_step(self, small_params, rng):
        """Layer 2 is one relaxed step on Ψ₁ under (D₂ ⊗ I₃)"""
        codes = encode(rng.standard_normal((5, 2)), small_params)
        kron = np.ascontiguousarray(explicit_kron_transpose(small_params.dicts[0]).T)
        step = block_ista(kron, codes[0].flat,
                          IstaConfig(alpha=1.0, thresholds=small_params.enc_thresholds[1],
                                     max_iters=1), mode="relaxed")
        expected = np.maximum(step.code.flat, 0.0)
        np.testing.assert_allclose(codes[1].flat, expected, atol=1e-12)

    def test_matches_explicit_kronecker_pipeline(self, small_params, rng):
        w = rng.standard_normal((5, 2))
        codes = encode(w, small_params)
        psi1 = np.maximum(small_params.d1_sharp.T @ w
                          - np.repeat(small_params.enc_thresholds[0], 3)[:, None], 0.0)
        psi2 = np.maximum(explicit_kron_transpose(small_params.dicts[0]) @ psi1
                          - np.repeat(small_params.enc_thresholds[1], 3)[:, None], 0.0)
        assert np.max(np.abs(codes[0].flat - psi1)) < 1e-12
        assert np.max(np.abs(codes[1].flat - psi2)) < 1e-12

    def test_codes_nonnegative(self, small_params, rng):
        for code in encode(rng.standard_normal((5, 2)), small_params):
            assert np.all(code.flat >= 0.0)

    def test_wrong_frame_shape(self, small_params):
        with pytest.raises(ShapeError):
            encode(np.zeros((4, 2)), small_params)


class TestReadout:
    """Test code and camera recovery"""

    def test_factorized_input(self, rng):
        """Ψₙ = ψₙ ⊗ M with the inverse readout recovers (ψₙ, M)"""
        camera = random_semiorthonormal_3x2(rng)
        psi = np.array([0.7, 1.0, 0.4])
        idx = int(np.argmax(np.abs(camera)))
        inverse = np.zeros((3, 18))
        for j in range(3):
            inverse[j, 6 * j + idx] = 1.0 / camera.flat[idx]
        params = replace(_single_layer(rng), code_readout=inverse, cam_coeffs=[0.0, 1.0, 0.0])
        psi_cap = BlockMatrix.from_blocks(psi[:, None, None] * camera)
        psi_n, m = readout(psi_cap, params)
        np.testing.assert_allclose(psi_n, psi, atol=1e-12)
        np.testing.assert_allclose(m, camera, atol=1e-12)

    def test_zero_code(self, rng):
        psi_n, m = readout(BlockMatrix.zeros(3), _single_layer(rng))
        np.testing.assert_array_equal(psi_n, np.zeros(3))
        np.testing.assert_array_equal(m, np.zeros((3, 2)))

    def test_linearity(self, rng):
        params = _single_layer(rng)
        x = BlockMatrix(rng.standard_normal((9, 2)))
        y = BlockMatrix(rng.standard_normal((9, 2)))
        a, b = 1.7, -0.4
        combined = readout(BlockMatrix(a * x.flat + b * y.flat), params)
        rx, ry = readout(x, params), readout(y, params)
        for out, px, py in zip(combined, rx, ry):
            assert np.max(np.abs(out - (a * px + b * py))) < 1e-12

    def test_block_count_mismatch(self, rng):
        with pytest.raises(ShapeError):
            readout(BlockMatrix.zeros(2), _single_layer(rng))


class TestDecode:
    """Test the decoder"""

    def test_zero_code(self, small_params):
        """ψₙ = 0 with zero decoder thresholds gives s = 0"""
        params = replace(small_params, dec_thresholds=(np.zeros(8),))
        s, shape = decode(np.zeros(4), params)
        np.testing.assert_array_equal(s, np.zeros(15))
        assert shape.shape == (5, 3)

    def test_single_layer(self, rng):
        """n = 1: S is the reshape of D₁ψ₁"""
        params = _single_layer(rng)
        psi = rng.standard_normal(3)
        _, shape = decode(psi, params)
        np.testing.assert_allclose(shape, (params.d1() @ psi).reshape(4, 3), atol=1e-12)

    def test_vector_and_matrix_paths_agree(self, small_params, rng):
        psi_n = np.abs(rng.standard_normal(4))
        psi_1 = np.maximum(small_params.dicts[0] @ psi_n - small_params.dec_thresholds[0], 0.0)
        s, shape = decode(psi_n, small_params)
        assert np.max(np.abs(s - small_params.d1() @ psi_1)) < 1e-12
        np.testing.assert_array_equal(s, shape.reshape(-1))

    def test_code_length_mismatch(self, small_params):
        with pytest.raises(ShapeError):
            decode(np.zeros(3), small_params)


class TestForward:
    """Test the full per-frame pass"""

    def test_loss_nonnegative_and_consistent(self, small_params, rng):
        for _ in range(20):
            w = rng.standard_normal((5, 2))
            result = forward(w, small_params)
            if result.degenerate:
                continue
            assert result.loss >= 0.0
            expected = reprojection_error(w - w.mean(axis=0), result.shape, result.camera)
            assert result.loss == pytest.approx(expected, rel=1e-12)

    def test_positive_homogeneity_without_thresholds(self, small_params, rng):
        """With zero thresholds every code, the code vector, the shape and the loss scale by γ"""
        params = replace(
            small_params,
            enc_thresholds=tuple(np.zeros_like(b) for b in small_params.enc_thresholds),
            dec_thresholds=tuple(np.zeros_like(b) for b in small_params.dec_thresholds),
        )
        gamma = 2.5
        for _ in range(10):
            w = rng.standard_normal((5, 2))
            base, scaled = forward(w, params), forward(gamma * w, params)
            for a, b in zip(base.codes, scaled.codes):
                np.testing.assert_allclose(b.flat, gamma * a.flat, rtol=1e-12, atol=1e-12)
            np.testing.assert_allclose(scaled.psi_n, gamma * base.psi_n, rtol=1e-12, atol=1e-12)
            np.testing.assert_allclose(scaled.shape, gamma * base.shape, rtol=1e-12, atol=1e-12)
            if base.degenerate or scaled.degenerate:
                continue
            np.testing.assert_allclose(scaled.camera, base.camera, rtol=0, atol=1e-10)
            assert scaled.loss == pytest.approx(gamma * base.loss, rel=1e-9)

    def test_centers_input(self, small_params, rng):
        w = rng.standard_normal((5, 2))
        shifted = forward(w + np.array([3.0, -2.0]), small_params)
        plain = forward(w, small_params)
        if plain.degenerate:
            pytest.skip("degenerate camera for this frame")
        np.testing.assert_allclose(shifted.shape, plain.shape, atol=1e-10)
        assert shifted.loss == pytest.approx(plain.loss, rel=1e-9)

    def test_degenerate_camera_flagged(self, small_params, rng):
        """Zero camera coefficients give a flagged result without loss"""
        params = replace(small_params, cam_coeffs=np.zeros(4))
        result = forward(rng.standard_normal((5, 2)), params, with_grad=True)
        assert result.degenerate
        assert result.loss is None
        assert result.camera is None
        assert result.grads is None
        shape, camera = reconstruct(rng.standard_normal((5, 2)), params)
        assert camera is None
        assert shape.shape == (5, 3)

    def test_grads_cover_every_tensor(self, small_params, rng):
        result = forward(rng.standard_normal((5, 2)), small_params, with_grad=True)
        tensors = small_params.to_dict()
        assert set(result.grads) == set(tensors)
        for name, g in result.grads.items():
            assert g.shape == tensors[name].shape

    def test_camera_contract(self, small_params, rng):
        """Every non-degenerate camera is semi-orthonormal"""
        checked = 0
        for _ in range(200):
            result = forward(rng.standard_normal((5, 2)), small_params)
            if result.degenerate:
                continue
            checked += 1
            assert np.max(np.abs(result.camera.T @ result.camera - np.eye(2))) < 1e-10
        assert checked > 0

    def test_gradient_matches_finite_differences(self, small_params, loss_grad_error,
                                                 conditioned_frames):
        """p=5, n=2, k=(8,4) on a few kink-free frames"""
        frames = list(islice(conditioned_frames(small_params, range(100), p=5), 3))
        assert frames
        for seed, w in frames:
            assert loss_grad_error(small_params, w) < 1e-4, f"seed {seed}"

    def test_wrong_frame_shape(self, small_params):
        with pytest.raises(ShapeError):
            forward(np.zeros((5, 3)), small_params)


class TestForwardBatch:
    """Test multi-frame passes"""

    def test_threads_match_sequential(self, small_params, rng):
        frames = [rng.standard_normal((5, 2)) for _ in range(16)]
        sequential = forward_batch(frames, small_params, with_grad=True)
        with frame_executor(4) as executor:
            threaded = forward_batch(frames, small_params, with_grad=True, executor=executor)
        for a, b in zip(sequential, threaded):
            np.testing.assert_array_equal(a.shape, b.shape)
            assert a.loss == b.loss
            if a.grads is not None:
                for name in a.grads:
                    np.testing.assert_array_equal(a.grads[name], b.grads[name])

    def test_single_thread_executor_is_none(self):
        with frame_executor(1) as executor:
            assert executor is None
