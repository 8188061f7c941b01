"""
Pytest configuration and shared fixtures for pynrsfm tests
"""

from typing import Callable

import numpy as np
import pytest

from pynrsfm.config import ModelDims
from pynrsfm.linalg import explicit_kron_transpose
from pynrsfm.model import ModelParams, forward
from pynrsfm.synthetic import planted_model, synthesize_projections
from pynrsfm.training import init_params


def numeric_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of one array"""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + h
        fp = f(x.copy())
        x[idx] = orig - h
        fm = f(x.copy())
        x[idx] = orig
        grad[idx] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Max absolute difference relative to the larger of the two magnitudes"""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0:
        return 0.0
    scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(b))), 1e-8)
    return float(np.max(np.abs(a - b)) / scale)


def relu_margin(params: ModelParams, w: np.ndarray) -> float:
    """Smallest distance of any ReLU pre-activation from its kink for one frame"""
    w = w - w.mean(axis=0)
    pre = [params.d1_sharp.T @ w - np.repeat(params.enc_thresholds[0], 3)[:, None]]
    psi = np.maximum(pre[-1], 0.0)
    for i, d in enumerate(params.dicts, start=1):
        pre.append(explicit_kron_transpose(d) @ psi
                   - np.repeat(params.enc_thresholds[i], 3)[:, None])
        psi = np.maximum(pre[-1], 0.0)
    code = params.code_readout @ psi.reshape(-1)
    for d, b in zip(reversed(params.dicts), reversed(params.dec_thresholds)):
        pre.append(d @ code - b)
        code = np.maximum(pre[-1], 0.0)
    return min(float(np.min(np.abs(z))) for z in pre)


def loss_gradient_error(params: ModelParams, w: np.ndarray, h: float = 1e-5) -> float:
    """
    Max difference between tape and finite-difference gradients of the frame
    loss over every parameter tensor, relative to the largest gradient entry.
    """
    result = forward(w, params, with_grad=True)
    tensors = params.to_dict()
    diff, scale = 0.0, 1e-8
    for name, value in tensors.items():
        def f(x, name=name):
            trial = dict(tensors)
            trial[name] = x
            return forward(w, ModelParams.from_dict(trial)).loss

        numeric = numeric_gradient(f, value, h)
        analytic = result.grads[name]
        diff = max(diff, float(np.max(np.abs(numeric - analytic))))
        scale = max(scale, float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))))
    return diff / scale


def well_conditioned_frames(params: ModelParams, seeds, p: int, margin: float = 1e-3):
    """
    Random frames, one per seed, that keep every ReLU at least ``margin``
    from its kink and give a camera with σ_min ≥ 1e-2.
    """
    for seed in seeds:
        w = np.random.default_rng(seed).standard_normal((p, 2))
        result = forward(w, params)
        if result.degenerate or np.linalg.svd(result.camera_raw, compute_uv=False)[1] < 1e-2:
            continue
        if relu_margin(params, w) < margin:
            continue
        yield seed, w


@pytest.fixture
def fd_grad():
    """Finite-difference gradient oracle"""
    return numeric_gradient


@pytest.fixture
def rel_error():
    return relative_error


@pytest.fixture
def loss_grad_error():
    """Full-loss gradient check against finite differences"""
    return loss_gradient_error


@pytest.fixture
def conditioned_frames():
    """Generator of kink-free, well-conditioned random frames"""
    return well_conditioned_frames


@pytest.fixture
def rng():
    """Provide a seeded generator"""
    return np.random.default_rng(1234)


@pytest.fixture
def small_dims():
    """Two-layer model small enough for finite differences"""
    return ModelDims(p=5, layers=(8, 4))


@pytest.fixture
def small_params(small_dims):
    return init_params(small_dims, seed=3)


@pytest.fixture
def planted():
    """A small planted model: rest pose plus one deformation entry per frame"""
    return planted_model(ModelDims(p=6, layers=(6, 3)), frames=12, active_blocks=2, seed=5)


@pytest.fixture
def planted_dataset(planted):
    """Projections of the planted shapes with random cameras"""
    return synthesize_projections(planted.shapes, seed=7)


@pytest.fixture
def landmark_text():
    """Two frames, p=4, no ground truth"""
    return (
        "# two frames\n"
        "frame a p=4\n"
        "0.0 1.0\n"
        "1.0 0.0\n"
        "2.0 1.0\n"
        "1.0 2.0\n"
        "\n"
        "frame b p=4\n"
        "0.5 1.0\n"
        "1.5 0.0\n"
        "2.5 1.0\n"
        "1.5 2.0\n"
    )
