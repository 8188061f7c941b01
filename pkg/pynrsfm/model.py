"""
Block-Sparse Auto-Encoder for Non-Rigid Structure from Motion

One frame of 2D landmarks W (p×2) runs through:
- an encoder of single-iteration relaxed block ISTA layers producing
  nonnegative block codes Ψ₁…Ψₙ,
- a readout giving the top code ψₙ (dense map) and a camera estimate
  (linear combination of the blocks of Ψₙ), orthonormalized by SVD,
- a decoder that reuses the same dictionaries to produce the 3D shape S (p×3),
- the reprojection loss ‖W − S·M̃‖_F.

Dictionaries are shared between encoder and decoder: there is exactly one
copy of each in ``ModelParams``.
"""

import contextlib
import logging
from concurrent.futures import Executor, ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .config import ModelDims
from .exceptions import DegenerateCameraError, ShapeError
from .linalg import BlockMatrix, Mat, as_mat

logger = logging.getLogger(__name__)


def d1_from_sharp(d1_sharp: Mat) -> Mat:
    """p×3k reshaped dictionary → D₁ ∈ R^{3p×k} (column j is a vectorized p×3 shape)"""
    p, cols = d1_sharp.shape
    k = cols // 3
    return np.ascontiguousarray(d1_sharp.reshape(p, k, 3).transpose(0, 2, 1).reshape(3 * p, k))


def sharp_from_d1(d1: Mat) -> Mat:
    """Inverse of :func:`d1_from_sharp`"""
    rows, k = d1.shape
    p = rows // 3
    return np.ascontiguousarray(d1.reshape(p, 3, k).transpose(0, 2, 1).reshape(p, 3 * k))


def center_frame(w: Mat) -> Mat:
    """Subtract the column means so the frame has no 2D translation"""
    return w - w.mean(axis=0, keepdims=True)


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ModelParams:
    """
    All learned parameters.

    Attributes:
        d1_sharp: p×3k₁ reshape of the first dictionary D₁ ∈ R^{3p×k₁}
        dicts: D₂…Dₙ with Dᵢ ∈ R^{kᵢ₋₁×kᵢ}
        enc_thresholds: b₁…bₙ, one nonnegative threshold per block of Ψᵢ
        dec_thresholds: b₂′…bₙ′, one nonnegative threshold per entry of ψᵢ₋₁
        code_readout: kₙ × 6kₙ map from flattened Ψₙ to ψₙ (no bias)
        cam_coeffs: kₙ coefficients combining the blocks of Ψₙ into a camera
    """

    d1_sharp: np.ndarray
    dicts: Tuple[np.ndarray, ...]
    enc_thresholds: Tuple[np.ndarray, ...]
    dec_thresholds: Tuple[np.ndarray, ...]
    code_readout: np.ndarray
    cam_coeffs: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "d1_sharp", _frozen(self.d1_sharp))
        object.__setattr__(self, "dicts", tuple(_frozen(d) for d in self.dicts))
        object.__setattr__(self, "enc_thresholds",
                           tuple(_frozen(np.reshape(b, -1)) for b in self.enc_thresholds))
        object.__setattr__(self, "dec_thresholds",
                           tuple(_frozen(np.reshape(b, -1)) for b in self.dec_thresholds))
        object.__setattr__(self, "code_readout", _frozen(self.code_readout))
        object.__setattr__(self, "cam_coeffs", _frozen(np.reshape(self.cam_coeffs, -1)))
        self.validate()

    @property
    def dims(self) -> ModelDims:
        k1 = self.d1_sharp.shape[1] // 3
        return ModelDims(p=self.d1_sharp.shape[0], layers=(k1,) + tuple(d.shape[1] for d in self.dicts))

    def validate(self) -> None:
        """
        Check that every tensor agrees with the layer widths.

        Raises:
            ShapeError: On any inconsistent tensor
        """
        if self.d1_sharp.ndim != 2 or self.d1_sharp.shape[1] % 3 != 0:
            raise ShapeError("ModelParams.d1_sharp", expected="(p, 3k1)", actual=self.d1_sharp.shape)
        widths = [self.d1_sharp.shape[1] // 3]
        for i, d in enumerate(self.dicts, start=2):
            if d.ndim != 2 or d.shape[0] != widths[-1]:
                raise ShapeError(f"ModelParams.dict_{i}", expected=f"({widths[-1]}, k{i})",
                                 actual=d.shape)
            widths.append(d.shape[1])

        if len(self.enc_thresholds) != len(widths):
            raise ShapeError("ModelParams.enc_thresholds", expected=len(widths),
                             actual=len(self.enc_thresholds))
        for i, (b, k) in enumerate(zip(self.enc_thresholds, widths), start=1):
            if b.size != k:
                raise ShapeError(f"ModelParams.enc_b_{i}", expected=k, actual=b.size)

        if len(self.dec_thresholds) != len(widths) - 1:
            raise ShapeError("ModelParams.dec_thresholds", expected=len(widths) - 1,
                             actual=len(self.dec_thresholds))
        for i, b in enumerate(self.dec_thresholds, start=2):
            if b.size != widths[i - 2]:
                raise ShapeError(f"ModelParams.dec_b_{i}", expected=widths[i - 2], actual=b.size)

        kn = widths[-1]
        if self.code_readout.shape != (kn, 6 * kn):
            raise ShapeError("ModelParams.code_readout", expected=(kn, 6 * kn),
                             actual=self.code_readout.shape)
        if self.cam_coeffs.size != kn:
            raise ShapeError("ModelParams.cam_coeffs", expected=kn, actual=self.cam_coeffs.size)

    def names(self) -> List[str]:
        return list(self.to_dict())

    def to_dict(self) -> Dict[str, np.ndarray]:
        """Flat name → tensor mapping (the optimizer and checkpoint view)"""
        n = len(self.enc_thresholds)
        out: Dict[str, np.ndarray] = {"d1_sharp": self.d1_sharp}
        for i, d in enumerate(self.dicts, start=2):
            out[f"dict_{i}"] = d
        for i, b in enumerate(self.enc_thresholds, start=1):
            out[f"enc_b_{i}"] = b
        for i in range(2, n + 1):
            out[f"dec_b_{i}"] = self.dec_thresholds[i - 2]
        out["code_readout"] = self.code_readout
        out["cam_coeffs"] = self.cam_coeffs
        return out

    @staticmethod
    def from_dict(tensors: Dict[str, np.ndarray]) -> "ModelParams":
        n = sum(1 for name in tensors if name.startswith("enc_b_"))
        return ModelParams(
            d1_sharp=tensors["d1_sharp"],
            dicts=tuple(tensors[f"dict_{i}"] for i in range(2, n + 1)),
            enc_thresholds=tuple(tensors[f"enc_b_{i}"] for i in range(1, n + 1)),
            dec_thresholds=tuple(tensors[f"dec_b_{i}"] for i in range(2, n + 1)),
            code_readout=tensors["code_readout"],
            cam_coeffs=tensors["cam_coeffs"],
        )

    def with_dict(self, index: int, value: np.ndarray) -> "ModelParams":
        """Copy with dictionary D_index replaced (index ≥ 2; use ``replace`` for D₁♯)"""
        dicts = list(self.dicts)
        dicts[index - 2] = value
        return replace(self, dicts=tuple(dicts))

    def clamp_thresholds(self) -> "ModelParams":
        """Project every threshold onto the nonnegative orthant"""
        return replace(
            self,
            enc_thresholds=tuple(np.maximum(b, 0.0) for b in self.enc_thresholds),
            dec_thresholds=tuple(np.maximum(b, 0.0) for b in self.dec_thresholds),
        )

    def d1(self) -> Mat:
        return d1_from_sharp(self.d1_sharp)

    def dictionaries(self) -> List[Mat]:
        """D₁ (3p×k₁), D₂, …, Dₙ"""
        return [self.d1()] + list(self.dicts)

    def final_dictionary(self) -> Mat:
        """Dₙ, whose coherence is tracked as the model-quality diagnostic"""
        return self.dicts[-1] if self.dicts else self.d1()

    def composed_dictionary(self) -> Mat:
        """D⁽ⁿ⁾ = D₁D₂…Dₙ ∈ R^{3p×kₙ}"""
        out = self.d1()
        for d in self.dicts:
            out = out @ d
        return out

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.to_dict().values())


@dataclass
class ForwardResult:
    """
    Everything one forward pass produces for a frame.

    ``camera`` and ``loss`` are None when the raw camera was too close to
    rank deficient to orthonormalize (``degenerate`` is then True).
    """

    codes: List[BlockMatrix]
    psi_n: np.ndarray
    camera_raw: Mat
    camera: Optional[Mat]
    shape: Mat
    loss: Optional[float]
    degenerate: bool = False
    grads: Optional[Dict[str, np.ndarray]] = field(default=None, repr=False)

    @property
    def s(self) -> np.ndarray:
        """Vectorized shape (x₁, y₁, z₁, x₂, …)"""
        return self.shape.reshape(-1)


# Graph construction on a tape, shared by the numpy entry points and training.

def _param_vars(tape: ad.Tape, params: ModelParams) -> Dict[str, ad.Var]:
    return {name: tape.variable(value) for name, value in params.to_dict().items()}


def _encode_vars(w: ad.Var, pv: Dict[str, ad.Var], n: int) -> List[ad.Var]:
    codes = [ad.relu_bias(ad.matmul(ad.transpose(pv["d1_sharp"]), w), pv["enc_b_1"])]
    for i in range(2, n + 1):
        codes.append(ad.relu_bias(ad.kron_apply(pv[f"dict_{i}"], codes[-1]), pv[f"enc_b_{i}"]))
    return codes


def _readout_vars(psi_cap_n: ad.Var, pv: Dict[str, ad.Var]) -> Tuple[ad.Var, ad.Var]:
    flat = ad.reshape(psi_cap_n, (psi_cap_n.shape[0] * 2, 1))
    psi_n = ad.matmul(pv["code_readout"], flat)
    camera = ad.block_combine(psi_cap_n, pv["cam_coeffs"])
    return psi_n, camera


def _decode_vars(psi_n: ad.Var, pv: Dict[str, ad.Var], n: int) -> ad.Var:
    psi = psi_n
    for i in range(n, 1, -1):
        psi = ad.relu_bias(ad.matmul(pv[f"dict_{i}"], psi), pv[f"dec_b_{i}"])
    # S = D₁♯(ψ₁ ⊗ I₃), computed as Sᵀ = Σⱼ ψ₁ⱼ · (block j of D₁♯ᵀ)
    return ad.transpose(ad.block_combine(ad.transpose(pv["d1_sharp"]), psi))


def _check_frame(w: Mat, params: ModelParams) -> Mat:
    w = as_mat(w, name="landmark frame")
    p = params.d1_sharp.shape[0]
    if w.shape != (p, 2):
        raise ShapeError("model input", expected=(p, 2), actual=w.shape)
    return w


def encode(w: Mat, params: ModelParams) -> List[BlockMatrix]:
    """
    Encoder codes Ψ₁…Ψₙ for one frame (no centering is applied here).

    Raises:
        ShapeError: If w is not p×2
    """
    w = _check_frame(w, params)
    tape = ad.Tape()
    pv = _param_vars(tape, params)
    codes = _encode_vars(tape.constant(w), pv, len(params.enc_thresholds))
    return [BlockMatrix(c.value) for c in codes]


def readout(psi_cap_n: BlockMatrix, params: ModelParams) -> Tuple[np.ndarray, Mat]:
    """
    Top code ψₙ = R·vec(Ψₙ) and raw camera M = Σⱼ cⱼ·(block j of Ψₙ).
    """
    kn = params.cam_coeffs.size
    if psi_cap_n.k != kn:
        raise ShapeError("readout", expected=f"{kn} blocks", actual=psi_cap_n.k)
    tape = ad.Tape()
    pv = _param_vars(tape, params)
    psi_n, camera = _readout_vars(tape.constant(psi_cap_n.flat), pv)
    return psi_n.value.reshape(-1), camera.value


def decode(psi_n: np.ndarray, params: ModelParams) -> Tuple[np.ndarray, Mat]:
    """
    Decoder: ψᵢ₋₁ = relu(Dᵢψᵢ − bᵢ′) down to ψ₁, then S = D₁♯(ψ₁ ⊗ I₃).

    Returns:
        (s as a 3p vector, S as a p×3 matrix)
    """
    psi_n = np.asarray(psi_n, dtype=np.float64).reshape(-1)
    kn = params.cam_coeffs.size
    if psi_n.size != kn:
        raise ShapeError("decode", expected=kn, actual=psi_n.size)
    tape = ad.Tape()
    pv = _param_vars(tape, params)
    shape = _decode_vars(tape.constant(psi_n), pv, len(params.enc_thresholds)).value
    return shape.reshape(-1), shape


def forward(w: Mat, params: ModelParams, with_grad: bool = False) -> ForwardResult:
    """
    Full pass for one frame: center → encode → readout → orthonormalize →
    decode → loss.

    Args:
        w: p×2 landmarks
        params: Model parameters
        with_grad: Also back-propagate the loss into ``result.grads``

    Returns:
        ForwardResult; degenerate cameras are flagged instead of raised
    """
    w = center_frame(_check_frame(w, params))
    n = len(params.enc_thresholds)

    tape = ad.Tape()
    pv = _param_vars(tape, params)
    wv = tape.constant(w)
    codes = _encode_vars(wv, pv, n)
    psi_n, camera_raw = _readout_vars(codes[-1], pv)
    shape = _decode_vars(psi_n, pv, n)

    result = ForwardResult(
        codes=[BlockMatrix(c.value) for c in codes],
        psi_n=psi_n.value.reshape(-1).copy(),
        camera_raw=camera_raw.value.copy(),
        camera=None,
        shape=shape.value.copy(),
        loss=None,
    )

    try:
        camera = ad.orthonormalize_3x2(camera_raw)
    except DegenerateCameraError as e:
        logger.debug(f"Degenerate camera in forward pass: {e}")
        result.degenerate = True
        return result

    loss = ad.frobenius_norm(ad.sub(wv, ad.matmul(shape, camera)))
    result.camera = camera.value.copy()
    result.loss = float(loss.value[0, 0])

    if with_grad:
        names = list(pv)
        grads = ad.grad(tape, loss, [pv[name] for name in names])
        tensors = params.to_dict()
        result.grads = {name: g.reshape(tensors[name].shape) for name, g in zip(names, grads)}
    return result


def reconstruct(w: Mat, params: ModelParams) -> Tuple[Mat, Optional[Mat]]:
    """Shape and orthonormal camera for one frame (camera None if degenerate)"""
    result = forward(w, params)
    return result.shape, result.camera


def frame_executor(threads: int):
    """Worker pool for per-frame passes, or a no-op context for one thread"""
    if threads <= 1:
        return contextlib.nullcontext(None)
    return ThreadPoolExecutor(max_workers=threads, thread_name_prefix="pynrsfm-frame")


def forward_batch(
    frames: Sequence[Mat],
    params: ModelParams,
    with_grad: bool = False,
    executor: Optional[Executor] = None
) -> List[ForwardResult]:
    """
    Forward (and optionally backward) over many frames, results in input order.

    Each frame records its own tape, so frames may run on an executor
    concurrently against the shared read-only parameters.
    """
    if executor is None:
        return [forward(w, params, with_grad) for w in frames]
    return list(executor.map(lambda w: forward(w, params, with_grad), frames))
