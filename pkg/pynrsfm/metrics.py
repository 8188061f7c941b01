"""
Reconstruction Metrics and Dictionary Diagnostics

3D metrics compare reconstructions with ground truth after an explicit
alignment policy:
- both sets expressed in their own camera coordinates when the ground-truth
  camera is known (columns image x, image y, depth)
- per-frame centering of both sets
- per-frame depth-reflection resolution (S or S with the third column negated)
- one global least-squares scale per dataset

No rotation alignment is performed beyond the reflection. The learned
canonical frame is only defined up to a global rotation, so canonical shapes
are compared directly only for frames without a ground-truth camera.
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import ContractError, SchemaError, ShapeError
from .landmarks import LandmarkDataset, LandmarkFrame
from .linalg import Mat
from .model import ForwardResult, ModelParams, forward_batch, frame_executor
from .sparse_coding import mutual_coherence

logger = logging.getLogger(__name__)

_REFLECT_Z = np.array([1.0, 1.0, -1.0])


@dataclass(frozen=True)
class AlignmentPolicy:
    """
    Which ambiguities to remove before comparing shapes.

    Attributes:
        center: Subtract per-frame centroids from both sets
        resolve_reflection: Per frame, keep the depth-reflected reconstruction
            when it agrees better with the ground truth
        rescale: Apply one global least-squares scale to all reconstructions
    """

    center: bool = True
    resolve_reflection: bool = True
    rescale: bool = True


RAW = AlignmentPolicy(center=False, resolve_reflection=False, rescale=False)


def _check_pairs(recon: Sequence[Mat], gt: Sequence[Mat]) -> None:
    if len(recon) != len(gt):
        raise ShapeError("shape metrics", expected=f"{len(gt)} reconstructions",
                         actual=len(recon))
    for i, (r, g) in enumerate(zip(recon, gt)):
        if np.shape(r) != np.shape(g) or np.ndim(g) != 2 or np.shape(g)[1] != 3:
            raise ShapeError(f"shape metrics (frame {i})", expected=np.shape(g),
                             actual=np.shape(r))


def align_shapes(
    recon: Sequence[Mat],
    gt: Sequence[Mat],
    policy: AlignmentPolicy = AlignmentPolicy()
) -> Tuple[List[Mat], List[Mat]]:
    """
    Apply the alignment policy.

    Returns:
        (aligned reconstructions, centered ground truth)

    Raises:
        ShapeError: On length or shape mismatch
        ContractError: If a ground-truth frame has zero norm
    """
    _check_pairs(recon, gt)
    rs = [np.asarray(r, dtype=np.float64) for r in recon]
    gs = [np.asarray(g, dtype=np.float64) for g in gt]
    if policy.center:
        rs = [r - r.mean(axis=0) for r in rs]
        gs = [g - g.mean(axis=0) for g in gs]
    for i, g in enumerate(gs):
        if not np.any(g):
            raise ContractError(f"ground-truth frame {i} has zero norm",
                                operation="shape_error_ratio")

    if policy.resolve_reflection:
        aligned = []
        for r, g in zip(rs, gs):
            flipped = r * _REFLECT_Z
            aligned.append(flipped if np.sum(flipped * g) > np.sum(r * g) else r)
        rs = aligned

    if policy.rescale:
        num = sum(float(np.sum(r * g)) for r, g in zip(rs, gs))
        den = sum(float(np.sum(r * r)) for r in rs)
        scale = max(num / den, 0.0) if den > 0 else 1.0
        rs = [scale * r for r in rs]
    return rs, gs


def shape_error_ratio(
    recon: Sequence[Mat],
    gt: Sequence[Mat],
    policy: AlignmentPolicy = AlignmentPolicy()
) -> float:
    """Mean over frames of ‖S − Ŝ‖_F / ‖Ŝ‖_F after alignment"""
    if len(gt) == 0:
        raise ContractError("shape_error_ratio needs at least one frame",
                            operation="shape_error_ratio")
    rs, gs = align_shapes(recon, gt, policy)
    ratios = [np.linalg.norm(r - g) / np.linalg.norm(g) for r, g in zip(rs, gs)]
    return float(np.mean(ratios))


def mean_point_distance(
    recon: Sequence[Mat],
    gt: Sequence[Mat],
    policy: AlignmentPolicy = AlignmentPolicy()
) -> float:
    """Mean over frames of the mean per-landmark Euclidean distance (ground-truth units)"""
    if len(gt) == 0:
        raise ContractError("mean_point_distance needs at least one frame",
                            operation="mean_point_distance")
    rs, gs = align_shapes(recon, gt, policy)
    return float(np.mean([np.mean(np.linalg.norm(r - g, axis=1)) for r, g in zip(rs, gs)]))


def reprojection_error(w: Mat, shape: Mat, camera: Mat) -> float:
    """‖W − S·M‖_F"""
    w = np.asarray(w, dtype=np.float64)
    predicted = np.asarray(shape, dtype=np.float64) @ np.asarray(camera, dtype=np.float64)
    if predicted.shape != w.shape:
        raise ShapeError("reprojection_error", expected=w.shape, actual=predicted.shape)
    return float(np.linalg.norm(w - predicted))


def reprojection_error_ratio(w: Mat, shape: Mat, camera: Mat) -> float:
    """‖W − S·M‖_F / ‖W‖_F (0 for an all-zero frame reprojected exactly)"""
    err = reprojection_error(w, shape, camera)
    norm = float(np.linalg.norm(w))
    if norm == 0.0:
        return 0.0 if err == 0.0 else float("inf")
    return err / norm


def camera_frame(shape: Mat, camera: Mat) -> Mat:
    """
    A shape in the coordinates of its camera.

    The camera's two columns give image x and y; their cross product gives
    depth. For an exact factorization W = S·M the first two columns equal W.
    """
    m = np.asarray(camera, dtype=np.float64)
    if m.shape != (3, 2):
        raise ShapeError("camera_frame", expected=(3, 2), actual=m.shape)
    rotation = np.column_stack([m, np.cross(m[:, 0], m[:, 1])])
    return np.asarray(shape, dtype=np.float64) @ rotation


def comparable_shapes(
    frames: Sequence[LandmarkFrame],
    results: Sequence[ForwardResult]
) -> Tuple[List[Mat], List[Mat]]:
    """
    Reconstruction/ground-truth pairs ready for the 3D metrics.

    Frames without ground truth and degenerate-camera results are skipped.
    Pairs are in camera coordinates when the frame carries its camera,
    canonical otherwise.
    """
    recon, gt = [], []
    for frame, r in zip(frames, results):
        if r.degenerate or frame.gt_shape is None:
            continue
        if frame.gt_camera is not None:
            recon.append(camera_frame(r.shape, r.camera))
            gt.append(camera_frame(frame.gt_shape, frame.gt_camera))
        else:
            recon.append(r.shape)
            gt.append(frame.gt_shape)
    return recon, gt


def safe_coherence(dictionary: Mat) -> float:
    """Mutual coherence, or NaN (with a warning) when a column is zero"""
    try:
        return mutual_coherence(dictionary)
    except ContractError as e:
        logger.warning(f"Coherence undefined: {e}")
        return float("nan")


@dataclass
class EvalReport:
    """
    Aggregated evaluation of a parameter set on a dataset.

    3D fields are None without ground truth; reprojection fields are None
    when every frame had a degenerate camera.
    """

    shape_error_ratio: Optional[float]
    mean_point_distance: Optional[float]
    reprojection_error: Optional[float]
    reprojection_error_ratio: Optional[float]
    coherence_final_dict: float
    frames_evaluated: int
    frames_degenerate: int

    def to_dict(self) -> Dict[str, Union[float, int, None]]:
        return asdict(self)

    def to_text(self) -> str:
        """Flat ``key = value`` lines; absent metrics are omitted"""
        lines = []
        for key, value in self.to_dict().items():
            if value is None:
                continue
            lines.append(f"{key} = {value!r}" if isinstance(value, float) else f"{key} = {value}")
        return "\n".join(lines) + "\n"


def _params_of(source) -> ModelParams:
    return source if isinstance(source, ModelParams) else source.params


def reconstruct_dataset(
    source,
    dataset: LandmarkDataset,
    threads: int = 1
) -> List[ForwardResult]:
    """
    Forward every frame of a dataset (frame order preserved).

    Args:
        source: ModelParams or a Checkpoint
        dataset: Frames to reconstruct
        threads: Worker threads for the per-frame passes

    Raises:
        SchemaError: If the dataset landmark count differs from the model's
    """
    params = _params_of(source)
    if len(dataset) == 0:
        return []
    p = params.d1_sharp.shape[0]
    if dataset.p != p:
        raise SchemaError(f"dataset has p={dataset.p} landmarks but the model expects p={p}")
    with frame_executor(threads) as executor:
        return forward_batch(dataset.measurements(), params, executor=executor)


def evaluate(
    source,
    dataset: LandmarkDataset,
    threads: int = 1,
    policy: AlignmentPolicy = AlignmentPolicy()
) -> EvalReport:
    """
    Run the model over a dataset and aggregate every metric.

    Degenerate-camera frames are counted and left out of all averages. The
    coherence field is NaN when Dₙ has a zero column.
    """
    params = _params_of(source)
    results = reconstruct_dataset(params, dataset, threads)
    coherence = safe_coherence(params.final_dictionary())

    kept = [(frame, r) for frame, r in zip(dataset, results) if not r.degenerate]
    degenerate = len(results) - len(kept)
    if degenerate:
        logger.warning(f"{degenerate} of {len(results)} frames had a degenerate camera")

    reproj = reproj_ratio = None
    if kept:
        reproj = float(np.mean([reprojection_error(f.w - f.w.mean(axis=0), r.shape, r.camera)
                                for f, r in kept]))
        reproj_ratio = float(np.mean([
            reprojection_error_ratio(f.w - f.w.mean(axis=0), r.shape, r.camera) for f, r in kept
        ]))

    ser = mpd = None
    recon, gt = comparable_shapes(dataset, results)
    if gt:
        ser = shape_error_ratio(recon, gt, policy)
        mpd = mean_point_distance(recon, gt, policy)
    elif kept:
        logger.info("Dataset has no ground truth; 3D metrics omitted")

    return EvalReport(
        shape_error_ratio=ser,
        mean_point_distance=mpd,
        reprojection_error=reproj,
        reprojection_error_ratio=reproj_ratio,
        coherence_final_dict=coherence,
        frames_evaluated=len(kept),
        frames_degenerate=degenerate,
    )


@dataclass
class CoherenceReport:
    """Mutual coherence of Dₙ, of every Dᵢ, and of the composed D₁D₂…Dₙ"""

    final: float
    layers: List[float] = field(default_factory=list)
    composed: float = 0.0
    correlation: Optional[float] = None

    def to_dict(self) -> Dict:
        data: Dict = {"coherence_final_dict": self.final, "coherence_composed": self.composed}
        for i, value in enumerate(self.layers, start=1):
            data[f"coherence_layer_{i}"] = value
        if self.correlation is not None:
            data["coherence_error_correlation"] = self.correlation
        return data

    def to_text(self) -> str:
        return "".join(f"{key} = {value!r}\n" for key, value in self.to_dict().items())


def coherence_report(source) -> CoherenceReport:
    """
    Coherence diagnostics of a parameter set, plus the coherence/shape-error
    correlation when the source is a checkpoint carrying both histories.
    """
    params = _params_of(source)
    layers = [safe_coherence(d) for d in params.dictionaries()]
    correlation = None
    if hasattr(source, "coherence_history"):
        correlation = coherence_error_correlation(source.coherence_history,
                                                  source.shape_error_history)
    return CoherenceReport(
        final=safe_coherence(params.final_dictionary()),
        layers=layers,
        composed=safe_coherence(params.composed_dictionary()),
        correlation=correlation,
    )


def coherence_error_correlation(
    coherence_history: Sequence[Tuple[int, float]],
    shape_error_history: Sequence[Tuple[int, float]]
) -> Optional[float]:
    """
    Pearson correlation between coherence and shape error at matching steps.

    Returns None with fewer than two finite pairs or a constant series.
    """
    errors = {step: value for step, value in shape_error_history}
    pairs = [(c, errors[step]) for step, c in coherence_history
             if step in errors and np.isfinite(c) and np.isfinite(errors[step])]
    if len(pairs) < 2:
        return None
    data = np.array(pairs)
    if np.std(data[:, 0]) == 0.0 or np.std(data[:, 1]) == 0.0:
        return None
    return float(np.corrcoef(data[:, 0], data[:, 1])[0, 1])
