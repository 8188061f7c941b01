"""
Synthetic Ground Truth and Projection

Data sources with known 3D shape:
- an articulated 15-joint human skeleton with random limb swings and heading
- a planted model: a rest pose plus sparse nonnegative deformations, decoded
  by a random instance of the auto-encoder's own decoder

Every generator takes an explicit seed; the same seed gives the same data.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .config import ModelDims
from .exceptions import ConfigurationError, SchemaError
from .landmarks import LandmarkDataset, LandmarkFrame
from .linalg import Mat, child_seeds, default_rng, random_semiorthonormal_3x2
from .model import ModelParams, decode, sharp_from_d1

logger = logging.getLogger(__name__)


def synthesize_projections(
    shapes: Sequence[Mat],
    seed: Optional[int] = None,
    id_prefix: str = "f",
    cameras: Optional[Sequence[Mat]] = None
) -> LandmarkDataset:
    """
    Project centered shapes with one orthonormal camera per frame.

    Each frame stores w = S·M together with the centered S and M. Cameras
    are random unless given explicitly (one per shape).

    Raises:
        SchemaError: If the shapes do not share a landmark count, or the
            cameras do not match the shapes
    """
    if cameras is not None and len(cameras) != len(shapes):
        raise SchemaError(f"{len(cameras)} cameras given for {len(shapes)} shapes")
    rng = default_rng(seed)
    frames = []
    p = None
    for index, shape in enumerate(shapes):
        shape = np.asarray(shape, dtype=np.float64)
        if shape.ndim != 2 or shape.shape[1] != 3:
            raise SchemaError(f"shape {index} must be p×3, got {shape.shape}",
                              frame_id=f"{id_prefix}{index}")
        if p is None:
            p = shape.shape[0]
        elif shape.shape[0] != p:
            raise SchemaError(f"shape {index} has {shape.shape[0]} points, expected {p}",
                              frame_id=f"{id_prefix}{index}")
        centered = shape - shape.mean(axis=0)
        if cameras is None:
            camera = random_semiorthonormal_3x2(rng)
        else:
            camera = np.asarray(cameras[index], dtype=np.float64)
            if camera.shape != (3, 2):
                raise SchemaError(f"camera {index} must be 3×2, got {camera.shape}",
                                  frame_id=f"{id_prefix}{index}")
        frames.append(LandmarkFrame(
            id=f"{id_prefix}{index}",
            w=centered @ camera,
            gt_shape=centered,
            gt_camera=camera,
        ))
    return LandmarkDataset(tuple(frames))


def add_noise(
    dataset: LandmarkDataset,
    ratio: float,
    seed: Optional[int] = None
) -> LandmarkDataset:
    """
    Add Gaussian noise scaled so that ‖N‖_F = ratio·‖w‖_F exactly, per frame.

    Raises:
        ConfigurationError: If ratio is negative
    """
    if ratio < 0:
        raise ConfigurationError("noise ratio must be nonnegative", config_field="noise")
    if ratio == 0:
        return dataset

    rng = default_rng(seed)
    frames = []
    for frame in dataset:
        noise = rng.standard_normal(frame.w.shape)
        norm = np.linalg.norm(noise)
        target = ratio * np.linalg.norm(frame.w)
        noise = noise * (target / norm) if norm > 0 else noise
        frames.append(LandmarkFrame(frame.id, frame.w + noise, frame.gt_shape,
                                    frame.gt_camera, frame.offset))
    return LandmarkDataset(tuple(frames), dataset.p)


# Articulated skeleton (y up, units of decimeters)

SKELETON_JOINTS = (
    "pelvis", "thorax", "head",
    "l_shoulder", "l_elbow", "l_wrist",
    "r_shoulder", "r_elbow", "r_wrist",
    "l_hip", "l_knee", "l_ankle",
    "r_hip", "r_knee", "r_ankle",
)

# parent index and rest offset from the parent
_BONES: Tuple[Tuple[int, Tuple[float, float, float]], ...] = (
    (-1, (0.0, 0.0, 0.0)),
    (0, (0.0, 5.0, 0.0)),
    (1, (0.0, 3.0, 0.0)),
    (1, (1.8, -0.5, 0.0)),
    (3, (0.0, -3.0, 0.0)),
    (4, (0.0, -2.6, 0.0)),
    (1, (-1.8, -0.5, 0.0)),
    (6, (0.0, -3.0, 0.0)),
    (7, (0.0, -2.6, 0.0)),
    (0, (1.0, 0.0, 0.0)),
    (9, (0.0, -4.5, 0.0)),
    (10, (0.0, -4.2, 0.0)),
    (0, (-1.0, 0.0, 0.0)),
    (12, (0.0, -4.5, 0.0)),
    (13, (0.0, -4.2, 0.0)),
)

# (joint, swing amplitude, phase offset, one-sided bend)
_SWINGS = (
    (1, 0.15, 0.0, False),
    (3, 0.6, np.pi, False),
    (4, 0.7, np.pi, True),
    (6, 0.6, 0.0, False),
    (7, 0.7, 0.0, True),
    (9, 0.5, 0.0, False),
    (10, 0.8, 0.5 * np.pi, True),
    (12, 0.5, np.pi, False),
    (13, 0.8, 1.5 * np.pi, True),
)


def _rot_x(angle: float) -> Mat:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _rot_y(angle: float) -> Mat:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rot_z(angle: float) -> Mat:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def skeleton_pose(phase: float, jitter: np.ndarray, heading: float) -> Mat:
    """
    Forward kinematics for one frame.

    Args:
        phase: Gait phase driving the limb swings
        jitter: (15, 2) small random sagittal/lateral angle perturbations
        heading: Rotation of the whole body about the vertical axis
    """
    local = [np.eye(3) for _ in _BONES]
    for joint, amplitude, offset, one_sided in _SWINGS:
        swing = amplitude * np.sin(phase + offset)
        if one_sided:
            swing = amplitude * (1.0 + np.sin(phase + offset)) * 0.5
        local[joint] = _rot_x(swing)
    for joint in range(len(_BONES)):
        local[joint] = local[joint] @ _rot_x(jitter[joint, 0]) @ _rot_z(jitter[joint, 1])

    rotations: List[Mat] = []
    positions = np.zeros((len(_BONES), 3))
    for joint, (parent, offset) in enumerate(_BONES):
        if parent < 0:
            rotations.append(local[joint])
            continue
        rotations.append(rotations[parent] @ local[joint])
        positions[joint] = positions[parent] + rotations[parent] @ np.asarray(offset)
    return positions @ _rot_y(heading).T


def skeleton_shapes(frames: int, seed: Optional[int] = None, jitter: float = 0.1) -> List[Mat]:
    """
    Poses of a walking 15-joint skeleton with random phase, jitter and heading.

    Stands in for motion capture sequences when no recorded data is given.
    """
    rng = default_rng(seed)
    shapes = []
    for _ in range(frames):
        phase = rng.uniform(0.0, 2.0 * np.pi)
        heading = rng.uniform(0.0, 2.0 * np.pi)
        shapes.append(skeleton_pose(phase, jitter * rng.standard_normal((len(_BONES), 2)),
                                    heading))
    return shapes


# codes whose decoded shape has no spread are redrawn
_MAX_CODE_DRAWS = 100


@dataclass
class PlantedModel:
    """A random decoder instance and the sparse codes it was sampled with"""

    params: ModelParams
    codes: np.ndarray
    shapes: List[Mat]


def planted_model(
    dims: ModelDims,
    frames: int,
    active_blocks: int = 2,
    seed: Optional[int] = None,
    deformation: float = 0.1
) -> PlantedModel:
    """
    Shapes generated by the model class itself.

    Dictionaries are Gaussian with std 1/√fan_in and decoder thresholds are
    zero. Top-code entry 0 is a rest pose with weight 1 in every frame; the
    other ``active_blocks - 1`` nonzero entries are deformations whose weights
    are drawn uniformly from [deformation / 2, deformation]. A code whose
    shape has no spread is redrawn.

    Raises:
        ConfigurationError: If active_blocks is not in 1..kₙ or deformation is not positive
        SchemaError: If redrawing keeps producing flat shapes
    """
    kn = dims.layers[-1]
    if not 1 <= active_blocks <= kn:
        raise ConfigurationError(f"active_blocks must lie in 1..{kn}",
                                 config_field="active_blocks")
    if not deformation > 0:
        raise ConfigurationError("deformation must be positive", config_field="deformation")
    dict_seed, code_seed = child_seeds(seed, 2)
    rng = default_rng(dict_seed)

    d1 = rng.standard_normal((3 * dims.p, dims.layers[0])) / np.sqrt(3 * dims.p)
    dicts = tuple(
        rng.standard_normal((k_prev, k)) / np.sqrt(k_prev)
        for k_prev, k in zip(dims.layers[:-1], dims.layers[1:])
    )
    params = ModelParams(
        d1_sharp=sharp_from_d1(d1),
        dicts=dicts,
        enc_thresholds=tuple(np.zeros(k) for k in dims.layers),
        dec_thresholds=tuple(np.zeros(k) for k in dims.layers[:-1]),
        code_readout=np.zeros((kn, 6 * kn)),
        cam_coeffs=np.ones(kn),
    )

    code_rng = default_rng(code_seed)
    codes = np.zeros((frames, kn))
    shapes = []
    for i in range(frames):
        for _ in range(_MAX_CODE_DRAWS):
            codes[i] = 0.0
            codes[i, 0] = 1.0
            support = 1 + code_rng.choice(kn - 1, size=active_blocks - 1, replace=False)
            codes[i, support] = code_rng.uniform(deformation / 2, deformation,
                                                 size=active_blocks - 1)
            shape = decode(codes[i], params)[1]
            if np.any(shape - shape.mean(axis=0)):
                break
        else:
            raise SchemaError(f"planted decoder gave a flat shape {_MAX_CODE_DRAWS} times in a row")
        shapes.append(shape)
    logger.debug(f"Planted {frames} shapes from a {dims.n}-layer decoder (p={dims.p}), "
                 f"{active_blocks - 1} deformation entries per frame")
    return PlantedModel(params, codes, shapes)
