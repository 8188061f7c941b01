"""
pynrsfm - Deep block-sparse non-rigid structure from motion

Recovers per-frame 3D shapes and orthographic cameras from 2D landmark tracks
with a multi-layer block-sparse auto-encoder whose encoder unrolls one
iteration of block sparse coding per layer.

Quick Start:
    >>> import pynrsfm as nr
    >>> data = nr.synthesize_projections(nr.skeleton_shapes(200, seed=1), seed=2)
    >>> model = nr.fit(data, layers=(32, 8), epochs=5, seed=0)
    >>> shape, camera = nr.reconstruct(data[0].w, model.params)
    >>> print(nr.evaluate(model, data).to_text())
"""

__version__ = "0.1.0"

from pathlib import Path
from typing import Any, Sequence, Union

# Core types
from .config import AdamConfig, ModelDims, RunConfig, SynthConfig, TrainConfig
from .model import (
    ForwardResult,
    ModelParams,
    decode,
    encode,
    forward,
    forward_batch,
    readout,
    reconstruct,
)
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .landmarks import (
    LandmarkDataset,
    LandmarkFrame,
    load_landmarks,
    read_mocap_csv,
    save_landmarks,
    split_dataset,
)
from .metrics import (
    AlignmentPolicy,
    CoherenceReport,
    EvalReport,
    coherence_report,
    evaluate,
    mean_point_distance,
    reconstruct_dataset,
    reprojection_error,
    shape_error_ratio,
)
from .sparse_coding import IstaConfig, block_ista, ista, mutual_coherence
from .synthetic import add_noise, planted_model, skeleton_shapes, synthesize_projections
from .training import init_params, train, train_step
from .exceptions import (
    NRSfMException,
    ConfigurationError,
    UsageError,
    ShapeError,
    ContractError,
    LandmarkParseError,
    SchemaError,
    CheckpointError,
    CombinatorialLimitError,
    NumericError,
    DegenerateCameraError,
    TrainingAbortedError,
)


def fit(
    dataset: LandmarkDataset,
    layers: Union[str, Sequence[int]] = (32, 8),
    **kwargs: Any
) -> Checkpoint:
    """
    Train a model on a dataset with the landmark count taken from the data.

    Args:
        dataset: Centered landmark frames
        layers: Layer widths k₁…kₙ
        **kwargs: Any other TrainConfig field (epochs, batch_size, learning_rate, ...)

    Example:
        >>> model = nr.fit(data, layers="32,8", epochs=20, learning_rate=1e-3)
    """
    if len(dataset) == 0:
        raise SchemaError("cannot train on an empty dataset")
    return train(dataset, TrainConfig(dims=ModelDims(p=dataset.p, layers=layers), **kwargs))


def load(path: Union[str, Path]) -> Checkpoint:
    """Load a checkpoint written by ``fit``/``train`` and ``save_checkpoint``"""
    return load_checkpoint(path)


# Export all public APIs
__all__ = [
    # Version
    "__version__",

    # Configuration
    "ModelDims",
    "TrainConfig",
    "AdamConfig",
    "RunConfig",
    "SynthConfig",

    # Model
    "ModelParams",
    "ForwardResult",
    "encode",
    "readout",
    "decode",
    "forward",
    "forward_batch",
    "reconstruct",

    # Training and persistence
    "fit",
    "load",
    "init_params",
    "train",
    "train_step",
    "Checkpoint",
    "save_checkpoint",
    "load_checkpoint",

    # Data
    "LandmarkFrame",
    "LandmarkDataset",
    "load_landmarks",
    "save_landmarks",
    "read_mocap_csv",
    "split_dataset",
    "synthesize_projections",
    "add_noise",
    "skeleton_shapes",
    "planted_model",

    # Sparse coding and metrics
    "IstaConfig",
    "ista",
    "block_ista",
    "mutual_coherence",
    "AlignmentPolicy",
    "EvalReport",
    "CoherenceReport",
    "evaluate",
    "reconstruct_dataset",
    "coherence_report",
    "shape_error_ratio",
    "mean_point_distance",
    "reprojection_error",

    # Exceptions
    "NRSfMException",
    "ConfigurationError",
    "UsageError",
    "ShapeError",
    "ContractError",
    "LandmarkParseError",
    "SchemaError",
    "CheckpointError",
    "CombinatorialLimitError",
    "NumericError",
    "DegenerateCameraError",
    "TrainingAbortedError",
]
