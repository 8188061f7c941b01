"""
Versioned Checkpoint Store

A checkpoint is a single zip container (readable with ``numpy.load``) holding:
- one little-endian float64 ``.npy`` entry per parameter tensor (``param/<name>``)
- optimizer buffers (``opt/<slot>/<name>``)
- training histories as (step, value) rows (``history/<series>``)
- a ``metadata.json`` entry: format tag, version, dims, step, optimizer, names

Entries are stored uncompressed, in sorted order, with a fixed timestamp, so
identical content always produces identical file bytes.
"""

import io
import json
import logging
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np

from .exceptions import CheckpointError, NRSfMException
from .model import ModelParams
from .optimizers import OptimizerState

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "pynrsfm-checkpoint"
CHECKPOINT_VERSION = "1.0"
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)
_HISTORY_SERIES = ("loss", "coherence", "shape_error")

History = List[Tuple[int, float]]


@dataclass
class Checkpoint:
    """
    Trained parameters plus the bookkeeping needed to resume or audit a run.

    Histories are lists of ``(step, value)`` pairs recorded at the training
    cadence; ``shape_error_history`` stays empty without ground truth.
    """

    params: ModelParams
    step: int = 0
    loss_history: History = field(default_factory=list)
    coherence_history: History = field(default_factory=list)
    shape_error_history: History = field(default_factory=list)
    optimizer: str = "adam"
    opt_state: OptimizerState = field(default_factory=OptimizerState)

    @property
    def dims(self):
        return self.params.dims

    def histories(self) -> Dict[str, History]:
        return {
            "loss": self.loss_history,
            "coherence": self.coherence_history,
            "shape_error": self.shape_error_history,
        }

    def metadata(self) -> Dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "dims": self.dims.to_dict(),
            "step": self.step,
            "optimizer": self.optimizer,
            "optimizer_step": self.opt_state.step,
            "param_names": self.params.names(),
        }


def _npy_bytes(arr: np.ndarray) -> bytes:
    buffer = io.BytesIO()
    np.lib.format.write_array(buffer, np.ascontiguousarray(arr, dtype="<f8"), allow_pickle=False)
    return buffer.getvalue()


def _history_array(history: History) -> np.ndarray:
    if not history:
        return np.zeros((0, 2))
    return np.array([[float(step), float(value)] for step, value in history])


def _entries(checkpoint: Checkpoint) -> Dict[str, bytes]:
    entries: Dict[str, bytes] = {}
    for name, value in checkpoint.params.to_dict().items():
        entries[f"param/{name}.npy"] = _npy_bytes(value)
    for name, value in checkpoint.opt_state.buffers.items():
        entries[f"opt/{name}.npy"] = _npy_bytes(value)
    for series, history in checkpoint.histories().items():
        entries[f"history/{series}.npy"] = _npy_bytes(_history_array(history))
    entries["metadata.json"] = json.dumps(checkpoint.metadata(), sort_keys=True,
                                          indent=2).encode("utf-8")
    return entries


def checkpoint_bytes(checkpoint: Checkpoint) -> bytes:
    """Serialized container; identical content gives identical bytes"""
    buffer = io.BytesIO()
    with zipfile.ZipFile(buffer, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, data in sorted(_entries(checkpoint).items()):
            info = zipfile.ZipInfo(name, date_time=_ZIP_EPOCH)
            info.external_attr = 0o644 << 16
            zf.writestr(info, data)
    return buffer.getvalue()


def save_checkpoint(checkpoint: Checkpoint, path: Union[str, Path]) -> Path:
    """
    Write a checkpoint atomically (temporary file, then rename).

    Raises:
        CheckpointError: If the file cannot be written
    """
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp.write_bytes(checkpoint_bytes(checkpoint))
        tmp.replace(path)
    except OSError as e:
        raise CheckpointError(f"Failed to save checkpoint to {path}: {e}", operation="save")
    logger.info(f"Saved checkpoint at step {checkpoint.step} to {path}")
    return path


def _read_array(zf: zipfile.ZipFile, name: str) -> np.ndarray:
    with zf.open(name) as f:
        return np.lib.format.read_array(io.BytesIO(f.read()), allow_pickle=False)


def _history_from_array(arr: np.ndarray) -> History:
    return [(int(step), float(value)) for step, value in arr.reshape(-1, 2)]


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """
    Read a checkpoint written by :func:`save_checkpoint`.

    Raises:
        CheckpointError: On a missing or corrupt file, a foreign format tag,
            an unsupported version or inconsistent tensors
    """
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"Checkpoint not found: {path}", operation="load")

    try:
        with zipfile.ZipFile(path, "r") as zf:
            names = set(zf.namelist())
            if "metadata.json" not in names:
                raise CheckpointError(f"{path} has no metadata entry", operation="load")
            metadata = json.loads(zf.read("metadata.json").decode("utf-8"))
            _check_metadata(metadata, path)

            tensors = {}
            for name in metadata["param_names"]:
                entry = f"param/{name}.npy"
                if entry not in names:
                    raise CheckpointError(f"{path} is missing tensor '{name}'", operation="load")
                tensors[name] = _read_array(zf, entry)

            buffers = {
                name[len("opt/"):-len(".npy")]: _read_array(zf, name)
                for name in sorted(names) if name.startswith("opt/")
            }
            histories = {
                series: _history_from_array(_read_array(zf, f"history/{series}.npy"))
                if f"history/{series}.npy" in names else []
                for series in _HISTORY_SERIES
            }
    except (zipfile.BadZipFile, OSError, ValueError, KeyError) as e:
        raise CheckpointError(f"Failed to load checkpoint from {path}: {e}", operation="load")

    try:
        params = ModelParams.from_dict(tensors)
    except NRSfMException as e:
        raise CheckpointError(f"Inconsistent tensors in {path}: {e}", operation="load")

    return Checkpoint(
        params=params,
        step=int(metadata["step"]),
        loss_history=histories["loss"],
        coherence_history=histories["coherence"],
        shape_error_history=histories["shape_error"],
        optimizer=metadata["optimizer"],
        opt_state=OptimizerState(int(metadata.get("optimizer_step", 0)), buffers),
    )


def _check_metadata(metadata: Dict, path: Path) -> None:
    if metadata.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a pynrsfm checkpoint", operation="load")
    version = str(metadata.get("version"))
    if version.split(".")[0] != CHECKPOINT_VERSION.split(".")[0]:
        raise CheckpointError(
            f"Unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})",
            operation="load"
        )
