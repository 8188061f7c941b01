"""
Landmark Datasets and Their Text Format

One record per frame::

    frame <id> p=<count> [gt] [cam]
    u v [x y z]          (p lines)
    m0 m1                (3 lines, only with the cam flag)

Blank lines and lines starting with ``#`` are ignored. Floats are written in
their shortest round-trip form so save → load is exact.

A frame carries its 2D measurements ``w`` and optionally a ground-truth
shape and camera. Sequences and category collections use the same layout;
nothing here assumes temporal order.
"""

import logging
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .exceptions import ConfigurationError, LandmarkParseError, SchemaError
from .linalg import Mat, default_rng

logger = logging.getLogger(__name__)

_HEADER_FLAGS = ("gt", "cam")


@dataclass(frozen=True)
class LandmarkFrame:
    """
    One frame (or one category instance).

    Attributes:
        id: Frame identifier (no whitespace)
        w: p×2 measurements
        gt_shape: Optional p×3 ground-truth shape
        gt_camera: Optional 3×2 ground-truth camera
        offset: Column means removed by centering, if it was applied
    """

    id: str
    w: Mat
    gt_shape: Optional[Mat] = None
    gt_camera: Optional[Mat] = None
    offset: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        w = np.asarray(self.w, dtype=np.float64)
        if w.ndim != 2 or w.shape[1] != 2:
            raise SchemaError(f"frame '{self.id}': measurements must be p×2, got {w.shape}",
                              frame_id=self.id)
        if not np.all(np.isfinite(w)):
            raise SchemaError(f"frame '{self.id}': non-finite measurement", frame_id=self.id)
        object.__setattr__(self, "w", w)
        if self.gt_shape is not None:
            gt = np.asarray(self.gt_shape, dtype=np.float64)
            if gt.shape != (w.shape[0], 3):
                raise SchemaError(f"frame '{self.id}': ground truth must be {(w.shape[0], 3)}, "
                                  f"got {gt.shape}", frame_id=self.id)
            object.__setattr__(self, "gt_shape", gt)
        if self.gt_camera is not None:
            cam = np.asarray(self.gt_camera, dtype=np.float64)
            if cam.shape != (3, 2):
                raise SchemaError(f"frame '{self.id}': camera must be 3×2, got {cam.shape}",
                                  frame_id=self.id)
            object.__setattr__(self, "gt_camera", cam)

    @property
    def p(self) -> int:
        return self.w.shape[0]


@dataclass(frozen=True)
class LandmarkDataset:
    """
    Frames sharing one landmark count.

    ``p`` is None only for an empty dataset.
    """

    frames: Tuple[LandmarkFrame, ...]
    p: Optional[int] = None

    def __post_init__(self) -> None:
        frames = tuple(self.frames)
        object.__setattr__(self, "frames", frames)
        if not frames:
            return
        p = frames[0].p if self.p is None else self.p
        for frame in frames:
            if frame.p != p:
                raise SchemaError(
                    f"frame '{frame.id}' has {frame.p} landmarks, expected {p}",
                    frame_id=frame.id
                )
        object.__setattr__(self, "p", p)

    def __len__(self) -> int:
        return len(self.frames)

    def __iter__(self) -> Iterator[LandmarkFrame]:
        return iter(self.frames)

    def __getitem__(self, index: int) -> LandmarkFrame:
        return self.frames[index]

    @property
    def has_ground_truth(self) -> bool:
        return bool(self.frames) and all(f.gt_shape is not None for f in self.frames)

    def measurements(self) -> List[Mat]:
        return [f.w for f in self.frames]

    def gt_shapes(self) -> List[Mat]:
        return [f.gt_shape for f in self.frames if f.gt_shape is not None]

    def ids(self) -> List[str]:
        return [f.id for f in self.frames]

    def subset(self, indices: Sequence[int]) -> "LandmarkDataset":
        return LandmarkDataset(tuple(self.frames[i] for i in indices), self.p)


def center_frame(frame: LandmarkFrame) -> LandmarkFrame:
    """Remove the 2D column means; offsets accumulate if centering is repeated"""
    mean = frame.w.mean(axis=0)
    previous = np.zeros(2) if frame.offset is None else frame.offset
    return replace(frame, w=frame.w - mean, offset=previous + mean)


def center_frames(dataset: LandmarkDataset) -> LandmarkDataset:
    """Center every frame, retaining the removed offsets"""
    return LandmarkDataset(tuple(center_frame(f) for f in dataset), dataset.p)


# Text format

def _format_row(values: np.ndarray) -> str:
    return " ".join(repr(float(v)) for v in values)


def format_frame(frame: LandmarkFrame) -> List[str]:
    flags = []
    if frame.gt_shape is not None:
        flags.append("gt")
    if frame.gt_camera is not None:
        flags.append("cam")
    lines = [" ".join([f"frame {frame.id} p={frame.p}"] + flags)]
    for i in range(frame.p):
        row = frame.w[i] if frame.gt_shape is None else np.concatenate([frame.w[i],
                                                                         frame.gt_shape[i]])
        lines.append(_format_row(row))
    if frame.gt_camera is not None:
        lines.extend(_format_row(frame.gt_camera[r]) for r in range(3))
    return lines


def save_landmarks(
    dataset: LandmarkDataset,
    path: Union[str, Path],
    comment: Optional[str] = None
) -> Path:
    """
    Write a dataset in the landmark text format.

    Args:
        dataset: Frames to write
        path: Output file
        comment: Optional ``#`` line written first
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines: List[str] = []
    if comment:
        lines.append(f"# {comment}")
    for frame in dataset:
        lines.extend(format_frame(frame))
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    logger.debug(f"Wrote {len(dataset)} frames to {path}")
    return path


_HEADER = re.compile(r"^frame\s+(\S+)\s+p=(\d+)((?:\s+\S+)*)\s*$")


def _parse_floats(text: str, count: int, path: str, line_no: int) -> np.ndarray:
    parts = text.split()
    if len(parts) != count:
        raise LandmarkParseError(path, line_no, f"expected {count} numbers, got {len(parts)}")
    try:
        values = np.array([float(part) for part in parts])
    except ValueError as e:
        raise LandmarkParseError(path, line_no, f"not a number ({e})")
    if not np.all(np.isfinite(values)):
        raise LandmarkParseError(path, line_no, "non-finite value")
    return values


def parse_landmarks(text: str, source: str = "<string>") -> List[LandmarkFrame]:
    """
    Parse landmark records without checking the landmark count across frames.

    Raises:
        LandmarkParseError: On a malformed header or data line
    """
    lines = [(no, line.strip()) for no, line in enumerate(text.splitlines(), start=1)]
    lines = [(no, line) for no, line in lines if line and not line.startswith("#")]

    frames: List[LandmarkFrame] = []
    pos = 0
    while pos < len(lines):
        line_no, header = lines[pos]
        match = _HEADER.match(header)
        if match is None:
            raise LandmarkParseError(source, line_no, f"expected 'frame <id> p=<count>', "
                                                      f"got '{header[:40]}'")
        frame_id, p = match.group(1), int(match.group(2))
        if p == 0:
            raise LandmarkParseError(source, line_no, f"frame '{frame_id}' has p=0")
        flags = match.group(3).split()
        unknown = [f for f in flags if f not in _HEADER_FLAGS]
        if unknown:
            raise LandmarkParseError(source, line_no, f"unknown header flag '{unknown[0]}'")
        has_gt, has_cam = "gt" in flags, "cam" in flags

        need = p + (3 if has_cam else 0)
        if pos + 1 + need > len(lines):
            raise LandmarkParseError(source, line_no,
                                     f"frame '{frame_id}' is truncated ({need} lines expected)")
        rows = [_parse_floats(body, 5 if has_gt else 2, source, no)
                for no, body in lines[pos + 1:pos + 1 + p]]
        cam_rows = [_parse_floats(body, 2, source, no)
                    for no, body in lines[pos + 1 + p:pos + 1 + need]]

        data = np.array(rows).reshape(p, -1)
        try:
            frames.append(LandmarkFrame(
                id=frame_id,
                w=data[:, :2],
                gt_shape=data[:, 2:5] if has_gt else None,
                gt_camera=np.array(cam_rows) if has_cam else None,
            ))
        except SchemaError as e:
            raise LandmarkParseError(source, line_no, str(e))
        pos += 1 + need
    return frames


def load_landmarks(path: Union[str, Path], center: bool = True) -> LandmarkDataset:
    """
    Load a landmark file.

    Args:
        path: File in the landmark text format
        center: Subtract per-frame column means (offsets are kept on the frames)

    Raises:
        LandmarkParseError: Malformed record (carries the line number)
        SchemaError: Frames with differing landmark counts
    """
    path = Path(path)
    if not path.exists():
        raise LandmarkParseError(str(path), 0, "file not found")
    frames = parse_landmarks(path.read_text(encoding="utf-8"), source=str(path))
    dataset = LandmarkDataset(tuple(frames))
    logger.debug(f"Loaded {len(dataset)} frames (p={dataset.p}) from {path}")
    return center_frames(dataset) if center else dataset


# Motion capture CSV: one skeleton per row, x1,y1,z1,...,xp,yp,zp

def read_mocap_csv(path: Union[str, Path], delimiter: str = ",") -> List[Mat]:
    """
    Read skeleton-per-row motion capture data into p×3 shapes.

    A first row containing any non-numeric field is treated as a header.

    Raises:
        LandmarkParseError: Ragged rows, non-numeric values or a column count
            that is not a multiple of three
    """
    path = Path(path)
    source = str(path)
    if not path.exists():
        raise LandmarkParseError(source, 0, "file not found")
    try:
        frame = pd.read_csv(path, sep=delimiter, header=None, dtype=str,
                            skip_blank_lines=True, comment="#")
    except pd.errors.EmptyDataError:
        return []
    except pd.errors.ParserError as e:
        found = re.search(r"line (\d+)", str(e))
        raise LandmarkParseError(source, int(found.group(1)) if found else 0, str(e))

    values = frame.apply(pd.to_numeric, errors="coerce")
    start = 0
    if len(frame) and values.iloc[0].isna().any():
        start = 1

    if frame.shape[1] % 3 != 0:
        raise LandmarkParseError(source, 1, f"{frame.shape[1]} columns is not a multiple of 3")

    shapes: List[Mat] = []
    for row in range(start, len(frame)):
        numbers = values.iloc[row].to_numpy(dtype=np.float64)
        if not np.all(np.isfinite(numbers)):
            raise LandmarkParseError(source, row + 1, "missing or non-numeric coordinate")
        shapes.append(numbers.reshape(-1, 3))
    logger.debug(f"Read {len(shapes)} skeletons with {frame.shape[1] // 3} joints from {path}")
    return shapes


def split_dataset(
    dataset: LandmarkDataset,
    holdout_fraction: float,
    seed: Optional[int] = None
) -> Tuple[LandmarkDataset, LandmarkDataset]:
    """
    Random train / held-out split; both parts keep the original frame order.

    Raises:
        ConfigurationError: If the fraction is outside [0, 1)
    """
    if not 0.0 <= holdout_fraction < 1.0:
        raise ConfigurationError("holdout fraction must lie in [0, 1)", config_field="holdout")
    n = len(dataset)
    n_hold = int(round(holdout_fraction * n))
    held = np.sort(default_rng(seed).permutation(n)[:n_hold])
    mask = np.zeros(n, dtype=bool)
    mask[held] = True
    train = [i for i in range(n) if not mask[i]]
    return dataset.subset(train), dataset.subset([int(i) for i in held])
