"""
Mini-Batch Training of the Auto-Encoder

Frames are shuffled every epoch with a seeded generator. Per-frame tapes may
run on worker threads; gradients are always reduced in frame order, so a run
is bitwise reproducible for a fixed seed whatever the thread count.
"""

import logging
import math
from concurrent.futures import Executor
from typing import Dict, List, NamedTuple, Optional, Sequence

import numpy as np

from .checkpoint import Checkpoint, History
from .config import ModelDims, TrainConfig
from .exceptions import ContractError, NumericError, SchemaError, TrainingAbortedError
from .landmarks import LandmarkDataset
from .linalg import Mat, child_seeds, default_rng
from .metrics import comparable_shapes, safe_coherence, shape_error_ratio
from .model import ModelParams, forward_batch, frame_executor, sharp_from_d1
from .optimizers import Optimizer, OptimizerState, make_optimizer

logger = logging.getLogger(__name__)

# frames used for the shape-error diagnostic during training
SHAPE_ERROR_SAMPLE = 256


def init_params(
    dims: ModelDims,
    seed: Optional[int] = None,
    init_threshold: float = 0.01
) -> ModelParams:
    """
    Random initial parameters.

    Dictionaries, readout and camera coefficients are Gaussian with std
    1/√fan_in; every threshold starts at ``init_threshold``.
    """
    rng = default_rng(seed)
    k = dims.layers
    d1 = rng.standard_normal((3 * dims.p, k[0])) / math.sqrt(3 * dims.p)
    dicts = tuple(rng.standard_normal((k[i - 1], k[i])) / math.sqrt(k[i - 1])
                  for i in range(1, dims.n))
    kn = k[-1]
    readout = rng.standard_normal((kn, 6 * kn)) / math.sqrt(6 * kn)
    cam = rng.standard_normal(kn) / math.sqrt(kn)
    return ModelParams(
        d1_sharp=sharp_from_d1(d1),
        dicts=dicts,
        enc_thresholds=tuple(np.full(width, init_threshold) for width in k),
        dec_thresholds=tuple(np.full(width, init_threshold) for width in k[:-1]),
        code_readout=readout,
        cam_coeffs=cam,
    )


class StepResult(NamedTuple):
    params: ModelParams
    opt_state: OptimizerState
    loss: Optional[float]
    degenerate: int


def train_step(
    batch: Sequence[Mat],
    params: ModelParams,
    opt_state: OptimizerState,
    optimizer: Optimizer,
    executor: Optional[Executor] = None
) -> StepResult:
    """
    One optimizer step on the mean per-frame loss of a batch.

    Degenerate-camera frames are left out of the mean and counted. When
    every frame is degenerate the step is skipped (loss None).

    Raises:
        ContractError: On an empty batch
        NumericError: If the loss or a gradient is not finite
    """
    if len(batch) == 0:
        raise ContractError("train_step needs a nonempty batch", operation="train_step")

    results = forward_batch(batch, params, with_grad=True, executor=executor)
    good = [r for r in results if not r.degenerate]
    degenerate = len(results) - len(good)
    if not good:
        logger.warning(f"Skipping step: all {len(results)} frames had a degenerate camera")
        return StepResult(params, opt_state, None, degenerate)
    if degenerate:
        logger.warning(f"{degenerate} of {len(results)} frames had a degenerate camera")

    loss = float(np.mean([r.loss for r in good]))
    names = params.names()
    grads: Dict[str, np.ndarray] = {}
    for name in names:
        total = good[0].grads[name].copy()
        for r in good[1:]:
            total += r.grads[name]
        grads[name] = total / len(good)

    if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
        raise NumericError("non-finite loss or gradient", residual=loss)

    new_tensors, new_state = optimizer.update(params.to_dict(), grads, opt_state)
    new_params = ModelParams.from_dict(new_tensors).clamp_thresholds()
    if not new_params.is_finite():
        raise NumericError("optimizer produced non-finite parameters", residual=loss)
    return StepResult(new_params, new_state, loss, degenerate)


def _shape_error(params: ModelParams, sample: LandmarkDataset, executor) -> float:
    results = forward_batch(sample.measurements(), params, executor=executor)
    recon, gt = comparable_shapes(sample, results)
    if not gt:
        return float("nan")
    return shape_error_ratio(recon, gt)


def train(dataset: LandmarkDataset, config: TrainConfig) -> Checkpoint:
    """
    Train from scratch on a landmark dataset.

    Runs ``epochs × ⌈frames / batch_size⌉`` steps. Every ``log_every`` steps
    the mean loss since the previous record is appended to the loss history;
    every ``coherence_every`` steps the coherence of Dₙ (and, with ground
    truth, the shape error ratio) is recorded.

    Raises:
        SchemaError: On an empty dataset or a landmark count different from dims.p
        TrainingAbortedError: On a non-finite loss; carries the last good checkpoint
    """
    if len(dataset) == 0:
        raise SchemaError("cannot train on an empty dataset")
    if dataset.p != config.dims.p:
        raise SchemaError(f"dataset has p={dataset.p} but the model is configured "
                          f"for p={config.dims.p}")

    init_seed, shuffle_seed, sample_seed = child_seeds(config.seed, 3)
    params = init_params(config.dims, init_seed, config.init_threshold)
    optimizer = make_optimizer(config)
    state = optimizer.init_state(params.to_dict())

    frames = dataset.measurements()
    n = len(frames)
    steps_per_epoch = math.ceil(n / config.batch_size)
    shuffle_rng = default_rng(shuffle_seed)

    sample = None
    if config.track_shape_error and dataset.has_ground_truth:
        order = np.sort(default_rng(sample_seed).permutation(n)[:SHAPE_ERROR_SAMPLE])
        sample = dataset.subset([int(i) for i in order])

    loss_history: History = []
    coherence_history: History = []
    shape_error_history: History = []
    window: List[float] = []
    step = 0

    def snapshot() -> Checkpoint:
        return Checkpoint(params, step, list(loss_history), list(coherence_history),
                          list(shape_error_history), optimizer.name, state)

    logger.info(f"Training {config.dims.n}-layer model (p={config.dims.p}, "
                f"layers={list(config.dims.layers)}) on {n} frames for {config.epochs} epochs, "
                f"{steps_per_epoch} steps per epoch")

    with frame_executor(config.threads) as executor:
        for epoch in range(config.epochs):
            order = shuffle_rng.permutation(n)
            for start in range(0, n, config.batch_size):
                batch = [frames[i] for i in order[start:start + config.batch_size]]
                try:
                    result = train_step(batch, params, state, optimizer, executor)
                except NumericError as e:
                    logger.error(f"Aborting at step {step + 1}: {e}")
                    raise TrainingAbortedError(step + 1, snapshot())

                step += 1
                params, state = result.params, result.opt_state
                if result.loss is not None:
                    window.append(result.loss)

                if step % config.log_every == 0:
                    logged = float(np.mean(window)) if window else float("nan")
                    loss_history.append((step, logged))
                    window = []
                    logger.info(f"epoch {epoch + 1} step {step} loss {logged:.6g}")

                if step % config.coherence_every == 0:
                    coherence = safe_coherence(params.final_dictionary())
                    coherence_history.append((step, coherence))
                    message = f"step {step} coherence {coherence:.6g}"
                    if sample is not None:
                        error = _shape_error(params, sample, executor)
                        shape_error_history.append((step, error))
                        message += f" shape_error {error:.6g}"
                    logger.info(message)

    logger.info(f"Training finished after {step} steps")
    return snapshot()
