"""
Reference Sparse-Coding Solvers

Non-learned solvers used to check the network against the optimization it
unrolls:
- scalar and block soft thresholding (exact and relaxed)
- ISTA and block ISTA from a zero start
- exhaustive block-sparse least squares for small instances
- dictionary mutual coherence
"""

import itertools
import logging
from dataclasses import dataclass, field
from typing import List, Literal, Optional, Sequence, Union

import numpy as np

from .exceptions import CombinatorialLimitError, ConfigurationError, ContractError, ShapeError
from .linalg import BlockMatrix, Mat, as_mat, spectral_norm

logger = logging.getLogger(__name__)

BRUTE_FORCE_MAX_BLOCKS = 16
BRUTE_FORCE_MAX_SPARSITY = 3

BlockMode = Literal["exact", "relaxed"]


@dataclass
class IstaConfig:
    """
    Settings for ISTA and block ISTA.

    Attributes:
        alpha: Step size; None picks 0.9/‖W‖₂² (estimated by power iteration)
        tau: Scalar threshold
        thresholds: Optional per-block thresholds b (relaxed block mode only)
        max_iters: Iteration cap
        tol: Stop once the largest entry change falls below this
    """

    alpha: Optional[float] = None
    tau: float = 0.0
    thresholds: Optional[Sequence[float]] = None
    max_iters: int = 1000
    tol: float = 1e-10

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.alpha is not None and self.alpha <= 0:
            raise ConfigurationError("alpha must be positive", config_field="alpha")
        if self.tau < 0:
            raise ConfigurationError("tau must be nonnegative", config_field="tau")
        if self.thresholds is not None and np.any(np.asarray(self.thresholds) < 0):
            raise ConfigurationError("thresholds must be nonnegative", config_field="thresholds")
        if self.max_iters < 1:
            raise ConfigurationError("max_iters must be at least 1", config_field="max_iters")
        if self.tol < 0:
            raise ConfigurationError("tol must be nonnegative", config_field="tol")

    def step_size(self, dictionary: Mat) -> float:
        if self.alpha is not None:
            return self.alpha
        norm = spectral_norm(dictionary)
        return 0.9 / (norm * norm) if norm > 0 else 1.0


@dataclass
class IstaResult:
    """Outcome of a solver run"""

    code: np.ndarray
    iterations: int
    converged: bool
    objective: List[float] = field(default_factory=list)


@dataclass
class BlockIstaResult:
    code: BlockMatrix
    iterations: int
    converged: bool
    objective: List[float] = field(default_factory=list)


def soft_threshold(x: Union[float, np.ndarray], tau: Union[float, np.ndarray]):
    """sign(x)·max(|x| − tau, 0), elementwise"""
    if np.any(np.asarray(tau) < 0):
        raise ContractError("soft_threshold requires tau >= 0", operation="soft_threshold")
    out = np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)
    return float(out) if np.ndim(out) == 0 else out


def block_soft_threshold_exact(v: BlockMatrix, tau: float) -> BlockMatrix:
    """
    Proximal operator of tau·Σⱼ‖Vⱼ‖_F.

    Each block is zeroed when its norm is at most tau and otherwise scaled by
    (‖Vⱼ‖_F − tau)/‖Vⱼ‖_F.
    """
    if tau < 0:
        raise ContractError("block threshold requires tau >= 0", operation="block_soft_threshold")
    norms = v.block_norms()
    keep = norms > tau
    scale = np.zeros_like(norms)
    scale[keep] = (norms[keep] - tau) / norms[keep]
    return BlockMatrix.from_blocks(v.blocks * scale[:, None, None])


def block_soft_threshold_relaxed(v: BlockMatrix, b: Sequence[float]) -> BlockMatrix:
    """
    Elementwise soft threshold inside block j using bⱼ.

    Raises:
        ShapeError: If len(b) differs from the block count
    """
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if b.size != v.k:
        raise ShapeError("block_soft_threshold_relaxed", expected=v.k, actual=b.size)
    if np.any(b < 0):
        raise ContractError("relaxed thresholds must be nonnegative",
                            operation="block_soft_threshold_relaxed")
    return BlockMatrix.from_blocks(soft_threshold(v.blocks, b[:, None, None]))


def lasso_objective(dictionary: Mat, x: np.ndarray, z: np.ndarray, tau: float) -> float:
    r = x - dictionary @ z
    return 0.5 * float(np.sum(r * r)) + tau * float(np.sum(np.abs(z)))


def group_lasso_objective(dictionary: Mat, x: Mat, z: BlockMatrix, tau: float) -> float:
    r = x - dictionary @ z.flat
    return 0.5 * float(np.sum(r * r)) + tau * float(np.sum(z.block_norms()))


def ista(dictionary: Mat, x: np.ndarray, cfg: IstaConfig) -> IstaResult:
    """
    ISTA from z⁰ = 0: z ← h_{ατ}(z − α·Wᵀ(Wz − x)).

    Returns the first iterate whose change falls below ``cfg.tol`` or the
    last iterate at ``cfg.max_iters`` with ``converged=False``.
    """
    dictionary = as_mat(dictionary, name="dictionary")
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size != dictionary.shape[0]:
        raise ShapeError("ista", expected=dictionary.shape[0], actual=x.size)

    alpha = cfg.step_size(dictionary)
    z = np.zeros(dictionary.shape[1])
    objective = [lasso_objective(dictionary, x, z, cfg.tau)]
    for it in range(1, cfg.max_iters + 1):
        z_next = soft_threshold(z - alpha * dictionary.T @ (dictionary @ z - x), alpha * cfg.tau)
        delta = float(np.max(np.abs(z_next - z))) if z.size else 0.0
        z = z_next
        objective.append(lasso_objective(dictionary, x, z, cfg.tau))
        if delta < cfg.tol:
            return IstaResult(z, it, True, objective)

    logger.debug(f"ISTA stopped at max_iters={cfg.max_iters} without converging")
    return IstaResult(z, cfg.max_iters, False, objective)


def block_ista(
    dictionary: Mat,
    x: Mat,
    cfg: IstaConfig,
    mode: BlockMode = "exact"
) -> BlockIstaResult:
    """
    Block ISTA from Z⁰ = 0 for X ≈ W·Z with Z made of 3×2 blocks.

    V = Z − α·Wᵀ(W·Z − X), then the exact block threshold (α·tau) or the
    relaxed per-block threshold (α·b) is applied.
    """
    dictionary = as_mat(dictionary, name="dictionary")
    x = as_mat(x, name="measurements")
    if dictionary.shape[1] % 3 != 0:
        raise ShapeError("block_ista", expected="3k dictionary columns", actual=dictionary.shape)
    if x.shape != (dictionary.shape[0], 2):
        raise ShapeError("block_ista", expected=(dictionary.shape[0], 2), actual=x.shape)

    k = dictionary.shape[1] // 3
    alpha = cfg.step_size(dictionary)
    # same contiguous layout as the encoder's product, so one step matches it exactly
    dict_t = np.ascontiguousarray(dictionary.T)
    if mode == "relaxed":
        b = np.full(k, cfg.tau) if cfg.thresholds is None else np.asarray(cfg.thresholds, float)
        if b.size != k:
            raise ShapeError("block_ista", expected=f"{k} thresholds", actual=b.size)

        def threshold(v: BlockMatrix) -> BlockMatrix:
            return block_soft_threshold_relaxed(v, alpha * b)
    elif mode == "exact":
        def threshold(v: BlockMatrix) -> BlockMatrix:
            return block_soft_threshold_exact(v, alpha * cfg.tau)
    else:
        raise ConfigurationError(f"Unknown block ISTA mode: '{mode}'", config_field="mode")

    z = BlockMatrix.zeros(k)
    objective = [group_lasso_objective(dictionary, x, z, cfg.tau)]
    for it in range(1, cfg.max_iters + 1):
        v = z.flat + alpha * (dict_t @ (x - dictionary @ z.flat))
        z_next = threshold(BlockMatrix(v))
        delta = float(np.max(np.abs(z_next.flat - z.flat)))
        z = z_next
        objective.append(group_lasso_objective(dictionary, x, z, cfg.tau))
        if delta < cfg.tol:
            return BlockIstaResult(z, it, True, objective)

    return BlockIstaResult(z, cfg.max_iters, False, objective)


def block_residual(dictionary: Mat, x: Mat, z: BlockMatrix) -> float:
    return float(np.linalg.norm(x - dictionary @ z.flat))


def brute_force_block_sparse(dictionary: Mat, x: Mat, sparsity: int) -> BlockMatrix:
    """
    Global least-squares minimizer of ‖X − W·Z‖_F over all block supports of
    size at most ``sparsity``.

    Supports are visited by size, then lexicographically; a later support only
    wins with a strictly smaller residual.

    Raises:
        CombinatorialLimitError: Beyond 16 blocks or sparsity 3
    """
    dictionary = as_mat(dictionary, name="dictionary")
    x = as_mat(x, name="measurements")
    k = dictionary.shape[1] // 3
    if dictionary.shape[1] % 3 != 0 or x.shape != (dictionary.shape[0], 2):
        raise ShapeError("brute_force_block_sparse", expected=(dictionary.shape[0], 2),
                         actual=x.shape)
    if k > BRUTE_FORCE_MAX_BLOCKS or sparsity > BRUTE_FORCE_MAX_SPARSITY:
        raise CombinatorialLimitError(k, sparsity, BRUTE_FORCE_MAX_BLOCKS,
                                      BRUTE_FORCE_MAX_SPARSITY)

    best = np.zeros((3 * k, 2))
    best_residual = float(np.linalg.norm(x))
    for size in range(1, min(sparsity, k) + 1):
        for support in itertools.combinations(range(k), size):
            cols = np.concatenate([np.arange(3 * j, 3 * j + 3) for j in support])
            coef, *_ = np.linalg.lstsq(dictionary[:, cols], x, rcond=None)
            residual = float(np.linalg.norm(x - dictionary[:, cols] @ coef))
            if residual < best_residual - 1e-12 * max(1.0, best_residual):
                best = np.zeros((3 * k, 2))
                best[cols] = coef
                best_residual = residual
    return BlockMatrix(best)


def mutual_coherence(dictionary: Mat) -> float:
    """
    max over i ≠ j of |dᵢᵀdⱼ| / (‖dᵢ‖·‖dⱼ‖).

    Raises:
        ContractError: If any column is zero
    """
    dictionary = as_mat(dictionary, name="dictionary")
    norms = np.linalg.norm(dictionary, axis=0)
    if np.any(norms == 0.0):
        raise ContractError("mutual coherence is undefined for a zero column",
                            operation="mutual_coherence")
    if dictionary.shape[1] < 2:
        return 0.0
    normalized = dictionary / norms
    gram = np.abs(normalized.T @ normalized)
    np.fill_diagonal(gram, 0.0)
    return float(min(1.0, gram.max()))
