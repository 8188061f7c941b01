"""
Dense Linear Algebra for Small Matrices

Float64 helpers shared by every other module:
- validated matrix construction (finite, 2-D)
- checked products and the blockwise Kronecker apply
- thin SVD with a closed form for two-column matrices
- seeded random semi-orthonormal cameras
"""

import logging
from typing import Iterable, List, Optional, Tuple, Union

import numpy as np
import numpy.typing as npt

from .exceptions import NumericError, ShapeError

logger = logging.getLogger(__name__)

Mat = npt.NDArray[np.float64]

DEFAULT_SEED = 0


def as_mat(value: Union[Mat, Iterable], name: str = "matrix") -> Mat:
    """
    Coerce to a finite, C-contiguous float64 matrix.

    Raises:
        ShapeError: If the input is not 2-D
        NumericError: If any entry is NaN or infinite
    """
    arr = np.ascontiguousarray(value, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(name, expected="2-D array", actual=arr.shape)
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite entries")
    return arr


def default_rng(seed: Optional[int] = None) -> np.random.Generator:
    """Seeded generator; ``None`` falls back to the global default seed."""
    return np.random.default_rng(DEFAULT_SEED if seed is None else seed)


def child_seeds(seed: Optional[int], count: int) -> List[int]:
    """Independent integer seeds derived from one root seed"""
    root = np.random.SeedSequence(DEFAULT_SEED if seed is None else seed)
    return [int(child.generate_state(1)[0]) for child in root.spawn(count)]


class BlockMatrix:
    """
    A (3k)×2 matrix viewed as k stacked 3×2 blocks.

    Block j occupies rows 3j..3j+3 of the flat form. Instances are immutable;
    ``blocks`` is a read-only (k, 3, 2) view of the same memory.

    Example:
        >>> z = BlockMatrix.zeros(4)
        >>> z.flat.shape
        (12, 2)
    """

    __slots__ = ("_flat",)

    def __init__(self, flat: Union[Mat, Iterable]):
        arr = as_mat(flat, name="BlockMatrix")
        if arr.shape[1] != 2 or arr.shape[0] % 3 != 0:
            raise ShapeError("BlockMatrix", expected="(3k, 2)", actual=arr.shape)
        arr = arr.copy()
        arr.setflags(write=False)
        self._flat = arr

    @classmethod
    def from_blocks(cls, blocks: Union[np.ndarray, Iterable]) -> "BlockMatrix":
        arr = np.asarray(blocks, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[1:] != (3, 2):
            raise ShapeError("BlockMatrix.from_blocks", expected="(k, 3, 2)", actual=arr.shape)
        return cls(arr.reshape(-1, 2))

    @classmethod
    def zeros(cls, k: int) -> "BlockMatrix":
        return cls(np.zeros((3 * k, 2)))

    @property
    def flat(self) -> Mat:
        return self._flat

    @property
    def blocks(self) -> np.ndarray:
        return self._flat.reshape(-1, 3, 2)

    @property
    def k(self) -> int:
        return self._flat.shape[0] // 3

    def block(self, j: int) -> Mat:
        return self.blocks[j]

    def block_norms(self) -> np.ndarray:
        """Frobenius norm of every block"""
        return np.sqrt(np.sum(self.blocks ** 2, axis=(1, 2)))

    def active_blocks(self, tol: float = 0.0) -> Tuple[int, ...]:
        """Indices of blocks whose Frobenius norm exceeds ``tol``"""
        return tuple(int(j) for j in np.flatnonzero(self.block_norms() > tol))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BlockMatrix):
            return NotImplemented
        return bool(np.array_equal(self._flat, other._flat))

    def __hash__(self) -> int:
        return hash(self._flat.tobytes())

    def __repr__(self) -> str:
        return f"BlockMatrix(k={self.k})"


def matmul(a: Mat, b: Mat) -> Mat:
    """
    Matrix product with an explicit dimension check.

    Raises:
        ShapeError: If ``a.cols != b.rows``
    """
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", expected=f"(m, {a.shape[-1]}) @ ({a.shape[-1]}, n)",
                         actual=f"{a.shape} @ {b.shape}")
    return a @ b


def kron_identity_transpose_apply(d: Mat, x: BlockMatrix) -> BlockMatrix:
    """
    Compute (d ⊗ I₃)ᵀ · flat(x) without forming the Kronecker product.

    Output block j is Σᵢ d[i, j] · (input block i).

    Args:
        d: k_in × k_out mixing matrix
        x: BlockMatrix with k_in blocks

    Returns:
        BlockMatrix with k_out blocks

    Raises:
        ShapeError: If the block count of ``x`` differs from ``d.rows``
    """
    if d.ndim != 2 or d.shape[0] != x.k:
        raise ShapeError("kron_identity_transpose_apply", expected=f"{x.k} dictionary rows",
                         actual=d.shape)
    return BlockMatrix.from_blocks(kron_apply_blocks(d, x.blocks))


def kron_apply_blocks(d: Mat, blocks: np.ndarray) -> np.ndarray:
    """Blockwise kernel on a raw (k_in, 3, m) array; shared with autodiff."""
    return np.einsum("ij,iab->jab", d, blocks)


def explicit_kron_transpose(d: Mat) -> Mat:
    """Materialized (d ⊗ I₃)ᵀ, used as a test oracle and in diagnostics"""
    return np.kron(d, np.eye(3)).T


def gram_eig_2x2(g: Mat) -> Tuple[np.ndarray, Mat]:
    """
    Closed-form eigen-decomposition of a symmetric 2×2 matrix.

    Returns:
        (eigenvalues descending, eigenvectors as columns)
    """
    a, b, c = g[0, 0], 0.5 * (g[0, 1] + g[1, 0]), g[1, 1]
    theta = 0.5 * np.arctan2(2.0 * b, a - c)
    cs, sn = np.cos(theta), np.sin(theta)
    v = np.array([[cs, -sn], [sn, cs]])
    lam1 = a * cs * cs + 2.0 * b * cs * sn + c * sn * sn
    lam2 = a * sn * sn - 2.0 * b * cs * sn + c * cs * cs
    return np.array([lam1, lam2]), v


def _complete_orthonormal(u1: np.ndarray) -> np.ndarray:
    # unit vector orthogonal to u1, built from the least aligned axis
    axis = np.zeros_like(u1)
    axis[int(np.argmin(np.abs(u1)))] = 1.0
    w = axis - (u1 @ axis) * u1
    return w / np.linalg.norm(w)


def _svd_two_columns(m: Mat) -> Tuple[Mat, np.ndarray, Mat]:
    _, v = gram_eig_2x2(m.T @ m)
    mv = m @ v
    sigma1 = float(np.linalg.norm(mv[:, 0]))
    if sigma1 == 0.0:
        return np.eye(m.shape[0], 2), np.zeros(2), np.eye(2)

    u1 = mv[:, 0] / sigma1
    r = mv[:, 1] - (u1 @ mv[:, 1]) * u1
    sigma2 = float(np.linalg.norm(r))
    if sigma2 > np.finfo(np.float64).tiny * 1e10:
        u2 = r / sigma2
    else:
        u2 = _complete_orthonormal(u1)
        sigma2 = 0.0

    u = np.column_stack([u1, u2])
    sigma = np.array([sigma1, sigma2])
    if sigma2 > sigma1:
        # only reachable through rounding when σ₁ ≈ σ₂
        u, sigma, v = u[:, ::-1], sigma[::-1], v[:, ::-1]
    return np.ascontiguousarray(u), sigma, np.ascontiguousarray(v)


def svd_thin(m: Mat) -> Tuple[Mat, np.ndarray, Mat]:
    """
    Thin SVD m = U·diag(σ)·Vᵀ with U: rows×cols and V: cols×cols.

    Two-column inputs (cameras) use the closed-form 2×2 Gram eigen-decomposition;
    larger inputs go through LAPACK.

    Raises:
        ShapeError: If ``m`` has more columns than rows
        NumericError: If the decomposition does not converge
    """
    m = as_mat(m, name="svd_thin input")
    rows, cols = m.shape
    if rows < cols:
        raise ShapeError("svd_thin", expected="rows >= cols", actual=m.shape)

    if cols == 2:
        return _svd_two_columns(m)

    try:
        u, s, vt = np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError as e:
        raise NumericError(f"SVD did not converge for {m.shape} matrix: {e}",
                           residual=float(np.linalg.norm(m, np.inf)))
    return u, s, vt.T


def spectral_norm(m: Mat, iters: int = 50, seed: Optional[int] = None) -> float:
    """
    Largest singular value estimated by power iteration on mᵀm.

    Args:
        m: Input matrix
        iters: Number of power iterations
        seed: Seed for the start vector
    """
    x = default_rng(seed).standard_normal(m.shape[1])
    x /= np.linalg.norm(x)
    sigma = 0.0
    for _ in range(iters):
        y = m.T @ (m @ x)
        norm = np.linalg.norm(y)
        if norm == 0.0:
            return 0.0
        x = y / norm
        sigma = float(np.sqrt(norm))
    return sigma


def random_semiorthonormal_3x2(rng: np.random.Generator) -> Mat:
    """
    Random 3×2 matrix with orthonormal columns, distributed uniformly.

    QR of a 3×3 standard Gaussian matrix with the R diagonal made positive,
    keeping the first two columns of Q.
    """
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    signs = np.where(np.diag(r) < 0.0, -1.0, 1.0)
    q = q * signs
    return np.ascontiguousarray(q[:, :2])
