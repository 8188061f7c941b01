"""
Reverse-Mode Differentiation Tape

A deliberately small engine: the closed set of dense-matrix operations the
auto-encoder needs, each with a hand-written vector-Jacobian product.

Example:
    >>> tape = Tape()
    >>> x = tape.variable(np.ones((2, 2)))
    >>> loss = sum_all(square(x))
    >>> (gx,) = grad(tape, loss, [x])
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import ContractError, DegenerateCameraError, ShapeError
from .linalg import Mat, as_mat, kron_apply_blocks, svd_thin

logger = logging.getLogger(__name__)

# relative floor below which the polar derivative is considered undefined
POLAR_EPS = 1e-6

Backward = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


@dataclass
class _Node:
    kind: str
    inputs: Tuple[int, ...]
    value: np.ndarray
    backward: Optional[Backward] = None


@dataclass(frozen=True)
class Var:
    """Handle to a value recorded on a tape"""

    tape: "Tape" = field(repr=False, compare=False)
    id: int
    shape: Tuple[int, ...]

    @property
    def value(self) -> np.ndarray:
        return self.tape.value(self)

    def __matmul__(self, other: "Var") -> "Var":
        return matmul(self, other)

    def __add__(self, other: "Var") -> "Var":
        return add(self, other)

    def __sub__(self, other: "Var") -> "Var":
        return sub(self, other)

    @property
    def T(self) -> "Var":
        return transpose(self)


class Tape:
    """
    Append-only record of operations.

    Nodes are stored in creation order, which is a topological order because
    an operation can only consume vars that already exist. A tape is written
    by one thread during the forward pass and only read afterwards.
    """

    def __init__(self) -> None:
        self._nodes: List[_Node] = []

    def __len__(self) -> int:
        return len(self._nodes)

    def variable(self, value: np.ndarray, kind: str = "leaf") -> Var:
        """Record a leaf value (parameter or input)"""
        arr = np.array(value, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        return self.record(kind, (), as_mat(arr, name=kind), None)

    def constant(self, value: np.ndarray) -> Var:
        return self.variable(value, kind="constant")

    def record(
        self,
        kind: str,
        inputs: Sequence[Var],
        value: np.ndarray,
        backward: Optional[Backward]
    ) -> Var:
        for v in inputs:
            if v.tape is not self:
                raise ContractError(f"{kind}: input var belongs to another tape", operation=kind)
        self._nodes.append(_Node(kind, tuple(v.id for v in inputs), value, backward))
        return Var(self, len(self._nodes) - 1, value.shape)

    def value(self, var: Var) -> np.ndarray:
        return self._nodes[var.id].value

    def backward(self, loss: Var) -> Dict[int, np.ndarray]:
        """
        Propagate adjoints from ``loss`` to every node it depends on.

        Returns:
            Mapping from node id to the gradient of the loss w.r.t. that node
        """
        if loss.tape is not self:
            raise ContractError("loss var belongs to another tape", operation="grad")
        if int(np.prod(loss.shape)) != 1:
            raise ContractError(f"loss must be scalar-shaped, got {loss.shape}", operation="grad")

        adjoints: Dict[int, np.ndarray] = {loss.id: np.ones(loss.shape)}
        for node_id in range(loss.id, -1, -1):
            g = adjoints.get(node_id)
            node = self._nodes[node_id]
            if g is None or node.backward is None:
                continue
            for input_id, g_in in zip(node.inputs, node.backward(g)):
                if g_in is None:
                    continue
                if input_id in adjoints:
                    adjoints[input_id] = adjoints[input_id] + g_in
                else:
                    adjoints[input_id] = g_in
        return adjoints


def grad(tape: Tape, loss: Var, wrt: Sequence[Var]) -> List[Mat]:
    """
    Gradient of a scalar loss with respect to each var in ``wrt``.

    Vars the loss does not depend on get a zero gradient.

    Raises:
        ContractError: If the loss is not scalar-shaped or a var is foreign
    """
    adjoints = tape.backward(loss)
    grads = []
    for v in wrt:
        if v.tape is not tape:
            raise ContractError("wrt var belongs to another tape", operation="grad")
        g = adjoints.get(v.id)
        grads.append(np.zeros(v.shape) if g is None else g)
    return grads


def _same_shape(op: str, a: Var, b: Var) -> None:
    if a.shape != b.shape:
        raise ShapeError(op, expected=a.shape, actual=b.shape)


def add(a: Var, b: Var) -> Var:
    _same_shape("add", a, b)
    return a.tape.record("add", (a, b), a.value + b.value, lambda g: (g, g))


def sub(a: Var, b: Var) -> Var:
    _same_shape("sub", a, b)
    return a.tape.record("sub", (a, b), a.value - b.value, lambda g: (g, -g))


def matmul(a: Var, b: Var) -> Var:
    av, bv = a.value, b.value
    if av.shape[1] != bv.shape[0]:
        raise ShapeError("matmul", expected=f"(m, {av.shape[1]}) @ ({av.shape[1]}, n)",
                         actual=f"{av.shape} @ {bv.shape}")
    return a.tape.record("matmul", (a, b), av @ bv, lambda g: (g @ bv.T, av.T @ g))


def transpose(a: Var) -> Var:
    return a.tape.record("transpose", (a,), np.ascontiguousarray(a.value.T), lambda g: (g.T,))


def reshape(a: Var, shape: Tuple[int, int]) -> Var:
    av = a.value
    if int(np.prod(shape)) != av.size:
        raise ShapeError("reshape", expected=av.size, actual=shape)
    return a.tape.record("reshape", (a,), av.reshape(shape),
                         lambda g: (g.reshape(av.shape),))


def square(a: Var) -> Var:
    av = a.value
    return a.tape.record("square", (a,), av * av, lambda g: (2.0 * av * g,))


def sum_all(a: Var) -> Var:
    av = a.value
    return a.tape.record("sum", (a,), np.array([[av.sum()]]),
                         lambda g: (np.full(av.shape, g[0, 0]),))


def frobenius_norm(a: Var) -> Var:
    """‖a‖_F as a 1×1 var; the subgradient at zero is zero."""
    av = a.value
    norm = float(np.sqrt(np.sum(av * av)))

    def backward(g: np.ndarray) -> Tuple[np.ndarray]:
        if norm == 0.0:
            return (np.zeros_like(av),)
        return (g[0, 0] * av / norm,)

    return a.tape.record("frobenius_norm", (a,), np.array([[norm]]), backward)


def kron_apply(d: Var, x: Var) -> Var:
    """
    (d ⊗ I₃)ᵀ · x for x stored as k_in stacked 3×m blocks.
    """
    dv, xv = d.value, x.value
    k_in, k_out = dv.shape
    if xv.shape[0] != 3 * k_in:
        raise ShapeError("kron_apply", expected=f"{3 * k_in} rows", actual=xv.shape)
    m = xv.shape[1]
    xb = xv.reshape(k_in, 3, m)
    out = kron_apply_blocks(dv, xb).reshape(3 * k_out, m)

    def backward(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        gb = g.reshape(k_out, 3, m)
        gd = np.einsum("iab,jab->ij", xb, gb)
        gx = np.einsum("ij,jab->iab", dv, gb).reshape(xv.shape)
        return gd, gx

    return d.tape.record("kron_apply", (d, x), out, backward)


def _broadcast_threshold(x: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, bool]:
    if b.size == x.size:
        return b.reshape(x.shape), False
    if x.ndim == 2 and x.shape[0] % 3 == 0 and b.size == x.shape[0] // 3:
        return np.repeat(b.reshape(-1), 3)[:, None] * np.ones((1, x.shape[1])), True
    raise ShapeError("relu_bias", expected=f"{x.size} or {x.shape[0] // 3} thresholds",
                     actual=b.size)


def relu_bias(x: Var, b: Var) -> Var:
    """
    max(x − b, 0) with b per 3×m block or per element.

    The subgradient at exactly zero is zero.
    """
    xv, bv = x.value, b.value
    bb, per_block = _broadcast_threshold(xv, bv)
    pre = xv - bb
    mask = pre > 0.0
    out = np.where(mask, pre, 0.0)

    def backward(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        gm = np.where(mask, g, 0.0)
        if per_block:
            gb = -gm.reshape(bv.size, -1).sum(axis=1).reshape(bv.shape)
        else:
            gb = -gm.reshape(bv.shape)
        return gm, gb

    return x.tape.record("relu_bias", (x, b), out, backward)


def block_combine(x: Var, c: Var) -> Var:
    """Σⱼ cⱼ · (block j of x) for x stored as k stacked 3×m blocks."""
    xv, cv = x.value, c.value
    k = cv.size
    if xv.shape[0] != 3 * k:
        raise ShapeError("block_combine", expected=f"{3 * k} rows", actual=xv.shape)
    m = xv.shape[1]
    xb = xv.reshape(k, 3, m)
    cf = cv.reshape(-1)
    out = np.einsum("j,jab->ab", cf, xb)

    def backward(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        gx = (cf[:, None, None] * g[None, :, :]).reshape(xv.shape)
        gc = np.einsum("jab,ab->j", xb, g).reshape(cv.shape)
        return gx, gc

    return x.tape.record("block_combine", (x, c), out, backward)


def polar_threshold(m: np.ndarray) -> float:
    return POLAR_EPS * max(1.0, float(np.linalg.norm(m)))


def orthonormalize_3x2(m: Var) -> Var:
    """
    Nearest semi-orthonormal matrix U·Vᵀ of a 3×2 camera estimate.

    The backward pass is the derivative of the polar factor, which stays
    defined when both singular values coincide.

    Raises:
        ShapeError: If m is not 3×2
        DegenerateCameraError: If σ_min(m) ≤ 1e-6·max(1, ‖m‖_F)
    """
    mv = m.value
    if mv.shape != (3, 2):
        raise ShapeError("orthonormalize_3x2", expected=(3, 2), actual=mv.shape)
    u, sigma, v = svd_thin(mv)
    threshold = polar_threshold(mv)
    if sigma[1] <= threshold:
        raise DegenerateCameraError(float(sigma[1]), threshold)
    q = u @ v.T
    p_inv = (v / sigma) @ v.T
    denom = sigma[:, None] + sigma[None, :]

    def backward(g: np.ndarray) -> Tuple[np.ndarray]:
        a = v.T @ (q.T @ g) @ v
        b = v @ (a / denom) @ v.T
        gm = (g - q @ (q.T @ g)) @ p_inv + q @ (b - b.T)
        return (gm,)

    return m.tape.record("orthonormalize_3x2", (m,), q, backward)
