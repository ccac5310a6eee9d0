"""Dense float64 primitives: validated matmul, stable softmax, activations,
a seeded splittable RNG, and the central-difference gradient oracle that
every analytic backward pass in this package is checked against.

A "matrix" throughout the package is a C-contiguous 2-D ``numpy.ndarray``
of float64. Helpers here validate that contract; operations never return
NaN or Inf silently.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import NumericError, ShapeError

Matrix = np.ndarray


def as_matrix(values, rows: int | None = None, cols: int | None = None) -> Matrix:
    """Coerce nested sequences or an ndarray to a float64 2-D array."""
    m = np.ascontiguousarray(np.asarray(values, dtype=np.float64))
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={m.ndim}")
    if rows is not None and m.shape[0] != rows:
        raise ShapeError(f"expected {rows} rows, got {m.shape[0]}")
    if cols is not None and m.shape[1] != cols:
        raise ShapeError(f"expected {cols} cols, got {m.shape[1]}")
    return m


def assert_finite(a: np.ndarray, what: str = "array") -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NumericError(f"{what} contains non-finite entries")
    return a


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Matrix product with explicit shape checking."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} x {b.shape}")
    return assert_finite(a @ b, "matmul result")


def softmax_row(v) -> np.ndarray:
    """Stable softmax of a 1-D vector (max subtraction before exp)."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("softmax_row expects a non-empty 1-D vector")
    assert_finite(v, "softmax input")
    shifted = v - v.max()
    e = np.exp(shifted)
    return e / e.sum()


def relu(x):
    """max(0, x), elementwise on arrays."""
    return np.maximum(x, 0.0)


def leaky_relu(x, slope: float = 0.2):
    """x for x >= 0, slope*x otherwise. slope must lie in (0, 1)."""
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must be in (0, 1), got {slope}")
    x = np.asarray(x, dtype=np.float64)
    out = np.where(x >= 0.0, x, slope * x)
    return float(out) if out.ndim == 0 else out


def relu_grad_mask(pre: np.ndarray) -> np.ndarray:
    # subgradient at exactly 0 is 0
    return (pre > 0.0).astype(np.float64)


def leaky_relu_grad(pre: np.ndarray, slope: float) -> np.ndarray:
    # derivative at exactly 0 takes the negative-side slope
    return np.where(pre > 0.0, 1.0, slope)


def finite_diff_grad(
    f: Callable[[np.ndarray], float], x, eps: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient estimate of a scalar function.

    Evaluates f at x +- eps*e_i for every coordinate; the workhorse oracle
    for checking analytic backward passes.
    """
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    x = np.asarray(x, dtype=np.float64).copy()
    grad = np.empty_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(f(x))
        flat[i] = orig - eps
        lo = float(f(x))
        flat[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NumericError(f"function not finite near coordinate {i}")
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Norm-based relative deviation used by the gradient check suites."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(float(np.linalg.norm(a)), float(np.linalg.norm(b)), 1e-12)
    return float(np.linalg.norm(a - b)) / denom


class SeededRng:
    """Deterministic RNG: one seed, one stream, replayable anywhere.

    Wraps a PCG64 generator. ``split`` derives independent child streams
    from (seed, key) so each experiment stage owns its own stream without
    coupling draw order between stages.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def split(self, key: int) -> "SeededRng":
        child = np.random.SeedSequence(entropy=self.seed, spawn_key=(int(key),))
        return SeededRng(int(child.generate_state(1, np.uint64)[0]))

    def normal(self, shape, scale: float = 1.0) -> np.ndarray:
        return scale * self._gen.standard_normal(size=shape)

    def uniform(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def random(self) -> float:
        return float(self._gen.random())

    def choice(self, seq: Sequence, size=None, replace: bool = True):
        return self._gen.choice(seq, size=size, replace=replace)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def shuffle(self, items: list) -> None:
        self._gen.shuffle(items)
