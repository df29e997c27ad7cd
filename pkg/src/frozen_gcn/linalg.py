"""Numerical kernels: Glorot init, sparse propagation, spectral estimators.

All arrays are float64. Random streams come from ``numpy.random.Generator``
with the PCG64 bit generator, so a seed fully determines a stream.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from frozen_gcn.graph import NormalizedAdjacency

DENSE_EIG_LIMIT = 5000


class ConvergenceError(RuntimeError):
    def __init__(self, message, estimate=None, iterations=None):
        super().__init__(message)
        self.estimate = estimate
        self.iterations = iterations


def make_rng(seed) -> np.random.Generator:
    """PCG64 generator; ``seed`` may be an int or a tuple like (seed, trial)."""
    return np.random.Generator(np.random.PCG64(seed))


def glorot_init(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """Zero-mean Gaussian weights with variance ``1 / cols``.

    ``cols`` is the output width of the layer, which matches the square
    ``d x d`` hidden case and keeps the variance tied to the width feeding the
    next layer for rectangular first/last layers.
    """
    if rows < 1 or cols < 1:
        raise ValueError(f"weight shape must be positive, got ({rows}, {cols})")
    return rng.standard_normal((rows, cols)) / np.sqrt(cols)


def spmm(adj, h: np.ndarray) -> np.ndarray:
    m = adj.matrix if isinstance(adj, NormalizedAdjacency) else adj
    if m.shape[1] != h.shape[0]:
        raise ValueError(f"cannot multiply {m.shape} by {h.shape}")
    if sp.issparse(m):
        return np.asarray(m @ h)
    return m @ h


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape[-1] != b.shape[0]:
        raise ValueError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def relu(m: np.ndarray) -> np.ndarray:
    return np.maximum(m, 0.0)


def softmax_rows(m: np.ndarray) -> np.ndarray:
    z = m - m.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def largest_singular_value(m, tol: float = 1e-12, max_iter: int = 100_000,
                           seed: int = 0) -> float:
    """Largest singular value by power iteration on the smaller Gram matrix.

    Stops once the Rayleigh-quotient estimate changes by less than
    ``tol * s``. Raises ``ConvergenceError`` after ``max_iter`` iterations.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("expected a matrix")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    if m.shape[0] < m.shape[1]:
        m = m.T  # iterate on m.T @ m of size min(shape)
    if not np.any(m):
        return 0.0

    rng = make_rng(seed)
    v = rng.standard_normal(m.shape[1])
    v /= np.linalg.norm(v)
    s_prev = 0.0
    for it in range(1, max_iter + 1):
        u = m @ v
        w = m.T @ u
        lam = float(v @ w)  # Rayleigh quotient of m.T m
        s = np.sqrt(max(lam, 0.0))
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        if it > 1 and abs(s - s_prev) < tol * s:
            return s
        s_prev = s
    raise ConvergenceError(
        f"power iteration did not converge in {max_iter} iterations",
        estimate=s_prev, iterations=max_iter,
    )


def _dense_symmetric(m) -> np.ndarray:
    m = m.toarray() if sp.issparse(m) else np.asarray(m, dtype=np.float64)
    if m.shape[0] > DENSE_EIG_LIMIT:
        raise ValueError(f"dense eigensolver limited to N <= {DENSE_EIG_LIMIT}")
    return m


def smallest_nonzero_eig(i_minus_a_hat, zero_tol: float = 1e-9) -> float:
    """Smallest eigenvalue above ``zero_tol`` of a symmetric PSD matrix."""
    eig = np.linalg.eigvalsh(_dense_symmetric(i_minus_a_hat))
    nonzero = eig[eig > zero_tol]
    if len(nonzero) == 0:
        raise ValueError("all eigenvalues are zero")
    return float(nonzero[0])


def largest_nonprincipal_eig(adj, one_tol: float = 1e-9) -> float:
    """Largest |eigenvalue| of the normalized adjacency, excluding the
    eigenvalue 1 (one copy per connected component)."""
    m = adj.matrix if isinstance(adj, NormalizedAdjacency) else adj
    eig = np.linalg.eigvalsh(_dense_symmetric(m))
    rest = eig[np.abs(eig - 1.0) > one_tol]
    return float(np.abs(rest).max()) if len(rest) else 0.0


LAMBDA_MODES = ("laplacian", "alt")
_MODE_ALIASES = {"paper": "laplacian"}


def laplacian_lambda(adj: NormalizedAdjacency, mode: str = "laplacian") -> float:
    """Contraction factor of one propagation step.

    ``laplacian``: smallest non-zero eigenvalue of ``I - A_hat``.
    ``alt``: largest non-principal |eigenvalue| of ``A_hat``.
    """
    mode = _MODE_ALIASES.get(mode, mode)
    if mode == "laplacian":
        n = adj.num_nodes
        return smallest_nonzero_eig(np.eye(n) - adj.toarray())
    if mode == "alt":
        return largest_nonprincipal_eig(adj)
    raise ValueError(f"unknown lambda mode {mode!r}")
