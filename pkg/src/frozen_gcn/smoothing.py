"""Oversmoothing diagnostics.

The oversmoothing subspace M of a graph is spanned, per connected component
c, by ``D_hat^{1/2} 1_c``; these are the eigenvectors of ``A_hat`` for
eigenvalue 1. ``d_M(H)`` is the Frobenius distance of H to ``M (x) R^C``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import cdist, pdist

from frozen_gcn.graph import NormalizedAdjacency
from frozen_gcn.linalg import laplacian_lambda, largest_singular_value, spmm
from frozen_gcn.model import GRAPH_CONV, ModelParams


@dataclass(frozen=True, eq=False)
class SubspaceBasis:
    vectors: np.ndarray  # (N, k), orthonormal columns

    @property
    def count(self) -> int:
        return self.vectors.shape[1]


@dataclass
class SmoothingReport:
    lambda_mode: str
    lam: float
    d_before: list[float] = field(default_factory=list)
    d_after: list[float] = field(default_factory=list)
    s_layer: list[float] = field(default_factory=list)
    bound_holds: list[bool] = field(default_factory=list)

    @property
    def s_product(self) -> float:
        return float(np.prod(self.s_layer))

    @property
    def violations(self) -> int:
        return sum(not b for b in self.bound_holds)

    def rows(self):
        for i, (a, b, s, ok) in enumerate(zip(self.d_before, self.d_after,
                                              self.s_layer, self.bound_holds)):
            yield {"layer": i + 1, "d_M_before": a, "d_M_after": b, "s_lh": s,
                   "lambda": self.lam, "bound_holds": ok}

    def to_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.DictWriter(f, fieldnames=["layer", "d_M_before", "d_M_after",
                                              "s_lh", "lambda", "bound_holds"],
                               lineterminator="\n")
            w.writeheader()
            for r in self.rows():
                w.writerow({k: (repr(v) if isinstance(v, float) else v)
                            for k, v in r.items()})
        return path


def oversmoothing_basis(adj: NormalizedAdjacency) -> SubspaceBasis:
    n_comp, comp = connected_components(adj.matrix, directed=False)
    root_deg = np.sqrt(adj.degrees)
    basis = np.zeros((adj.num_nodes, n_comp))
    for c in range(n_comp):
        members = comp == c
        v = np.where(members, root_deg, 0.0)
        basis[:, c] = v / np.linalg.norm(v)
    return SubspaceBasis(basis)


def subspace_distance(h: np.ndarray, basis: SubspaceBasis) -> float:
    h = np.asarray(h, dtype=np.float64)
    if h.ndim == 1:
        h = h[:, None]
    u = basis.vectors
    if h.shape[0] != u.shape[0]:
        raise ValueError(f"H has {h.shape[0]} rows, basis has {u.shape[0]}")
    return float(np.linalg.norm(h - u @ (u.T @ h)))


def singular_value_product(params: ModelParams, layers=None, **kw):
    """Per-layer largest singular values and their product.

    ``layers`` selects indices (default: all layers).
    """
    idx = range(params.depth) if layers is None else layers
    s = [largest_singular_value(params.weights[i], **kw) for i in idx]
    return s, float(np.prod(s))


def contraction_check(params: ModelParams, adj: NormalizedAdjacency, x: np.ndarray,
                      lambda_mode: str = "laplacian", lam: float | None = None,
                      basis: SubspaceBasis | None = None,
                      s_layer=None, rtol: float = 1e-12,
                      atol: float = 1e-12) -> SmoothingReport:
    """Layer-by-layer test of ``d_M(f(H)) <= s * lambda * d_M(H)``.

    Dense layers have no propagation step, so their factor is ``s`` alone.
    The reported flags are observations; nothing is raised on a violation.
    ``atol`` is relative to the norm of the layer output, which absorbs
    rounding when H already lies (almost) inside M.
    """
    if lam is None:
        lam = laplacian_lambda(adj, lambda_mode)
    basis = basis or oversmoothing_basis(adj)
    if s_layer is None:
        s_layer, _ = singular_value_product(params)
    rep = SmoothingReport(lambda_mode=lambda_mode, lam=lam)
    h = x
    for i, (spec, w) in enumerate(zip(params.specs, params.weights)):
        d0 = subspace_distance(h, basis)
        p = spmm(adj, h) if spec.kind == GRAPH_CONV else h
        z = p @ w
        h = np.maximum(z, 0.0) if spec.activation == "relu" else z
        d1 = subspace_distance(h, basis)
        factor = s_layer[i] * (lam if spec.kind == GRAPH_CONV else 1.0)
        rep.d_before.append(d0)
        rep.d_after.append(d1)
        rep.s_layer.append(s_layer[i])
        slack = atol * np.linalg.norm(h)
        rep.bound_holds.append(bool(d1 <= factor * d0 * (1 + rtol) + slack))
    return rep


def violation_counts(params: ModelParams, adj: NormalizedAdjacency, inputs,
                     modes=("laplacian", "alt")) -> dict:
    """Number of per-layer bound violations summed over several inputs."""
    basis = oversmoothing_basis(adj)
    s_layer, _ = singular_value_product(params)
    out = {}
    for mode in modes:
        lam = laplacian_lambda(adj, mode)
        out[mode] = sum(
            contraction_check(params, adj, x, mode, lam=lam, basis=basis,
                              s_layer=s_layer).violations
            for x in inputs)
    return out


def pairwise_similarity(h: np.ndarray):
    """Mean cosine similarity and mean Euclidean distance over all row pairs.

    Pairs involving an all-zero row count as similarity 0.
    """
    h = np.asarray(h, dtype=np.float64)
    n = h.shape[0]
    if n < 2:
        raise ValueError("need at least two rows")
    norms = np.linalg.norm(h, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    u = h / safe[:, None]
    u[norms == 0] = 0.0
    # sum over i<j of u_i.u_j = (||sum u||^2 - sum ||u_i||^2) / 2
    total = u.sum(axis=0)
    pair_sum = (total @ total - np.sum(u * u)) / 2
    n_pairs = n * (n - 1) / 2
    return float(pair_sum / n_pairs), _mean_pairwise_distance(h, n_pairs)


def _mean_pairwise_distance(h: np.ndarray, n_pairs: float, block: int = 1024) -> float:
    n = h.shape[0]
    if n <= block:
        return float(pdist(h).mean())
    total = 0.0
    for i in range(0, n, block):
        rows = h[i:i + block]
        total += pdist(rows).sum()
        if i + block < n:
            total += cdist(rows, h[i + block:]).sum()
    return float(total / n_pairs)
