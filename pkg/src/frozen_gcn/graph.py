"""Graph bundles: ingestion, adjacency normalization, splits and fixtures.

A bundle directory holds four UTF-8 text files:

    edges.tsv     src<TAB>dst<TAB>weight, 0-based node ids
    features.csv  N rows of C comma-separated reals
    labels.csv    header ``K=<int>``, then one label per line (-1 = unlabeled)
    masks.csv     N rows ``train,val,test`` of 0/1 flags

Edges are undirected: a listed pair (i, j, w) adds w to both A[i, j] and
A[j, i]. Repeated pairs (in either orientation) are summed.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from frozen_gcn._karate import KARATE_CLUB, KARATE_EDGES


class BundleError(ValueError):
    """Malformed bundle contents or files."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class GraphBundle:
    num_nodes: int
    edges: np.ndarray  # (E, 2) int64
    weights: np.ndarray  # (E,) float64
    features: np.ndarray  # (N, C) float64
    labels: np.ndarray  # (N,) int64, -1 = unlabeled
    num_classes: int
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray
    name: str = "graph"

    def __post_init__(self):
        n = int(self.num_nodes)
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        masks = [np.asarray(m, dtype=bool).reshape(-1) for m in
                 (self.train_mask, self.val_mask, self.test_mask)]

        if len(weights) != len(edges):
            raise BundleError("edge and weight counts differ")
        if len(edges) and (edges.min() < 0 or edges.max() >= n):
            raise BundleError(f"edge endpoint out of range [0, {n})")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise BundleError("edge weights must be finite and non-negative")
        if features.ndim != 2 or features.shape[0] != n:
            raise BundleError(f"feature matrix must have {n} rows")
        if len(labels) != n:
            raise BundleError(f"expected {n} labels, got {len(labels)}")
        if np.any(labels < -1) or np.any(labels >= self.num_classes):
            raise BundleError(f"label outside [-1, {self.num_classes})")
        for m in masks:
            if len(m) != n:
                raise BundleError(f"mask length must be {n}")
        train, val, test = masks
        if np.any(train & val) or np.any(train & test) or np.any(val & test):
            raise BundleError("train/val/test masks overlap")
        if np.any(labels[train] < 0):
            raise BundleError("train-mask node without a label")

        set_ = object.__setattr__
        set_(self, "num_nodes", n)
        set_(self, "edges", _frozen(edges))
        set_(self, "weights", _frozen(weights))
        set_(self, "features", _frozen(features))
        set_(self, "labels", _frozen(labels))
        set_(self, "train_mask", _frozen(train))
        set_(self, "val_mask", _frozen(val))
        set_(self, "test_mask", _frozen(test))

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    def replace(self, **changes) -> GraphBundle:
        return dataclasses.replace(self, **changes)

    def with_masks(self, masks) -> GraphBundle:
        train, val, test = masks
        return self.replace(train_mask=train, val_mask=val, test_mask=test)

    def equals(self, other: GraphBundle) -> bool:
        return (
            self.num_nodes == other.num_nodes
            and self.num_classes == other.num_classes
            and all(
                np.array_equal(getattr(self, f), getattr(other, f))
                for f in ("edges", "weights", "features", "labels",
                          "train_mask", "val_mask", "test_mask")
            )
        )


@dataclass(frozen=True, eq=False)
class NormalizedAdjacency:
    """``D^-1/2 (A + I) D^-1/2`` in CSR form, with the degrees of ``A + I``."""

    matrix: sp.csr_matrix
    degrees: np.ndarray

    @property
    def num_nodes(self) -> int:
        return self.matrix.shape[0]

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


def raw_adjacency(edges, weights, num_nodes: int) -> sp.csr_matrix:
    """Symmetric weighted adjacency ``A`` (self-loops kept, duplicates summed)."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    if len(edges) and (edges.min() < 0 or edges.max() >= num_nodes):
        raise BundleError(f"edge endpoint out of range [0, {num_nodes})")
    if np.any(weights < 0):
        raise BundleError("negative edge weight")
    src, dst = edges[:, 0], edges[:, 1]
    off = src != dst
    rows = np.concatenate([src, dst[off]])
    cols = np.concatenate([dst, src[off]])
    vals = np.concatenate([weights, weights[off]])
    # coo -> csr sums duplicates
    return sp.coo_matrix((vals, (rows, cols)), shape=(num_nodes, num_nodes)).tocsr()


def normalize_adjacency(edges, num_nodes: int, weights=None) -> NormalizedAdjacency:
    """Augmented symmetric normalization of an undirected edge list.

    ``edges`` is either an (E, 2) array with optional ``weights`` (default 1)
    or an (E, 3) array / list of ``(src, dst, weight)`` triples.
    """
    if num_nodes < 1:
        raise BundleError("graph needs at least one node")
    arr = np.asarray(edges, dtype=np.float64)
    if weights is None and arr.ndim == 2 and arr.shape[1] == 2:
        weights = np.ones(len(arr))
    if weights is None:
        arr = arr.reshape(-1, 3) if arr.size else np.zeros((0, 3))
        pairs = arr[:, :2]
        if np.any(pairs != np.round(pairs)):
            raise BundleError("node ids must be integers")
        pairs, weights = pairs.astype(np.int64), arr[:, 2]
    else:
        pairs = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    a = raw_adjacency(pairs, weights, num_nodes)
    a_hat = (a + sp.identity(num_nodes, format="csr")).tocsr()
    deg = np.asarray(a_hat.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(deg)
    d = sp.diags(inv_sqrt)
    norm = (d @ a_hat @ d).tocsr()
    norm.sort_indices()
    return NormalizedAdjacency(matrix=norm, degrees=deg)


def bundle_adjacency(bundle: GraphBundle) -> NormalizedAdjacency:
    return normalize_adjacency(bundle.edges, bundle.num_nodes, weights=bundle.weights)


def count_components(bundle_or_adj) -> int:
    m = bundle_or_adj.matrix if isinstance(bundle_or_adj, NormalizedAdjacency) \
        else bundle_adjacency(bundle_or_adj).matrix
    return connected_components(m, directed=False)[0]


# ---------------------------------------------------------------- file i/o

def save_bundle(bundle: GraphBundle, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "edges.tsv", "w", encoding="utf-8", newline="\n") as f:
        for (s, t), w in zip(bundle.edges.tolist(), bundle.weights.tolist()):
            f.write(f"{s}\t{t}\t{w!r}\n")
    with open(d / "features.csv", "w", encoding="utf-8", newline="\n") as f:
        for row in bundle.features.tolist():
            f.write(",".join(repr(v) for v in row) + "\n")
    with open(d / "labels.csv", "w", encoding="utf-8", newline="\n") as f:
        f.write(f"K={bundle.num_classes}\n")
        f.writelines(f"{v}\n" for v in bundle.labels.tolist())
    with open(d / "masks.csv", "w", encoding="utf-8", newline="\n") as f:
        for a, b, c in zip(bundle.train_mask, bundle.val_mask, bundle.test_mask):
            f.write(f"{int(a)},{int(b)},{int(c)}\n")
    return d


def _lines(path: Path) -> list[str]:
    if not path.exists():
        raise BundleError(f"missing bundle file: {path}")
    return [ln for ln in path.read_text(encoding="utf-8").split("\n") if ln.strip()]


def load_bundle(directory, name: str | None = None) -> GraphBundle:
    d = Path(directory)
    if not d.is_dir():
        raise BundleError(f"bundle directory not found: {d}")

    feat_rows = [ln.split(",") for ln in _lines(d / "features.csv")]
    widths = {len(r) for r in feat_rows}
    if len(widths) > 1:
        bad = next(i for i, r in enumerate(feat_rows) if len(r) != len(feat_rows[0]))
        raise BundleError(f"ragged feature rows: row {bad} has {len(feat_rows[bad])} "
                          f"values, expected {len(feat_rows[0])}")
    features = np.array(feat_rows, dtype=np.float64)
    n = features.shape[0]

    label_lines = _lines(d / "labels.csv")
    header = label_lines[0].strip()
    if not header.startswith("K="):
        raise BundleError("labels.csv must start with a 'K=<int>' header")
    k = int(header[2:])
    labels = np.array([int(v) for v in label_lines[1:]], dtype=np.int64)
    if np.any(labels >= k) or np.any(labels < -1):
        raise BundleError(f"label out of range for K={k}")

    edge_lines = _lines(d / "edges.tsv")
    if edge_lines:
        parts = [ln.split("\t") for ln in edge_lines]
        if any(len(p) != 3 for p in parts):
            raise BundleError("edges.tsv rows must be src<TAB>dst<TAB>weight")
        edges = np.array([[int(p[0]), int(p[1])] for p in parts], dtype=np.int64)
        weights = np.array([float(p[2]) for p in parts])
    else:
        edges, weights = np.zeros((0, 2), dtype=np.int64), np.zeros(0)

    mask_rows = [ln.split(",") for ln in _lines(d / "masks.csv")]
    if any(len(r) != 3 for r in mask_rows):
        raise BundleError("masks.csv rows must have three 0/1 columns")
    masks = np.array(mask_rows, dtype=np.int64).astype(bool)
    if len(masks) != n:
        raise BundleError(f"masks.csv has {len(masks)} rows, expected {n}")

    return GraphBundle(
        num_nodes=n, edges=edges, weights=weights, features=features,
        labels=labels, num_classes=k, train_mask=masks[:, 0],
        val_mask=masks[:, 1], test_mask=masks[:, 2], name=name or d.name,
    )


# ------------------------------------------------------------- transforms

def cold_start_transform(bundle: GraphBundle) -> GraphBundle:
    """Zero the feature vectors of every node outside the train mask."""
    x = bundle.features.copy()
    x[~bundle.train_mask] = 0.0
    return bundle.replace(features=x)


def row_normalize(features: np.ndarray) -> np.ndarray:
    """Scale each row to unit L1 norm (the row sum for non-negative features).
    All-zero rows stay zero."""
    s = np.abs(features).sum(axis=1, keepdims=True)
    s[s == 0] = 1.0
    return features / s


def make_split(bundle: GraphBundle, per_class_train: int, num_val: int, seed: int):
    """Random split: ``per_class_train`` nodes per class, ``num_val`` validation
    nodes, every other labeled node goes to test. Returns (train, val, test)."""
    n, k = bundle.num_nodes, bundle.num_classes
    if per_class_train * k + num_val > n:
        raise BundleError("split larger than the graph")
    rng = np.random.default_rng(seed)
    labels = bundle.labels
    train = np.zeros(n, dtype=bool)
    for c in range(k):
        members = np.flatnonzero(labels == c)
        if len(members) < per_class_train:
            raise BundleError(f"class {c} has {len(members)} nodes, "
                              f"fewer than {per_class_train}")
        train[rng.choice(members, size=per_class_train, replace=False)] = True
    rest = np.flatnonzero(~train & (labels >= 0))
    if num_val > len(rest):
        raise BundleError("not enough labeled nodes left for validation")
    val = np.zeros(n, dtype=bool)
    val[rng.choice(rest, size=num_val, replace=False)] = True
    test = ~train & ~val & (labels >= 0)
    return train, val, test


# --------------------------------------------------------------- fixtures

def synth_sbm(block_sizes, p_in: float, p_out: float, feature_dim: int, seed: int,
              feature_noise: float = 1.0) -> GraphBundle:
    """Stochastic block model with Gaussian features around a per-block mean.

    Labels are block ids; masks are left empty (see ``make_split``).
    """
    sizes = [int(s) for s in block_sizes]
    if not sizes or any(s < 1 for s in sizes):
        raise BundleError("every block needs at least one node")
    if not (0 <= p_in <= 1 and 0 <= p_out <= 1):
        raise BundleError("probabilities must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(len(sizes)), sizes)
    n = len(labels)
    iu, ju = np.triu_indices(n, k=1)
    p = np.where(labels[iu] == labels[ju], p_in, p_out)
    keep = rng.random(len(iu)) < p
    edges = np.stack([iu[keep], ju[keep]], axis=1)
    means = rng.normal(size=(len(sizes), feature_dim))
    features = means[labels] + feature_noise * rng.normal(size=(n, feature_dim))
    empty = np.zeros(n, dtype=bool)
    return GraphBundle(
        num_nodes=n, edges=edges, weights=np.ones(len(edges)), features=features,
        labels=labels, num_classes=len(sizes), train_mask=empty, val_mask=empty,
        test_mask=empty, name="sbm",
    )


def karate_bundle() -> GraphBundle:
    """Karate club with identity features; the two club leaders are the
    training nodes and everyone else is test."""
    n = 34
    train = np.zeros(n, dtype=bool)
    train[[0, 33]] = True
    return GraphBundle(
        num_nodes=n, edges=np.array(KARATE_EDGES), weights=np.ones(len(KARATE_EDGES)),
        features=np.eye(n), labels=np.array(KARATE_CLUB), num_classes=2,
        train_mask=train, val_mask=np.zeros(n, dtype=bool), test_mask=~train,
        name="karate",
    )
