"""Converters from common public graph formats to a bundle.

Supported inputs:

* ``linqs``: ``<name>.content`` (id, features..., label) and ``<name>.cites``
  (cited citing), the format Cora and CiteSeer are distributed in.
* ``npz``: gnn-benchmark archives (Amazon Photo/Computers, Coauthor CS/Physics)
  with CSR ``adj_*`` / ``attr_*`` arrays and ``labels``.
* ``edgelist``: whitespace edge list, CSV feature matrix and a label file.

Directed inputs are folded into unique undirected pairs of weight 1.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import scipy.sparse as sp

from frozen_gcn.graph import BundleError, GraphBundle, make_split


def undirected_pairs(src, dst) -> np.ndarray:
    src, dst = np.asarray(src, dtype=np.int64), np.asarray(dst, dtype=np.int64)
    lo, hi = np.minimum(src, dst), np.maximum(src, dst)
    keep = lo != hi
    pairs = np.unique(np.stack([lo[keep], hi[keep]], axis=1), axis=0)
    return pairs.reshape(-1, 2)


def _assemble(edges, features, labels, name) -> GraphBundle:
    n = len(labels)
    empty = np.zeros(n, dtype=bool)
    k = int(labels.max()) + 1 if n else 0
    return GraphBundle(num_nodes=n, edges=edges, weights=np.ones(len(edges)),
                       features=features, labels=labels, num_classes=k,
                       train_mask=empty, val_mask=empty, test_mask=empty, name=name)


def from_linqs(content_path, cites_path, name: str | None = None) -> GraphBundle:
    ids, feats, raw_labels = [], [], []
    for line in Path(content_path).read_text(encoding="utf-8").splitlines():
        parts = line.split()
        if not parts:
            continue
        ids.append(parts[0])
        feats.append([float(v) for v in parts[1:-1]])
        raw_labels.append(parts[-1])
    index = {pid: i for i, pid in enumerate(ids)}
    classes = sorted(set(raw_labels))
    labels = np.array([classes.index(c) for c in raw_labels], dtype=np.int64)
    src, dst = [], []
    for line in Path(cites_path).read_text(encoding="utf-8").splitlines():
        parts = line.split()
        # citations to papers missing from .content are dropped
        if len(parts) == 2 and parts[0] in index and parts[1] in index:
            src.append(index[parts[0]])
            dst.append(index[parts[1]])
    return _assemble(undirected_pairs(src, dst), np.array(feats), labels,
                     name or Path(content_path).stem)


def from_npz(path, name: str | None = None) -> GraphBundle:
    with np.load(path, allow_pickle=False) as z:
        adj = sp.csr_matrix((z["adj_data"], z["adj_indices"], z["adj_indptr"]),
                            shape=tuple(z["adj_shape"]))
        if "attr_data" in z:
            x = sp.csr_matrix((z["attr_data"], z["attr_indices"], z["attr_indptr"]),
                              shape=tuple(z["attr_shape"])).toarray()
        else:
            x = z["attr_matrix"]
        labels = np.asarray(z["labels"], dtype=np.int64)
    coo = adj.tocoo()
    return _assemble(undirected_pairs(coo.row, coo.col), np.asarray(x, dtype=np.float64),
                     labels, name or Path(path).stem)


def from_edgelist(edges_path, features_path, labels_path,
                  name: str | None = None) -> GraphBundle:
    x = np.loadtxt(features_path, delimiter=",", ndmin=2)
    labels = np.loadtxt(labels_path, dtype=np.int64, ndmin=1)
    e = np.loadtxt(edges_path, dtype=np.int64, ndmin=2)
    if e.size and e.shape[1] < 2:
        raise BundleError("edge list needs two columns")
    e = e[:, :2] if e.size else np.zeros((0, 2), dtype=np.int64)
    return _assemble(undirected_pairs(e[:, 0], e[:, 1]), x, labels,
                     name or Path(edges_path).parent.name)


def with_split(bundle: GraphBundle, per_class_train: int = 20, num_val: int = 500,
               seed: int = 0) -> GraphBundle:
    return bundle.with_masks(make_split(bundle, per_class_train, num_val, seed))
