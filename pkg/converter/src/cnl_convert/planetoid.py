"""Converter for the Planetoid raw citation-network distribution.

Raw layout for dataset NAME: ind.NAME.{x,tx,allx,y,ty,ally,graph,test.index}.
The x/tx/allx files hold pickled scipy sparse matrices, y/ty/ally pickled
one-hot label arrays, graph a pickled node -> neighbour-list dict, and
test.index the graph positions of the test rows, one per line.

Assembly follows the distribution's own convention: features are
vstack(allx, tx) with the test rows scattered back to their graph positions.
Releases with gaps in test.index (citeseer) get zero-feature rows for the
missing isolated nodes; their labels default to class 0 and the count is
recorded in the manifest.
"""

from __future__ import annotations

import pickle
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from cnl_convert.bundle_writer import symmetrize_dedup, write_bundle_dir
from cnl_convert.manifest import ConversionManifest

RAW_SUFFIXES = ("x", "tx", "allx", "y", "ty", "ally", "graph", "test.index")


class RawDataError(ValueError):
    pass


def _load_pickle(path: Path):
    if not path.exists():
        raise RawDataError(f"missing raw file: {path}")
    with open(path, "rb") as fh:
        return pickle.load(fh, encoding="latin1")


def _load_test_index(path: Path) -> np.ndarray:
    if not path.exists():
        raise RawDataError(f"missing raw file: {path}")
    try:
        return np.array([int(line) for line in path.read_text().split()], dtype=np.int64)
    except ValueError as exc:
        raise RawDataError(f"{path}: {exc}") from None


def convert_planetoid(name: str, raw_dir, out_dir) -> ConversionManifest:
    raw_dir, out_dir = Path(raw_dir), Path(out_dir)
    x = _load_pickle(raw_dir / f"ind.{name}.x")
    tx = _load_pickle(raw_dir / f"ind.{name}.tx")
    allx = _load_pickle(raw_dir / f"ind.{name}.allx")
    y = _load_pickle(raw_dir / f"ind.{name}.y")
    ty = _load_pickle(raw_dir / f"ind.{name}.ty")
    ally = _load_pickle(raw_dir / f"ind.{name}.ally")
    graph = _load_pickle(raw_dir / f"ind.{name}.graph")
    test_idx = _load_test_index(raw_dir / f"ind.{name}.test.index")

    for mat, label in ((x, "x"), (tx, "tx"), (allx, "allx")):
        if not sp.issparse(mat):
            raise RawDataError(f"ind.{name}.{label} is not a sparse matrix")

    test_sorted = np.sort(test_idx)
    gap_filled = 0
    full_range = np.arange(test_sorted.min(), test_sorted.max() + 1)
    if full_range.size != test_idx.size:
        # isolated test nodes absent from test.index: zero features, class 0
        gap_filled = int(full_range.size - test_idx.size)
        tx_ext = sp.lil_matrix((full_range.size, x.shape[1]))
        tx_ext[test_sorted - test_sorted.min(), :] = tx
        tx = tx_ext.tocsr()
        ty_ext = np.zeros((full_range.size, y.shape[1]))
        ty_ext[test_sorted - test_sorted.min(), :] = ty
        ty = ty_ext

    features = sp.vstack((allx, tx)).tolil()
    features[test_idx, :] = features[test_sorted, :]
    features = np.asarray(features.todense(), dtype=np.float64)

    onehot = np.vstack((ally, ty))
    onehot[test_idx, :] = onehot[test_sorted, :]
    labels = onehot.argmax(axis=1).astype(np.int64)
    class_count = int(onehot.shape[1])

    num_nodes = features.shape[0]
    if len(graph) != num_nodes:
        raise RawDataError(f"graph dict covers {len(graph)} nodes but features have {num_nodes} rows")

    raw_pairs = []
    for u, nbrs in graph.items():
        for v in nbrs:
            raw_pairs.append((int(u), int(v)))
    raw_rows = len(raw_pairs)
    directed, undirected_pairs = symmetrize_dedup(np.array(raw_pairs, dtype=np.int64).reshape(-1, 2))

    checksums = write_bundle_dir(
        out_dir, directed, features, labels, class_count,
        source=f"planetoid:{name} (citation edges symmetrized)",
    )
    manifest = ConversionManifest(
        dataset=name,
        output_dir=str(out_dir),
        num_nodes=num_nodes,
        num_classes=class_count,
        raw_edge_rows=raw_rows,
        undirected_pairs=undirected_pairs,
        directed_edges_written=int(directed.shape[0]),
        directedness="symmetrized directed (both directions stored)",
        label_mapping={f"onehot_col_{c}": c for c in range(class_count)},
        gap_filled_nodes=gap_filled,
        checksums=checksums,
    )
    return manifest
