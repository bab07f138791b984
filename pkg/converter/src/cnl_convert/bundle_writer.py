"""Writer for the graph-bundle directory format.

Mirrors the schema the training engine consumes: edges.csv, features.csv,
labels.csv, meta.json. Output is byte-stable: edges are written in sorted
(src, dst) order and floats with 17 significant digits, so re-running a
conversion reproduces identical files.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

BUNDLE_FILES = ("edges.csv", "features.csv", "labels.csv", "meta.json")


def fmt_float(x: float) -> str:
    return f"{x:.17g}"


def write_bundle_dir(
    out_dir: Path,
    edges: np.ndarray,
    features: np.ndarray,
    labels: np.ndarray,
    class_count: int,
    source: str,
) -> dict[str, str]:
    """Write the four bundle files; returns sha256 per file name."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    edges = edges[order]

    with open(out_dir / "edges.csv", "w", newline="") as fh:
        fh.write("src,dst\n")
        for s, d in edges:
            fh.write(f"{s},{d}\n")

    features = np.asarray(features, dtype=np.float64)
    with open(out_dir / "features.csv", "w", newline="") as fh:
        fh.write("node_id," + ",".join(f"f{j}" for j in range(features.shape[1])) + "\n")
        for i in range(features.shape[0]):
            fh.write(str(i) + "," + ",".join(fmt_float(v) for v in features[i]) + "\n")

    labels = np.asarray(labels, dtype=np.int64)
    with open(out_dir / "labels.csv", "w", newline="") as fh:
        fh.write("node_id,label\n")
        for i, y in enumerate(labels):
            fh.write(f"{i},{y}\n")

    meta = {
        "num_nodes": int(features.shape[0]),
        "num_edges": int(edges.shape[0]),
        "feature_dim": int(features.shape[1]),
        "class_count": int(class_count),
        "directed": True,
        "source": source,
    }
    with open(out_dir / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")

    return {name: sha256_file(out_dir / name) for name in BUNDLE_FILES}


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def symmetrize_dedup(raw_pairs: np.ndarray) -> tuple[np.ndarray, int]:
    """Both directions of every pair, self-loops dropped, duplicates removed.

    Returns (directed edge array, undirected pair count).
    """
    raw_pairs = np.asarray(raw_pairs, dtype=np.int64).reshape(-1, 2)
    both = np.concatenate([raw_pairs, raw_pairs[:, ::-1]]) if raw_pairs.size else raw_pairs
    if both.size:
        both = both[both[:, 0] != both[:, 1]]
        both = np.unique(both, axis=0)
    pairs = np.unique(np.sort(both, axis=1), axis=0) if both.size else both
    return both, int(pairs.shape[0])
