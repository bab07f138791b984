"""Bundle directory I/O and the native MUSAE/Twitch raw parser.

Bundle directory layout (all numeric CSV fields are decimal text; floats are
written with 17 significant digits so they round-trip exactly):

    edges.csv     header ``src,dst`` or ``src,dst,weight``
    features.csv  header ``node_id,f0,...,f{d-1}``
    labels.csv    header ``node_id,label``
    meta.json     num_nodes, num_edges, feature_dim, class_count, directed, source

The MUSAE raw layout is one directory holding ``*_edges.csv`` (header
``from,to``), ``*_features.json`` (node id -> list of integer feature ids)
and ``*_target.csv`` (contains ``mature`` and ``new_id`` columns).
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from cnlgnn.errors import DataError
from cnlgnn.graph import GraphBundle, build_bundle


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_bundle(bundle: GraphBundle, path, source: str = "cnlgnn") -> None:
    """Write a bundle directory; the weight column is emitted only when needed."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)

    explicit_weights = not np.all(bundle.edge_weights == 1.0)
    with open(path / "edges.csv", "w", newline="") as fh:
        if explicit_weights:
            fh.write("src,dst,weight\n")
            for (s, d), w in zip(bundle.edges, bundle.edge_weights):
                fh.write(f"{s},{d},{_fmt(w)}\n")
        else:
            fh.write("src,dst\n")
            for s, d in bundle.edges:
                fh.write(f"{s},{d}\n")

    with open(path / "features.csv", "w", newline="") as fh:
        fh.write("node_id," + ",".join(f"f{j}" for j in range(bundle.feature_dim)) + "\n")
        for i in range(bundle.num_nodes):
            fh.write(str(i) + "," + ",".join(_fmt(v) for v in bundle.features[i]) + "\n")

    with open(path / "labels.csv", "w", newline="") as fh:
        fh.write("node_id,label\n")
        for i in range(bundle.num_nodes):
            fh.write(f"{i},{bundle.labels[i]}\n")

    meta = {
        "num_nodes": bundle.num_nodes,
        "num_edges": bundle.num_edges,
        "feature_dim": bundle.feature_dim,
        "class_count": bundle.class_count,
        "directed": True,
        "source": source,
    }
    with open(path / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_rows(path: Path, expected_header: list[str] | None = None):
    try:
        fh = open(path, newline="")
    except FileNotFoundError:
        raise DataError(f"missing bundle file: {path}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path.name}: empty file") from None
        rows = list(reader)
    return header, rows


def load_bundle(path) -> GraphBundle:
    """Load and validate a bundle directory, cross-checking meta.json counts."""
    path = Path(path)
    meta_path = path / "meta.json"
    if not meta_path.exists():
        raise DataError(f"missing bundle file: {meta_path}")
    with open(meta_path) as fh:
        meta = json.load(fh)
    for key in ("num_nodes", "num_edges", "feature_dim", "class_count"):
        if key not in meta:
            raise DataError(f"meta.json missing key {key!r}")

    header, rows = _read_rows(path / "edges.csv")
    if header not in (["src", "dst"], ["src", "dst", "weight"]):
        raise DataError(f"edges.csv: unexpected header {header}")
    has_weight = len(header) == 3
    edges = np.zeros((len(rows), 2), dtype=np.int64)
    weights = np.ones(len(rows), dtype=np.float64)
    for i, row in enumerate(rows):
        try:
            edges[i, 0], edges[i, 1] = int(row[0]), int(row[1])
            if has_weight:
                weights[i] = float(row[2])
        except (ValueError, IndexError):
            raise DataError(f"edges.csv line {i + 2}: malformed row {row!r}") from None

    header, rows = _read_rows(path / "features.csv")
    d = len(header) - 1
    if header[:1] != ["node_id"] or d < 0:
        raise DataError(f"features.csv: unexpected header {header}")
    feats = np.zeros((len(rows), d), dtype=np.float64)
    for i, row in enumerate(rows):
        try:
            if int(row[0]) != i:
                raise ValueError
            feats[i] = [float(v) for v in row[1:]]
        except (ValueError, IndexError):
            raise DataError(f"features.csv line {i + 2}: malformed row") from None

    header, rows = _read_rows(path / "labels.csv")
    if header != ["node_id", "label"]:
        raise DataError(f"labels.csv: unexpected header {header}")
    labels = np.zeros(len(rows), dtype=np.int64)
    for i, row in enumerate(rows):
        try:
            if int(row[0]) != i:
                raise ValueError
            labels[i] = int(row[1])
        except (ValueError, IndexError):
            raise DataError(f"labels.csv line {i + 2}: malformed row") from None

    if feats.shape[0] != meta["num_nodes"]:
        raise DataError(f"meta num_nodes={meta['num_nodes']} but features.csv has {feats.shape[0]} rows")
    if edges.shape[0] != meta["num_edges"]:
        raise DataError(f"meta num_edges={meta['num_edges']} but edges.csv has {edges.shape[0]} rows")
    if d != meta["feature_dim"]:
        raise DataError(f"meta feature_dim={meta['feature_dim']} but features.csv has {d} columns")

    bundle, stats = build_bundle(edges, feats, labels, weights, class_count=meta["class_count"])
    if stats.duplicates_removed or stats.self_loops_removed:
        raise DataError(
            f"bundle at {path} contains {stats.duplicates_removed} duplicate edge(s) "
            f"and {stats.self_loops_removed} self-loop(s); stored bundles must be clean"
        )
    return bundle


def _find_one(directory: Path, suffix: str) -> Path:
    hits = sorted(p for p in directory.iterdir() if p.name.endswith(suffix))
    if not hits:
        raise DataError(f"no *{suffix} file found in {directory}")
    return hits[0]


def parse_musae(directory, vocab_size: int | None = None) -> GraphBundle:
    """Parse a MUSAE/Twitch region directory into a bundle.

    Features are multi-hot over the integer feature-id vocabulary; pass
    ``vocab_size`` to pin a shared vocabulary across regions (needed when
    several regions must agree on feature_dim). Edges are symmetrized.
    """
    directory = Path(directory)
    edges_path = _find_one(directory, "_edges.csv")
    feats_path = _find_one(directory, "_features.json")
    target_path = _find_one(directory, "_target.csv")

    with open(feats_path) as fh:
        feat_map = json.load(fh)

    with open(target_path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "mature" not in reader.fieldnames:
            raise DataError(f"{target_path.name}: expected a 'mature' column")
        id_col = "new_id" if "new_id" in reader.fieldnames else "id"
        labels_by_id: dict[int, int] = {}
        for row in reader:
            labels_by_id[int(row[id_col])] = 1 if row["mature"].strip().lower() in ("true", "1") else 0

    num_nodes = len(labels_by_id)
    if sorted(labels_by_id) != list(range(num_nodes)):
        raise DataError(f"{target_path.name}: node ids are not dense 0..{num_nodes - 1}")

    header, rows = _read_rows(edges_path)
    if [h.strip() for h in header] != ["from", "to"]:
        raise DataError(f"{edges_path.name}: expected header 'from,to', got {header}")
    raw_edges = []
    for i, row in enumerate(rows):
        try:
            u, v = int(row[0]), int(row[1])
        except (ValueError, IndexError):
            raise DataError(f"{edges_path.name} line {i + 2}: malformed row") from None
        for node in (u, v):
            if node not in labels_by_id:
                raise DataError(f"{edges_path.name} line {i + 2}: node {node} missing from targets")
        raw_edges.append((u, v))
        raw_edges.append((v, u))

    max_id = -1
    for ids in feat_map.values():
        if ids:
            max_id = max(max_id, max(ids))
    if vocab_size is None:
        vocab_size = max_id + 1
    elif max_id >= vocab_size:
        raise DataError(f"feature id {max_id} exceeds vocab_size {vocab_size}")

    feats = np.zeros((num_nodes, vocab_size), dtype=np.float64)
    for key, ids in feat_map.items():
        node = int(key)
        if node not in labels_by_id:
            raise DataError(f"{feats_path.name}: node {node} missing from targets")
        feats[node, ids] = 1.0
    missing = set(range(num_nodes)) - {int(k) for k in feat_map}
    if missing:
        raise DataError(f"{feats_path.name}: nodes missing feature lists: {sorted(missing)[:5]}")

    labels = np.array([labels_by_id[i] for i in range(num_nodes)], dtype=np.int64)
    bundle, _ = build_bundle(raw_edges, feats, labels, class_count=2)
    return bundle


def bundle_fingerprint(bundle: GraphBundle) -> bytes:
    """Stable byte digest of all bundle contents (used to prove immutability)."""
    import hashlib

    h = hashlib.sha256()
    h.update(np.int64(bundle.num_nodes).tobytes())
    h.update(np.int64(bundle.class_count).tobytes())
    for arr in (bundle.edges, bundle.features, bundle.labels, bundle.edge_weights):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.digest()
