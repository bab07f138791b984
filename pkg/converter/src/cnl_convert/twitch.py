"""Converter for the multi-region Twitch social-network release.

A region directory holds REGION_edges.csv (header from,to), a
REGION_features.json map of node id -> integer feature-id list, and
REGION_target.csv with a boolean ``mature`` column and the dense ``new_id``.
Features become multi-hot rows; pass ``vocab_size`` to pin the release-wide
vocabulary when several regions must share a feature space.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from cnl_convert.bundle_writer import symmetrize_dedup, write_bundle_dir
from cnl_convert.manifest import ConversionManifest
from cnl_convert.planetoid import RawDataError


def _find_one(directory: Path, suffix: str) -> Path:
    hits = sorted(p for p in directory.iterdir() if p.name.endswith(suffix))
    if not hits:
        raise RawDataError(f"no *{suffix} file in {directory}")
    return hits[0]


def convert_twitch(region: str, raw_dir, out_dir, vocab_size: int | None = None) -> ConversionManifest:
    raw_dir, out_dir = Path(raw_dir), Path(out_dir)
    edges_path = _find_one(raw_dir, "_edges.csv")
    feats_path = _find_one(raw_dir, "_features.json")
    target_path = _find_one(raw_dir, "_target.csv")

    with open(target_path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "mature" not in reader.fieldnames:
            raise RawDataError(f"{target_path.name}: expected a 'mature' column")
        id_col = "new_id" if "new_id" in reader.fieldnames else "id"
        labels_by_id = {
            int(row[id_col]): 1 if row["mature"].strip().lower() in ("true", "1") else 0
            for row in reader
        }
    num_nodes = len(labels_by_id)
    if sorted(labels_by_id) != list(range(num_nodes)):
        raise RawDataError(f"{target_path.name}: node ids are not dense 0..{num_nodes - 1}")
    labels = np.array([labels_by_id[i] for i in range(num_nodes)], dtype=np.int64)

    raw_pairs = []
    with open(edges_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if [h.strip() for h in header] != ["from", "to"]:
            raise RawDataError(f"{edges_path.name}: expected header 'from,to'")
        for lineno, row in enumerate(reader, start=2):
            try:
                u, v = int(row[0]), int(row[1])
            except (ValueError, IndexError):
                raise RawDataError(f"{edges_path.name} line {lineno}: malformed row") from None
            for node in (u, v):
                if node not in labels_by_id:
                    raise RawDataError(f"{edges_path.name} line {lineno}: node {node} missing from targets")
            raw_pairs.append((u, v))
    raw_rows = len(raw_pairs)
    directed, undirected_pairs = symmetrize_dedup(np.array(raw_pairs, dtype=np.int64).reshape(-1, 2))

    with open(feats_path) as fh:
        feat_map = json.load(fh)
    max_id = max((max(ids) for ids in feat_map.values() if ids), default=-1)
    if vocab_size is None:
        vocab_size = max_id + 1
    elif max_id >= vocab_size:
        raise RawDataError(f"feature id {max_id} exceeds vocab size {vocab_size}")
    features = np.zeros((num_nodes, vocab_size), dtype=np.float64)
    for key, ids in feat_map.items():
        node = int(key)
        if node not in labels_by_id:
            raise RawDataError(f"{feats_path.name}: node {node} missing from targets")
        features[node, ids] = 1.0
    missing = set(range(num_nodes)) - {int(k) for k in feat_map}
    if missing:
        raise RawDataError(f"{feats_path.name}: nodes missing feature lists: {sorted(missing)[:5]}")

    checksums = write_bundle_dir(
        out_dir, directed, features, labels, 2,
        source=f"twitch:{region} (social edges symmetrized, multi-hot vocab={vocab_size})",
    )
    return ConversionManifest(
        dataset=f"twitch-{region.lower()}",
        output_dir=str(out_dir),
        num_nodes=num_nodes,
        num_classes=2,
        raw_edge_rows=raw_rows,
        undirected_pairs=undirected_pairs,
        directed_edges_written=int(directed.shape[0]),
        directedness="symmetrized directed (both directions stored)",
        label_mapping={"mature=False": 0, "mature=True": 1},
        checksums=checksums,
    )
