"""Conversion manifests and bundle verification."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

from cnl_convert.bundle_writer import BUNDLE_FILES, sha256_file

# Published reference counts per dataset: (nodes, edges-as-released, classes).
# Edge counts follow each release's own convention: the citation releases
# count symmetrized directed edges, the Twitch releases count undirected rows.
EXPECTED_COUNTS: dict[str, tuple[int, int, int]] = {
    "cora": (2708, 10556, 7),
    "citeseer": (3327, 9104, 6),
    "pubmed": (19717, 88648, 3),
    "twitch-de": (9498, 315774, 2),
    "twitch-en": (7126, 35324, 2),
    "twitch-pt": (1912, 31299, 2),
    "twitch-es": (4648, 59382, 2),
    "twitch-ru": (4385, 37304, 2),
    "twitch-fr": (6549, 112666, 2),
}


@dataclass
class ConversionManifest:
    dataset: str
    output_dir: str
    num_nodes: int
    num_classes: int
    raw_edge_rows: int
    undirected_pairs: int
    directed_edges_written: int
    directedness: str
    label_mapping: dict[str, int] = field(default_factory=dict)
    gap_filled_nodes: int = 0
    checksums: dict[str, str] = field(default_factory=dict)
    expectation: dict | None = None

    def check_expectation(self) -> dict:
        """Compare against the reference table; edge counts match under
        whichever directedness convention agrees."""
        expected = EXPECTED_COUNTS.get(self.dataset)
        if expected is None:
            return {"status": "unknown-dataset"}
        nodes, edges, classes = expected
        notes = []
        ok = True
        if self.num_nodes != nodes:
            ok = False
            notes.append(f"nodes {self.num_nodes} != expected {nodes}")
        if self.num_classes != classes:
            ok = False
            notes.append(f"classes {self.num_classes} != expected {classes}")
        conventions = {
            "raw-rows": self.raw_edge_rows,
            "undirected-pairs": self.undirected_pairs,
            "directed": self.directed_edges_written,
        }
        matched = [name for name, count in conventions.items() if count == edges]
        if matched:
            notes.append(f"edge count {edges} matches convention(s): {', '.join(matched)}")
        else:
            ok = False
            notes.append(f"edge count {edges} matches no convention (counts: {conventions})")
        return {"status": "pass" if ok else "fail", "notes": notes}

    def write(self, path: Path) -> None:
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")


def load_manifest(path: Path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def verify_bundle(bundle_dir, expected_counts: tuple[int, int] | None = None) -> dict:
    """Recount the emitted files and report discrepancies. Never raises.

    ``expected_counts`` is (num_nodes, num_classes) when given; edge counts
    are always cross-checked file-vs-meta.
    """
    bundle_dir = Path(bundle_dir)
    problems: list[str] = []
    missing = [name for name in BUNDLE_FILES if not (bundle_dir / name).exists()]
    if missing:
        return {"status": "fail", "problems": [f"missing files: {', '.join(missing)}"]}

    meta = json.loads((bundle_dir / "meta.json").read_text())
    edge_rows = sum(1 for _ in open(bundle_dir / "edges.csv")) - 1
    feat_rows = sum(1 for _ in open(bundle_dir / "features.csv")) - 1
    label_rows = sum(1 for _ in open(bundle_dir / "labels.csv")) - 1

    if edge_rows != meta.get("num_edges"):
        problems.append(f"edges.csv rows {edge_rows} != meta num_edges {meta.get('num_edges')} "
                        f"(delta {edge_rows - meta.get('num_edges')})")
    if feat_rows != meta.get("num_nodes"):
        problems.append(f"features.csv rows {feat_rows} != meta num_nodes {meta.get('num_nodes')}")
    if label_rows != meta.get("num_nodes"):
        problems.append(f"labels.csv rows {label_rows} != meta num_nodes {meta.get('num_nodes')}")

    manifest_path = bundle_dir / "manifest.json"
    if manifest_path.exists():
        recorded = load_manifest(manifest_path).get("checksums", {})
        for name, digest in recorded.items():
            actual = sha256_file(bundle_dir / name)
            if actual != digest:
                problems.append(f"checksum mismatch for {name}")

    if expected_counts is not None:
        nodes, classes = expected_counts
        if meta.get("num_nodes") != nodes:
            problems.append(f"num_nodes {meta.get('num_nodes')} != expected {nodes}")
        if meta.get("class_count") != classes:
            problems.append(f"class_count {meta.get('class_count')} != expected {classes}")

    return {"status": "pass" if not problems else "fail", "problems": problems}
