import json
import os
import pickle
import shutil
import subprocess
from pathlib import Path

import numpy as np
import pytest
import scipy.sparse as sp

from cnl_convert.cli import run
from cnl_convert.manifest import EXPECTED_COUNTS, verify_bundle
from cnl_convert.planetoid import RawDataError, convert_planetoid
from cnl_convert.twitch import convert_twitch


def write_planetoid_fixture(raw_dir: Path, name="toyset", with_gap=False):
    """Five allx nodes + two test nodes (one gap node when requested)."""
    raw_dir.mkdir(parents=True, exist_ok=True)
    d, classes = 4, 3
    rng = np.random.default_rng(0)
    allx = sp.csr_matrix(rng.random((5, d)).round(2))
    x = allx[:3]
    if with_gap:
        # test positions 5 and 7; node 6 is an isolated gap node
        test_index = [5, 7]
        tx = sp.csr_matrix(rng.random((2, d)).round(2))
        n = 8
        graph = {i: [] for i in range(n)}
        edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 7)]
    else:
        test_index = [5, 6]
        tx = sp.csr_matrix(rng.random((2, d)).round(2))
        n = 7
        graph = {i: [] for i in range(n)}
        edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 0)]
    for u, v in edges:
        graph[u].append(v)
        graph[v].append(u)

    def onehot(rows, seed):
        g = np.random.default_rng(seed)
        out = np.zeros((rows, classes))
        out[np.arange(rows), g.integers(0, classes, rows)] = 1
        return out

    blobs = {
        "x": x, "tx": tx, "allx": allx,
        "y": onehot(x.shape[0], 1), "ty": onehot(tx.shape[0], 2), "ally": onehot(5, 3),
        "graph": graph,
    }
    for suffix, blob in blobs.items():
        with open(raw_dir / f"ind.{name}.{suffix}", "wb") as fh:
            pickle.dump(blob, fh)
    (raw_dir / f"ind.{name}.test.index").write_text("\n".join(str(i) for i in test_index) + "\n")
    return n, len(edges)


def write_twitch_fixture(raw_dir: Path):
    raw_dir.mkdir(parents=True, exist_ok=True)
    (raw_dir / "XX_edges.csv").write_text("from,to\n0,1\n1,2\n3,0\n")
    (raw_dir / "XX_features.json").write_text(json.dumps({"0": [0, 2], "1": [1], "2": [], "3": [4]}))
    (raw_dir / "XX_target.csv").write_text(
        "id,days,mature,views,partner,new_id\n"
        "70,1,True,5,False,0\n71,2,False,5,False,1\n"
        "72,3,True,5,False,2\n73,4,False,5,False,3\n"
    )


def test_planetoid_fixture_converts(tmp_path):
    raw, out = tmp_path / "raw", tmp_path / "out"
    n, undirected = write_planetoid_fixture(raw)
    manifest = convert_planetoid("toyset", raw, out)
    assert manifest.num_nodes == n
    assert manifest.num_classes == 3
    assert manifest.undirected_pairs == undirected
    assert manifest.directed_edges_written == 2 * undirected
    meta = json.loads((out / "meta.json").read_text())
    assert meta["num_nodes"] == n
    assert meta["num_edges"] == 2 * undirected
    # symmetrized: every edge present in both directions
    rows = (out / "edges.csv").read_text().splitlines()[1:]
    pairs = {tuple(map(int, r.split(","))) for r in rows}
    assert all((b, a) in pairs for a, b in pairs)


def test_planetoid_gap_fill(tmp_path):
    raw, out = tmp_path / "raw", tmp_path / "out"
    n, _ = write_planetoid_fixture(raw, with_gap=True)
    manifest = convert_planetoid("toyset", raw, out)
    assert manifest.gap_filled_nodes == 1
    assert manifest.num_nodes == n == 8
    feats = (out / "features.csv").read_text().splitlines()
    gap_row = feats[1 + 6].split(",")  # node 6 is the gap node
    assert all(float(v) == 0.0 for v in gap_row[1:])


def test_planetoid_missing_file_errors(tmp_path):
    raw = tmp_path / "raw"
    write_planetoid_fixture(raw)
    os.remove(raw / "ind.toyset.graph")
    with pytest.raises(RawDataError, match="graph"):
        convert_planetoid("toyset", raw, tmp_path / "out")


def test_conversion_is_idempotent_byte_for_byte(tmp_path):
    raw = tmp_path / "raw"
    write_planetoid_fixture(raw)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    convert_planetoid("toyset", raw, out_a).write(out_a / "manifest.json")
    convert_planetoid("toyset", raw, out_b).write(out_b / "manifest.json")
    for name in ("edges.csv", "features.csv", "labels.csv", "meta.json"):
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes()
    # manifests differ only in output_dir
    ma = json.loads((out_a / "manifest.json").read_text())
    mb = json.loads((out_b / "manifest.json").read_text())
    ma.pop("output_dir"), mb.pop("output_dir")
    assert ma == mb


def test_twitch_fixture_converts(tmp_path):
    raw, out = tmp_path / "raw", tmp_path / "out"
    write_twitch_fixture(raw)
    manifest = convert_twitch("xx", raw, out, vocab_size=6)
    assert manifest.num_nodes == 4
    assert manifest.num_classes == 2
    assert manifest.raw_edge_rows == 3
    assert manifest.directed_edges_written == 6
    feats = (out / "features.csv").read_text().splitlines()
    assert feats[1].startswith("0,1,0,1,0,0,0")  # multi-hot ids 0 and 2 of vocab 6
    labels = (out / "labels.csv").read_text().splitlines()[1:]
    assert [r.split(",")[1] for r in labels] == ["1", "0", "1", "0"]


def test_verify_pass_and_tamper_detection(tmp_path):
    raw, out = tmp_path / "raw", tmp_path / "out"
    write_planetoid_fixture(raw)
    convert_planetoid("toyset", raw, out).write(out / "manifest.json")
    assert verify_bundle(out)["status"] == "pass"

    lines = (out / "edges.csv").read_text().splitlines(keepends=True)
    (out / "edges.csv").write_text("".join(lines[:-1]))  # delete one edge row
    report = verify_bundle(out)
    assert report["status"] == "fail"
    assert any("delta -1" in p for p in report["problems"])


def test_verify_empty_dir_lists_missing_files(tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    report = verify_bundle(empty)
    assert report["status"] == "fail"
    assert "missing files" in report["problems"][0]


def test_cli_convert_and_verify(tmp_path, capsys):
    raw, out = tmp_path / "raw", tmp_path / "out"
    write_twitch_fixture(raw)
    assert run(["convert", "twitch-xx", "--raw", str(raw), "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["dataset"] == "twitch-xx"
    assert run(["verify", str(out)]) == 0
    assert run(["verify", str(out), "--expect-nodes", "99", "--expect-classes", "2"]) == 3
    assert run(["convert", "unknown", "--raw", str(raw), "--out", str(out)]) == 1


def test_emitted_bundle_loads_through_primary_engine(tmp_path):
    """The engine's own loader/CLI must accept converter output unchanged."""
    cnl = shutil.which("cnl")
    if cnl is None:
        pytest.skip("primary `cnl` CLI not installed")
    raw, out = tmp_path / "raw", tmp_path / "out"
    write_planetoid_fixture(raw)
    convert_planetoid("toyset", raw, out)
    proc = subprocess.run([cnl, "validate", "--bundle", str(out)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "nodes=7" in proc.stdout


@pytest.mark.parametrize("dataset", ["cora", "citeseer", "pubmed", "twitch-pt"])
def test_reference_counts_on_real_releases(dataset, tmp_path):
    """Full-release validation; runs only when raw data is provided locally."""
    root = os.environ.get("CNL_RAW_DATA")
    if not root or not (Path(root) / dataset).is_dir():
        pytest.skip(f"set CNL_RAW_DATA to a directory containing {dataset}/ raw files")
    out = tmp_path / dataset
    code = run(["convert", dataset, "--raw", str(Path(root) / dataset), "--out", str(out),
                "--expect-table1"])
    assert code == 0
    nodes, _, classes = EXPECTED_COUNTS[dataset]
    assert verify_bundle(out, (nodes, classes))["status"] == "pass"
