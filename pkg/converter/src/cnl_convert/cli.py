"""The ``cnl-convert`` command line tool.

    cnl-convert convert <cora|citeseer|pubmed|twitch-XX> --raw DIR --out DIR
                        [--expect-table1] [--vocab-size N]
    cnl-convert verify <BUNDLE_DIR> [--expect-nodes N --expect-classes C]

Conversion writes the bundle files plus manifest.json; verify recounts an
existing bundle and reports discrepancies without modifying anything.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from cnl_convert.manifest import EXPECTED_COUNTS, verify_bundle
from cnl_convert.planetoid import RawDataError, convert_planetoid
from cnl_convert.twitch import convert_twitch

CITATION = ("cora", "citeseer", "pubmed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cnl-convert",
        description="Convert raw dataset releases to graph-bundle directories.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="convert one raw dataset release")
    p.add_argument("dataset", help="cora | citeseer | pubmed | twitch-XX (e.g. twitch-pt)")
    p.add_argument("--raw", type=Path, required=True, help="directory with the raw files")
    p.add_argument("--out", type=Path, required=True, help="bundle output directory")
    p.add_argument("--expect-table1", action="store_true",
                   help="fail unless counts match the published reference table")
    p.add_argument("--vocab-size", type=int, default=None,
                   help="pin the multi-hot vocabulary size (twitch only)")

    p = sub.add_parser("verify", help="recount an emitted bundle")
    p.add_argument("bundle", type=Path)
    p.add_argument("--expect-nodes", type=int, default=None)
    p.add_argument("--expect-classes", type=int, default=None)
    return parser


def cmd_convert(args) -> int:
    name = args.dataset.lower()
    try:
        if name in CITATION:
            manifest = convert_planetoid(name, args.raw, args.out)
        elif name.startswith("twitch-"):
            manifest = convert_twitch(name.split("-", 1)[1], args.raw, args.out,
                                      vocab_size=args.vocab_size)
        else:
            print(f"unknown dataset {args.dataset!r}; expected one of "
                  f"{', '.join(sorted(EXPECTED_COUNTS))}", file=sys.stderr)
            return 1
    except RawDataError as exc:
        print(f"conversion failed: {exc}", file=sys.stderr)
        return 2

    manifest.expectation = manifest.check_expectation()
    manifest.write(Path(args.out) / "manifest.json")
    print(f"dataset={manifest.dataset} nodes={manifest.num_nodes} classes={manifest.num_classes} "
          f"raw_edges={manifest.raw_edge_rows} directed_edges={manifest.directed_edges_written}")
    for note in manifest.expectation.get("notes", []):
        print(f"  note: {note}")
    if args.expect_table1 and manifest.expectation["status"] != "pass":
        print("reference-table check FAILED", file=sys.stderr)
        return 3
    return 0


def cmd_verify(args) -> int:
    expected = None
    if args.expect_nodes is not None and args.expect_classes is not None:
        expected = (args.expect_nodes, args.expect_classes)
    report = verify_bundle(args.bundle, expected)
    print(json.dumps(report, indent=2))
    return 0 if report["status"] == "pass" else 3


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return cmd_convert(args) if args.command == "convert" else cmd_verify(args)


def main() -> None:
    sys.exit(run())
