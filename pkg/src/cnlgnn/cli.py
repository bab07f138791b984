"""The ``cnl`` command line tool.

Subcommands: validate, synth, train, cv, ablate, sweep, shift, dump-scores.
All run outputs land under ``--out``: the effective configuration as
config_effective.json (reloadable via --config), delimited tables, and a PNG
figure per table. Stdout carries one summary line per unit of work; logs go
to stderr. Exit codes: 0 ok, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from cnlgnn import __version__
from cnlgnn.config import (
    FullConfig,
    build_config,
    config_help_lines,
    with_ablation,
    write_effective,
)
from cnlgnn.errors import DataError, NumericError, UsageError
from cnlgnn.graph import GraphBundle
from cnlgnn.ingest import load_bundle, write_bundle
from cnlgnn.metrics import MetricReport
from cnlgnn.model import estimate_edge_importance, init_params
from cnlgnn.plots import plot_ablation, plot_epochs, plot_shift, plot_sweep
from cnlgnn.rng import RngStream
from cnlgnn.synthetic import generate_synthetic
from cnlgnn.training import cross_validate, domain_shift_eval, evaluate, sensitivity_sweep, train
import cnlgnn.autodiff as ad

log = logging.getLogger("cnlgnn")

ABLATION_VARIANTS = {
    "cng": frozenset({"cng"}),
    "eim": frozenset({"eim"}),
    "group": frozenset({"group"}),
    "eim+group": frozenset({"eim", "group"}),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def build_parser() -> argparse.ArgumentParser:
    epilog = "config keys (key=default):\n" + "\n".join(config_help_lines())
    parser = _Parser(
        prog="cnl",
        description="Causal neighbourhood learning: train and evaluate node classifiers "
        "under counterfactual graph interventions.",
        epilog=epilog,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"cnl {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--config", type=Path, default=None, help="config file (key=value or effective JSON)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--threads", type=int, default=1, help="fold parallelism (1 = deterministic)")
        p.add_argument("--out", type=Path, required=needs_out, help="output directory")
        p.add_argument("--log-level", choices=("error", "info", "debug"), default="info")

    p = sub.add_parser("validate", help="load a bundle directory and report its shape")
    p.add_argument("--bundle", type=Path, required=True)
    common(p, needs_out=False)

    p = sub.add_parser("synth", help="generate the synthetic benchmark (train/test bundle pair)")
    common(p)

    p = sub.add_parser("train", help="train on one bundle with an internal train/val split")
    p.add_argument("--bundle", type=Path, required=True)
    p.add_argument("--dump-edge-scores", action="store_true",
                   help="also write edge_scores.csv from the trained scorer")
    p.add_argument("--dump-perturbed", action="store_true",
                   help="also write the final perturbed training graph as a bundle")
    common(p)

    p = sub.add_parser("cv", help="stratified k-fold cross-validation")
    p.add_argument("--bundle", type=Path, required=True)
    common(p)

    p = sub.add_parser("ablate", help="cross-validate ablated variants")
    p.add_argument("--bundle", type=Path, required=True)
    p.add_argument("--variants", default="cng,eim,group,eim+group",
                   help="comma list from: cng,eim,group,eim+group")
    common(p)

    p = sub.add_parser("sweep", help="edge-drop-rate sensitivity sweep")
    p.add_argument("--bundle", type=Path, required=True)
    p.add_argument("--taus", default="0.1,0.15,0.2,0.25,0.3",
                   help="comma list of edge drop rates")
    common(p)

    p = sub.add_parser("shift", help="train on one domain, evaluate on others")
    p.add_argument("--train-bundle", type=Path, required=True)
    p.add_argument("--test-bundle", action="append", required=True, metavar="NAME=PATH",
                   help="evaluation domain (repeatable)")
    common(p)

    p = sub.add_parser("dump-scores", help="write per-edge importance scores")
    p.add_argument("--bundle", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, default=None,
                   help="parameter checkpoint; fresh seeded init when omitted")
    common(p)

    return parser


def _prepare(args) -> FullConfig:
    logging.basicConfig(
        stream=sys.stderr,
        level=getattr(logging, args.log_level.upper()),
        format="%(levelname)s %(name)s: %(message)s",
    )
    cfg = build_config(args.config, args.set, seed=args.seed)
    out = getattr(args, "out", None)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_effective(cfg, out / "config_effective.json")
    return cfg


def _write_csv(path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _write_epochs_csv(path, epoch_logs: list[list[dict]]) -> None:
    header = ["fold", "epoch", "classification", "contrastive", "orthogonality",
              "mutual_info", "total", "val_macro_f1"]
    rows = [
        [fold, e["epoch"], _fmt(e["classification"]), _fmt(e["contrastive"]),
         _fmt(e["orthogonality"]), _fmt(e["mutual_info"]), _fmt(e["total"]), _fmt(e["val_f1"])]
        for fold, entries in enumerate(epoch_logs)
        for e in entries
    ]
    _write_csv(path, header, rows)


def _metrics_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _report_tree(report: MetricReport) -> dict:
    return report.as_dict()


def _dump_edge_scores(bundle: GraphBundle, params, variant: str, path) -> None:
    scores = estimate_edge_importance(bundle, bundle.features, params, variant=variant)
    rows = [
        [int(s), int(d), _fmt(scores.raw[i]), _fmt(scores.normalized[i])]
        for i, (s, d) in enumerate(bundle.edges)
    ]
    _write_csv(path, ["src", "dst", "raw_logit", "normalized"], rows)


# --- subcommand bodies ---------------------------------------------------------


def cmd_validate(args) -> int:
    _prepare(args)
    bundle = load_bundle(args.bundle)
    print(
        f"bundle={args.bundle} nodes={bundle.num_nodes} edges={bundle.num_edges} "
        f"feature_dim={bundle.feature_dim} classes={bundle.class_count}"
    )
    return 0


def cmd_synth(args) -> int:
    cfg = _prepare(args)
    train_b, test_b, groups = generate_synthetic(cfg.synth)
    write_bundle(train_b, args.out / "train", source=f"synthetic seed={cfg.synth.seed} split=train")
    write_bundle(test_b, args.out / "test", source=f"synthetic seed={cfg.synth.seed} split=test")
    _write_csv(args.out / "groups.csv", ["node_id", "group"],
               [[i, int(g)] for i, g in enumerate(groups)])
    print(f"synth out={args.out} nodes={train_b.num_nodes} "
          f"train_edges={train_b.num_edges} test_edges={test_b.num_edges}")
    return 0


def cmd_train(args) -> int:
    cfg = _prepare(args)
    bundle = load_bundle(args.bundle)
    result = train(bundle, cfg.run)
    ad.save_checkpoint(args.out / "params.cnl", result.params.arrays())
    _write_epochs_csv(args.out / "epochs.csv", [result.epoch_log])
    plot_epochs([result.epoch_log], args.out / "epochs.png")
    _metrics_json(args.out / "metrics.json", {
        "best_val_f1": result.best_val_f1,
        "best_epoch": result.best_epoch,
        "counters": result.counters,
    })
    if args.dump_edge_scores:
        _dump_edge_scores(bundle, result.params, cfg.run.eim_variant, args.out / "edge_scores.csv")
    if args.dump_perturbed:
        from cnlgnn.intervention import detect_groups, mask_by_importance, perturb_group_aware

        groups = detect_groups(bundle, cfg.run.group_count_hint)
        rng = RngStream(cfg.run.seed).split("dump")
        perturbed, kept = perturb_group_aware(bundle, groups, cfg.run.perturb, rng.split("pg"))
        scores = estimate_edge_importance(bundle, bundle.features, result.params, cfg.run.eim_variant)
        perturbed = mask_by_importance(perturbed, scores.take(kept), cfg.run.perturb.mask_drop_rate,
                                       rng.split("mask"))
        write_bundle(perturbed, args.out / "perturbed_graph", source="train-time perturbed graph")
    print(f"train out={args.out} best_epoch={result.best_epoch} val_f1={result.best_val_f1:.4f}")
    return 0


def cmd_cv(args) -> int:
    cfg = _prepare(args)
    bundle = load_bundle(args.bundle)
    result = cross_validate(bundle, cfg.run, threads=args.threads)
    for fold, report in enumerate(result.fold_reports):
        print(f"fold={fold} f1={report.primary_f1(cfg.run.f1_average):.4f}")
    print(f"cv mean_f1={result.f1_mean:.4f} std={result.f1_std:.4f}")
    _write_epochs_csv(args.out / "epochs.csv", result.epoch_logs)
    plot_epochs(result.epoch_logs, args.out / "epochs.png")
    _metrics_json(args.out / "metrics.json", {
        "folds": [_report_tree(r) for r in result.fold_reports],
        "f1_mean": result.f1_mean,
        "f1_std": result.f1_std,
        "f1_average": cfg.run.f1_average,
        "warnings": result.warnings,
    })
    return 0


def cmd_ablate(args) -> int:
    cfg = _prepare(args)
    bundle = load_bundle(args.bundle)
    names = [v.strip() for v in args.variants.split(",") if v.strip()]
    bad = [v for v in names if v not in ABLATION_VARIANTS]
    if bad:
        raise UsageError(f"unknown ablation variants {bad}; valid: {sorted(ABLATION_VARIANTS)}")

    results = [("full", cross_validate(bundle, cfg.run, threads=args.threads))]
    for name in names:
        variant_cfg = with_ablation(cfg, ABLATION_VARIANTS[name])
        results.append((f"wo_{name}", cross_validate(bundle, variant_cfg.run, threads=args.threads)))

    rows = []
    payload = {}
    for name, res in results:
        print(f"variant={name} f1={res.f1_mean:.4f} std={res.f1_std:.4f}")
        rows.append([name, _fmt(res.f1_mean), _fmt(res.f1_std)])
        payload[name] = {
            "f1_mean": res.f1_mean,
            "f1_std": res.f1_std,
            "folds": [_report_tree(r) for r in res.fold_reports],
        }
    _write_csv(args.out / "ablate.csv", ["variant", "f1_mean", "f1_std"], rows)
    plot_ablation([(n, r.f1_mean, r.f1_std) for n, r in results], args.out / "ablate.png")
    _metrics_json(args.out / "metrics.json", payload)
    return 0


def cmd_sweep(args) -> int:
    cfg = _prepare(args)
    bundle = load_bundle(args.bundle)
    try:
        taus = [float(t) for t in args.taus.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"--taus expects comma-separated floats, got {args.taus!r}") from None
    rows = sensitivity_sweep(bundle, cfg, taus)
    for r in rows:
        print(f"tau={r['tau']:g} f1={r['f1_mean']:.4f} delta={r['delta_vs_0.1']:+.4f}")
    _write_csv(
        args.out / "sweep.csv",
        ["tau", "f1_mean", "f1_std", "delta_vs_0.1"],
        [[_fmt(r["tau"]), _fmt(r["f1_mean"]), _fmt(r["f1_std"]), _fmt(r["delta_vs_0.1"])] for r in rows],
    )
    plot_sweep(rows, args.out / "sweep.png")
    _metrics_json(args.out / "metrics.json", {"sweep": rows})
    return 0


def cmd_shift(args) -> int:
    cfg = _prepare(args)
    train_b = load_bundle(args.train_bundle)
    domains = []
    for item in args.test_bundle:
        if "=" in item:
            name, path = item.split("=", 1)
        else:
            name, path = Path(item).name, item
        domains.append((name, load_bundle(path)))
    reports, _ = domain_shift_eval(train_b, domains, cfg.run)
    for name, rep in reports:
        print(f"domain={name} precision={rep.macro_precision:.4f} "
              f"recall={rep.macro_recall:.4f} f1={rep.macro_f1:.4f}")
    _write_csv(
        args.out / "shift.csv",
        ["domain", "precision", "recall", "f1"],
        [[name, _fmt(r.macro_precision), _fmt(r.macro_recall), _fmt(r.macro_f1)] for name, r in reports],
    )
    plot_shift(reports, args.out / "shift.png")
    _metrics_json(args.out / "metrics.json", {name: _report_tree(r) for name, r in reports})
    return 0


def cmd_dump_scores(args) -> int:
    cfg = _prepare(args)
    bundle = load_bundle(args.bundle)
    params = init_params(bundle.feature_dim, cfg.run.hidden_dim, bundle.class_count,
                         RngStream(cfg.run.seed))
    if args.checkpoint is not None:
        params.load_arrays(ad.load_checkpoint(args.checkpoint))
    _dump_edge_scores(bundle, params, cfg.run.eim_variant, args.out / "edge_scores.csv")
    print(f"dump-scores out={args.out} edges={bundle.num_edges}")
    return 0


_COMMANDS = {
    "validate": cmd_validate,
    "synth": cmd_synth,
    "train": cmd_train,
    "cv": cmd_cv,
    "ablate": cmd_ablate,
    "sweep": cmd_sweep,
    "shift": cmd_shift,
    "dump-scores": cmd_dump_scores,
}


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(run())
