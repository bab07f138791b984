"""Training loop, cross-validation, ablations, sensitivity sweep, domain shift.

One training epoch resamples a counterfactual graph, scores edges, builds the
perturbed graph (group-aware drop, importance mask, weight noise), perturbs
features, runs the main forward on the perturbed graph and the contrastive
forward on the counterfactual graph, intervenes on the branch features, then
takes an Adam step on the combined loss. Early stopping watches validation F1
on the clean original graph; the best checkpoint is returned.

Ablation toggles: ``cng`` skips counterfactual sampling and zeroes the
contrastive term; ``eim`` swaps importance masking for uniform masking at the
same edge budget; ``group`` skips the inter-group perturbation.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

import cnlgnn.autodiff as ad
from cnlgnn.config import FullConfig, RunConfig, with_mask_rate
from cnlgnn.errors import DataError
from cnlgnn.graph import GraphBundle, neighbour_index
from cnlgnn.intervention import (
    CounterfactualSampler,
    build_counterfactual_graph,
    detect_groups,
    mask_by_importance,
    mask_uniform_random,
    noise_edge_weights,
    perturb_group_aware,
)
from cnlgnn.metrics import MetricReport, compute_metrics
from cnlgnn.model import (
    LossWeights,
    ModelParams,
    compute_losses,
    estimate_edge_importance,
    forward,
    generate_counterfactual_features,
    init_params,
    perturb_features,
)
from cnlgnn.rng import RngStream

log = logging.getLogger("cnlgnn")


@dataclass
class TrainResult:
    params: ModelParams
    epoch_log: list[dict] = field(default_factory=list)
    counters: dict[str, int] = field(default_factory=dict)
    best_val_f1: float = 0.0
    best_epoch: int = -1


@dataclass
class CVResult:
    fold_reports: list[MetricReport]
    f1_mean: float
    f1_std: float
    fold_tests: list[np.ndarray]
    epoch_logs: list[list[dict]]
    warnings: list[str] = field(default_factory=list)


def _loss_weights(cfg: RunConfig) -> LossWeights:
    return LossWeights(
        contrastive=cfg.lambda_ctr,
        orthogonality=cfg.lambda_orth,
        mutual_info=cfg.lambda_mi,
    )


def split_train_val(nodes: np.ndarray, val_fraction: float, rng: RngStream) -> tuple[np.ndarray, np.ndarray]:
    nodes = np.asarray(nodes, dtype=np.int64)
    shuffled = nodes[rng.permutation(nodes.size)]
    n_val = max(1, int(round(val_fraction * nodes.size)))
    if n_val >= nodes.size:
        raise DataError("not enough nodes to split off a validation set")
    return np.sort(shuffled[n_val:]), np.sort(shuffled[:n_val])


def evaluate(params: ModelParams, bundle: GraphBundle, node_idx, cfg: RunConfig) -> MetricReport:
    """Eval-mode forward on the original graph; no perturbations of any kind."""
    node_idx = np.asarray(node_idx, dtype=np.int64).reshape(-1)
    if node_idx.size == 0:
        raise DataError("evaluate: empty node mask")
    out = forward(bundle, bundle.features, params, eim_variant=cfg.eim_variant)
    preds = out.logits.data.argmax(axis=1)
    return compute_metrics(bundle.labels[node_idx], preds[node_idx], bundle.class_count)


def train(
    bundle: GraphBundle,
    cfg: RunConfig,
    train_idx: np.ndarray | None = None,
    val_idx: np.ndarray | None = None,
    rng: RngStream | None = None,
    groups: GroupAssignment | None = None,
    sampler: CounterfactualSampler | None = None,
) -> TrainResult:
    """One training run; ``groups``/``sampler`` may be precomputed (they depend
    only on the bundle, so cross-validation shares them across folds)."""
    cfg.validate()
    ablate = cfg.ablation_set()
    rng = rng if rng is not None else RngStream(cfg.seed)
    if train_idx is None or val_idx is None:
        train_idx, val_idx = split_train_val(np.arange(bundle.num_nodes), cfg.val_fraction, rng.split("valsplit"))
    train_idx = np.asarray(train_idx, dtype=np.int64)
    val_idx = np.asarray(val_idx, dtype=np.int64)
    if train_idx.size == 0:
        raise DataError("train: empty train mask")

    params = init_params(bundle.feature_dim, cfg.hidden_dim, bundle.class_count, rng.split("params"))
    opt_state = ad.AdamState()
    weights = _loss_weights(cfg)
    counters: dict[str, int] = {
        "cng_resamples": 0, "eim_score_calls": 0, "group_perturb_calls": 0,
        "importance_mask_calls": 0, "uniform_mask_calls": 0, "weight_noise_calls": 0,
        "contrastive_forwards": 0, "masked_edges_total": 0,
    }

    # static per-run structures: candidate pools and the cached group detector
    if sampler is None and "cng" not in ablate and cfg.cng.k > 0:
        sampler = CounterfactualSampler(bundle, neighbour_index(bundle), cfg.cng)
    if "cng" in ablate:
        sampler = None
    if groups is None and "group" not in ablate:
        groups = detect_groups(bundle, cfg.group_count_hint)
    if "group" in ablate:
        groups = None

    result = TrainResult(params=params)
    best_arrays = params.arrays()
    since_best = 0

    for epoch in range(cfg.epochs):
        ep = rng.split("epoch", epoch)

        cf_bundle = None
        if sampler is not None:
            neigh_map = sampler.sample(ep.split("cng"))
            cf_bundle = build_counterfactual_graph(bundle, neigh_map)
            counters["cng_resamples"] += 1

        scores = None
        if "eim" not in ablate:
            scores = estimate_edge_importance(bundle, bundle.features, params, variant=cfg.eim_variant)
            counters["eim_score_calls"] += 1

        perturbed = bundle
        kept = np.arange(bundle.num_edges)
        if groups is not None:
            perturbed, kept = perturb_group_aware(perturbed, groups, cfg.perturb, ep.split("pg"))
            counters["group_perturb_calls"] += 1

        before_mask = perturbed.num_edges
        if scores is not None:
            perturbed = mask_by_importance(perturbed, scores.take(kept), cfg.perturb.mask_drop_rate, ep.split("mask"))
            counters["importance_mask_calls"] += 1
        else:
            perturbed = mask_uniform_random(perturbed, cfg.perturb.mask_drop_rate, ep.split("mask"))
            counters["uniform_mask_calls"] += 1
        counters["masked_edges_total"] += before_mask - perturbed.num_edges

        if cfg.perturb.edge_noise_sigma > 0:
            perturbed = noise_edge_weights(perturbed, cfg.perturb.edge_noise_sigma, ep.split("wnoise"))
            counters["weight_noise_calls"] += 1

        feats = perturb_features(bundle.features, cfg.feature_noise_sigma, ep.split("xnoise"))

        out = forward(perturbed, feats, params, rng=ep.split("fwd_main"), train_mode=True,
                      eim_variant=cfg.eim_variant)
        out_cf = None
        if cf_bundle is not None:
            out_cf = forward(cf_bundle, feats, params, rng=ep.split("fwd_cf"), train_mode=True,
                             eim_variant=cfg.eim_variant)
            counters["contrastive_forwards"] += 1

        _, object_tilde = generate_counterfactual_features(out.x_c_branch, out.x_o_branch, ep.split("perm"))
        report = compute_losses(out, out_cf, bundle.labels, train_idx, weights, object_tilde=object_tilde)

        ad.zero_grads(params.named())
        ad.backward(report.total_value)
        ad.adam_step(params.named(), opt_state, lr=cfg.lr)

        val_f1 = evaluate(params, bundle, val_idx, cfg).primary_f1(cfg.f1_average) if val_idx.size else 0.0
        entry = {"epoch": epoch, **report.as_dict(), "val_f1": val_f1}
        result.epoch_log.append(entry)
        log.debug("epoch=%d total=%.5f val_f1=%.4f", epoch, report.total, val_f1)

        if val_f1 > result.best_val_f1 or result.best_epoch < 0:
            result.best_val_f1 = val_f1
            result.best_epoch = epoch
            best_arrays = params.arrays()
            since_best = 0
        else:
            since_best += 1
            if since_best > cfg.early_stop_patience:
                log.debug("early stop at epoch %d (best %d)", epoch, result.best_epoch)
                break

    params.load_arrays(best_arrays)
    result.counters = counters
    return result


def stratified_folds(labels: np.ndarray, folds: int, rng: RngStream) -> tuple[list[np.ndarray], list[str]]:
    """Per-class round-robin after a seeded shuffle; warns on tiny classes."""
    labels = np.asarray(labels, dtype=np.int64)
    if folds > labels.size:
        raise DataError(f"folds={folds} exceeds node count {labels.size}")
    warnings: list[str] = []
    buckets: list[list[int]] = [[] for _ in range(folds)]
    offset = 0
    for cls in np.unique(labels):
        members = np.nonzero(labels == cls)[0]
        if members.size < folds:
            warnings.append(
                f"class {cls} has {members.size} member(s) < {folds} folds; stratification degrades to round-robin"
            )
        members = members[rng.split("class", int(cls)).permutation(members.size)]
        for i, node in enumerate(members):
            buckets[(offset + i) % folds].append(int(node))
        offset += members.size  # stagger so small classes do not pile on fold 0
    return [np.sort(np.array(b, dtype=np.int64)) for b in buckets], warnings


def _run_fold(bundle: GraphBundle, cfg: RunConfig, fold: int, test_idx: np.ndarray,
              rng: RngStream, groups=None, sampler=None) -> tuple[MetricReport, TrainResult]:
    train_pool = np.setdiff1d(np.arange(bundle.num_nodes), test_idx)
    tr, val = split_train_val(train_pool, cfg.val_fraction, rng.split("valsplit"))
    result = train(bundle, cfg, train_idx=tr, val_idx=val, rng=rng, groups=groups, sampler=sampler)
    report = evaluate(result.params, bundle, test_idx, cfg)
    return report, result


def cross_validate(bundle: GraphBundle, cfg: RunConfig, threads: int = 1) -> CVResult:
    cfg.validate()
    root = RngStream(cfg.seed)
    fold_tests, warnings = stratified_folds(bundle.labels, cfg.folds, root.split("folds"))
    for w in warnings:
        log.warning("%s", w)

    # bundle-level structures shared by every fold
    ablate = cfg.ablation_set()
    groups = detect_groups(bundle, cfg.group_count_hint) if "group" not in ablate else None
    sampler = (CounterfactualSampler(bundle, neighbour_index(bundle), cfg.cng)
               if "cng" not in ablate and cfg.cng.k > 0 else None)

    def job(fold: int):
        return _run_fold(bundle, cfg, fold, fold_tests[fold], root.split("fold", fold),
                         groups=groups, sampler=sampler)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(job, range(cfg.folds)))
    else:
        outcomes = [job(f) for f in range(cfg.folds)]

    reports = [r for r, _ in outcomes]
    logs = [res.epoch_log for _, res in outcomes]
    f1s = np.array([r.primary_f1(cfg.f1_average) for r in reports])
    return CVResult(
        fold_reports=reports,
        f1_mean=float(f1s.mean()),
        f1_std=float(f1s.std()),
        fold_tests=fold_tests,
        epoch_logs=logs,
        warnings=warnings,
    )


def sensitivity_sweep(bundle: GraphBundle, cfg: FullConfig, taus: list[float]) -> list[dict]:
    """Cross-validate per edge drop rate; deltas are against the 0.1 baseline."""
    for tau in taus:
        if not 0.0 <= tau < 1.0:
            raise DataError(f"edge drop rate {tau} outside [0, 1)")
    results: dict[float, CVResult] = {}
    for tau in taus:
        results[tau] = cross_validate(bundle, with_mask_rate(cfg, tau).run)
    baseline_tau = 0.1
    if baseline_tau in results:
        baseline = results[baseline_tau].f1_mean
    else:
        baseline = cross_validate(bundle, with_mask_rate(cfg, baseline_tau).run).f1_mean
    return [
        {
            "tau": tau,
            "f1_mean": results[tau].f1_mean,
            "f1_std": results[tau].f1_std,
            "delta_vs_0.1": results[tau].f1_mean - baseline,
        }
        for tau in taus
    ]


def domain_shift_eval(
    train_bundle: GraphBundle,
    test_bundles: list[tuple[str, GraphBundle]],
    cfg: RunConfig,
) -> tuple[list[tuple[str, MetricReport]], TrainResult]:
    """Train once, evaluate frozen parameters on every domain's full node set."""
    problems = []
    for name, tb in test_bundles:
        if tb.feature_dim != train_bundle.feature_dim:
            problems.append(f"{name}: feature_dim {tb.feature_dim} != {train_bundle.feature_dim}")
        if tb.class_count != train_bundle.class_count:
            problems.append(f"{name}: class_count {tb.class_count} != {train_bundle.class_count}")
    if problems:
        raise DataError("domain mismatch: " + "; ".join(problems))

    result = train(train_bundle, cfg, rng=RngStream(cfg.seed).split("shift"))
    reports = [
        (name, evaluate(result.params, tb, np.arange(tb.num_nodes), cfg))
        for name, tb in test_bundles
    ]
    return reports, result
