"""Structural interventions: counterfactual neighbourhoods and adaptive edge perturbation.

Two families of graph surgery, both pure (fresh bundles out, inputs untouched):

* counterfactual neighbourhood generation wires each node bi-directionally to
  sampled non-neighbours, growing the edge set;
* the adaptive edge generator composes group-aware inter-group edge dropping
  with importance-quantile masking and optional weight noise, only ever
  shrinking or reweighting the edge set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cnlgnn.errors import DataError
from cnlgnn.graph import GraphBundle, NeighbourIndex, add_edges_bidirectional, replace_edges
from cnlgnn.rng import RngStream


@dataclass(frozen=True)
class CngConfig:
    strategy: str = "dissimilar"  # one of random / similar / dissimilar
    k: int = 5
    candidate_pool: int = 15

    def validate(self) -> None:
        if self.strategy not in ("random", "similar", "dissimilar"):
            raise DataError(f"unknown sampling strategy {self.strategy!r}")
        if self.k < 0:
            raise DataError("k must be >= 0")
        if self.candidate_pool < self.k:
            raise DataError("candidate_pool must be >= k")


@dataclass(frozen=True)
class GroupAssignment:
    group_id: np.ndarray
    group_count: int


@dataclass(frozen=True)
class PerturbConfig:
    inter_group_drop_prob: float = 0.3
    mask_drop_rate: float = 0.1
    edge_noise_sigma: float = 0.1

    def validate(self) -> None:
        if not 0.0 <= self.inter_group_drop_prob <= 1.0:
            raise DataError("inter_group_drop_prob must lie in [0, 1]")
        if not 0.0 <= self.mask_drop_rate < 1.0:
            raise DataError("mask_drop_rate must lie in [0, 1)")
        if self.edge_noise_sigma < 0.0:
            raise DataError("edge_noise_sigma must be >= 0")


class CounterfactualSampler:
    """Precomputed candidate pools for repeated per-epoch sampling.

    Pools depend only on the (static) raw features and adjacency, so they are
    ranked once: cosine similarity per node pair, candidates exclude the node
    itself and all current in/out neighbours, ties broken by lower node id.
    Zero-norm feature rows count as similarity 0 to everything.
    """

    def __init__(self, bundle: GraphBundle, index: NeighbourIndex, cfg: CngConfig):
        cfg.validate()
        self.cfg = cfg
        n = bundle.num_nodes
        self.num_nodes = n
        if cfg.k == 0:
            self.pools = [np.zeros(0, np.int64)] * n
            return

        feats = bundle.features
        norms = np.sqrt((feats * feats).sum(axis=1))
        safe = np.where(norms > 0.0, norms, 1.0)
        unit = feats / safe[:, None]
        unit[norms == 0.0] = 0.0
        sim = unit @ unit.T  # zero-norm rows -> similarity 0 everywhere

        if cfg.strategy == "dissimilar":
            key = sim.copy()
        elif cfg.strategy == "similar":
            key = -sim
        else:
            key = None

        pools: list[np.ndarray] = []
        for v in range(n):
            excluded = np.zeros(n, dtype=bool)
            excluded[v] = True
            excluded[index.in_neighbours[v]] = True
            excluded[index.out_neighbours[v]] = True
            candidates = np.nonzero(~excluded)[0]
            if key is None:
                pools.append(candidates)
                continue
            order = np.argsort(key[v, candidates], kind="stable")  # stable: lower id wins ties
            pools.append(candidates[order[: cfg.candidate_pool]])
        self.pools = pools

    def sample(self, rng: RngStream) -> dict[int, np.ndarray]:
        k = self.cfg.k
        out: dict[int, np.ndarray] = {}
        for v in range(self.num_nodes):
            pool = self.pools[v]
            take = min(k, pool.size)
            if take == 0:
                out[v] = np.zeros(0, np.int64)
            elif take == pool.size:
                out[v] = pool.copy()
            else:
                out[v] = np.sort(rng.choice(pool, size=take, replace=False))
        return out


def sample_counterfactual_neighbours(
    bundle: GraphBundle,
    index: NeighbourIndex,
    cfg: CngConfig,
    rng: RngStream,
) -> dict[int, np.ndarray]:
    """Per node, a set of min(k, available) non-neighbours picked by strategy."""
    return CounterfactualSampler(bundle, index, cfg).sample(rng)


def build_counterfactual_graph(bundle: GraphBundle, neighbour_map: dict[int, np.ndarray]) -> GraphBundle:
    """Wire every sampled (node, counterfactual-neighbour) pair in both directions."""
    pairs = []
    for v in sorted(neighbour_map):
        if not 0 <= int(v) < bundle.num_nodes:
            raise DataError(f"neighbour map references node {v} outside graph")
        for u in neighbour_map[v]:
            pairs.append((int(v), int(u)))
    return add_edges_bidirectional(bundle, pairs)


def detect_groups(bundle: GraphBundle, group_count_hint: int) -> GroupAssignment:
    """Training-free community detection via Bethe-Hessian spectral clustering.

    Deterministic throughout: the community count is the number of negative
    Bethe-Hessian eigenvalues (capped by the hint), and the eigenvector rows
    are clustered with farthest-first-seeded Lloyd iterations (50 max, ties to
    the smallest cluster id). Works on sparse graphs down to the structural
    detectability threshold, where plain label propagation floods into one
    giant community. Isolated nodes carry no structural signal and are folded
    into the largest detected group; an edgeless graph yields one group.
    """
    n = bundle.num_nodes
    if n == 0:
        raise DataError("detect_groups: empty graph")
    if group_count_hint < 1:
        raise DataError("group_count_hint must be >= 1")
    if bundle.num_edges == 0:
        return GroupAssignment(group_id=np.zeros(n, np.int64), group_count=1)

    adj = np.zeros((n, n))
    adj[bundle.edges[:, 0], bundle.edges[:, 1]] = 1.0
    adj = np.maximum(adj, adj.T)
    deg = adj.sum(axis=1)

    # regularizer r ~ sqrt of the mean excess degree
    r2 = (deg * deg).sum() / deg.sum() - 1.0
    r = max(float(np.sqrt(max(r2, 1.0))), 1.0 + 1e-9)
    hessian = (r * r - 1.0) * np.eye(n) - r * adj + np.diag(deg)
    vals, vecs = np.linalg.eigh(hessian)
    k = int((vals < -1e-9).sum())
    k = max(1, min(k, group_count_hint, n))
    if k == 1:
        return GroupAssignment(group_id=np.zeros(n, np.int64), group_count=1)

    embed = vecs[:, :k]
    centroid_ids = [int(np.argmax((embed * embed).sum(axis=1)))]
    for _ in range(k - 1):
        dist = np.min(((embed[:, None, :] - embed[None, centroid_ids, :]) ** 2).sum(-1), axis=1)
        centroid_ids.append(int(np.argmax(dist)))
    centroids = embed[centroid_ids]
    assign = np.zeros(n, np.int64)
    for _ in range(50):
        dist = ((embed[:, None, :] - centroids[None]) ** 2).sum(-1)
        assign = dist.argmin(axis=1)  # first (smallest id) wins ties
        fresh = np.stack([
            embed[assign == j].mean(axis=0) if (assign == j).any() else centroids[j]
            for j in range(k)
        ])
        if np.allclose(fresh, centroids):
            break
        centroids = fresh

    if (deg == 0).any():
        sizes = np.bincount(assign[deg > 0], minlength=k)
        assign = assign.copy()
        assign[deg == 0] = int(sizes.argmax())

    uniq = np.unique(assign)
    remap = np.zeros(int(uniq.max()) + 1, dtype=np.int64)
    remap[uniq] = np.arange(uniq.size)
    return GroupAssignment(group_id=remap[assign].astype(np.int64), group_count=int(uniq.size))


def perturb_group_aware(
    bundle: GraphBundle,
    groups: GroupAssignment,
    cfg: PerturbConfig,
    rng: RngStream,
) -> tuple[GraphBundle, np.ndarray]:
    """Drop inter-group edges independently with the configured probability.

    Intra-group edges always survive. The drop decision is made once per
    unordered node pair so a symmetrized pair lives or dies together. Returns
    the perturbed bundle plus the indices of surviving edges in the input's
    edge order (used to keep edge scores aligned downstream).
    """
    cfg.validate()
    if groups.group_id.shape[0] != bundle.num_nodes:
        raise DataError("group assignment does not cover all nodes")
    m = bundle.num_edges
    if m == 0 or cfg.inter_group_drop_prob == 0.0:
        return bundle, np.arange(m)

    src, dst = bundle.edges[:, 0], bundle.edges[:, 1]
    inter = groups.group_id[src] != groups.group_id[dst]

    lo = np.minimum(src, dst)
    hi = np.maximum(src, dst)
    pair_key = lo * bundle.num_nodes + hi
    uniq_pairs, inverse = np.unique(pair_key, return_inverse=True)
    pair_drop = rng.uniform(uniq_pairs.size) < cfg.inter_group_drop_prob
    drop = inter & pair_drop[inverse]

    kept = np.nonzero(~drop)[0]
    out = replace_edges(bundle, bundle.edges[kept], bundle.edge_weights[kept])
    return out, kept


@dataclass(frozen=True)
class EdgeScores:
    """Per-edge raw logits and per-target normalized importances."""

    raw: np.ndarray
    normalized: np.ndarray

    def take(self, idx: np.ndarray) -> "EdgeScores":
        return EdgeScores(raw=self.raw[idx], normalized=self.normalized[idx])


def mask_by_importance(
    bundle: GraphBundle,
    scores: EdgeScores,
    tau: float,
    rng: RngStream | None = None,
) -> GraphBundle:
    """Drop exactly floor(tau * |E|) lowest-importance edges.

    Ordering is (normalized importance, raw logit, edge index) ascending, so
    the removal set is deterministic and monotone in tau. ``rng`` is accepted
    for signature parity with the uniform variant but never consulted.
    """
    if not 0.0 <= tau < 1.0:
        raise DataError(f"edge drop rate must lie in [0, 1), got {tau}")
    m = bundle.num_edges
    if scores.raw.shape[0] != m or scores.normalized.shape[0] != m:
        raise DataError(f"edge scores misaligned: {scores.raw.shape[0]} scores for {m} edges")
    n_drop = int(tau * m)
    if n_drop == 0:
        return bundle
    order = np.lexsort((np.arange(m), scores.raw, scores.normalized))
    keep = np.sort(order[n_drop:])
    return replace_edges(bundle, bundle.edges[keep], bundle.edge_weights[keep])


def mask_uniform_random(bundle: GraphBundle, tau: float, rng: RngStream) -> GraphBundle:
    """Budget-parity ablation of importance masking: same count, random picks."""
    if not 0.0 <= tau < 1.0:
        raise DataError(f"edge drop rate must lie in [0, 1), got {tau}")
    m = bundle.num_edges
    n_drop = int(tau * m)
    if n_drop == 0:
        return bundle
    drop = rng.choice(np.arange(m), size=n_drop, replace=False)
    keep = np.setdiff1d(np.arange(m), drop)
    return replace_edges(bundle, bundle.edges[keep], bundle.edge_weights[keep])


def noise_edge_weights(bundle: GraphBundle, sigma: float, rng: RngStream) -> GraphBundle:
    """Add N(0, sigma^2) to every edge weight, clamped at zero from below."""
    if sigma < 0.0:
        raise DataError("sigma must be >= 0")
    if sigma == 0.0 or bundle.num_edges == 0:
        return bundle
    noised = np.maximum(bundle.edge_weights + rng.normal(bundle.num_edges, sigma=sigma), 0.0)
    return replace_edges(bundle, bundle.edges, noised)
