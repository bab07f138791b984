"""Immutable directed-graph container with adjacency queries and edge algebra.

Graphs are stored as directed edge lists over dense node ids 0..n-1.
Undirected source data is stored as both directions. Self-loops are never
stored; encoder layers inject them on the fly. Stored bundles are immutable
(arrays are made non-writeable) and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cnlgnn.errors import DataError


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GraphBundle:
    """A validated graph: edges, features, labels, optional edge weights.

    ``edges`` is [m, 2] (src, dst) with no duplicates and no self-loops.
    ``edge_weights`` always materialized; defaults to 1.0 per edge.
    """

    num_nodes: int
    edges: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    edge_weights: np.ndarray
    class_count: int

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def edge_set(self) -> set[tuple[int, int]]:
        return {(int(s), int(d)) for s, d in self.edges}


@dataclass(frozen=True)
class BuildStats:
    duplicates_removed: int
    self_loops_removed: int


@dataclass(frozen=True)
class NeighbourIndex:
    """Per-node sorted in/out neighbour lists plus degree arrays."""

    in_neighbours: tuple[np.ndarray, ...]
    out_neighbours: tuple[np.ndarray, ...]
    in_degree: np.ndarray
    out_degree: np.ndarray

    def undirected_neighbours(self, v: int) -> np.ndarray:
        """Sorted union of in- and out-neighbours of ``v``."""
        return np.union1d(self.in_neighbours[v], self.out_neighbours[v])


def build_bundle(
    edges,
    features,
    labels,
    weights=None,
    class_count: int | None = None,
) -> tuple[GraphBundle, BuildStats]:
    """Validate inputs and assemble a GraphBundle.

    Deduplication is stable (first occurrence kept) and self-loops are
    dropped; the counts of both removals are reported in BuildStats.
    """
    features = np.ascontiguousarray(np.asarray(features, dtype=np.float64))
    if features.ndim != 2:
        raise DataError(f"features must be 2-D [num_nodes x d], got shape {features.shape}")
    num_nodes = features.shape[0]

    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.shape[0] != num_nodes:
        raise DataError(f"labels length {labels.shape[0]} != num_nodes {num_nodes}")

    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2) if len(edges) else np.zeros((0, 2), np.int64)
    if edges.size and (edges.min() < 0 or edges.max() >= num_nodes):
        bad = int(np.nonzero((edges < 0) | (edges >= num_nodes))[0][0])
        raise DataError(f"edge row {bad} references node id outside [0, {num_nodes})")

    bad_feat = np.nonzero(~np.isfinite(features))
    if bad_feat[0].size:
        r, c = int(bad_feat[0][0]), int(bad_feat[1][0])
        raise DataError(f"non-finite feature at node {r}, column {c}")

    if weights is None:
        weights = np.ones(edges.shape[0], dtype=np.float64)
    else:
        weights = np.asarray(weights, dtype=np.float64).reshape(-1)
        if weights.shape[0] != edges.shape[0]:
            raise DataError(f"edge_weights length {weights.shape[0]} != num_edges {edges.shape[0]}")
        bad_w = np.nonzero(~np.isfinite(weights))[0]
        if bad_w.size:
            raise DataError(f"non-finite edge weight at edge index {int(bad_w[0])}")

    # stable dedup + self-loop removal, first occurrence kept
    keep = np.ones(edges.shape[0], dtype=bool)
    n_loops = 0
    if edges.shape[0]:
        loop_mask = edges[:, 0] == edges[:, 1]
        n_loops = int(loop_mask.sum())
        keep &= ~loop_mask
    seen: set[tuple[int, int]] = set()
    n_dups = 0
    for i in range(edges.shape[0]):
        if not keep[i]:
            continue
        key = (int(edges[i, 0]), int(edges[i, 1]))
        if key in seen:
            keep[i] = False
            n_dups += 1
        else:
            seen.add(key)
    edges = np.ascontiguousarray(edges[keep])
    weights = np.ascontiguousarray(weights[keep])

    if class_count is None:
        class_count = int(labels.max()) + 1 if labels.size else 1
    if labels.size and (labels.min() < 0 or labels.max() >= class_count):
        raise DataError(f"labels must lie in [0, {class_count})")

    bundle = GraphBundle(
        num_nodes=num_nodes,
        edges=_freeze(edges),
        features=_freeze(features),
        labels=_freeze(labels),
        edge_weights=_freeze(weights),
        class_count=class_count,
    )
    return bundle, BuildStats(duplicates_removed=n_dups, self_loops_removed=n_loops)


def neighbour_index(bundle: GraphBundle) -> NeighbourIndex:
    """Exact adjacency lists derived from the edge list. Idempotent."""
    n = bundle.num_nodes
    src, dst = bundle.edges[:, 0], bundle.edges[:, 1]
    out_lists: list[np.ndarray] = []
    in_lists: list[np.ndarray] = []

    order_out = np.argsort(src, kind="stable")
    bounds_out = np.searchsorted(src[order_out], np.arange(n + 1))
    order_in = np.argsort(dst, kind="stable")
    bounds_in = np.searchsorted(dst[order_in], np.arange(n + 1))
    for v in range(n):
        out_lists.append(np.sort(dst[order_out[bounds_out[v]:bounds_out[v + 1]]]))
        in_lists.append(np.sort(src[order_in[bounds_in[v]:bounds_in[v + 1]]]))

    out_degree = np.diff(bounds_out).astype(np.int64)
    in_degree = np.diff(bounds_in).astype(np.int64)
    return NeighbourIndex(
        in_neighbours=tuple(in_lists),
        out_neighbours=tuple(out_lists),
        in_degree=_freeze(in_degree),
        out_degree=_freeze(out_degree),
    )


def add_edges_bidirectional(bundle: GraphBundle, pairs) -> GraphBundle:
    """Return a new bundle with (v,u) and (u,v) added for each pair.

    Pairs already present are skipped; the input bundle is untouched. New
    edges get weight 1.0 and are appended in the order given.
    """
    existing = bundle.edge_set()
    new_edges: list[tuple[int, int]] = []
    for v, u in pairs:
        v, u = int(v), int(u)
        if not (0 <= v < bundle.num_nodes and 0 <= u < bundle.num_nodes):
            raise DataError(f"pair ({v}, {u}) references node id outside [0, {bundle.num_nodes})")
        if v == u:
            raise DataError(f"pair ({v}, {u}) would create a self-loop")
        for e in ((v, u), (u, v)):
            if e not in existing:
                existing.add(e)
                new_edges.append(e)
    if not new_edges:
        return bundle
    edges = np.vstack([bundle.edges, np.asarray(new_edges, dtype=np.int64)])
    weights = np.concatenate([bundle.edge_weights, np.ones(len(new_edges))])
    return GraphBundle(
        num_nodes=bundle.num_nodes,
        edges=_freeze(edges),
        features=bundle.features,
        labels=bundle.labels,
        edge_weights=_freeze(weights),
        class_count=bundle.class_count,
    )


def replace_edges(bundle: GraphBundle, edges: np.ndarray, weights: np.ndarray) -> GraphBundle:
    """New bundle sharing node data but with a different (validated) edge list."""
    edges = np.ascontiguousarray(np.asarray(edges, dtype=np.int64).reshape(-1, 2))
    weights = np.ascontiguousarray(np.asarray(weights, dtype=np.float64).reshape(-1))
    if weights.shape[0] != edges.shape[0]:
        raise DataError("edge/weight length mismatch")
    return GraphBundle(
        num_nodes=bundle.num_nodes,
        edges=_freeze(edges),
        features=bundle.features,
        labels=bundle.labels,
        edge_weights=_freeze(weights),
        class_count=bundle.class_count,
    )


def subsample_nodes(bundle: GraphBundle, node_set) -> tuple[GraphBundle, np.ndarray]:
    """Induced subgraph on ``node_set`` with ids remapped to 0..k-1.

    Returns the subgraph and the remap table: an array where entry ``new_id``
    holds the original node id.
    """
    keep = np.unique(np.asarray(list(node_set), dtype=np.int64))
    if keep.size == 0:
        raise DataError("subsample_nodes: node set is empty")
    if keep.min() < 0 or keep.max() >= bundle.num_nodes:
        raise DataError("subsample_nodes: node id outside graph")

    new_id = -np.ones(bundle.num_nodes, dtype=np.int64)
    new_id[keep] = np.arange(keep.size)
    src, dst = bundle.edges[:, 0], bundle.edges[:, 1]
    mask = (new_id[src] >= 0) & (new_id[dst] >= 0)
    edges = np.stack([new_id[src[mask]], new_id[dst[mask]]], axis=1)
    sub = GraphBundle(
        num_nodes=int(keep.size),
        edges=_freeze(np.ascontiguousarray(edges)),
        features=_freeze(np.ascontiguousarray(bundle.features[keep])),
        labels=_freeze(np.ascontiguousarray(bundle.labels[keep])),
        edge_weights=_freeze(np.ascontiguousarray(bundle.edge_weights[mask])),
        class_count=bundle.class_count,
    )
    return sub, keep
