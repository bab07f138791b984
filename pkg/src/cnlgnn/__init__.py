"""Causal neighbourhood learning for node classification.

A node-classification framework that intervenes on graph structure during
training: counterfactual neighbourhoods wired to dissimilar nodes, learned
edge-importance masking, group-aware edge perturbation, and gated
disentanglement of context/object features. Ships as a library plus the
``cnl`` command line tool.
"""

from cnlgnn.graph import (
    GraphBundle,
    NeighbourIndex,
    build_bundle,
    neighbour_index,
    add_edges_bidirectional,
    subsample_nodes,
)
from cnlgnn.rng import RngStream

__version__ = "0.1.0"

__all__ = [
    "GraphBundle",
    "NeighbourIndex",
    "RngStream",
    "build_bundle",
    "neighbour_index",
    "add_edges_bidirectional",
    "subsample_nodes",
    "__version__",
]
