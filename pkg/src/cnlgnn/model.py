"""The learnable architecture and its loss terms.

Pipeline per forward pass: a two-layer attention encoder over the (possibly
perturbed) graph, a sigmoid feature gate splitting the embedding into context
and object halves, one message-passing layer per half, a per-node convex
fusion gate, and a linear classifier. A separate attention scorer assigns
every directed edge a causal-relevance logit, softmax-normalized over each
edge's target node.

Edge attention follows the shared-weight GATv2 form: the layer projects with
W, scores an edge (i -> j) as a . leaky_relu(z_i + z_j), and normalizes per
target. Edge weights multiply the normalized attention coefficients so the
graph's weighting survives into aggregation; self-loops (weight 1) are added
internally per layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

import cnlgnn.autodiff as ad
from cnlgnn.autodiff import Value
from cnlgnn.errors import DataError, NumericError
from cnlgnn.graph import GraphBundle
from cnlgnn.intervention import EdgeScores
from cnlgnn.rng import RngStream

LEAKY_SLOPE = 0.2
ENCODER_DROPOUT = 0.1
EIM_VARIANTS = ("inner", "elementwise")


@dataclass
class ModelParams:
    """Every trainable array, as autodiff parameters."""

    eim_proj: Value
    eim_attn: Value
    enc1_w: Value
    enc1_attn: Value
    enc2_w: Value
    enc2_attn: Value
    gate_w: Value
    gate_b: Value
    ctx_w: Value
    obj_w: Value
    fuse_w: Value
    fuse_b: Value
    cls_w: Value
    cls_b: Value

    def named(self) -> dict[str, Value]:
        return {name: getattr(self, name) for name in self.__dataclass_fields__}

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named().items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for k, v in self.named().items():
            if k not in arrays:
                raise DataError(f"checkpoint missing tensor {k!r}")
            if arrays[k].shape != v.data.shape:
                raise DataError(f"tensor {k!r} shape {arrays[k].shape} != expected {v.data.shape}")
            v.data = arrays[k].copy()

    @property
    def hidden_dim(self) -> int:
        return self.enc1_w.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.enc1_w.shape[0]

    @property
    def class_count(self) -> int:
        return self.cls_w.shape[1]


def _glorot(rng: RngStream, rows: int, cols: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform((rows, cols)) * 2.0 * limit - limit


def init_params(feature_dim: int, hidden_dim: int, class_count: int, rng: RngStream) -> ModelParams:
    """Glorot-uniform weights, zero biases; attention vectors Glorot as [h, 1]."""
    g = rng.split("init")
    return ModelParams(
        eim_proj=ad.parameter(_glorot(g.split("eim_proj"), feature_dim, hidden_dim)),
        eim_attn=ad.parameter(_glorot(g.split("eim_attn"), hidden_dim, 1)),
        enc1_w=ad.parameter(_glorot(g.split("enc1_w"), feature_dim, hidden_dim)),
        enc1_attn=ad.parameter(_glorot(g.split("enc1_attn"), hidden_dim, 1)),
        enc2_w=ad.parameter(_glorot(g.split("enc2_w"), hidden_dim, hidden_dim)),
        enc2_attn=ad.parameter(_glorot(g.split("enc2_attn"), hidden_dim, 1)),
        gate_w=ad.parameter(_glorot(g.split("gate_w"), hidden_dim, hidden_dim)),
        gate_b=ad.parameter(np.zeros((1, hidden_dim))),
        ctx_w=ad.parameter(_glorot(g.split("ctx_w"), hidden_dim, hidden_dim)),
        obj_w=ad.parameter(_glorot(g.split("obj_w"), hidden_dim, hidden_dim)),
        fuse_w=ad.parameter(_glorot(g.split("fuse_w"), 2 * hidden_dim, 1)),
        fuse_b=ad.parameter(np.zeros((1, 1))),
        cls_w=ad.parameter(_glorot(g.split("cls_w"), hidden_dim, class_count)),
        cls_b=ad.parameter(np.zeros((1, class_count))),
    )


# ---------------------------------------------------------------------------
# edge importance
# ---------------------------------------------------------------------------

def edge_importance_values(
    bundle: GraphBundle,
    features: Value,
    params: ModelParams,
    variant: str = "inner",
) -> tuple[Value, Value]:
    """Differentiable raw logits and per-target normalized scores, [m, 1] each.

    ``inner``: logit(i->j) = leaky_relu(<a, h_i> + <a, h_j>) with h = X We.
    ``elementwise``: the per-channel products pass through the leaky_relu
    before summation, i.e. sum_k leaky_relu((h_i + h_j) * a)_k.
    """
    if variant not in EIM_VARIANTS:
        raise DataError(f"unknown eim_variant {variant!r}; expected one of {EIM_VARIANTS}")
    if features.shape != (bundle.num_nodes, params.feature_dim):
        raise DataError(
            f"feature shape {features.shape} incompatible with model ({bundle.num_nodes}, {params.feature_dim})"
        )
    src, dst = bundle.edges[:, 0], bundle.edges[:, 1]
    h = ad.matmul(features, params.eim_proj)
    if variant == "inner":
        t = ad.matmul(h, params.eim_attn)  # [n, 1]
        raw = ad.leaky_relu(ad.add(ad.row_select(t, src), ad.row_select(t, dst)), LEAKY_SLOPE)
    else:
        pair = ad.add(ad.row_select(h, src), ad.row_select(h, dst))  # [m, h]
        gated = ad.hadamard(pair, ad.transpose(params.eim_attn))
        raw = ad.sum_rows(ad.leaky_relu(gated, LEAKY_SLOPE))
    normalized = ad.segment_softmax(raw, dst)
    return raw, normalized


def estimate_edge_importance(
    bundle: GraphBundle,
    features: np.ndarray,
    params: ModelParams,
    variant: str = "inner",
) -> EdgeScores:
    raw, normalized = edge_importance_values(bundle, ad.constant(features), params, variant)
    return EdgeScores(raw=raw.data[:, 0].copy(), normalized=normalized.data[:, 0].copy())


# ---------------------------------------------------------------------------
# encoder
# ---------------------------------------------------------------------------

def _with_self_loops(bundle: GraphBundle) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = bundle.num_nodes
    loop = np.arange(n, dtype=np.int64)
    src = np.concatenate([bundle.edges[:, 0], loop])
    dst = np.concatenate([bundle.edges[:, 1], loop])
    w = np.concatenate([bundle.edge_weights, np.ones(n)])
    return src, dst, w


def _gat_layer(x: Value, bundle: GraphBundle, weight: Value, attn: Value) -> Value:
    src, dst, w = _with_self_loops(bundle)
    z = ad.matmul(x, weight)
    zs, zd = ad.row_select(z, src), ad.row_select(z, dst)
    logits = ad.matmul(ad.leaky_relu(ad.add(zs, zd), LEAKY_SLOPE), attn)  # [m+n, 1]
    alpha = ad.segment_softmax(logits, dst)
    weighted = ad.hadamard(alpha, ad.constant(w.reshape(-1, 1)))
    return ad.scatter_sum(ad.hadamard(zs, weighted), dst, bundle.num_nodes)


def encode(
    bundle: GraphBundle,
    features: Value,
    params: ModelParams,
    rng: RngStream | None = None,
    train_mode: bool = False,
) -> Value:
    """Two attention layers with internal self-loops; ELU between, none after."""
    x = features
    if train_mode:
        if rng is None:
            raise DataError("train-mode encoding needs an rng stream")
        x = ad.dropout(x, ENCODER_DROPOUT, rng.split("drop1"))
    h = ad.elu(_gat_layer(x, bundle, params.enc1_w, params.enc1_attn))
    if train_mode:
        h = ad.dropout(h, ENCODER_DROPOUT, rng.split("drop2"))
    return _gat_layer(h, bundle, params.enc2_w, params.enc2_attn)


def perturb_features(features: np.ndarray, sigma: float, rng: RngStream) -> np.ndarray:
    """Additive N(0, sigma^2) feature noise; train-time only by construction."""
    if sigma < 0.0:
        raise DataError("feature noise sigma must be >= 0")
    if sigma == 0.0:
        return features
    return features + rng.normal(features.shape, sigma=sigma)


# ---------------------------------------------------------------------------
# disentanglement, branches, fusion, classification
# ---------------------------------------------------------------------------

def split_features(x: Value, params: ModelParams) -> tuple[Value, Value]:
    gate = ad.sigmoid(ad.add(ad.matmul(x, params.gate_w), params.gate_b))
    x_c = ad.hadamard(gate, x)
    x_o = ad.sub(x, x_c)
    return x_c, x_o


def _mean_branch(x: Value, bundle: GraphBundle, weight: Value) -> Value:
    src, dst, w = _with_self_loops(bundle)
    z = ad.matmul(x, weight)
    wcol = ad.constant(w.reshape(-1, 1))
    summed = ad.scatter_sum(ad.hadamard(ad.row_select(z, src), wcol), dst, bundle.num_nodes)
    denom = ad.scatter_sum(wcol, dst, bundle.num_nodes)  # >= 1 thanks to self-loops
    return ad.elu(ad.divide(summed, denom))


def branch_and_fuse(
    x_c: Value,
    x_o: Value,
    bundle: GraphBundle,
    params: ModelParams,
) -> tuple[Value, Value, Value, Value]:
    """Context/object branch layers, then per-node gated convex fusion."""
    x_cb = _mean_branch(x_c, bundle, params.ctx_w)
    x_ob = _mean_branch(x_o, bundle, params.obj_w)
    both = ad.concat_cols(x_cb, x_ob)
    alpha = ad.sigmoid(ad.add(ad.matmul(both, params.fuse_w), params.fuse_b))  # [n, 1]
    one_minus = ad.shift(ad.scale(alpha, -1.0), 1.0)
    x_f = ad.add(ad.hadamard(x_cb, alpha), ad.hadamard(x_ob, one_minus))
    return x_cb, x_ob, x_f, alpha


def classify(x_f: Value, params: ModelParams) -> Value:
    return ad.add(ad.matmul(x_f, params.cls_w), params.cls_b)


@dataclass
class ForwardOutputs:
    x: Value
    x_c: Value
    x_o: Value
    x_c_branch: Value
    x_o_branch: Value
    x_f: Value
    logits: Value
    alpha: Value
    edge_scores: EdgeScores


def forward(
    bundle: GraphBundle,
    features: np.ndarray,
    params: ModelParams,
    rng: RngStream | None = None,
    train_mode: bool = False,
    eim_variant: str = "inner",
) -> ForwardOutputs:
    """Full pass over ``bundle``; eval mode (the default) is deterministic."""
    feats = ad.constant(features)
    x = encode(bundle, feats, params, rng=rng, train_mode=train_mode)
    x_c, x_o = split_features(x, params)
    x_cb, x_ob, x_f, alpha = branch_and_fuse(x_c, x_o, bundle, params)
    logits = classify(x_f, params)
    scores = estimate_edge_importance(bundle, features, params, variant=eim_variant)
    return ForwardOutputs(
        x=x, x_c=x_c, x_o=x_o,
        x_c_branch=x_cb, x_o_branch=x_ob,
        x_f=x_f, logits=logits, alpha=alpha,
        edge_scores=scores,
    )


def generate_counterfactual_features(x_c: Value, x_o: Value, rng: RngStream) -> tuple[Value, Value]:
    """Context intervention: hand every node another node's context row.

    The permutation is uniform; object features pass through unchanged. Used
    only inside loss terms.
    """
    if x_c.shape[0] != x_o.shape[0]:
        raise DataError("context/object row counts differ")
    perm = rng.permutation(x_c.shape[0])
    return ad.row_select(x_c, perm), x_o


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LossWeights:
    contrastive: float = 0.5
    orthogonality: float = 0.1
    mutual_info: float = 0.1


@dataclass
class LossReport:
    total: float
    classification: float
    contrastive: float
    orthogonality: float
    mutual_info: float
    weights: LossWeights
    total_value: Value = field(repr=False, compare=False, default=None)

    def as_dict(self) -> dict[str, float]:
        return {
            "total": self.total,
            "classification": self.classification,
            "contrastive": self.contrastive,
            "orthogonality": self.orthogonality,
            "mutual_info": self.mutual_info,
        }


def _standardize_cols(x: Value) -> Value:
    n = x.shape[0]
    mean = ad.scale(ad.sum_cols(x), 1.0 / n)
    centered = ad.sub(x, mean)
    var = ad.scale(ad.sum_cols(ad.hadamard(centered, centered)), 1.0 / n)
    return ad.divide(centered, ad.sqrt(ad.shift(var, 1e-12)))


def _orthogonality(x_c: Value, x_o: Value) -> Value:
    # squared cosine per node; zero rows contribute 0 via the epsilon guard
    dot = ad.sum_rows(ad.hadamard(x_c, x_o))
    sq = ad.hadamard(ad.sum_rows(ad.hadamard(x_c, x_c)), ad.sum_rows(ad.hadamard(x_o, x_o)))
    return ad.reduce_mean(ad.divide(ad.hadamard(dot, dot), ad.shift(sq, 1e-12)))


def _mutual_info_proxy(x_c: Value, x_o: Value) -> Value:
    # mean squared entry of the cross-correlation matrix == ||C||_F^2 / h^2
    n = x_c.shape[0]
    corr = ad.scale(ad.matmul(ad.transpose(_standardize_cols(x_c)), _standardize_cols(x_o)), 1.0 / n)
    return ad.reduce_mean(ad.hadamard(corr, corr))


def compute_losses(
    outputs: ForwardOutputs,
    outputs_cf_graph: ForwardOutputs | None,
    labels: np.ndarray,
    train_mask: np.ndarray,
    weights: LossWeights,
    object_tilde: Value | None = None,
) -> LossReport:
    """Classification + counterfactual consistency + disentanglement terms.

    ``outputs_cf_graph`` is the forward pass over the counterfactual graph;
    None zeroes the contrastive term (the no-CNG ablation). ``object_tilde``
    is the intervened object representation; defaults to the object branch
    itself, which the intervention leaves unchanged.
    """
    train_mask = np.asarray(train_mask, dtype=np.int64).reshape(-1)
    if train_mask.size == 0:
        raise DataError("compute_losses: empty train mask")

    cls = ad.cross_entropy(outputs.logits, labels, train_mask)

    if outputs_cf_graph is not None:
        diff = ad.sub(ad.softmax_rows(outputs.logits), ad.softmax_rows(outputs_cf_graph.logits))
        ctr = ad.reduce_mean(ad.hadamard(diff, diff))
    else:
        ctr = ad.constant([[0.0]])

    orth = _orthogonality(outputs.x_c_branch, outputs.x_o_branch)
    obj = object_tilde if object_tilde is not None else outputs.x_o_branch
    mi = _mutual_info_proxy(outputs.x_c_branch, obj)

    total = ad.add(
        ad.add(cls, ad.scale(ctr, weights.contrastive)),
        ad.add(ad.scale(orth, weights.orthogonality), ad.scale(mi, weights.mutual_info)),
    )
    report = LossReport(
        total=float(total.data[0, 0]),
        classification=float(cls.data[0, 0]),
        contrastive=float(ctr.data[0, 0]),
        orthogonality=float(orth.data[0, 0]),
        mutual_info=float(mi.data[0, 0]),
        weights=weights,
        total_value=total,
    )
    if not np.isfinite(report.total):
        raise NumericError(
            "non-finite loss: "
            + ", ".join(f"{k}={v:.6g}" for k, v in report.as_dict().items())
        )
    return report
