import numpy as np
import pytest

import cnlgnn.autodiff as ad
from cnlgnn.errors import DataError
from cnlgnn.graph import build_bundle
from cnlgnn.model import (
    ForwardOutputs,
    LossWeights,
    ModelParams,
    branch_and_fuse,
    compute_losses,
    edge_importance_values,
    encode,
    estimate_edge_importance,
    forward,
    generate_counterfactual_features,
    init_params,
    perturb_features,
    split_features,
)
from cnlgnn.rng import RngStream
from fdcheck import fd_gradient_spots, relative_error


def fixture_bundle(n=12, seed=0, d=5, classes=3, p=0.3):
    rng = RngStream(seed)
    mask = np.triu(rng.uniform((n, n)) < p, k=1)
    s, t = np.nonzero(mask)
    edges = np.concatenate([np.stack([s, t], 1), np.stack([t, s], 1)])
    b, _ = build_bundle(edges, rng.normal((n, d)), rng.integers(0, classes, n), class_count=classes)
    return b


def small_params(b, h=6, seed=1):
    return init_params(b.feature_dim, h, b.class_count, RngStream(seed))


# --- edge importance ----------------------------------------------------------


def test_identical_features_give_uniform_per_target_scores():
    b = fixture_bundle(seed=2)
    feats = np.tile(np.array([[0.3, -1.2, 0.7, 0.0, 2.0]]), (b.num_nodes, 1))
    b2, _ = build_bundle(b.edges, feats, b.labels, class_count=b.class_count)
    scores = estimate_edge_importance(b2, b2.features, small_params(b2))
    dst = b2.edges[:, 1]
    in_deg = np.bincount(dst, minlength=b2.num_nodes)
    assert np.allclose(scores.normalized, 1.0 / in_deg[dst])


def test_zero_attention_vector_gives_uniform_scores():
    b = fixture_bundle(seed=3)
    params = small_params(b)
    params.eim_attn.data = np.zeros_like(params.eim_attn.data)
    scores = estimate_edge_importance(b, b.features, params)
    assert np.allclose(scores.raw, 0.0)
    dst = b.edges[:, 1]
    in_deg = np.bincount(dst, minlength=b.num_nodes)
    assert np.allclose(scores.normalized, 1.0 / in_deg[dst])


def test_importance_matches_direct_formula_recomputation():
    for seed in range(5):
        rng = RngStream(40 + seed)
        n = 5
        mask = np.triu(rng.uniform((n, n)) < 0.7, k=1)
        s, t = np.nonzero(mask)
        edges = np.concatenate([np.stack([s, t], 1), np.stack([t, s], 1)])
        b, _ = build_bundle(edges, rng.normal((n, 4)), rng.integers(0, 2, n), class_count=2)
        params = init_params(4, 3, 2, RngStream(seed))
        scores = estimate_edge_importance(b, b.features, params)

        h = b.features @ params.eim_proj.data
        a = params.eim_attn.data[:, 0]
        for e, (i, j) in enumerate(b.edges):
            val = float(a @ h[i] + a @ h[j])
            raw = val if val > 0 else 0.2 * val
            assert abs(scores.raw[e] - raw) < 1e-12
        for j in np.unique(b.edges[:, 1]):
            sel = b.edges[:, 1] == j
            e = np.exp(scores.raw[sel] - scores.raw[sel].max())
            assert np.allclose(scores.normalized[sel], e / e.sum(), atol=1e-12)
        assert abs(scores.normalized[b.edges[:, 1] == j].sum() - 1.0) < 1e-6


def test_elementwise_variant_differs_but_normalizes():
    b = fixture_bundle(seed=4)
    params = small_params(b)
    inner = estimate_edge_importance(b, b.features, params, variant="inner")
    elem = estimate_edge_importance(b, b.features, params, variant="elementwise")
    assert not np.allclose(inner.raw, elem.raw)
    dst = b.edges[:, 1]
    sums = np.zeros(b.num_nodes)
    np.add.at(sums, dst, elem.normalized)
    assert np.allclose(sums[np.unique(dst)], 1.0, atol=1e-6)
    with pytest.raises(DataError):
        estimate_edge_importance(b, b.features, params, variant="other")


def test_importance_gradients_flow_to_eim_params():
    b = fixture_bundle(seed=5)
    params = small_params(b)
    _, norm = edge_importance_values(b, ad.constant(b.features), params)
    ad.backward(ad.reduce_mean(norm))
    assert params.eim_proj.grad is not None and np.abs(params.eim_proj.grad).max() > 0
    assert params.eim_attn.grad is not None


# --- encoder --------------------------------------------------------------------


def test_single_node_no_edges_is_pure_mlp_path():
    b, _ = build_bundle([], np.array([[1.0, -2.0, 0.5]]), [0], class_count=2)
    params = init_params(3, 4, 2, RngStream(9))
    out = encode(b, ad.constant(b.features), params).data
    h = b.features @ params.enc1_w.data
    h = np.where(h > 0, h, np.expm1(np.minimum(h, 0)))
    expected = h @ params.enc2_w.data
    assert np.allclose(out, expected, atol=1e-12)


def test_isomorphic_nodes_get_identical_embeddings():
    # nodes 0 and 1: same features, symmetric neighbourhoods
    feats = np.array([[1.0, 2.0], [1.0, 2.0], [0.0, -1.0]])
    edges = [(0, 2), (2, 0), (1, 2), (2, 1)]
    b, _ = build_bundle(edges, feats, [0, 0, 1], class_count=2)
    params = init_params(2, 5, 2, RngStream(3))
    out = encode(b, ad.constant(b.features), params).data
    assert np.allclose(out[0], out[1], atol=1e-12)


def test_encoder_honours_edge_weights():
    feats = np.array([[1.0], [2.0], [-1.0]])
    edges = [(1, 0), (2, 0)]
    b1, _ = build_bundle(edges, feats, [0, 0, 0], weights=[1.0, 1.0])
    b2, _ = build_bundle(edges, feats, [0, 0, 0], weights=[1.0, 0.0])
    params = init_params(1, 3, 2, RngStream(4))
    out1 = encode(b1, ad.constant(feats), params).data
    out2 = encode(b2, ad.constant(feats), params).data
    assert not np.allclose(out1[0], out2[0])


def test_encoder_gradients_match_finite_differences():
    b = fixture_bundle(n=8, seed=6, d=4)
    params = init_params(4, 3, b.class_count, RngStream(7))

    def loss_from(arrays):
        p = init_params(4, 3, b.class_count, RngStream(7))
        p.load_arrays({**p.arrays(), **arrays})
        return ad.reduce_mean(encode(b, ad.constant(b.features), p)).data[0, 0]

    loss = ad.reduce_mean(encode(b, ad.constant(b.features), params))
    ad.backward(loss)
    rng = np.random.default_rng(0)
    for name in ("enc1_w", "enc1_attn", "enc2_w", "enc2_attn"):
        arr = params.named()[name].data.copy()
        grad = params.named()[name].grad
        spots = [tuple(int(x) for x in (rng.integers(arr.shape[0]), rng.integers(arr.shape[1]))) for _ in range(4)]
        numeric = fd_gradient_spots(lambda a: loss_from(a), {name: arr}, [(name, s) for s in spots])
        for s, fd in zip(spots, numeric):
            assert relative_error(grad[s], fd) < 1e-3, f"{name}[{s}]"


def test_train_mode_needs_rng_and_eval_is_deterministic():
    b = fixture_bundle(seed=8)
    params = small_params(b)
    with pytest.raises(DataError):
        encode(b, ad.constant(b.features), params, train_mode=True)
    a = encode(b, ad.constant(b.features), params).data
    c = encode(b, ad.constant(b.features), params).data
    assert np.array_equal(a, c)


# --- feature perturbation ---------------------------------------------------------


def test_perturb_features_zero_sigma_identity():
    x = np.ones((4, 3))
    assert perturb_features(x, 0.0, RngStream(0)) is x


def test_perturb_features_mean_shift_small():
    x = np.zeros((100, 100))
    shifted = perturb_features(x, 0.1, RngStream(5))
    assert abs(shifted.mean()) < 0.005


# --- split / branch / fuse ---------------------------------------------------------


def test_split_symmetric_gate_halves():
    b = fixture_bundle(seed=10)
    params = small_params(b)
    params.gate_w.data = np.zeros_like(params.gate_w.data)
    params.gate_b.data = np.zeros_like(params.gate_b.data)
    x = encode(b, ad.constant(b.features), params)
    x_c, x_o = split_features(x, params)
    assert np.allclose(x_c.data, x.data / 2, atol=1e-12)
    assert np.allclose(x_o.data, x.data / 2, atol=1e-12)


def test_split_saturated_gate():
    b = fixture_bundle(seed=11)
    params = small_params(b)
    params.gate_w.data = np.zeros_like(params.gate_w.data)
    params.gate_b.data = np.full_like(params.gate_b.data, 20.0)
    x = encode(b, ad.constant(b.features), params)
    x_c, x_o = split_features(x, params)
    assert np.abs(x_o.data).max() <= 1e-8 * np.abs(x.data).max()
    assert np.allclose(x_c.data, x.data, atol=1e-7)


def test_split_identity_holds_for_arbitrary_params():
    b = fixture_bundle(seed=12)
    params = small_params(b, seed=99)
    x = encode(b, ad.constant(b.features), params)
    x_c, x_o = split_features(x, params)
    assert np.abs(x_c.data + x_o.data - x.data).max() <= 1e-12


def test_fuse_symmetric_gate_averages():
    b = fixture_bundle(seed=13)
    params = small_params(b)
    params.fuse_w.data = np.zeros_like(params.fuse_w.data)
    params.fuse_b.data = np.zeros_like(params.fuse_b.data)
    x = encode(b, ad.constant(b.features), params)
    x_c, x_o = split_features(x, params)
    x_cb, x_ob, x_f, alpha = branch_and_fuse(x_c, x_o, b, params)
    assert np.allclose(alpha.data, 0.5)
    assert np.allclose(x_f.data, (x_cb.data + x_ob.data) / 2, atol=1e-12)


def test_fuse_saturated_gate_selects_context():
    b = fixture_bundle(seed=14)
    params = small_params(b)
    params.fuse_w.data = np.zeros_like(params.fuse_w.data)
    params.fuse_b.data = np.full_like(params.fuse_b.data, 20.0)
    x_c, x_o = split_features(encode(b, ad.constant(b.features), params), params)
    x_cb, x_ob, x_f, alpha = branch_and_fuse(x_c, x_o, b, params)
    assert np.allclose(x_f.data, x_cb.data, atol=1e-7)


def test_fusion_is_convex_per_entry():
    b = fixture_bundle(seed=15)
    params = small_params(b, seed=31)
    x_c, x_o = split_features(encode(b, ad.constant(b.features), params), params)
    x_cb, x_ob, x_f, alpha = branch_and_fuse(x_c, x_o, b, params)
    lo = np.minimum(x_cb.data, x_ob.data)
    hi = np.maximum(x_cb.data, x_ob.data)
    assert (x_f.data >= lo - 1e-12).all() and (x_f.data <= hi + 1e-12).all()
    assert ((alpha.data > 0) & (alpha.data < 1)).all()


# --- counterfactual features ---------------------------------------------------------


def test_counterfactual_permutation_preserves_multiset():
    x_c = ad.constant(RngStream(1).normal((7, 3)))
    x_o = ad.constant(RngStream(2).normal((7, 3)))
    xt_c, xt_o = generate_counterfactual_features(x_c, x_o, RngStream(3))
    assert xt_o is x_o
    assert np.allclose(np.sort(xt_c.data, axis=0), np.sort(x_c.data, axis=0))


def test_counterfactual_identity_cases():
    x1 = ad.constant([[5.0, 1.0]])
    xt, _ = generate_counterfactual_features(x1, x1, RngStream(0))
    assert np.array_equal(xt.data, x1.data)  # n = 1 is necessarily identity

    x2 = ad.constant([[1.0], [2.0]])
    seed = next(s for s in range(100) if np.array_equal(RngStream(s).permutation(2), [0, 1]))
    xt, _ = generate_counterfactual_features(x2, x2, RngStream(seed))
    assert np.array_equal(xt.data, x2.data)


# --- losses ------------------------------------------------------------------------


def run_forward(b, params, variant="inner"):
    return forward(b, b.features, params, eim_variant=variant)


def test_perfect_logits_give_near_zero_classification():
    b = fixture_bundle(seed=16)
    params = small_params(b)
    out = run_forward(b, params)
    onehot = np.full((b.num_nodes, b.class_count), -50.0)
    onehot[np.arange(b.num_nodes), b.labels] = 50.0
    out.logits = ad.constant(onehot)
    report = compute_losses(out, None, b.labels, np.arange(b.num_nodes), LossWeights())
    assert report.classification < 1e-8
    assert report.contrastive == 0.0


def test_identical_forwards_zero_contrastive():
    b = fixture_bundle(seed=17)
    params = small_params(b)
    out1 = run_forward(b, params)
    out2 = run_forward(b, params)
    report = compute_losses(out1, out2, b.labels, np.arange(b.num_nodes), LossWeights())
    assert report.contrastive == 0.0


def test_orthogonal_branches_zero_orthogonality():
    b = fixture_bundle(n=4, seed=18)
    params = small_params(b)
    out = run_forward(b, params)
    n, h = out.x_c_branch.shape
    xc = np.zeros((n, h))
    xo = np.zeros((n, h))
    xc[:, 0] = 1.0
    xo[:, 1] = 1.0
    out.x_c_branch = ad.constant(xc)
    out.x_o_branch = ad.constant(xo)
    report = compute_losses(out, None, b.labels, np.arange(b.num_nodes), LossWeights())
    assert report.orthogonality < 1e-12


def test_loss_report_total_identity_and_nonnegative_terms():
    b = fixture_bundle(seed=19)
    params = small_params(b)
    out = run_forward(b, params)
    out_cf = run_forward(b, params)
    out_cf.logits = ad.add(out_cf.logits, ad.constant(np.full(out_cf.logits.shape, 0.3)))
    w = LossWeights(contrastive=0.5, orthogonality=0.1, mutual_info=0.1)
    r = compute_losses(out, out_cf, b.labels, np.arange(4), w)
    recomposed = (
        r.classification
        + w.contrastive * r.contrastive
        + w.orthogonality * r.orthogonality
        + w.mutual_info * r.mutual_info
    )
    assert relative_error(r.total, recomposed) < 1e-12
    assert min(r.classification, r.contrastive, r.orthogonality, r.mutual_info) >= 0.0


def test_empty_mask_rejected():
    b = fixture_bundle(seed=20)
    out = run_forward(b, small_params(b))
    with pytest.raises(DataError):
        compute_losses(out, None, b.labels, np.array([], dtype=np.int64), LossWeights())


def test_end_to_end_gradients_spot_checked_with_fd():
    """Total loss gradient vs central differences on a 12-node fixture."""
    b = fixture_bundle(n=12, seed=21, d=5)
    b_cf = fixture_bundle(n=12, seed=22, d=5)

    def total_for(params):
        out = forward(b, b.features, params)
        out_cf = forward(b_cf, b.features, params)
        return compute_losses(out, out_cf, b.labels, np.arange(6), LossWeights())

    params = init_params(5, 4, b.class_count, RngStream(23))
    report = total_for(params)
    ad.backward(report.total_value)

    rng = np.random.default_rng(1)
    base = params.arrays()
    for name, val in params.named().items():
        if name in ("eim_proj", "eim_attn"):
            continue  # scores feed only the discrete mask; checked separately
        grad = val.grad if val.grad is not None else np.zeros_like(val.data)
        arr = base[name]
        n_spots = min(5, arr.size)
        spots = []
        while len(spots) < n_spots:
            s = (int(rng.integers(arr.shape[0])), int(rng.integers(arr.shape[1])))
            if s not in spots:
                spots.append(s)

        def loss_fn(arrays, _n=name):
            p = init_params(5, 4, b.class_count, RngStream(23))
            merged = {**base, _n: arrays[_n]}
            p.load_arrays(merged)
            return total_for(p).total

        numeric = fd_gradient_spots(loss_fn, {name: arr.copy()}, [(name, s) for s in spots])
        for s, fd in zip(spots, numeric):
            assert relative_error(grad[s], fd) < 1e-3, f"{name}[{s}]: {grad[s]} vs {fd}"
