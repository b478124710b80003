"""Layer semantics, batch mechanics, equivariance and gradients."""

import numpy as np
import pytest

from molbayes import autodiff as ad
from molbayes import gnn
from molbayes.chem import FeaturizedGraph, featurize, parse_smiles
from molbayes.errors import ConfigError, DataError
from molbayes.gnn import (GnnClassifier, GraphBatch, ModelConfig,
                          bce_loss_masked, make_batch)


def t(x):
    return ad.Tensor(np.asarray(x, dtype=np.float64))


def batch_of(edges, n_nodes, n_graphs=1, node_graph=None, d_e=4):
    """Tiny batch from a directed edge list (both directions supplied)."""
    edge_index = (np.asarray(edges, dtype=np.int64).reshape(-1, 2)
                  if edges else np.zeros((0, 2), dtype=np.int64))
    return GraphBatch(
        node_x=np.zeros((n_nodes, 40)),
        edge_x=np.zeros((len(edges), d_e)),
        edge_index=edge_index,
        node_graph=(np.zeros(n_nodes, dtype=np.int64)
                    if node_graph is None
                    else np.asarray(node_graph, dtype=np.int64)),
        labels=np.zeros((n_graphs, 1)),
        n_graphs=n_graphs,
    )


def both_ways(pairs):
    out = []
    for a, b in pairs:
        out += [(a, b), (b, a)]
    return out


# ---------------------------------------------------------------------------
# individual layers


def test_gcn_isolated_node_identity_weight():
    b = batch_of([], 1)
    h = t([[-1.0, 2.0]])
    out = gnn.layer_gcn(h, b, t(np.eye(2)))
    assert np.array_equal(out.data, [[0.0, 2.0]])


def test_gcn_path_graph_hand_value():
    b = batch_of(both_ways([(0, 1)]), 2)
    h = t([[1.0, 0.0], [0.0, 1.0]])
    out = gnn.layer_gcn(h, b, t(np.eye(2)))
    assert np.array_equal(out.data, [[1.0, 1.0], [1.0, 1.0]])


def test_gcn_zero_weight():
    b = batch_of(both_ways([(0, 1)]), 2)
    out = gnn.layer_gcn(t(np.random.default_rng(0).normal(size=(2, 3))),
                        b, t(np.zeros((3, 3))))
    assert np.all(out.data == 0.0)


def test_gin_isolated_and_triangle():
    b = batch_of([], 1)
    h = t([[0.5, -0.5]])
    out = gnn.layer_gin(h, b, t(np.eye(2)), t(np.eye(2)))
    assert np.array_equal(out.data, [[0.5, 0.0]])

    tri = batch_of(both_ways([(0, 1), (1, 2), (0, 2)]), 3)
    h = t([[1.0], [1.0], [1.0]])
    out = gnn.layer_gin(h, tri, t([[1.0]]), t([[1.0]]))
    assert np.array_equal(out.data, [[3.0], [3.0], [3.0]])


def test_gin_has_no_outer_relu():
    b = batch_of([], 1)
    out = gnn.layer_gin(t([[1.0]]), b, t([[1.0]]), t([[-1.0]]))
    assert out.data[0, 0] == -1.0


def test_sage_excludes_self_from_neighbor_sum():
    b = batch_of([], 1)
    h = t([[1.0]])
    out = gnn.layer_sage(h, b, t([[1.0, 1.0]]))
    assert out.data[0, 0] == 1.0  # neighbor block is zero

    edge = batch_of(both_ways([(0, 1)]), 2)
    h = t([[1.0], [1.0]])
    out = gnn.layer_sage(h, edge, t([[1.0, 1.0]]))
    assert np.array_equal(out.data, [[2.0], [2.0]])


def dense_gat_head(h, in_nbrs, W, U):
    """Straight-line reimplementation used as an oracle."""
    dk = W.shape[0]
    p = h @ W.T
    out = np.zeros((h.shape[0], dk))
    alphas = {}
    for i, nbrs in enumerate(in_nbrs):
        if not nbrs:
            continue
        scores = []
        for j in nbrs:
            raw = U[:dk] @ p[i] + U[dk:] @ p[j]
            scores.append(raw if raw > 0 else 0.2 * raw)
        scores = np.array(scores)
        a = np.exp(scores - scores.max())
        a /= a.sum()
        alphas[i] = a
        agg = sum(a[m] * p[j] for m, j in enumerate(nbrs))
        out[i] = np.where(agg > 0, agg, np.expm1(np.minimum(agg, 0)))
    return out, alphas


def test_gat_singleton_softmax_and_symmetry():
    rng = np.random.default_rng(5)
    d, k = 4, 2
    heads = [(t(rng.normal(size=(2, 4), scale=0.3)), t(rng.normal(size=4)))
             for _ in range(k)]
    # node 0 has exactly one incoming edge: alpha must be 1
    b = batch_of([(1, 0)], 2)
    h_nodes = rng.normal(size=(2, d))
    out = gnn.layer_gat(t(h_nodes), b, heads)
    for W, U in heads:
        p = h_nodes @ W.data.T
        want = np.where(p[1] > 0, p[1], np.expm1(np.minimum(p[1], 0)))
        got = out.data[0, :2] if (W, U) == heads[0] else out.data[0, 2:]
        assert np.allclose(got, want, atol=1e-12)

    # two incoming edges from nodes with identical states: alpha = 0.5 each
    b = batch_of([(1, 0), (2, 0)], 3)
    same = rng.normal(size=d)
    h_nodes = np.stack([rng.normal(size=d), same, same])
    out = gnn.layer_gat(t(h_nodes), b, heads)
    for idx, (W, U) in enumerate(heads):
        p = h_nodes @ W.data.T
        agg = 0.5 * p[1] + 0.5 * p[2]
        want = np.where(agg > 0, agg, np.expm1(np.minimum(agg, 0)))
        assert np.allclose(out.data[0, 2 * idx:2 * idx + 2], want, atol=1e-12)


def test_gat_matches_dense_oracle_and_alpha_sums():
    rng = np.random.default_rng(9)
    d, dk = 6, 3
    # star: center 0 with incoming edges from 1..3, plus reverse edges
    edges = both_ways([(1, 0), (2, 0), (3, 0)])
    b = batch_of(edges, 4)
    in_nbrs = [[], [], [], []]
    for s, dd in edges:
        in_nbrs[dd].append(s)
    h_nodes = rng.normal(size=(4, d), scale=0.5)
    W = rng.normal(size=(dk, d), scale=0.4)
    U = rng.normal(size=2 * dk, scale=0.4)
    out = gnn.layer_gat(t(h_nodes), b, [(t(W), t(U))])
    want, alphas = dense_gat_head(h_nodes, in_nbrs, W, U)
    assert np.allclose(out.data, want, atol=1e-12)
    for i, a in alphas.items():
        assert abs(a.sum() - 1.0) < 1e-12


def dense_gatedgcn(h, w_edge, edges, U, W, A, B, C, eps=1e-6):
    n = h.shape[0]
    w_new = np.zeros_like(w_edge)
    for e, (s, d_) in enumerate(edges):
        z = A @ h[d_] + B @ h[s] + C @ w_edge[e]
        w_new[e] = w_edge[e] + np.maximum(z, 0)
    out = np.zeros_like(h)
    for i in range(n):
        incoming = [e for e, (s, d_) in enumerate(edges) if d_ == i]
        denom = sum(1 / (1 + np.exp(-w_new[e])) for e in incoming) + eps
        acc = U @ h[i]
        for e in incoming:
            s = edges[e][0]
            gate = (1 / (1 + np.exp(-w_new[e]))) / denom
            acc = acc + gate * (W @ h[s])
        out[i] = np.maximum(acc, 0)
    return out, w_new


def test_gatedgcn_gate_normalization():
    rng = np.random.default_rng(13)
    d = 3
    mats = [t(rng.normal(size=(d, d), scale=0.3)) for _ in range(5)]
    # one incoming edge: gate == sigma/(sigma + eps), within eps of 1
    b = batch_of([(1, 0)], 2)
    h_nodes = rng.normal(size=(2, d))
    w0 = rng.normal(size=(1, d))
    out, w_new = gnn.layer_gatedgcn(t(h_nodes), t(w0), b, *mats)
    want, w_want = dense_gatedgcn(h_nodes, w0, [(1, 0)],
                                  *[m.data for m in mats])
    assert np.allclose(out.data, want, atol=1e-12)
    assert np.allclose(w_new.data, w_want, atol=1e-12)


def test_gatedgcn_matches_dense_oracle():
    rng = np.random.default_rng(17)
    d = 4
    edges = both_ways([(0, 1), (1, 2), (2, 3), (0, 3)])
    b = batch_of(edges, 4)
    h_nodes = rng.normal(size=(4, d), scale=0.5)
    w0 = rng.normal(size=(len(edges), d), scale=0.5)
    mats = [rng.normal(size=(d, d), scale=0.4) for _ in range(5)]
    out, w_new = gnn.layer_gatedgcn(t(h_nodes), t(w0), b,
                                    *[t(m) for m in mats])
    want, w_want = dense_gatedgcn(h_nodes, w0, edges, *mats)
    assert np.allclose(out.data, want, atol=1e-12)
    assert np.allclose(w_new.data, w_want, atol=1e-12)


def test_gatedgcn_equal_edge_states_split_gates_evenly():
    d = 2
    eye = t(np.eye(d))
    zero = t(np.zeros((d, d)))
    b = batch_of([(1, 0), (2, 0)], 3)
    h_nodes = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
    w0 = np.ones((2, d))
    # A=B=C=0 keeps edge states fixed; U=0, W=I isolates the gated sum
    out, _ = gnn.layer_gatedgcn(t(h_nodes), t(w0), b, zero, eye, zero,
                                zero, zero)
    sig = 1 / (1 + np.exp(-1.0))
    share = sig / (2 * sig + 1e-6)
    assert np.allclose(out.data[0], [2 * share * 1.0, 0.0], atol=1e-12)


def test_residual_update():
    assert np.array_equal(
        gnn.residual_update(t([1.0, 2.0]), t([3.0, 4.0])).data, [4.0, 6.0])
    h = t([[1.0, -2.0]])
    assert np.array_equal(gnn.residual_update(h, t([[0.0, 0.0]])).data,
                          h.data)


# ---------------------------------------------------------------------------
# loss


def test_bce_values():
    z = t(np.array([[0.0]]))
    assert abs(bce_loss_masked(z, np.array([[1.0]])).item()
               - np.log(2.0)) < 1e-12
    z = t(np.array([[20.0]]))
    loss = bce_loss_masked(z, np.array([[1.0]])).item()
    assert abs(loss - 2.0611536181902037e-09) < 1e-15


def test_bce_masking():
    z = t(np.array([[0.0, 100.0]]))
    loss = bce_loss_masked(z, np.array([[1.0, np.nan]])).item()
    assert abs(loss - np.log(2.0)) < 1e-12
    with pytest.raises(DataError):
        bce_loss_masked(z, np.array([[np.nan, np.nan]]))


def test_bce_no_overflow_at_extreme_logits():
    z = t(np.array([[800.0, -800.0]]))
    loss = bce_loss_masked(z, np.array([[0.0, 1.0]])).item()
    assert np.isfinite(loss) and loss > 100


# ---------------------------------------------------------------------------
# config and batching


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(architecture="transformer")
    with pytest.raises(ConfigError):
        ModelConfig(architecture="gat", hidden_dim=10, n_heads=4)
    with pytest.raises(ConfigError):
        ModelConfig(architecture="gcn", n_layers=0)
    cfg = ModelConfig(architecture="gcn")
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_param_shapes_per_architecture():
    d, dg, T = 8, 6, 3
    for arch in gnn.ARCHITECTURES:
        cfg = ModelConfig(architecture=arch, hidden_dim=d, graph_dim=dg,
                          n_layers=2, n_heads=2, n_tasks=T)
        model = GnnClassifier(cfg)
        shapes = dict(model.specs)
        assert shapes["embed.node"] == (d, 40)
        assert shapes["readout.W"] == (dg, d)
        assert shapes["classify.W"] == (T, dg)
        assert shapes["classify.b"] == (T,)
        if arch == "sage":
            assert shapes["layers.0.W"] == (d, 2 * d)
        if arch == "gat":
            assert shapes["layers.0.heads.1.W"] == (d // 2, d)
            assert shapes["layers.1.heads.0.U"] == (d,)
        if arch == "gatedgcn":
            assert shapes["embed.edge"] == (d, 4)
            assert shapes["layers.1.C"] == (d, d)
        flat = model.init_params(np.random.default_rng(0))
        assert flat.shape == (model.n_params,)
        lo, hi, _ = model.offsets["classify.b"]
        assert np.all(flat[lo:hi] == 0.0)


def featurized(smiles_list):
    return [featurize(parse_smiles(s), graph_id=i)
            for i, s in enumerate(smiles_list)]


def test_make_batch_offsets_edges():
    graphs = featurized(["CC", "CCC"])
    batch = make_batch(graphs, np.zeros((2, 1)))
    assert batch.n_nodes == 5 and batch.n_graphs == 2
    assert batch.edge_index.min() >= 0 and batch.edge_index.max() == 4
    # second graph's edges all reference nodes 2..4
    second = batch.edge_index[len(graphs[0].edge_index):]
    assert second.min() >= 2
    assert np.array_equal(batch.node_graph, [0, 0, 1, 1, 1])
    assert np.array_equal(batch.mask, np.ones((2, 1)))


def test_make_batch_rejects_bad_labels():
    graphs = featurized(["CC"])
    with pytest.raises(DataError):
        make_batch(graphs, np.zeros((2, 1)))
    with pytest.raises(DataError):
        make_batch([], np.zeros((0, 1)))


# ---------------------------------------------------------------------------
# whole-model properties


def small_config(arch, T=2):
    return ModelConfig(architecture=arch, hidden_dim=6, graph_dim=5,
                       n_layers=2, n_heads=2, n_tasks=T, dropout=0.0)


def test_zero_weights_give_bias_logits():
    for arch in gnn.ARCHITECTURES:
        model = GnnClassifier(small_config(arch))
        flat = np.zeros(model.n_params)
        lo, hi, _ = model.offsets["classify.b"]
        flat[lo:hi] = [0.7, -0.3]
        batch = make_batch(featurized(["CCO", "c1ccccc1"]),
                           np.zeros((2, 2)))
        out = model.logits(flat, batch)
        assert np.allclose(out, [[0.7, -0.3], [0.7, -0.3]], atol=1e-15), arch


def test_t12_classifier_emits_12_logits():
    model = GnnClassifier(ModelConfig(architecture="gcn", hidden_dim=6,
                                      graph_dim=5, n_layers=1, n_tasks=12,
                                      dropout=0.0))
    batch = make_batch(featurized(["CC"]), np.zeros((1, 12)))
    flat = model.init_params(np.random.default_rng(0))
    assert model.logits(flat, batch).shape == (1, 12)


def permute_featurized(fg: FeaturizedGraph, perm: np.ndarray):
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm))
    edge_index = perm[fg.edge_index]
    key = np.lexsort((edge_index[:, 0], edge_index[:, 1]))
    return FeaturizedGraph(fg.node_x[inv], fg.edge_x[key], edge_index[key],
                           fg.graph_id)


def test_logits_invariant_under_node_relabeling():
    rng = np.random.default_rng(23)
    for arch in gnn.ARCHITECTURES:
        model = GnnClassifier(small_config(arch))
        flat = model.init_params(np.random.default_rng(1))
        fg = featurized(["CC(=O)Oc1ccccc1"])[0]
        base = model.logits(flat, make_batch([fg], np.zeros((1, 2))))
        for _ in range(3):
            perm = rng.permutation(fg.node_x.shape[0])
            fg2 = permute_featurized(fg, perm)
            out = model.logits(flat, make_batch([fg2], np.zeros((1, 2))))
            assert np.allclose(out, base, atol=1e-10), arch


def test_isomorphic_smiles_give_identical_logits():
    pairs = [("C1CC1", "C2CC2"), ("c1ccccc1", "c1ccc(cc1)"),
             ("CC(=O)O", "OC(C)=O")]
    for arch in gnn.ARCHITECTURES:
        model = GnnClassifier(small_config(arch))
        flat = model.init_params(np.random.default_rng(2))
        for a, b in pairs:
            la = model.logits(flat, make_batch(featurized([a]),
                                               np.zeros((1, 2))))
            lb = model.logits(flat, make_batch(featurized([b]),
                                               np.zeros((1, 2))))
            assert np.allclose(la, lb, atol=1e-10), (arch, a, b)


def test_batched_equals_individual_prediction():
    smiles = ["CCO", "c1ccccc1", "CC(=O)O", "C"]
    labels = np.zeros((4, 2))
    for arch in gnn.ARCHITECTURES:
        model = GnnClassifier(small_config(arch))
        flat = model.init_params(np.random.default_rng(3))
        together = model.predict_proba(flat, make_batch(featurized(smiles),
                                                        labels))
        for i, s in enumerate(smiles):
            alone = model.predict_proba(
                flat, make_batch(featurized([s]), labels[i:i + 1]))
            assert np.allclose(alone, together[i:i + 1], atol=1e-12), arch


def test_gradcheck_every_architecture():
    rng = np.random.default_rng(31)
    batch = make_batch(featurized(["CCO", "C1CC1C"]),
                       np.array([[1.0, 0.0], [0.0, np.nan]]))
    for arch in gnn.ARCHITECTURES:
        model = GnnClassifier(small_config(arch))
        flat = model.init_params(rng)
        _, grad = model.loss_and_grad(flat, batch, train=False)

        def f(v):
            tape = ad.Tape()
            theta = tape.parameter("theta", v)
            logits = model.forward(batch, model.leaves(theta))
            return bce_loss_masked(logits, batch.labels).item()

        fd = ad.finite_diff_grad(f, flat)
        scale = max(np.abs(grad).max(), np.abs(fd).max(), 1e-8)
        assert np.abs(grad - fd).max() / scale < 1e-5, arch


def test_dropout_changes_training_forward_only():
    model = GnnClassifier(ModelConfig(architecture="gcn", hidden_dim=6,
                                      graph_dim=5, n_layers=2, n_tasks=1,
                                      dropout=0.5))
    batch = make_batch(featurized(["CCO"]), np.zeros((1, 1)))
    flat = model.init_params(np.random.default_rng(4))
    plain = model.logits(flat, batch)
    assert np.allclose(model.logits(flat, batch), plain)
    rng = np.random.default_rng(5)
    noisy = model.logits(flat, batch, train=True, dropout_rng=rng)
    assert not np.allclose(noisy, plain)
    with pytest.raises(ConfigError):
        model.logits(flat, batch, train=True)


# ---------------------------------------------------------------------------
# weight snapshots


def test_weight_roundtrip_and_digest_guard(tmp_path):
    model = GnnClassifier(small_config("gin"))
    flat = model.init_params(np.random.default_rng(6))
    path = str(tmp_path / "w.bin")
    gnn.save_weights(path, model, flat, meta={"note": "unit"})
    loaded_model, loaded, meta = gnn.load_weights(path)
    assert np.array_equal(loaded, flat)
    assert loaded_model.cfg == model.cfg and meta["note"] == "unit"

    other = GnnClassifier(small_config("gcn"))
    with pytest.raises(ConfigError):
        gnn.load_weights(path, model=other)


def test_weight_files_are_byte_identical(tmp_path):
    model = GnnClassifier(small_config("sage"))
    flat = model.init_params(np.random.default_rng(7))
    p1, p2 = str(tmp_path / "a.bin"), str(tmp_path / "b.bin")
    gnn.save_weights(p1, model, flat)
    gnn.save_weights(p2, model, flat)
    assert open(p1, "rb").read() == open(p2, "rb").read()
