"""Five message-passing architectures over one residual skeleton.

Every model is: input projection -> L residual node-update layers ->
sum readout -> linear classifier. Architectures differ only in how a
layer turns node states into the residual branch. Parameters live in a
single flat float64 vector with a fixed coordinate order, so optimizers
and posterior approximations can treat every model as R^n.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import artifacts
from . import autodiff as ad
from .chem import EDGE_DIM, NODE_DIM, FeaturizedGraph
from .errors import ConfigError, DataError

ARCHITECTURES = ("gcn", "gin", "sage", "gat", "gatedgcn")

LEAKY_SLOPE = 0.2
GATE_EPS = 1e-6


@dataclass(frozen=True)
class ModelConfig:
    architecture: str
    hidden_dim: int = 128
    graph_dim: int = 256
    n_layers: int = 4
    n_heads: int = 4
    n_tasks: int = 1
    dropout: float = 0.2
    node_dim: int = NODE_DIM
    edge_dim: int = EDGE_DIM

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.architecture!r}; "
                              f"pick one of {ARCHITECTURES}")
        for name in ("hidden_dim", "graph_dim", "n_layers", "n_heads",
                     "n_tasks", "node_dim", "edge_dim"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.architecture == "gat" and self.hidden_dim % self.n_heads:
            raise ConfigError(
                f"attention heads ({self.n_heads}) must divide the hidden "
                f"dim ({self.hidden_dim})")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout rate must be in [0, 1)")

    def to_dict(self) -> dict:
        return {
            "architecture": self.architecture,
            "hidden_dim": self.hidden_dim,
            "graph_dim": self.graph_dim,
            "n_layers": self.n_layers,
            "n_heads": self.n_heads,
            "n_tasks": self.n_tasks,
            "dropout": self.dropout,
            "node_dim": self.node_dim,
            "edge_dim": self.edge_dim,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(**d)


def param_specs(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered (name, shape) table defining the flat coordinate layout."""
    d, dg, t = cfg.hidden_dim, cfg.graph_dim, cfg.n_tasks
    specs: list[tuple[str, tuple[int, ...]]] = [("embed.node", (d, cfg.node_dim))]
    if cfg.architecture == "gatedgcn":
        specs.append(("embed.edge", (d, cfg.edge_dim)))
    for layer in range(cfg.n_layers):
        p = f"layers.{layer}"
        if cfg.architecture == "gcn":
            specs.append((f"{p}.W", (d, d)))
        elif cfg.architecture == "gin":
            specs.append((f"{p}.W1", (d, d)))
            specs.append((f"{p}.W2", (d, d)))
        elif cfg.architecture == "sage":
            specs.append((f"{p}.W", (d, 2 * d)))
        elif cfg.architecture == "gat":
            dk = d // cfg.n_heads
            for k in range(cfg.n_heads):
                specs.append((f"{p}.heads.{k}.W", (dk, d)))
                specs.append((f"{p}.heads.{k}.U", (2 * dk,)))
        else:
            for w in ("U", "W", "A", "B", "C"):
                specs.append((f"{p}.{w}", (d, d)))
    specs.append(("readout.W", (dg, d)))
    specs.append(("classify.W", (t, dg)))
    specs.append(("classify.b", (t,)))
    return specs


def spec_digest(cfg: ModelConfig) -> str:
    """Fingerprint of the coordinate order; guards weight-file loads."""
    blob = json.dumps(param_specs(cfg), sort_keys=False).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------------------
# batching


@dataclass
class GraphBatch:
    node_x: np.ndarray        # (n_nodes, node_dim)
    edge_x: np.ndarray        # (n_edges, edge_dim)
    edge_index: np.ndarray    # (n_edges, 2) int64, columns (src, dst)
    node_graph: np.ndarray    # (n_nodes,) int64, sorted contiguous
    labels: np.ndarray        # (n_graphs, T) float64, NaN = missing
    n_graphs: int

    @property
    def n_nodes(self) -> int:
        return int(self.node_x.shape[0])

    @property
    def mask(self) -> np.ndarray:
        return (~np.isnan(self.labels)).astype(np.float64)


def make_batch(graphs: Sequence[FeaturizedGraph],
               labels: np.ndarray) -> GraphBatch:
    """Concatenate featurized graphs, offsetting edge endpoints."""
    if not graphs:
        raise DataError("cannot batch zero graphs")
    labels = np.asarray(labels, dtype=np.float64)
    if labels.ndim != 2 or labels.shape[0] != len(graphs):
        raise DataError(f"labels shape {labels.shape} does not match "
                        f"{len(graphs)} graphs")
    xs, es, eis, segs = [], [], [], []
    offset = 0
    for gid, g in enumerate(graphs):
        n = g.node_x.shape[0]
        if n == 0:
            raise DataError(f"graph {gid} has no atoms")
        xs.append(g.node_x)
        es.append(g.edge_x)
        eis.append(g.edge_index + offset)
        segs.append(np.full(n, gid, dtype=np.int64))
        offset += n
    batch = GraphBatch(
        node_x=np.concatenate(xs),
        edge_x=np.concatenate(es),
        edge_index=np.concatenate(eis),
        node_graph=np.concatenate(segs),
        labels=labels,
        n_graphs=len(graphs),
    )
    if batch.edge_index.size and (batch.edge_index.min() < 0
                                  or batch.edge_index.max() >= batch.n_nodes):
        raise DataError("edge endpoints outside batch node range")
    return batch


# ---------------------------------------------------------------------------
# layers


def residual_update(h: ad.Tensor, branch: ad.Tensor) -> ad.Tensor:
    return ad.add(h, branch)


def layer_gcn(h, batch: GraphBatch, W) -> ad.Tensor:
    src, dst = batch.edge_index[:, 0], batch.edge_index[:, 1]
    agg = ad.segment_sum(ad.gather_rows(h, src), dst, batch.n_nodes)
    return ad.relu(ad.linear(ad.add(agg, h), W))


def layer_gin(h, batch: GraphBatch, W1, W2) -> ad.Tensor:
    src, dst = batch.edge_index[:, 0], batch.edge_index[:, 1]
    agg = ad.segment_sum(ad.gather_rows(h, src), dst, batch.n_nodes)
    return ad.linear(ad.relu(ad.linear(ad.add(agg, h), W1)), W2)


def layer_sage(h, batch: GraphBatch, W) -> ad.Tensor:
    src, dst = batch.edge_index[:, 0], batch.edge_index[:, 1]
    agg = ad.segment_sum(ad.gather_rows(h, src), dst, batch.n_nodes)
    return ad.relu(ad.linear(ad.concat([h, agg], axis=1), W))


def layer_gat(h, batch: GraphBatch, heads: Sequence[tuple]) -> ad.Tensor:
    """heads: per-head (W, U) with W (d/K, d) and U (2d/K,)."""
    src, dst = batch.edge_index[:, 0], batch.edge_index[:, 1]
    outs = []
    for W, U in heads:
        p = ad.linear(h, W)                       # (n, dk)
        dk = p.data.shape[1]
        u_dst = ad.reshape(ad.slice1d(U, 0, dk), (dk, 1))
        u_src = ad.reshape(ad.slice1d(U, dk, 2 * dk), (dk, 1))
        score = ad.add(ad.matmul(ad.gather_rows(p, dst), u_dst),
                       ad.matmul(ad.gather_rows(p, src), u_src))
        score = ad.leaky_relu(score, LEAKY_SLOPE)  # (E, 1)
        alpha = ad.segment_softmax(score, dst, batch.n_nodes)
        msg = ad.mul(alpha, ad.gather_rows(p, src))
        outs.append(ad.elu(ad.segment_sum(msg, dst, batch.n_nodes)))
    return ad.concat(outs, axis=1)


def layer_gatedgcn(h, w_edge, batch: GraphBatch, U, W, A, B, C):
    """Returns (node branch, updated edge states); gates use the update."""
    src, dst = batch.edge_index[:, 0], batch.edge_index[:, 1]
    bump = ad.relu(ad.add(
        ad.add(ad.gather_rows(ad.linear(h, A), dst),
               ad.gather_rows(ad.linear(h, B), src)),
        ad.linear(w_edge, C)))
    w_new = ad.add(w_edge, bump)
    numer = ad.sigmoid(w_new)
    denom = ad.segment_sum(numer, dst, batch.n_nodes)
    gate = ad.div(numer, ad.add(ad.gather_rows(denom, dst), GATE_EPS))
    msg = ad.mul(gate, ad.gather_rows(ad.linear(h, W), src))
    agg = ad.segment_sum(msg, dst, batch.n_nodes)
    branch = ad.relu(ad.add(ad.linear(h, U), agg))
    return branch, w_new


def bce_loss_masked(logits: ad.Tensor, labels: np.ndarray) -> ad.Tensor:
    """Mean binary cross-entropy over non-missing cells, stable log form.

    loss cell = softplus(z) - y*z, equal to -log sigmoid(z) at y=1 and
    -log(1 - sigmoid(z)) at y=0.
    """
    labels = np.asarray(labels, dtype=np.float64)
    if labels.shape != logits.data.shape:
        raise ad.ShapeError(f"labels {labels.shape} vs logits "
                            f"{logits.data.shape}")
    mask = (~np.isnan(labels)).astype(np.float64)
    n_present = mask.sum()
    if n_present == 0:
        raise DataError("batch has no observed labels")
    y = np.nan_to_num(labels, nan=0.0)
    cells = ad.sub(ad.softplus(logits), ad.mul(logits, y))
    return ad.div(ad.tsum(ad.mul(cells, mask)), float(n_present))


# ---------------------------------------------------------------------------
# model


class GnnClassifier:
    """One architecture bound to a flat parameter coordinate system."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self.specs = param_specs(cfg)
        self.offsets: dict[str, tuple[int, int, tuple[int, ...]]] = {}
        pos = 0
        for name, shape in self.specs:
            size = int(np.prod(shape))
            self.offsets[name] = (pos, pos + size, shape)
            pos += size
        self.n_params = pos
        self.digest = spec_digest(cfg)

    # -- parameters

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        """Glorot-uniform matrices, zero biases, in coordinate order."""
        flat = np.zeros(self.n_params)
        for name, shape in self.specs:
            lo, hi, _ = self.offsets[name]
            if name == "classify.b":
                continue
            if len(shape) == 1:
                fan_in, fan_out = shape[0], 1
            else:
                fan_out, fan_in = shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            flat[lo:hi] = rng.uniform(-limit, limit, size=hi - lo)
        return flat

    def leaves(self, theta: ad.Tensor) -> dict[str, ad.Tensor]:
        """Slice one flat tensor into named weight views."""
        out = {}
        for name, shape in self.specs:
            lo, hi, _ = self.offsets[name]
            piece = ad.slice1d(theta, lo, hi)
            out[name] = ad.reshape(piece, shape) if len(shape) > 1 else piece
        return out

    # -- forward

    def forward(self, batch: GraphBatch, leaves: dict[str, ad.Tensor],
                train: bool = False,
                dropout_rng: Optional[np.random.Generator] = None
                ) -> ad.Tensor:
        """Per-graph logits (n_graphs, T)."""
        cfg = self.cfg
        if batch.node_x.shape[1] != cfg.node_dim:
            raise DataError(f"node features have dim {batch.node_x.shape[1]},"
                            f" model expects {cfg.node_dim}")
        use_dropout = train and cfg.dropout > 0.0
        if use_dropout and dropout_rng is None:
            raise ConfigError("dropout requires a dropout rng")
        x = ad.Tensor(batch.node_x)
        h = ad.linear(x, leaves["embed.node"])
        w_edge = None
        if cfg.architecture == "gatedgcn":
            if batch.edge_x.shape[1] != cfg.edge_dim:
                raise DataError(
                    f"edge features have dim {batch.edge_x.shape[1]}, "
                    f"model expects {cfg.edge_dim}")
            w_edge = ad.linear(ad.Tensor(batch.edge_x), leaves["embed.edge"])
        for layer in range(cfg.n_layers):
            p = f"layers.{layer}"
            if cfg.architecture == "gcn":
                branch = layer_gcn(h, batch, leaves[f"{p}.W"])
            elif cfg.architecture == "gin":
                branch = layer_gin(h, batch, leaves[f"{p}.W1"],
                                   leaves[f"{p}.W2"])
            elif cfg.architecture == "sage":
                branch = layer_sage(h, batch, leaves[f"{p}.W"])
            elif cfg.architecture == "gat":
                heads = [(leaves[f"{p}.heads.{k}.W"],
                          leaves[f"{p}.heads.{k}.U"])
                         for k in range(cfg.n_heads)]
                branch = layer_gat(h, batch, heads)
            else:
                branch, w_edge = layer_gatedgcn(
                    h, w_edge, batch, leaves[f"{p}.U"], leaves[f"{p}.W"],
                    leaves[f"{p}.A"], leaves[f"{p}.B"], leaves[f"{p}.C"])
            if use_dropout:
                branch = ad.dropout(branch, cfg.dropout, dropout_rng)
            h = residual_update(h, branch)
        pooled = ad.segment_sum(ad.linear(h, leaves["readout.W"]),
                                batch.node_graph, batch.n_graphs)
        logits = ad.linear(pooled, leaves["classify.W"])
        return ad.add(logits, leaves["classify.b"])

    def nll(self, tape: ad.Tape, theta: ad.Tensor, batch: GraphBatch,
            train: bool = False,
            rng: Optional[np.random.Generator] = None) -> ad.Tensor:
        """Mean masked cross-entropy of the batch, differentiable in theta."""
        logits = self.forward(batch, self.leaves(theta), train=train,
                              dropout_rng=rng)
        return bce_loss_masked(logits, batch.labels)

    # -- convenience entry points on flat vectors

    def loss_and_grad(self, flat: np.ndarray, batch: GraphBatch,
                      train: bool = True,
                      dropout_rng: Optional[np.random.Generator] = None
                      ) -> tuple[float, np.ndarray]:
        tape = ad.Tape()
        theta = tape.parameter("theta", flat)
        logits = self.forward(batch, self.leaves(theta), train=train,
                              dropout_rng=dropout_rng)
        loss = bce_loss_masked(logits, batch.labels)
        grads = ad.backward(tape, loss)
        return loss.item(), grads["theta"]

    def logits(self, flat: np.ndarray, batch: GraphBatch,
               train: bool = False,
               dropout_rng: Optional[np.random.Generator] = None
               ) -> np.ndarray:
        out = self.forward(batch, self.leaves(ad.Tensor(flat)), train=train,
                           dropout_rng=dropout_rng)
        return out.data

    def predict_proba(self, flat: np.ndarray, batch: GraphBatch,
                      train: bool = False,
                      dropout_rng: Optional[np.random.Generator] = None
                      ) -> np.ndarray:
        return ad.sigmoid(ad.Tensor(self.logits(
            flat, batch, train=train, dropout_rng=dropout_rng))).data


# ---------------------------------------------------------------------------
# weight snapshots


def save_weights(path: str, model: GnnClassifier, flat: np.ndarray,
                 meta: Optional[dict] = None) -> None:
    info = {"config": model.cfg.to_dict(), "digest": model.digest}
    info.update(meta or {})
    artifacts.write_container(path, "weights", info,
                              {"flat": np.asarray(flat, dtype=np.float64)})


def load_weights(path: str,
                 model: Optional[GnnClassifier] = None
                 ) -> tuple[GnnClassifier, np.ndarray, dict]:
    """Load weights; the stored coordinate digest must match the model's."""
    _, meta, arrays = artifacts.read_container(path, expect_kind="weights")
    cfg = ModelConfig.from_dict(meta["config"])
    if model is None:
        model = GnnClassifier(cfg)
    if meta.get("digest") != model.digest:
        raise ConfigError(
            f"{path}: weight coordinate digest {meta.get('digest')!r} does "
            f"not match this model's {model.digest!r}")
    flat = arrays["flat"]
    if flat.shape != (model.n_params,):
        raise ConfigError(f"{path}: expected {model.n_params} coordinates, "
                          f"file has {flat.shape}")
    return model, flat, meta
