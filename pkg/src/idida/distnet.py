"""Disentangled spatio-temporal graph attention network and its predictors.

Hidden states live in an ``(N * T, d)`` matrix whose row ``u * T + t`` holds
node ``u`` at time ``t``. Each layer attends from every row to its dynamic
neighbourhood, producing an invariant summary (softmax of the scores,
featural mask, residual) and a variant summary (softmax of the negated
scores), which are added to form the next layer's input.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import ParameterStore, Segments, Tensor
from .dyngraph import LINK, NODE, DynamicGraph, DynamicNeighborhoodIndex, temporal_encoding


@dataclass
class NetworkConfig:
    in_dim: int
    hidden: int = 16
    layers: int = 2
    heads: int = 1
    d_te: int | None = None
    window: int | None = None
    task: str = LINK
    num_classes: int | None = None
    disentangled: bool = True

    def __post_init__(self) -> None:
        if self.d_te is None:
            self.d_te = self.hidden // 2 + (self.hidden // 2) % 2
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.hidden % self.heads:
            raise ValueError(f"heads ({self.heads}) must divide hidden ({self.hidden})")
        if self.d_te % 2:
            raise ValueError("d_te must be even")
        if self.task == NODE and not self.num_classes:
            raise ValueError("node task needs num_classes")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PatternSummaries:
    """Invariant and variant summaries for every (node, time) row of one layer."""

    z_inv: Tensor
    z_var: Tensor
    num_nodes: int
    num_times: int

    def row(self, u: int, t: int) -> int:
        return u * self.num_times + t

    def invariant(self, u: int, t: int) -> np.ndarray:
        return self.z_inv.data[self.row(u, t)]

    def variant(self, u: int, t: int) -> np.ndarray:
        return self.z_var.data[self.row(u, t)]


# ---------------------------------------------------------------- building blocks


def input_projection(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    if x.ndim != 2 or x.shape[1] != W.shape[0]:
        raise dc.ShapeError(f"input_projection: features {x.shape} do not match weight {W.shape}")
    return dc.add_row(x @ W, b)


def qkv(hx: Tensor, Wq: Tensor, Wk: Tensor, Wv: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Project ``[h || TE(t)]`` rows to queries, keys and values (no bias)."""
    return hx @ Wq, hx @ Wk, hx @ Wv


def attention_scores(q: Tensor, k: Tensor, index: DynamicNeighborhoodIndex) -> Tensor:
    dim = q.shape[1]
    s = dc.row_dot(dc.gather_rows(q, index.dst), dc.gather_rows(k, index.src))
    return dc.scale(s, 1.0 / np.sqrt(dim))


def structural_masks(scores: Tensor, seg: Segments) -> tuple[Tensor, Tensor]:
    """Invariant mask softmax(s) and variant mask softmax(-s) per neighbourhood."""
    return dc.segment_softmax(scores, seg), dc.segment_softmax(dc.scale(scores, -1.0), seg)


def featural_mask(w_f: Tensor) -> Tensor:
    return dc.softmax(w_f)


def masked_sum(mask: Tensor, values: Tensor, index: DynamicNeighborhoodIndex) -> Tensor:
    """Sum over each neighbourhood of mask-weighted value rows."""
    return dc.segment_sum(dc.scale_rows(dc.gather_rows(values, index.src), mask), index.segments)


def ffn(x: Tensor, p: dict[str, Tensor]) -> Tensor:
    """alpha * MLP(LayerNorm(x)) + (1 - alpha) * x, with a one-hidden-layer ReLU MLP."""
    y = dc.layer_norm(x, p["ln_g"], p["ln_b"])
    y = dc.relu(dc.add_row(y @ p["W1"], p["b1"]))
    y = dc.add_row(y @ p["W2"], p["b2"])
    alpha = p["alpha"]
    return dc.add(dc.scale(y, alpha), dc.sub(x, dc.scale(x, alpha)))


def aggregate(
    z_inv_tilde: Tensor,
    z_var_tilde: Tensor,
    m_f: Tensor,
    h_self: Tensor,
    ffn_inv: dict[str, Tensor],
    ffn_var: dict[str, Tensor],
) -> tuple[Tensor, Tensor]:
    """Finish both branches from their mask-weighted sums.

    The featural mask distributes over the invariant sum, so applying it after
    aggregation equals masking every value vector first.
    """
    z_inv = ffn(dc.add(dc.mul_row(z_inv_tilde, m_f), h_self), ffn_inv)
    z_var = ffn(z_var_tilde, ffn_var)
    return z_inv, z_var


# ---------------------------------------------------------------- predictors


def _pair_rows(pairs: np.ndarray, num_nodes: int, num_times: int) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pairs, dtype=np.int64).reshape(-1, 3)
    u, v, t = p[:, 0], p[:, 1], p[:, 2]
    if p.size and (
        u.min() < 0 or v.min() < 0 or u.max() >= num_nodes or v.max() >= num_nodes or t.min() < 0 or t.max() >= num_times
    ):
        raise ValueError("predict_link: pair references an inactive (node, time)")
    return u * num_times + t, v * num_times + t


def predict_link(z: Tensor, pairs: np.ndarray, num_nodes: int, num_times: int) -> Tensor:
    """Inner-product logits for ``(u, v, t)`` triples."""
    ru, rv = _pair_rows(pairs, num_nodes, num_times)
    return dc.row_dot(dc.gather_rows(z, ru), dc.gather_rows(z, rv))


def predict_node(z: Tensor, W: Tensor, b: Tensor) -> Tensor:
    return dc.add_row(z @ W, b)


def predict_mixed(invariant_logits: Tensor, variant_logits: Tensor) -> Tensor:
    """Invariant logits gated by the sigmoid of the variant logits."""
    return dc.mul(invariant_logits, dc.sigmoid(variant_logits))


def argmax_lowest(logits: np.ndarray) -> np.ndarray:
    """Row-wise argmax; ties resolve to the lowest class index."""
    return np.argmax(logits, axis=1)


# ---------------------------------------------------------------- network


class DisentangledNet:
    def __init__(self, config: NetworkConfig, seed: int = 0):
        self.config = config
        self.params = ParameterStore()
        rng = np.random.default_rng(seed)
        c = config
        d, dh, din = c.hidden, c.hidden // c.heads, c.hidden + c.d_te
        P = self.params
        P.add("fc.W", dc.uniform_fan_in(rng, c.in_dim, (c.in_dim, d)))
        P.add("fc.b", np.zeros(d))
        branches = ("ffn_inv", "ffn_var") if c.disentangled else ("ffn_inv",)
        for i in range(c.layers):
            for j in range(c.heads):
                for name in ("Wq", "Wk", "Wv"):
                    P.add(f"layer{i}.head{j}.{name}", dc.uniform_fan_in(rng, din, (din, dh)))
            if c.disentangled:
                P.add(f"layer{i}.wf", np.zeros(d))
            for br in branches:
                P.add(f"layer{i}.{br}.ln_g", np.ones(d))
                P.add(f"layer{i}.{br}.ln_b", np.zeros(d))
                P.add(f"layer{i}.{br}.W1", dc.uniform_fan_in(rng, d, (d, d)))
                P.add(f"layer{i}.{br}.b1", np.zeros(d))
                P.add(f"layer{i}.{br}.W2", dc.uniform_fan_in(rng, d, (d, d)))
                P.add(f"layer{i}.{br}.b2", np.zeros(d))
                P.add(f"layer{i}.{br}.alpha", np.array([0.5]))
        if c.task == NODE:
            for head in ("clf_inv", "clf_var"):
                P.add(f"{head}.W", dc.uniform_fan_in(rng, d, (d, c.num_classes)))
                P.add(f"{head}.b", np.zeros(c.num_classes))

    def _ffn_params(self, i: int, branch: str) -> dict[str, Tensor]:
        return {k: self.params[f"layer{i}.{branch}.{k}"] for k in ("ln_g", "ln_b", "W1", "b1", "W2", "b2", "alpha")}

    @staticmethod
    def row_inputs(g: DynamicGraph) -> tuple[np.ndarray, np.ndarray]:
        """Node-major ``(N*T, d_in)`` feature rows and their timestamps."""
        T, n = g.num_times, g.num_nodes
        if g.temporal_features:
            rows = np.transpose(g.features, (1, 0, 2)).reshape(n * T, -1)
        else:
            rows = np.repeat(g.features, T, axis=0)
        times = np.tile(np.arange(T), n)
        return rows, times

    def forward(self, g: DynamicGraph, index: DynamicNeighborhoodIndex) -> list[PatternSummaries]:
        """Summaries of every layer for all rows of ``g`` (top layer last)."""
        c = self.config
        if g.feat_dim != c.in_dim:
            raise dc.ShapeError(f"forward: dataset feature dim {g.feat_dim} != network in_dim {c.in_dim}")
        if (index.num_nodes, index.num_times) != (g.num_nodes, g.num_times):
            raise ValueError("forward: neighbourhood index built for a different graph")
        rows, times = self.row_inputs(g)
        te = dc.constant(temporal_encoding(times, c.d_te))
        h = input_projection(dc.constant(rows), self.params["fc.W"], self.params["fc.b"])
        out: list[PatternSummaries] = []
        for i in range(c.layers):
            h, summ = self.layer_forward(i, h, te, index)
            out.append(summ)
        return out

    def layer_forward(self, i: int, h: Tensor, te: Tensor, index: DynamicNeighborhoodIndex):
        c = self.config
        hx = dc.concat([h, te])
        inv_heads, var_heads = [], []
        for j in range(c.heads):
            P = f"layer{i}.head{j}."
            q, k, v = qkv(hx, self.params[P + "Wq"], self.params[P + "Wk"], self.params[P + "Wv"])
            scores = attention_scores(q, k, index)
            if c.disentangled:
                m_inv, m_var = structural_masks(scores, index.segments)
                var_heads.append(masked_sum(m_var, v, index))
            else:
                m_inv = dc.segment_softmax(scores, index.segments)
            inv_heads.append(masked_sum(m_inv, v, index))
        inv_sum = inv_heads[0] if c.heads == 1 else dc.concat(inv_heads)
        if not c.disentangled:
            z = ffn(dc.add(inv_sum, h), self._ffn_params(i, "ffn_inv"))
            return z, PatternSummaries(z, z, index.num_nodes, index.num_times)
        var_sum = var_heads[0] if c.heads == 1 else dc.concat(var_heads)
        m_f = featural_mask(self.params[f"layer{i}.wf"])
        z_inv, z_var = aggregate(inv_sum, var_sum, m_f, h, self._ffn_params(i, "ffn_inv"), self._ffn_params(i, "ffn_var"))
        return dc.add(z_inv, z_var), PatternSummaries(z_inv, z_var, index.num_nodes, index.num_times)

    # task heads
    def node_logits(self, z: Tensor, rows: np.ndarray, head: str = "clf_inv") -> Tensor:
        return predict_node(dc.gather_rows(z, rows), self.params[f"{head}.W"], self.params[f"{head}.b"])
