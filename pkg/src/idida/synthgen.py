"""Synthetic dynamic graphs with a controllable shift between train and test.

A drifting stochastic block model provides structure and static features
``X1``. For every time ``t`` a link set is drawn from the next snapshot with
a fraction ``p(t)`` of true future edges (the rest random non-edges), and
per-time embeddings ``X2^t`` are fitted to reconstruct it. High ``p(t)``
makes ``X2^t`` a strong but spurious predictor of the future.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .dyngraph import LINK, DynamicGraph, sample_negatives, undirected_keys, write_dataset
from .metrics import roc_auc


class GenerationError(RuntimeError):
    pass


DENSE_LIMIT = 3000


@dataclass
class SBMParams:
    communities: int = 4
    p_in: float = 0.05
    p_out: float = 0.002
    drift: float = 0.02
    drift_period: float = 12.0
    feat_dim: int = 16
    feat_noise: float = 1.0

    def validate(self) -> None:
        if self.communities < 1:
            raise ValueError("need at least one community")
        for name in ("p_in", "p_out", "drift"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.p_in == 0.0 and self.p_out == 0.0 and self.drift == 0.0:
            raise ValueError("degenerate SBM: every edge probability is zero")


@dataclass
class ShiftConfig:
    num_nodes: int = 300
    num_times: int = 13
    pbar_train: float = 0.8
    sigma_train: float = 0.05
    pbar_test: float = 0.1
    sigma_test: float = 0.0
    split: tuple[int, int, int] | None = None
    feat_dim: int = 16
    seed: int = 0
    sbm: SBMParams = field(default_factory=SBMParams)
    lr: float = 0.1
    weight_decay: float = 1e-5
    patience: int = 50
    max_steps: int = 2000
    auc_gate: float = 0.99

    def resolved_split(self) -> tuple[int, int, int]:
        if self.split is not None:
            return tuple(int(x) for x in self.split)
        steps = self.num_times - 1
        test = max(1, steps // 4)
        return (steps - 1 - test, 1, test)


def default_split(num_times: int) -> tuple[int, int, int]:
    return ShiftConfig(num_times=num_times).resolved_split()


def shift_probability(t: float, pbar: float, sigma: float) -> float:
    return float(min(1.0, max(0.0, pbar + sigma * math.cos(t))))


# ---------------------------------------------------------------- base graph


def community_affinity(t: int, params: SBMParams) -> np.ndarray:
    """Block edge probabilities at time ``t``; neighbouring communities gain a rotating bump."""
    C = params.communities
    B = np.full((C, C), params.p_out)
    np.fill_diagonal(B, params.p_in)
    for a in range(C):
        b = (a + 1) % C
        if a == b:
            continue
        phase = 2.0 * math.pi * (t / params.drift_period + a / C)
        bump = params.drift * 0.5 * (1.0 + math.cos(phase))
        B[a, b] = B[b, a] = min(1.0, B[a, b] + bump)
    return B


def generate_base_graph(num_nodes: int, num_times: int, params: SBMParams | None = None, seed: int = 0):
    """Drifting-SBM snapshots plus static, community-informed unit-norm features.

    Returns ``(snapshots, X1, communities)`` where each snapshot is an ``(E, 2)``
    array of undirected edges stored once with ``u < v``.
    """
    params = params or SBMParams()
    params.validate()
    if num_nodes < 10 or num_times < 4:
        raise ValueError("base graph needs N >= 10 and T >= 4")
    rng = np.random.default_rng(seed)
    comm = rng.integers(0, params.communities, size=num_nodes)
    centers = rng.normal(size=(params.communities, params.feat_dim))
    X1 = centers[comm] + params.feat_noise * rng.normal(size=(num_nodes, params.feat_dim))
    X1 /= np.linalg.norm(X1, axis=1, keepdims=True)
    iu, ju = np.triu_indices(num_nodes, k=1)
    snapshots = []
    for t in range(num_times):
        B = community_affinity(t, params)
        prob = B[comm[iu], comm[ju]]
        hit = rng.random(prob.shape[0]) < prob
        snapshots.append(np.stack([iu[hit], ju[hit]], axis=1).astype(np.int64))
    return snapshots, X1, comm


def expected_edge_count(comm: np.ndarray, t: int, params: SBMParams) -> float:
    """Analytic expected number of undirected edges in snapshot ``t``."""
    B = community_affinity(t, params)
    sizes = np.bincount(comm, minlength=params.communities).astype(np.float64)
    total = 0.0
    for a in range(params.communities):
        total += B[a, a] * sizes[a] * (sizes[a] - 1) / 2.0
        for b in range(a + 1, params.communities):
            total += B[a, b] * sizes[a] * sizes[b]
    return total


# ---------------------------------------------------------------- shifted links and variant features


def sample_shift_links(next_edges: np.ndarray, p: float, num_nodes: int, seed: int) -> np.ndarray:
    """``floor(p*|E|)`` true future edges plus random non-edges, ``|E|`` links in total."""
    keys = undirected_keys(next_edges, num_nodes)
    E = keys.size
    k = int(math.floor(p * E))
    rng = np.random.default_rng(seed)
    true_keys = rng.choice(keys, size=k, replace=False) if k else np.empty(0, dtype=np.int64)
    holder = DynamicGraph(num_nodes, [np.stack([keys // num_nodes, keys % num_nodes], 1)], np.zeros((num_nodes, 1)))
    fake = sample_negatives(holder, 0, E - k, int(rng.integers(2**31)))
    true_pairs = np.stack([true_keys // num_nodes, true_keys % num_nodes], axis=1)
    return np.concatenate([true_pairs.astype(np.int64), fake], axis=0)


@dataclass
class VariantFeatures:
    matrices: list[np.ndarray]
    auc: list[float]
    steps: list[int]


def _balanced_targets(links: np.ndarray, num_nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Dense membership matrix and weights giving members and non-members equal total mass."""
    A = np.zeros((num_nodes, num_nodes))
    A[links[:, 0], links[:, 1]] = 1.0
    A[links[:, 1], links[:, 0]] = 1.0
    off = 1.0 - np.eye(num_nodes)
    n_pos = A.sum()
    n_neg = off.sum() - n_pos
    W = np.where(A == 1.0, 0.5 / n_pos, 0.5 / n_neg) * off
    return A, W


def fit_embedding(links: np.ndarray, num_nodes: int, d: int, seed: int, cfg: ShiftConfig) -> tuple[np.ndarray, float, int]:
    """Fit ``X`` so that ``sigmoid(X X^T)`` reconstructs membership in ``links``.

    Up to ``DENSE_LIMIT`` nodes the loss runs over the whole matrix with
    members and non-members balanced, the exact expectation of drawing an
    equal-count negative set each step. Larger graphs draw fresh negatives.
    Early stopping watches AUC against a pinned negative set.
    """
    rng = np.random.default_rng(seed)
    store = dc.ParameterStore()
    X = store.add("X", rng.normal(scale=0.5, size=(num_nodes, d)))
    opt = dc.AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    holder = DynamicGraph(num_nodes, [links], np.zeros((num_nodes, 1)))
    m = undirected_keys(links, num_nodes).size
    eval_neg = sample_negatives(holder, 0, m, int(rng.integers(2**31)))
    eval_pairs = np.concatenate([links, eval_neg])
    eval_y = np.concatenate([np.ones(len(links)), np.zeros(len(eval_neg))])
    dense = num_nodes <= DENSE_LIMIT
    if dense:
        A, W = _balanced_targets(links, num_nodes)
    best_auc, best_X, since, step = -1.0, X.data.copy(), 0, 0
    for step in range(1, cfg.max_steps + 1):
        if dense:
            terms = dc.bce_with_logits_terms(X @ X.T, A)
            loss = dc.sum_all(dc.mask_mul(terms, W))
        else:
            neg = sample_negatives(holder, 0, m, int(rng.integers(2**31)))
            pairs = np.concatenate([links, neg])
            y = np.concatenate([np.ones(len(links)), np.zeros(len(neg))])
            logits = dc.row_dot(dc.gather_rows(X, pairs[:, 0]), dc.gather_rows(X, pairs[:, 1]))
            loss = dc.cross_entropy_with_logits(logits, y)
        store.zero_grad()
        dc.backward(loss)
        dc.adam_step(store, opt)
        Xd = X.data
        scores = np.einsum("ij,ij->i", Xd[eval_pairs[:, 0]], Xd[eval_pairs[:, 1]])
        auc = roc_auc(scores, eval_y)
        if auc > best_auc:
            best_auc, best_X, since = auc, Xd.copy(), 0
        else:
            since += 1
            if since >= cfg.patience:
                break
    return best_X, best_auc, step


def train_variant_features(link_sets: list[np.ndarray], num_nodes: int, d: int, seed: int, cfg: ShiftConfig | None = None) -> VariantFeatures:
    """One independent embedding fit per time; each fit seeded with ``seed + t``."""
    cfg = cfg or ShiftConfig()
    mats, aucs, steps = [], [], []
    for t, links in enumerate(link_sets):
        X, auc, n_steps = fit_embedding(links, num_nodes, d, seed + t, cfg)
        if not auc > cfg.auc_gate:
            raise GenerationError(f"t={t}: reconstruction AUC {auc:.4f} did not exceed {cfg.auc_gate} within {cfg.max_steps} steps")
        mats.append(X)
        aucs.append(float(auc))
        steps.append(n_steps)
    return VariantFeatures(mats, aucs, steps)


# ---------------------------------------------------------------- assembly


@dataclass
class GenerationReport:
    config: dict
    p_schedule: list[float]
    reconstruction_auc: list[float]
    fit_steps: list[int]
    seeds: dict

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def p_schedule(cfg: ShiftConfig) -> list[float]:
    """Shift intensity per feature time; times whose target is past validation use the test setting."""
    train, val, _ = cfg.resolved_split()
    out = []
    for t in range(cfg.num_times):
        target = t + 1
        if target <= train + val:
            out.append(shift_probability(t, cfg.pbar_train, cfg.sigma_train))
        else:
            out.append(shift_probability(t, cfg.pbar_test, cfg.sigma_test))
    return out


def generate_synthetic(cfg: ShiftConfig) -> tuple[DynamicGraph, GenerationReport]:
    """Whole pipeline: base graph, shifted link sets, variant features, concatenated features.

    The base graph gets one hidden extra snapshot so the last time also has a
    future to build its variant features from; that snapshot is not emitted.
    """
    T, N = cfg.num_times, cfg.num_nodes
    train, val, test = cfg.resolved_split()
    if train + val + test > T - 1:
        raise ValueError(f"split {train}/{val}/{test} does not fit {T} snapshots")
    sbm = SBMParams(**{**asdict(cfg.sbm), "feat_dim": cfg.feat_dim})
    snaps, X1, _ = generate_base_graph(N, T + 1, sbm, cfg.seed)
    ps = p_schedule(cfg)
    link_sets = [sample_shift_links(snaps[t + 1], ps[t], N, cfg.seed * 7919 + t) for t in range(T)]
    var = train_variant_features(link_sets, N, cfg.feat_dim, cfg.seed * 104729 + 17, cfg)
    return assemble(snaps[:T], X1, var, cfg, ps)


def assemble(snapshots, X1: np.ndarray, var: VariantFeatures, cfg: ShiftConfig, ps: list[float]):
    T = len(snapshots)
    if len(var.matrices) != T or X1.shape[0] != var.matrices[0].shape[0]:
        raise ValueError("assemble: base graph and variant features disagree in shape")
    feats = np.stack([np.concatenate([X1, var.matrices[t]], axis=1) for t in range(T)])
    cfg_dict = asdict(cfg)
    cfg_dict["split"] = list(cfg.resolved_split())
    meta = {"split": list(cfg.resolved_split()), "shift": {k: cfg_dict[k] for k in ("pbar_train", "sigma_train", "pbar_test", "sigma_test", "seed")}}
    g = DynamicGraph(cfg.num_nodes, snapshots, feats, task=LINK, meta=meta)
    report = GenerationReport(
        config=cfg_dict,
        p_schedule=ps,
        reconstruction_auc=var.auc,
        fit_steps=var.steps,
        seeds={"base": cfg.seed, "links": [cfg.seed * 7919 + t for t in range(T)], "embeddings": cfg.seed * 104729 + 17},
    )
    return g, report


def assemble_dataset(g: DynamicGraph, report: GenerationReport, out_dir) -> Path:
    out = write_dataset(g, out_dir)
    (Path(out) / "genreport.json").write_text(report.to_json() + "\n", encoding="utf-8")
    return out
