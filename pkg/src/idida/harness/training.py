"""Full-batch training loop, evaluation and run reports."""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import diffcore as dc
from ..distnet import DisentangledNet, NetworkConfig, PatternSummaries
from ..dyngraph import LINK, NODE, DynamicGraph, SplitPlan, build_neighborhood_index, chronological_split, sample_negatives
from ..environments import environment_losses, infer_environments
from ..metrics import accuracy, roc_auc
from ..objectives import (
    Batch,
    collect_variant_bank,
    intervention_variance_loss,
    invariant_logits,
    mixed_loss,
    sample_interventions,
    shortcut_loss,
    task_loss,
)
from .checkpoint import Checkpoint
from .config import TrainConfig

SPLITS = ("train", "val", "test")
TIMING_KEYS = ("seconds",)


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int, dump: dict):
        super().__init__(f"non-finite objective at epoch {epoch}: {json.dumps(dump, sort_keys=True)}")
        self.epoch = epoch
        self.dump = dump


class CompatibilityError(ValueError):
    pass


# ---------------------------------------------------------------- split and batches


def default_split(g: DynamicGraph) -> tuple[int, int, int]:
    steps = g.num_times - 1 if g.task == LINK else g.num_times
    if steps < 3:
        raise ValueError(f"{g.num_times} snapshots are too few for a train/val/test split")
    test = max(1, steps // 4)
    return steps - 1 - test, 1, test


def resolve_split(g: DynamicGraph, config: TrainConfig) -> tuple[int, int, int]:
    if config.split is not None:
        return tuple(config.split)
    if "split" in g.meta:
        return tuple(int(x) for x in g.meta["split"])
    return default_split(g)


def seed_for(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def feature_stop(plan: SplitPlan, targets: range) -> int:
    """Number of leading snapshots whose summaries the targets need."""
    return targets.stop - 1 if plan.task == LINK else targets.stop


def positives(g: DynamicGraph, s: int) -> np.ndarray:
    keys = g.edge_keys(s)
    return np.stack([keys // g.num_nodes, keys % g.num_nodes], axis=1)


def link_batch(g: DynamicGraph, targets: range, negatives: dict[int, np.ndarray], num_times: int) -> Batch:
    """Edges of each target snapshot ``s`` against its negatives, both scored at time ``s - 1``."""
    pairs, labels = [], []
    for s in targets:
        pos, neg = positives(g, s), negatives[s]
        for block, y in ((pos, 1.0), (neg, 0.0)):
            pairs.append(np.column_stack([block, np.full(len(block), s - 1)]))
            labels.append(np.full(len(block), y))
    return Batch(LINK, np.concatenate(labels), g.num_nodes, num_times, pairs=np.concatenate(pairs).astype(np.int64))


def node_batch(g: DynamicGraph, times: range, num_times: int) -> Batch:
    rows, labels = [], []
    for t in times:
        u = np.flatnonzero(g.labels[t] >= 0)
        rows.append(u * num_times + t)
        labels.append(g.labels[t, u])
    rows_a = np.concatenate(rows)
    order = np.argsort(rows_a, kind="stable")
    return Batch(NODE, np.concatenate(labels)[order], g.num_nodes, num_times, rows=rows_a[order])


def split_batch(g: DynamicGraph, plan: SplitPlan, split: str, num_times: int) -> Batch:
    targets = plan.targets(split)
    if plan.task == LINK:
        return link_batch(g, targets, plan.negatives, num_times)
    return node_batch(g, targets, num_times)


def fresh_train_batch(g: DynamicGraph, plan: SplitPlan, config: TrainConfig, epoch: int, num_times: int) -> Batch:
    if plan.task == NODE:
        return node_batch(g, plan.train, num_times)
    negs = {s: sample_negatives(g, s, g.edge_keys(s).size, seed_for(config.sampling_seed, epoch, s)) for s in plan.train}
    return link_batch(g, plan.train, negs, num_times)


def batch_metric(net: DisentangledNet, summaries: PatternSummaries, batch: Batch) -> float:
    """AUC (link) or accuracy (node) from invariant-pattern predictions only."""
    logits = invariant_logits(net, summaries, batch).data
    if batch.task == LINK:
        return roc_auc(logits, batch.labels)
    return accuracy(logits, batch.labels)


# ---------------------------------------------------------------- network construction


def network_config(config: TrainConfig, g: DynamicGraph) -> NetworkConfig:
    return NetworkConfig(
        in_dim=g.feat_dim,
        hidden=config.hidden,
        layers=config.layers,
        heads=config.heads,
        d_te=config.d_te,
        window=config.window,
        task=g.task,
        num_classes=g.num_classes if g.task == NODE else None,
        disentangled=config.disentangled,
    )


def network_from_checkpoint(ckpt: Checkpoint) -> DisentangledNet:
    net = DisentangledNet(NetworkConfig(**ckpt.network), seed=0)
    net.params.load_state(ckpt.state)
    return net


def check_compatible(net: DisentangledNet, g: DynamicGraph) -> None:
    c = net.config
    if c.in_dim != g.feat_dim:
        raise CompatibilityError(f"checkpoint expects {c.in_dim}-dim features, dataset has {g.feat_dim}")
    if c.task != g.task:
        raise CompatibilityError(f"checkpoint is for the {c.task} task, dataset is {g.task}")
    if c.task == NODE and c.num_classes != g.num_classes:
        raise CompatibilityError(f"checkpoint has {c.num_classes} classes, dataset has {g.num_classes}")


# ---------------------------------------------------------------- reports


@dataclass
class MetricsReport:
    task: str
    metric: str
    ablation: str
    config: dict
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    train_metric: float = float("nan")
    val_metric: float = float("nan")
    test_metric: float = float("nan")
    label: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    def deterministic_dict(self) -> dict:
        """Everything except wall-clock timings."""
        d = self.to_dict()
        d["epochs"] = [{k: v for k, v in e.items() if k not in TIMING_KEYS} for e in d["epochs"]]
        return d

    def epoch_seconds(self) -> list[float]:
        return [e["seconds"] for e in self.epochs]

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**d)


# ---------------------------------------------------------------- training


@dataclass
class EpochTerms:
    loss: dc.Tensor
    objective: dc.Tensor
    values: dict[str, float]


def objective_terms(
    net: DisentangledNet,
    config: TrainConfig,
    summaries: PatternSummaries,
    batch: Batch,
    bank_max_time: int,
    epoch: int,
    frozen: dict | None = None,
) -> EpochTerms:
    """Task loss plus the weighted invariance terms for one full-batch evaluation.

    ``frozen`` can carry pre-drawn interventions and environments, so that a
    finite-difference probe sees the same auxiliary draws at every point.
    """
    frozen = {} if frozen is None else frozen
    inv = invariant_logits(net, summaries, batch)
    L = task_loss(inv, batch)
    total = L
    values = {"loss": L.item()}
    if config.include_mixed_loss:
        Lm = mixed_loss(net, summaries, batch, inv)
        total = total + Lm
        values["loss_mixed"] = Lm.item()
    bank = None
    if config.lambda_do > 0:
        iv = frozen.get("interventions")
        if iv is None:
            bank = collect_variant_bank(summaries, bank_max_time)
            iv = sample_interventions(bank, config.s_interv, seed_for(config.sampling_seed, epoch, 1))
        Ldo = intervention_variance_loss(net, summaries, iv, batch, inv)
        total = total + config.lambda_do * Ldo
        values["loss_do"] = Ldo.item()
    if config.lambda_e > 0:
        envs = frozen.get("environments")
        if envs is None:
            bank = bank if bank is not None else collect_variant_bank(summaries, bank_max_time)
            envs = infer_environments(bank, config.k_env, seed_for(config.cluster_seed, epoch), config.kmeans_max_iter)
        Le = environment_losses(inv, batch, envs.lookup(batch.source_rows())).env_loss
        total = total + config.lambda_e * Le
        values["loss_env"] = Le.item()
    if batch.task == NODE:
        z_var = frozen.get("z_var")
        Ls = shortcut_loss(net, summaries.z_var.data if z_var is None else z_var, batch)
        total = total + Ls
        values["loss_s"] = Ls.item()
    values["objective"] = total.item()
    return EpochTerms(L, total, values)


@dataclass
class TrainingSetup:
    config: TrainConfig
    graph: DynamicGraph
    plan: SplitPlan
    train_graph: DynamicGraph
    bank_max_time: int

    @property
    def num_times(self) -> int:
        return self.train_graph.num_times


def prepare(config: TrainConfig, g: DynamicGraph) -> TrainingSetup:
    if config.task not in (None, g.task):
        raise CompatibilityError(f"config is for the {config.task} task, dataset is {g.task}")
    config = config.resolved(g.task)
    train_len, val_len, test_len = resolve_split(g, config)
    plan = chronological_split(g, train_len, val_len, test_len, negative_seed=config.eval_negative_seed)
    train_graph = g.prefix(feature_stop(plan, plan.val))
    bank_max_time = feature_stop(plan, plan.train) - 1
    return TrainingSetup(config, g, plan, train_graph, bank_max_time)


def train(config: TrainConfig, g: DynamicGraph, *, label: str = "", log=None) -> tuple[Checkpoint, MetricsReport]:
    """Optimise the full objective with one Adam step per epoch; keep the best-validation state."""
    setup = prepare(config, g)
    cfg, plan = setup.config, setup.plan
    net = DisentangledNet(network_config(cfg, g), seed=cfg.model_seed)
    index = build_neighborhood_index(setup.train_graph, cfg.window)
    val_batch = split_batch(g, plan, "val", setup.num_times)
    opt = dc.AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    metric_name = "auc" if g.task == LINK else "acc"
    report = MetricsReport(g.task, metric_name, cfg.ablation, cfg.to_dict(), label=label or cfg.ablation)
    best_metric, best_state, best_epoch, since = -math.inf, net.params.state(), 0, 0
    for epoch in range(cfg.epochs):
        start = time.perf_counter()
        summaries = net.forward(setup.train_graph, index)[-1]
        batch = fresh_train_batch(g, plan, cfg, epoch, setup.num_times)
        terms = objective_terms(net, cfg, summaries, batch, setup.bank_max_time, epoch)
        if not math.isfinite(terms.values["objective"]):
            raise DivergenceError(epoch, terms.values)
        val = batch_metric(net, summaries, val_batch)
        improved = val > best_metric
        if improved:
            best_metric, best_state, best_epoch, since = val, net.params.state(), epoch, 0
        net.params.zero_grad()
        dc.backward(terms.objective)
        dc.adam_step(net.params, opt)
        record = {"epoch": epoch, **terms.values, "val_metric": val, "seconds": time.perf_counter() - start}
        report.epochs.append(record)
        if log is not None:
            log(record)
        if not improved:
            since += 1
            if since >= cfg.patience:
                break
    net.params.load_state(best_state)
    scores = evaluate_network(net, setup)
    report.best_epoch = best_epoch
    report.train_metric, report.val_metric, report.test_metric = (scores[s] for s in SPLITS)
    ckpt = Checkpoint.from_store(net.params, net.config.to_dict(), cfg.to_dict(), best_epoch, float(best_metric))
    return ckpt, report


# ---------------------------------------------------------------- evaluation


def evaluate_network(net: DisentangledNet, setup: TrainingSetup, splits=SPLITS, summaries: PatternSummaries | None = None) -> dict[str, float]:
    """Metric per split from one causal forward pass over the snapshots the splits need."""
    check_compatible(net, setup.graph)
    plan = setup.plan
    stop = max(feature_stop(plan, plan.targets(s)) for s in splits)
    sub = setup.graph.prefix(stop)
    if summaries is None:
        summaries = net.forward(sub, build_neighborhood_index(sub, net.config.window))[-1]
    return {s: batch_metric(net, summaries, split_batch(setup.graph, plan, s, sub.num_times)) for s in splits}


def evaluate(ckpt: Checkpoint, g: DynamicGraph, split: str = "test") -> float:
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    net = network_from_checkpoint(ckpt)
    check_compatible(net, g)
    setup = prepare(TrainConfig.from_dict(ckpt.config), g)
    return evaluate_network(net, setup, (split,))[split]
