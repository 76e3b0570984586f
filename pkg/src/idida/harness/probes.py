"""Gradient check of the whole objective and the runtime scaling probe."""

from __future__ import annotations

import statistics
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import diffcore as dc
from ..distnet import DisentangledNet, NetworkConfig
from ..dyngraph import LINK, NODE, DynamicGraph, build_neighborhood_index, sample_negatives
from ..environments import infer_environments
from ..objectives import collect_variant_bank, sample_interventions
from ..synthgen import SBMParams, generate_base_graph
from .config import TrainConfig
from .training import link_batch, node_batch, objective_terms, train

# ---------------------------------------------------------------- gradient check


@dataclass
class GradcheckOutcome:
    reports: dict[str, dc.GradCheckReport]
    seconds: float

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports.values())

    @property
    def worst(self) -> float:
        return max(r.worst for r in self.reports.values())

    def lines(self) -> list[str]:
        out = []
        for name, rep in self.reports.items():
            out.extend(f"{name}:{line}" for line in rep.lines())
        return out


def random_instance(task: str, seed: int, num_nodes: int = 6, num_times: int = 3, in_dim: int = 4, num_classes: int = 3) -> DynamicGraph:
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(num_nodes, k=1)
    snaps = []
    for _ in range(num_times):
        keep = rng.random(iu.size) < 0.5
        snaps.append(np.stack([iu[keep], ju[keep]], axis=1))
    feats = rng.normal(size=(num_times, num_nodes, in_dim))
    if task == LINK:
        return DynamicGraph(num_nodes, snaps, feats)
    labels = rng.integers(0, num_classes, size=(num_times, num_nodes))
    return DynamicGraph(num_nodes, snaps, feats, task=NODE, labels=labels, num_classes=num_classes)


def objective_closure(task: str, seed: int = 0, S: int = 3, K: int = 2, hidden: int = 8, d_te: int = 4):
    """Network and a loss closure running every objective term, with auxiliary draws frozen.

    Interventions, environment assignments and the detached variant inputs of
    the shortcut loss are taken once at the starting parameters; the gradient
    treats them as constants, so the finite differences must too.
    """
    g = random_instance(task, seed)
    T = g.num_times
    net = DisentangledNet(
        NetworkConfig(in_dim=g.feat_dim, hidden=hidden, layers=2, d_te=d_te, task=task, num_classes=g.num_classes), seed=seed
    )
    index = build_neighborhood_index(g)
    if task == LINK:
        targets = range(1, T)
        negs = {s: sample_negatives(g, s, min(g.edge_keys(s).size, 3), seed + s) for s in targets}
        batch = link_batch(g, targets, negs, T)
    else:
        batch = node_batch(g, range(T), T)
    cfg = TrainConfig(lambda_do=1.0, lambda_e=1.0, s_interv=S, k_env=K, hidden=hidden, d_te=d_te, task=task, include_mixed_loss=True)
    summaries = net.forward(g, index)[-1]
    bank = collect_variant_bank(summaries)
    frozen = {
        "interventions": sample_interventions(bank, S, seed),
        "environments": infer_environments(bank, K, seed),
        "z_var": summaries.z_var.data.copy(),
    }

    def loss_fn():
        top = net.forward(g, index)[-1]
        return objective_terms(net, cfg, top, batch, T - 1, 0, frozen).objective

    return net, loss_fn


def gradcheck_command(tolerance: float = 1e-4, seed: int = 0, tasks=(LINK, NODE)) -> GradcheckOutcome:
    start = time.perf_counter()
    reports = {}
    for task in tasks:
        net, loss_fn = objective_closure(task, seed)
        reports[task] = dc.finite_diff_check(net.params, loss_fn, tolerance=tolerance)
    return GradcheckOutcome(reports, time.perf_counter() - start)


# ---------------------------------------------------------------- scaling probe


@dataclass
class ScalePoint:
    edges: int
    num_nodes: int
    actual_edges: int
    median_epoch_seconds: float
    median_epoch_seconds_no_interv: float

    @property
    def intervention_overhead(self) -> float:
        return self.median_epoch_seconds / self.median_epoch_seconds_no_interv - 1.0


@dataclass
class ScaleReport:
    points: list[ScalePoint] = field(default_factory=list)
    slope: float = float("nan")

    @property
    def max_overhead(self) -> float:
        return max(p.intervention_overhead for p in self.points)

    def to_dict(self) -> dict:
        return {
            "points": [{**asdict(p), "intervention_overhead": p.intervention_overhead} for p in self.points],
            "slope": self.slope,
            "max_intervention_overhead": self.max_overhead,
        }


def scale_graph(edges: int, num_times: int = 8, degree: float = 4.0, feat_dim: int = 16, seed: int = 0) -> DynamicGraph:
    """Drifting SBM whose expected total edge count over all snapshots is ``edges``."""
    n = max(10, int(round(2.0 * edges / (degree * num_times))))
    C = 4
    # split the expected degree 80/20 between own community and the rest
    p_in = min(1.0, 0.8 * degree / max(1.0, n / C - 1))
    p_out = min(1.0, 0.2 * degree / max(1.0, n - n / C))
    params = SBMParams(communities=C, p_in=p_in, p_out=p_out, drift=0.0, feat_dim=feat_dim)
    snaps, X1, _ = generate_base_graph(n, num_times, params, seed)
    return DynamicGraph(n, snaps, X1)


def fit_slope(x, y) -> float:
    lx, ly = np.log(np.asarray(x, dtype=float)), np.log(np.asarray(y, dtype=float))
    return float(np.polyfit(lx, ly, 1)[0])


def scaling_probe(
    sizes, epochs: int = 3, config: TrainConfig | None = None, num_times: int = 8, seed: int = 0, repeats: int = 9
) -> ScaleReport:
    """Median epoch time per edge count, with and without the intervention term.

    Each size gets one untimed warm-up run, then ``repeats`` short runs per
    setting with the order of the two settings alternating, so that machine
    noise hits both alike; epoch times are pooled before the median is taken.
    """
    sizes = [int(s) for s in sizes]
    if len(sizes) < 3 or any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ValueError("scaling probe needs at least three strictly increasing sizes")
    base = config or TrainConfig()
    report = ScaleReport()
    for E in sizes:
        g = scale_graph(E, num_times, seed=seed)
        settings = {"on": base.lambda_do or 1e-2, "off": 0.0}
        configs = {
            tag: TrainConfig(**{**base.to_dict(), "epochs": epochs, "patience": epochs + 1, "lambda_do": lam, "split": None})
            for tag, lam in settings.items()
        }
        train(configs["on"], g)
        times: dict[str, list[float]] = {"on": [], "off": []}
        for r in range(repeats):
            for tag in ("on", "off") if r % 2 == 0 else ("off", "on"):
                _, rep = train(configs[tag], g)
                times[tag].extend(rep.epoch_seconds())
        actual = sum(g.edge_keys(t).size for t in range(g.num_times))
        report.points.append(ScalePoint(E, g.num_nodes, actual, statistics.median(times["on"]), statistics.median(times["off"])))
    report.slope = fit_slope([p.actual_edges for p in report.points], [p.median_epoch_seconds for p in report.points])
    return report
