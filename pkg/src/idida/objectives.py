"""Spatio-temporal intervention and the sample-level losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .distnet import DisentangledNet, PatternSummaries, predict_link, predict_mixed
from .dyngraph import LINK, NODE


@dataclass
class Batch:
    """Supervised samples for one objective evaluation.

    Link task: ``pairs`` holds ``(u, v, t)`` with ``t`` the time whose
    summaries predict the edge, ``labels`` is 0/1. Node task: ``rows`` holds
    summary rows and ``labels`` class indices.
    """

    task: str
    labels: np.ndarray
    num_nodes: int
    num_times: int
    pairs: np.ndarray | None = None
    rows: np.ndarray | None = None

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def source_rows(self) -> np.ndarray:
        """Summary row that decides each sample's environment (link: source endpoint)."""
        if self.task == LINK:
            return self.pairs[:, 0] * self.num_times + self.pairs[:, 2]
        return self.rows


@dataclass
class VariantBank:
    rows: np.ndarray
    values: np.ndarray
    num_times: int

    def __len__(self) -> int:
        return int(self.rows.shape[0])

    @property
    def nodes(self) -> np.ndarray:
        return self.rows // self.num_times

    @property
    def times(self) -> np.ndarray:
        return self.rows % self.num_times


@dataclass
class InterventionSet:
    values: np.ndarray
    bank_indices: np.ndarray
    seed: int

    def __len__(self) -> int:
        return int(self.values.shape[0])


def collect_variant_bank(summaries: PatternSummaries, max_time: int | None = None) -> VariantBank:
    """Detached variant summaries of every (node, time) with ``t <= max_time``, node-major."""
    T = summaries.num_times
    rows = np.arange(summaries.num_nodes * T)
    if max_time is not None:
        rows = rows[rows % T <= max_time]
    return VariantBank(rows, summaries.z_var.data[rows].copy(), T)


def sample_interventions(bank: VariantBank, S: int, seed: int) -> InterventionSet:
    """Uniform draw of ``S`` bank entries; with replacement only when ``S`` exceeds the bank."""
    if len(bank) == 0:
        raise ValueError("sample_interventions: empty variant bank")
    if S < 1:
        raise ValueError("sample_interventions: S must be >= 1")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(bank), size=S, replace=S > len(bank))
    return InterventionSet(bank.values[idx].copy(), idx, seed)


def apply_intervention(summaries: PatternSummaries, s: np.ndarray) -> PatternSummaries:
    """Replace every variant summary with the constant ``s``; invariant side untouched."""
    s = np.asarray(s, dtype=np.float64)
    d = summaries.z_var.shape[1]
    if s.shape != (d,):
        raise dc.ShapeError(f"apply_intervention: vector of shape {s.shape} does not match dimension {d}")
    z_var = dc.constant(np.tile(s, (summaries.z_var.shape[0], 1)))
    return PatternSummaries(summaries.z_inv, z_var, summaries.num_nodes, summaries.num_times)


# ---------------------------------------------------------------- logits


def invariant_logits(net: DisentangledNet, summaries: PatternSummaries, batch: Batch) -> Tensor:
    if batch.task == LINK:
        return predict_link(summaries.z_inv, batch.pairs, batch.num_nodes, batch.num_times)
    return net.node_logits(summaries.z_inv, batch.rows, "clf_inv")


def variant_logits(net: DisentangledNet, summaries: PatternSummaries, batch: Batch) -> Tensor:
    if batch.task == LINK:
        return predict_link(summaries.z_var, batch.pairs, batch.num_nodes, batch.num_times)
    return net.node_logits(summaries.z_var, batch.rows, "clf_var")


def sample_loss_terms(logits: Tensor, batch: Batch) -> Tensor:
    if batch.task == LINK:
        return dc.bce_with_logits_terms(logits, batch.labels)
    return dc.softmax_ce_terms(logits, batch.labels)


# ---------------------------------------------------------------- losses


def task_loss(logits: Tensor, batch: Batch) -> Tensor:
    """Cross-entropy of the invariant-only predictor."""
    return dc.cross_entropy_with_logits(logits, batch.labels)


def mixed_loss(net: DisentangledNet, summaries: PatternSummaries, batch: Batch, inv_logits: Tensor | None = None) -> Tensor:
    if inv_logits is None:
        inv_logits = invariant_logits(net, summaries, batch)
    g = predict_mixed(inv_logits, variant_logits(net, summaries, batch))
    return dc.cross_entropy_with_logits(g, batch.labels)


def intervened_mixed_losses(net: DisentangledNet, inv_logits: Tensor, interventions: InterventionSet, batch: Batch) -> Tensor:
    """Vector of mixed losses, one per intervention, sharing the invariant logits.

    With one vector ``s`` written into every variant slot the variant link
    logit is ``s . s`` for every pair, and the node-task variant logits are the
    same for every row, so each intervention reduces to a constant gate.
    On the link task the losses are a smooth function of that gate, which
    lets the fused op interpolate instead of sweeping every intervention.
    """
    S = len(interventions)
    vals = interventions.values
    if batch.task == LINK:
        gate = dc.sigmoid(dc.row_dot(dc.constant(vals), dc.constant(vals))).data
        return dc.gated_bce_means(inv_logits, gate, batch.labels, interpolate=True)
    gate = dc.sigmoid(net.node_logits(dc.constant(vals), np.arange(S), "clf_var"))
    losses = []
    for i in range(S):
        gi = dc.reshape(dc.gather_rows(gate, [i]), (gate.shape[1],))
        losses.append(dc.cross_entropy_with_logits(dc.mul_row(inv_logits, gi), batch.labels))
    return dc.stack_scalars(losses)


def intervention_variance_loss(
    net: DisentangledNet,
    summaries: PatternSummaries,
    interventions: InterventionSet,
    batch: Batch,
    inv_logits: Tensor | None = None,
) -> Tensor:
    """Population variance of the mixed loss across intervened distributions."""
    if len(interventions) == 0:
        raise ValueError("intervention_variance_loss: empty intervention set")
    if inv_logits is None:
        inv_logits = invariant_logits(net, summaries, batch)
    return dc.variance(intervened_mixed_losses(net, inv_logits, interventions, batch))


def intervention_variance_loss_reference(
    net: DisentangledNet, summaries: PatternSummaries, interventions: InterventionSet, batch: Batch
) -> Tensor:
    """Literal route: intervene, recompute the mixed loss, take the variance."""
    losses = [mixed_loss(net, apply_intervention(summaries, s), batch) for s in interventions.values]
    return dc.variance_of_scalars(losses)


def shortcut_loss(net: DisentangledNet, z_var_values: np.ndarray, batch: Batch) -> Tensor:
    """Cross-entropy of the variant classifier on detached variant summaries."""
    if batch.task != NODE:
        raise ValueError("shortcut_loss applies to the node-classification task only")
    logits = net.node_logits(dc.constant(z_var_values), batch.rows, "clf_var")
    return dc.cross_entropy_with_logits(logits, batch.labels)
