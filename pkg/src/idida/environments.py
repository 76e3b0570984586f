"""Latent environment inference by spherical K-means over variant summaries."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .objectives import Batch, VariantBank, sample_loss_terms


@dataclass
class EnvironmentAssignment:
    rows: np.ndarray
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    num_times: int
    history: list[float] = field(default_factory=list)

    @property
    def K(self) -> int:
        return int(self.centroids.shape[0])

    def lookup(self, rows: np.ndarray) -> np.ndarray:
        """Environment of each requested summary row."""
        rows = np.asarray(rows, dtype=np.int64)
        pos = np.searchsorted(self.rows, rows)
        ok = (pos < self.rows.size) & (self.rows[np.minimum(pos, self.rows.size - 1)] == rows)
        if not np.all(ok):
            raise KeyError("environment lookup: row not covered by the assignment")
        return self.labels[pos]

    def dump(self, path) -> None:
        with open(Path(path), "w", encoding="utf-8") as fh:
            for r, k in zip(self.rows, self.labels):
                fh.write(f"{r % self.num_times}\t{r // self.num_times}\t{k}\n")


def normalize_rows(x: np.ndarray) -> np.ndarray:
    """L2-normalise rows; all-zero rows map to the first basis vector."""
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    out = np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)
    zero = norms[:, 0] == 0
    out[zero] = 0.0
    out[zero, 0] = 1.0
    return out


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = (x * x).sum(1)[:, None] - 2.0 * x @ c.T + (c * c).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _kmeanspp(x: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = [int(rng.integers(n))]
    closest = _sq_dists(x, x[centers[0]][None])[:, 0]
    for _ in range(1, K):
        total = closest.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=closest / total))
        else:
            nxt = int(rng.integers(n))
        centers.append(nxt)
        closest = np.minimum(closest, _sq_dists(x, x[nxt][None])[:, 0])
    return x[centers].copy()


def spherical_kmeans(values: np.ndarray, K: int, seed: int, max_iter: int = 100):
    """Lloyd iterations on normalised vectors; returns labels, centroids, objective trace."""
    x = normalize_rows(np.asarray(values, dtype=np.float64))
    n = x.shape[0]
    if K < 1:
        raise ValueError("K must be >= 1")
    if K > n:
        raise ValueError(f"K = {K} exceeds the {n} points to cluster")
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp(x, K, rng)
    dist = _sq_dists(x, centroids)
    labels = np.argmin(dist, axis=1)
    history = [float(dist[np.arange(n), labels].sum())]
    for _ in range(max_iter):
        counts = np.bincount(labels, minlength=K)
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, x)
        new = centroids.copy()
        filled = counts > 0
        new[filled] = sums[filled] / counts[filled, None]
        empty = np.flatnonzero(~filled)
        if empty.size:
            own = dist[np.arange(n), labels]
            far = np.argsort(-own, kind="stable")[: empty.size]
            new[empty] = x[far]
        centroids = new
        dist = _sq_dists(x, centroids)
        new_labels = np.argmin(dist, axis=1)
        history.append(float(dist[np.arange(n), new_labels].sum()))
        if np.array_equal(new_labels, labels) and not empty.size:
            break
        labels = new_labels
    return labels, centroids, history


def infer_environments(bank: VariantBank, K: int, seed: int, max_iter: int = 100) -> EnvironmentAssignment:
    if len(bank) == 0:
        raise ValueError("infer_environments: empty variant bank")
    labels, centroids, history = spherical_kmeans(bank.values, K, seed, max_iter)
    return EnvironmentAssignment(bank.rows.copy(), labels, centroids, history[-1], bank.num_times, history)


@dataclass
class EnvLossBundle:
    per_env: Tensor
    env_ids: np.ndarray
    env_loss: Tensor


def environment_losses(logits: Tensor, batch: Batch, sample_envs: np.ndarray) -> EnvLossBundle:
    """Per-environment task losses and their population variance (empty environments skipped)."""
    sample_envs = np.asarray(sample_envs, dtype=np.int64)
    if sample_envs.shape != (len(batch),):
        raise dc.ShapeError(f"environment_losses: {sample_envs.shape} environments for {len(batch)} samples")
    if len(batch) == 0:
        raise ValueError("environment_losses: every environment is empty")
    present, inverse, counts = np.unique(sample_envs, return_inverse=True, return_counts=True)
    n = len(batch)
    weights = np.zeros((n, present.size))
    weights[np.arange(n), inverse] = 1.0 / counts[inverse]
    terms = sample_loss_terms(logits, batch)
    per_env = dc.reshape(dc.matmul(dc.reshape(terms, (1, n)), dc.constant(weights)), (present.size,))
    return EnvLossBundle(per_env, present, dc.variance(per_env))
