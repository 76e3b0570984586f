"""Dynamic graph data model, dataset I/O, neighbourhood indexing and sampling."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diffcore import Segments

LINK = "link"
NODE = "node"


class DatasetError(ValueError):
    """Malformed or inconsistent dataset."""


@dataclass
class DynamicGraph:
    """``num_times`` snapshots of directed edge lists over ``num_nodes`` nodes.

    ``features`` is ``(N, d)`` when static or ``(T, N, d)`` when temporal.
    ``labels`` (node task only) is a ``(T, N)`` integer array with -1 marking
    unlabelled (node, time) pairs.
    """

    num_nodes: int
    snapshots: list[np.ndarray]
    features: np.ndarray
    task: str = LINK
    labels: np.ndarray | None = None
    num_classes: int | None = None
    negatives: dict[int, np.ndarray] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.snapshots = [np.asarray(e, dtype=np.int64).reshape(-1, 2) for e in self.snapshots]
        self.features = np.asarray(self.features, dtype=np.float64)
        self.negatives = {int(t): np.asarray(p, dtype=np.int64).reshape(-1, 2) for t, p in self.negatives.items()}
        self.validate()

    @property
    def num_times(self) -> int:
        return len(self.snapshots)

    @property
    def temporal_features(self) -> bool:
        return self.features.ndim == 3

    @property
    def feat_dim(self) -> int:
        return int(self.features.shape[-1])

    def features_at(self, t: int) -> np.ndarray:
        return self.features[t] if self.temporal_features else self.features

    def validate(self) -> None:
        n, T = self.num_nodes, self.num_times
        if n < 1 or T < 1:
            raise DatasetError("graph needs at least one node and one snapshot")
        for t, e in enumerate(self.snapshots):
            if e.size and (e.min() < 0 or e.max() >= n):
                raise DatasetError(f"snapshot {t}: edge endpoint outside [0, {n})")
        f = self.features
        if f.ndim == 2:
            if f.shape[0] != n:
                raise DatasetError(f"features: expected {n} rows, got {f.shape[0]}")
        elif f.ndim == 3:
            if f.shape[:2] != (T, n):
                raise DatasetError(f"temporal features: expected shape ({T}, {n}, d), got {f.shape}")
        else:
            raise DatasetError(f"features must be 2-D or 3-D, got {f.ndim}-D")
        if self.task not in (LINK, NODE):
            raise DatasetError(f"unknown task {self.task!r}")
        if self.task == NODE:
            if self.labels is None or self.num_classes is None:
                raise DatasetError("node task requires labels and num_classes")
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (T, n):
                raise DatasetError(f"labels: expected shape ({T}, {n}), got {self.labels.shape}")
            if np.any(self.labels >= self.num_classes) or np.any(self.labels < -1):
                raise DatasetError(f"labels outside [0, {self.num_classes})")
        elif self.labels is not None:
            raise DatasetError("labels are only allowed on the node task")
        for t, p in self.negatives.items():
            if not 0 <= t < T:
                raise DatasetError(f"negatives: timestamp {t} outside [0, {T})")
            if p.size and (p.min() < 0 or p.max() >= n):
                raise DatasetError(f"negatives at t={t}: endpoint outside [0, {n})")

    def prefix(self, num_times: int) -> "DynamicGraph":
        """The first ``num_times`` snapshots (features and labels sliced alike)."""
        if not 1 <= num_times <= self.num_times:
            raise ValueError(f"prefix length {num_times} outside [1, {self.num_times}]")
        return DynamicGraph(
            num_nodes=self.num_nodes,
            snapshots=self.snapshots[:num_times],
            features=self.features[:num_times] if self.temporal_features else self.features,
            task=self.task,
            labels=None if self.labels is None else self.labels[:num_times],
            num_classes=self.num_classes,
            negatives={t: p for t, p in self.negatives.items() if t < num_times},
            meta=dict(self.meta),
        )

    def edge_keys(self, t: int) -> np.ndarray:
        """Sorted unique undirected keys ``min*N + max`` of snapshot ``t`` (self-loops dropped)."""
        return undirected_keys(self.snapshots[t], self.num_nodes)

    def structurally_equal(self, other: "DynamicGraph") -> bool:
        if (self.num_nodes, self.num_times, self.task, self.num_classes) != (
            other.num_nodes,
            other.num_times,
            other.task,
            other.num_classes,
        ):
            return False
        if any(not np.array_equal(a, b) for a, b in zip(self.snapshots, other.snapshots)):
            return False
        if self.features.shape != other.features.shape or not np.array_equal(self.features, other.features):
            return False
        if (self.labels is None) != (other.labels is None):
            return False
        if self.labels is not None and not np.array_equal(self.labels, other.labels):
            return False
        if set(self.negatives) != set(other.negatives):
            return False
        return all(np.array_equal(self.negatives[t], other.negatives[t]) for t in self.negatives)


def undirected_keys(edges: np.ndarray, n: int) -> np.ndarray:
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    e = e[e[:, 0] != e[:, 1]]
    lo = np.minimum(e[:, 0], e[:, 1])
    hi = np.maximum(e[:, 0], e[:, 1])
    return np.unique(lo * n + hi)


# ---------------------------------------------------------------- dataset files


def _fmt(x: float) -> str:
    return repr(float(x))


def write_dataset(g: DynamicGraph, directory, extra_meta: dict | None = None) -> Path:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    meta = dict(g.meta)
    meta.update(extra_meta or {})
    meta.update(
        num_nodes=g.num_nodes,
        num_times=g.num_times,
        feat_dim=g.feat_dim,
        temporal_features=g.temporal_features,
        task=g.task,
    )
    if g.task == NODE:
        meta["num_classes"] = g.num_classes
    else:
        meta.pop("num_classes", None)
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    with open(out / "edges.tsv", "w", encoding="utf-8") as fh:
        for t, e in enumerate(g.snapshots):
            for u, v in e:
                fh.write(f"{t}\t{u}\t{v}\n")

    def write_matrix(path: Path, m: np.ndarray) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for row in m:
                fh.write("\t".join(_fmt(x) for x in row) + "\n")

    for stale in out.glob("features*.tsv"):
        stale.unlink()
    if g.temporal_features:
        for t in range(g.num_times):
            write_matrix(out / f"features_t{t}.tsv", g.features[t])
    else:
        write_matrix(out / "features.tsv", g.features)

    if g.task == NODE:
        with open(out / "labels.tsv", "w", encoding="utf-8") as fh:
            for t in range(g.num_times):
                for u in np.flatnonzero(g.labels[t] >= 0):
                    fh.write(f"{t}\t{u}\t{g.labels[t, u]}\n")
    if g.negatives:
        with open(out / "negatives.tsv", "w", encoding="utf-8") as fh:
            for t in sorted(g.negatives):
                for u, v in g.negatives[t]:
                    fh.write(f"{t}\t{u}\t{v}\n")
    return out


def _read_int_rows(path: Path, ncols: int) -> list[tuple[int, list[int]]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != ncols:
                raise DatasetError(f"{path.name}:{lineno}: expected {ncols} tab-separated fields, got {len(parts)}")
            try:
                rows.append((lineno, [int(p) for p in parts]))
            except ValueError:
                raise DatasetError(f"{path.name}:{lineno}: non-integer field in {line.strip()!r}") from None
    return rows


def _read_matrix(path: Path, n: int, d: int) -> np.ndarray:
    if not path.exists():
        raise DatasetError(f"missing feature file {path.name}")
    out = np.empty((n, d))
    count = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != d:
                raise DatasetError(f"{path.name}:{lineno}: expected {d} features, got {len(parts)}")
            if count >= n:
                raise DatasetError(f"{path.name}:{lineno}: more than {n} feature rows")
            try:
                out[count] = [float(p) for p in parts]
            except ValueError:
                raise DatasetError(f"{path.name}:{lineno}: malformed float") from None
            count += 1
    if count != n:
        raise DatasetError(f"{path.name}: expected {n} feature rows, got {count}")
    return out


def load_dataset(directory) -> DynamicGraph:
    src = Path(directory)
    meta_path = src / "meta.json"
    if not meta_path.exists():
        raise DatasetError(f"missing {meta_path}")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetError(f"meta.json: {exc}") from None
    for key in ("num_nodes", "num_times", "feat_dim", "temporal_features", "task"):
        if key not in meta:
            raise DatasetError(f"meta.json: missing key {key!r}")
    n, T, d = int(meta["num_nodes"]), int(meta["num_times"]), int(meta["feat_dim"])
    task = meta["task"]

    edges_path = src / "edges.tsv"
    if not edges_path.exists():
        raise DatasetError("missing edges.tsv")
    per_t: list[list[tuple[int, int]]] = [[] for _ in range(T)]
    for lineno, (t, u, v) in _read_int_rows(edges_path, 3):
        if not 0 <= t < T:
            raise DatasetError(f"edges.tsv:{lineno}: timestamp {t} outside [0, {T})")
        if not (0 <= u < n and 0 <= v < n):
            raise DatasetError(f"edges.tsv:{lineno}: endpoint outside [0, {n})")
        per_t[t].append((u, v))
    snapshots = [np.array(e, dtype=np.int64).reshape(-1, 2) for e in per_t]

    if meta["temporal_features"]:
        if (src / "features.tsv").exists() and not (src / "features_t0.tsv").exists():
            raise DatasetError("meta declares temporal features but only features.tsv is present")
        features = np.stack([_read_matrix(src / f"features_t{t}.tsv", n, d) for t in range(T)])
    else:
        features = _read_matrix(src / "features.tsv", n, d)

    labels = None
    num_classes = None
    if task == NODE:
        if "num_classes" not in meta:
            raise DatasetError("meta.json: node task requires num_classes")
        num_classes = int(meta["num_classes"])
        labels = np.full((T, n), -1, dtype=np.int64)
        lpath = src / "labels.tsv"
        if not lpath.exists():
            raise DatasetError("missing labels.tsv for node task")
        for lineno, (t, u, c) in _read_int_rows(lpath, 3):
            if not (0 <= t < T and 0 <= u < n):
                raise DatasetError(f"labels.tsv:{lineno}: (t, u) = ({t}, {u}) out of range")
            if not 0 <= c < num_classes:
                raise DatasetError(f"labels.tsv:{lineno}: label {c} outside [0, {num_classes})")
            labels[t, u] = c

    negatives: dict[int, list] = {}
    npath = src / "negatives.tsv"
    if npath.exists():
        for lineno, (t, u, v) in _read_int_rows(npath, 3):
            if not 0 <= t < T or not (0 <= u < n and 0 <= v < n):
                raise DatasetError(f"negatives.tsv:{lineno}: entry out of range")
            negatives.setdefault(t, []).append((u, v))

    known = {"num_nodes", "num_times", "feat_dim", "temporal_features", "task", "num_classes"}
    return DynamicGraph(
        num_nodes=n,
        snapshots=snapshots,
        features=features,
        task=task,
        labels=labels,
        num_classes=num_classes,
        negatives={t: np.array(p) for t, p in negatives.items()},
        meta={k: v for k, v in meta.items() if k not in known},
    )


# ---------------------------------------------------------------- neighbourhoods


@dataclass
class DynamicNeighborhoodIndex:
    """Attention pairs over rows ``r = u * T + t`` (node-major, then time).

    ``dst[i]`` attends to ``src[i]``; entries are sorted by ``dst`` and every
    row contains its own self pair.
    """

    num_nodes: int
    num_times: int
    window: int
    dst: np.ndarray
    src: np.ndarray
    segments: Segments

    @property
    def num_rows(self) -> int:
        return self.num_nodes * self.num_times

    def row(self, u: int, t: int) -> int:
        return u * self.num_times + t

    def neighbors(self, u: int, t: int) -> list[tuple[int, int]]:
        r = self.row(u, t)
        lo, hi = np.searchsorted(self.dst, [r, r + 1])
        return [(int(s) // self.num_times, int(s) % self.num_times) for s in self.src[lo:hi]]


def build_neighborhood_index(g: DynamicGraph, window: int | None = None) -> DynamicNeighborhoodIndex:
    """Spatio-temporal neighbourhoods with undirected adjacency and a self pair.

    ``window=None`` means the full history.
    """
    T, n = g.num_times, g.num_nodes
    W = T if window is None else int(window)
    if W < 1:
        raise ValueError("window must be >= 1")
    dst_parts = [np.arange(n * T, dtype=np.int64)]
    src_parts = [np.arange(n * T, dtype=np.int64)]
    for tp in range(T):
        keys = g.edge_keys(tp)
        a, b = keys // n, keys % n
        us = np.concatenate([a, b])
        vs = np.concatenate([b, a])
        for t in range(tp, min(T, tp + W)):
            dst_parts.append(us * T + t)
            src_parts.append(vs * T + tp)
    dst = np.concatenate(dst_parts)
    src = np.concatenate(src_parts)
    order = np.lexsort((src, dst))
    dst, src = dst[order], src[order]
    return DynamicNeighborhoodIndex(n, T, W, dst, src, Segments(dst, n * T))


def temporal_encoding(t, d_te: int) -> np.ndarray:
    """Fixed sinusoidal encoding; for an array of ``t`` returns one row per entry."""
    if d_te % 2 or d_te < 0:
        raise ValueError(f"temporal encoding dimension must be even, got {d_te}")
    ts = np.asarray(t, dtype=np.float64)
    i = np.arange(d_te // 2, dtype=np.float64)
    freq = 1.0 / np.power(10000.0, 2.0 * i / d_te) if d_te else i
    ang = ts[..., None] * freq
    out = np.empty(ts.shape + (d_te,))
    out[..., 0::2] = np.sin(ang)
    out[..., 1::2] = np.cos(ang)
    return out


# ---------------------------------------------------------------- splits and negatives


def sample_negatives(g: DynamicGraph, t: int, count: int, seed: int) -> np.ndarray:
    """Distinct unordered node pairs absent from snapshot ``t`` (returned as ``u < v``)."""
    n = g.num_nodes
    existing = g.edge_keys(t)
    available = n * (n - 1) // 2 - existing.size
    if count > available:
        raise ValueError(f"sample_negatives: asked for {count} non-edges at t={t}, only {available} exist")
    rng = np.random.default_rng(seed)
    if count == 0:
        return np.empty((0, 2), dtype=np.int64)
    if count * 3 > available:
        iu, ju = np.triu_indices(n, k=1)
        keys = iu * n + ju
        keys = keys[~np.isin(keys, existing, assume_unique=True)]
        chosen = rng.choice(keys, size=count, replace=False)
    else:
        picked: list[np.ndarray] = []
        seen = np.empty(0, dtype=np.int64)
        need = count
        while need > 0:
            u = rng.integers(0, n, size=2 * need + 16)
            v = rng.integers(0, n, size=2 * need + 16)
            keep = u != v
            k = np.minimum(u, v)[keep] * n + np.maximum(u, v)[keep]
            k = k[~np.isin(k, existing)]
            k = k[~np.isin(k, seen)]
            _, first = np.unique(k, return_index=True)
            k = k[np.sort(first)][:need]
            picked.append(k)
            seen = np.concatenate([seen, k])
            need -= k.size
        chosen = np.concatenate(picked)
    return np.stack([chosen // n, chosen % n], axis=1).astype(np.int64)


@dataclass
class SplitPlan:
    """Chronological ranges of prediction targets.

    Link task: ranges hold target snapshot indices ``s`` (predicted from time
    ``s - 1``). Node task: ranges hold the labelled times themselves.
    """

    task: str
    train: range
    val: range
    test: range
    negatives: dict[int, np.ndarray] = field(default_factory=dict)

    def targets(self, split: str) -> range:
        return {"train": self.train, "val": self.val, "test": self.test}[split]


def chronological_split(
    g: DynamicGraph,
    train_len: int,
    val_len: int,
    test_len: int,
    *,
    negative_seed: int = 0,
) -> SplitPlan:
    """Ordered, disjoint chronological ranges plus pinned evaluation negatives.

    Negatives come from the dataset's ``negatives.tsv`` when present, otherwise
    they are sampled once per target snapshot with ``negative_seed + s`` so
    every method sees the same table. Train targets also get pinned negatives
    for reporting train AUC.
    """
    for name, v in (("train", train_len), ("val", val_len), ("test", test_len)):
        if v < 1:
            raise ValueError(f"{name} length must be >= 1")
    total = train_len + val_len + test_len
    if g.task == LINK:
        usable = g.num_times - 1
        if total > usable:
            raise ValueError(
                f"split {train_len}/{val_len}/{test_len} needs {total} prediction steps, "
                f"but {g.num_times} snapshots give only {usable}"
            )
        start = 1
    else:
        if total > g.num_times:
            raise ValueError(f"split {train_len}/{val_len}/{test_len} exceeds {g.num_times} snapshots")
        start = 0
    train = range(start, start + train_len)
    val = range(train.stop, train.stop + val_len)
    test = range(val.stop, val.stop + test_len)
    negatives: dict[int, np.ndarray] = {}
    if g.task == LINK:
        for s in range(train.start, test.stop):
            if s in g.negatives:
                negatives[s] = g.negatives[s]
            else:
                count = g.edge_keys(s).size
                negatives[s] = sample_negatives(g, s, count, negative_seed + s)
    return SplitPlan(g.task, train, val, test, negatives)
