import json
import math

import numpy as np
import pytest
from scipy.stats import spearmanr

from idida.dyngraph import DynamicGraph, load_dataset, sample_negatives, undirected_keys
from idida.metrics import roc_auc
from idida.synthgen import (
    GenerationError,
    SBMParams,
    ShiftConfig,
    assemble_dataset,
    expected_edge_count,
    fit_embedding,
    generate_base_graph,
    generate_synthetic,
    p_schedule,
    sample_shift_links,
    shift_probability,
    train_variant_features,
)


def test_shift_probability_examples():
    assert shift_probability(0, 0.4, 0.05) == pytest.approx(0.45)
    assert all(shift_probability(t, 0.1, 0.0) == 0.1 for t in range(20))
    assert shift_probability(0, 1.0, 0.5) == 1.0
    assert shift_probability(math.pi, 0.02, 0.5) == 0.0
    assert shift_probability(2, 0.4, 0.05) == pytest.approx(0.4 + 0.05 * math.cos(2))


def test_p_schedule_switches_after_validation():
    cfg = ShiftConfig(num_times=13, split=(8, 1, 3), pbar_train=0.6, sigma_train=0.05)
    ps = p_schedule(cfg)
    assert len(ps) == 13
    # times 0..8 predict targets 1..9 (train and validation)
    assert ps[:9] == [shift_probability(t, 0.6, 0.05) for t in range(9)]
    assert ps[9:] == [0.1] * 4


# ---------------------------------------------------------------- base graph


def test_two_cliques():
    params = SBMParams(communities=2, p_in=1.0, p_out=0.0, drift=0.0)
    snaps, X1, comm = generate_base_graph(12, 4, params, seed=3)
    sizes = np.bincount(comm, minlength=2)
    for e in snaps:
        assert np.all(comm[e[:, 0]] == comm[e[:, 1]])
        assert len(e) == sum(s * (s - 1) // 2 for s in sizes)


def test_degenerate_params_raise():
    with pytest.raises(ValueError):
        generate_base_graph(20, 4, SBMParams(p_in=0.0, p_out=0.0, drift=0.0))
    with pytest.raises(ValueError):
        generate_base_graph(9, 4)
    with pytest.raises(ValueError):
        generate_base_graph(20, 3)
    with pytest.raises(ValueError):
        generate_base_graph(20, 4, SBMParams(p_in=1.5))


def test_edge_count_within_three_sigma():
    params = SBMParams()
    counts, expects = [], []
    for seed in range(20):
        snaps, _, comm = generate_base_graph(200, 4, params, seed)
        for t in range(4):
            counts.append(len(snaps[t]))
            expects.append(expected_edge_count(comm, t, params))
    # sum of independent Bernoullis: variance bounded by the mean
    total, mu = sum(counts), sum(expects)
    assert abs(total - mu) < 3 * math.sqrt(mu)
    for c, m in zip(counts, expects):
        assert abs(c - m) < 5 * math.sqrt(m)


def test_base_graph_deterministic_and_unit_features():
    a = generate_base_graph(50, 5, seed=4)
    b = generate_base_graph(50, 5, seed=4)
    assert all(np.array_equal(x, y) for x, y in zip(a[0], b[0]))
    assert np.array_equal(a[1], b[1])
    assert np.allclose(np.linalg.norm(a[1], axis=1), 1.0)
    for e in a[0]:
        assert np.all(e[:, 0] < e[:, 1])


# ---------------------------------------------------------------- shifted links


@pytest.fixture(scope="module")
def snapshot():
    snaps, _, _ = generate_base_graph(120, 4, seed=0)
    return snaps[2]


def test_shift_links_boundaries(snapshot):
    n = 120
    keys = set(undirected_keys(snapshot, n).tolist())
    full = sample_shift_links(snapshot, 1.0, n, 0)
    got = [min(u, v) * n + max(u, v) for u, v in full]
    assert len(got) == len(keys) and set(got) == keys
    none = sample_shift_links(snapshot, 0.0, n, 0)
    got0 = [min(u, v) * n + max(u, v) for u, v in none]
    assert len(got0) == len(keys) and not set(got0) & keys
    assert len(set(got0)) == len(got0)


@pytest.mark.parametrize("p", [0.1, 0.37, 0.5, 0.8])
def test_shift_links_counts(snapshot, p):
    n = 120
    keys = set(undirected_keys(snapshot, n).tolist())
    links = sample_shift_links(snapshot, p, n, 5)
    got = [min(u, v) * n + max(u, v) for u, v in links]
    assert len(got) == len(keys)
    assert sum(k in keys for k in got) == math.floor(p * len(keys))


def test_shift_links_insufficient_nonedges():
    n = 5
    complete = np.array([(u, v) for u in range(n) for v in range(u + 1, n)])
    with pytest.raises(ValueError):
        sample_shift_links(complete, 0.5, n, 0)


# ---------------------------------------------------------------- variant features


def test_overparameterised_fit_memorises():
    snaps, _, _ = generate_base_graph(30, 4, SBMParams(p_in=0.3, p_out=0.05), seed=1)
    cfg = ShiftConfig(max_steps=300)
    X, auc, steps = fit_embedding(snaps[1], 30, 30, 0, cfg)
    assert auc > 0.999 and steps <= 300


def test_fit_deterministic():
    snaps, _, _ = generate_base_graph(40, 4, seed=2)
    cfg = ShiftConfig(max_steps=60)
    a = fit_embedding(snaps[1], 40, 8, 3, cfg)
    b = fit_embedding(snaps[1], 40, 8, 3, cfg)
    assert np.array_equal(a[0], b[0]) and a[1] == b[1]


def test_reconstruction_gate_raises():
    snaps, _, _ = generate_base_graph(60, 4, seed=2)
    with pytest.raises(GenerationError):
        train_variant_features([snaps[1]], 60, 1, 0, ShiftConfig(max_steps=3))


def test_correlation_dial():
    ps = [0.1, 0.4, 0.6, 0.8]
    mean_auc = np.zeros(len(ps))
    n, cfg = 150, ShiftConfig()
    for seed in range(5):
        snaps, _, _ = generate_base_graph(n, 4, seed=100 + seed)
        target = snaps[2]
        holder = DynamicGraph(n, [target], np.zeros((n, 1)))
        neg = sample_negatives(holder, 0, len(target), seed)
        pairs = np.concatenate([target, neg])
        y = np.r_[np.ones(len(target)), np.zeros(len(neg))]
        for i, p in enumerate(ps):
            links = sample_shift_links(target, p, n, seed * 31 + i)
            X, _, _ = fit_embedding(links, n, 16, seed, cfg)
            mean_auc[i] += roc_auc(np.einsum("ij,ij->i", X[pairs[:, 0]], X[pairs[:, 1]]), y) / 5
    rho = spearmanr(ps, mean_auc).statistic
    assert rho > 0.9, mean_auc


# ---------------------------------------------------------------- assembly


@pytest.fixture(scope="module")
def small_synthetic():
    cfg = ShiftConfig(num_nodes=60, num_times=5, split=(2, 1, 1), feat_dim=6, seed=3, max_steps=800)
    return cfg, generate_synthetic(cfg)


def test_synthetic_shapes_and_halves(small_synthetic):
    cfg, (g, rep) = small_synthetic
    assert g.features.shape == (5, 60, 12)
    X1 = g.features[:, :, :6]
    X2 = g.features[:, :, 6:]
    assert all(np.array_equal(X1[0], X1[t]) for t in range(5))
    assert not np.allclose(X2[0], X2[1])
    assert all(a > 0.99 for a in rep.reconstruction_auc) and len(rep.reconstruction_auc) == 5
    assert g.meta["split"] == [2, 1, 1] and g.meta["shift"]["pbar_test"] == 0.1


def test_synthetic_round_trip(tmp_path, small_synthetic):
    cfg, (g, rep) = small_synthetic
    assemble_dataset(g, rep, tmp_path)
    h = load_dataset(tmp_path)
    assert g.structurally_equal(h)
    meta = json.loads((tmp_path / "meta.json").read_text())
    assert meta["feat_dim"] == 12 and meta["temporal_features"] is True
    report = json.loads((tmp_path / "genreport.json").read_text())
    assert report["p_schedule"] == rep.p_schedule and len(report["seeds"]["links"]) == 5


def test_synthetic_deterministic(small_synthetic):
    cfg, (g, rep) = small_synthetic
    g2, rep2 = generate_synthetic(cfg)
    assert g.structurally_equal(g2) and rep.to_json() == rep2.to_json()


def test_synthetic_rejects_oversized_split():
    with pytest.raises(ValueError):
        generate_synthetic(ShiftConfig(num_nodes=30, num_times=5, split=(3, 1, 1)))
