from __future__ import annotations

import numpy as np
import pytest

from oracles import adjacency, dense_encode
from vbrecover.ensembles import (
    ConfigurationError,
    GraphConfig,
    SignalConfig,
    ValueMode,
    WeightMode,
    admissible_n,
    count_four_cycles,
    encode,
    load_graph,
    sample_graph,
    sample_signal,
    save_graph,
)


@pytest.mark.parametrize("n,dv,dc", [(12, 3, 6), (600, 3, 6), (1200, 5, 6), (700, 7, 14), (30, 2, 3)])
def test_graph_is_biregular_without_parallel_edges(n, dv, dc):
    g = sample_graph(GraphConfig(n, dv, dc, seed=4))
    assert g.m == n * dv // dc
    assert np.all(np.bincount(g.var_chk.ravel(), minlength=g.m) == dc)
    assert np.all(np.bincount(g.chk_var.ravel(), minlength=n) == dv)
    assert not g.has_parallel_edges()
    for j in range(n):
        assert len(set(g.var_chk[j])) == dv


def test_adjacency_views_agree():
    g = sample_graph(GraphConfig(60, 3, 6, weight_mode=WeightMode.CONTINUOUS_UNIFORM, seed=1))
    checks, variables = adjacency(g)
    for j in range(g.n):
        assert sorted(variables[j]) == sorted(g.var_adj(j))
    D = g.dense()
    for i, row in enumerate(checks):
        for j, w in row:
            assert D[i, j] == w
    assert np.count_nonzero(D) == g.n * g.d_v


def test_graph_sampling_is_deterministic_and_seed_sensitive():
    a = sample_graph(GraphConfig(300, 3, 6, seed=11))
    b = sample_graph(GraphConfig(300, 3, 6, seed=11))
    c = sample_graph(GraphConfig(300, 3, 6, seed=12))
    assert a == b
    assert not a == c


def test_weights_follow_mode():
    g = sample_graph(GraphConfig(120, 3, 6, seed=0))
    assert g.unit_weights and np.all(g.var_w == 1.0)
    w = sample_graph(GraphConfig(120, 3, 6, weight_mode=WeightMode.CONTINUOUS_UNIFORM, weight_range=(0.5, 2.0)))
    assert not w.unit_weights
    assert np.all((w.var_w >= 0.5) & (w.var_w < 2.0))
    assert np.unique(w.var_w).size == w.var_w.size


def test_four_cycle_free_option():
    for seed in range(5):
        g = sample_graph(GraphConfig(100, 3, 6, seed=seed, forbid_four_cycles=True))
        assert count_four_cycles(g) == 0
    plain = [count_four_cycles(sample_graph(GraphConfig(100, 3, 6, seed=s))) for s in range(10)]
    assert sum(plain) > 0


def test_graph_is_read_only():
    g = sample_graph(GraphConfig(60, 3, 6))
    with pytest.raises(ValueError):
        g.var_chk[0, 0] = 1


@pytest.mark.parametrize(
    "cfg",
    [
        GraphConfig(10, 3, 4),  # 30 not divisible by 4
        GraphConfig(0, 3, 6),
        GraphConfig(4, 3, 6),  # d_c > n
        GraphConfig(12, 3, 6, weight_mode=WeightMode.CONTINUOUS_UNIFORM, weight_range=(2.0, 1.0)),
        GraphConfig(12, 3, 6, seed=-1),
    ],
)
def test_invalid_graph_configs(cfg):
    with pytest.raises(ConfigurationError):
        sample_graph(cfg)


def test_admissible_n():
    assert admissible_n(100000, 5, 6) == 99996
    assert admissible_n(10**6, 5, 6) == 999996
    assert admissible_n(10**6, 3, 6) == 10**6
    assert isinstance(admissible_n(7, 5, 6), int)
    GraphConfig(admissible_n(1001, 5, 6), 5, 6).validate()


def test_signal_density_and_values():
    n, alpha = 200000, 0.3
    v = sample_signal(SignalConfig(n, alpha, seed=2))
    frac = v.support.size / n
    assert abs(frac - alpha) < 4 * np.sqrt(alpha * (1 - alpha) / n)
    assert np.all(v.values[v.support] != 0)
    assert np.count_nonzero(v.values) == v.support.size

    iv = sample_signal(SignalConfig(n, alpha, ValueMode.INTEGER, seed=2, int_range=50))
    nz = iv.values[iv.support]
    assert np.all(nz == np.round(nz))
    assert np.all((np.abs(nz) >= 1) & (np.abs(nz) <= 50))
    assert set(np.unique(np.abs(nz)).astype(int)) == set(range(1, 51))
    assert abs(np.mean(nz > 0) - 0.5) < 0.01


def test_signal_supports_nest_in_alpha():
    lo = sample_signal(SignalConfig(5000, 0.2, seed=9)).support
    hi = sample_signal(SignalConfig(5000, 0.35, seed=9)).support
    assert set(lo) <= set(hi)


def test_signal_edge_densities():
    assert sample_signal(SignalConfig(100, 0.0)).support.size == 0
    assert sample_signal(SignalConfig(100, 1.0)).support.size == 100
    with pytest.raises(ConfigurationError):
        sample_signal(SignalConfig(100, 1.5))
    with pytest.raises(ConfigurationError):
        sample_signal(SignalConfig(100, 0.1, ValueMode.INTEGER, int_range=2**50))


@pytest.mark.parametrize("mode", list(WeightMode))
def test_encode_matches_dense_product(mode):
    g = sample_graph(GraphConfig(240, 4, 8, weight_mode=mode, seed=3))
    v = sample_signal(SignalConfig(240, 0.25, seed=5))
    np.testing.assert_allclose(encode(g, v).values, dense_encode(g, v.values), rtol=1e-12, atol=1e-12)


def test_encode_is_exact_for_integers():
    g = sample_graph(GraphConfig(600, 3, 6, seed=3))
    v = sample_signal(SignalConfig(600, 0.3, ValueMode.INTEGER, seed=5, int_range=2**48))
    assert np.array_equal(encode(g, v).values, dense_encode(g, v.values))


def test_encode_rejects_length_mismatch():
    g = sample_graph(GraphConfig(60, 3, 6))
    with pytest.raises(ConfigurationError):
        encode(g, np.zeros(59))


def test_edge_list_round_trip(tmp_path):
    g = sample_graph(GraphConfig(90, 3, 6, weight_mode=WeightMode.CONTINUOUS_UNIFORM, seed=8))
    p = tmp_path / "g.txt"
    save_graph(g, p)
    assert load_graph(p) == g
    lines = p.read_text().splitlines()
    assert lines[0].split() == ["90", "45", "3", "6"]
    assert len(lines) == 1 + 90 * 3


def test_load_graph_rejects_bad_degree(tmp_path):
    g = sample_graph(GraphConfig(12, 3, 6, seed=1))
    p = tmp_path / "g.txt"
    save_graph(g, p)
    lines = p.read_text().splitlines()
    p.write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(ConfigurationError):
        load_graph(p)
