from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from invariants import run_checked
from oracles import naive_decode
from vbrecover.decoder import (
    AlgorithmKind,
    ComparisonPolicy,
    FalseVerificationConflict,
    Rule,
    apply_docn,
    apply_ecn,
    apply_zcn,
    init_state,
    recover,
    run_iteration,
    write_event_log,
    write_summary,
)
from vbrecover.ensembles import (
    ConfigurationError,
    GraphConfig,
    SensingGraph,
    SignalConfig,
    ValueMode,
    admissible_n,
    encode,
    sample_graph,
    sample_signal,
)


def micro_graph() -> SensingGraph:
    # checks: c0={0,1,2}, c1={3,4,5}, c2={0,1,3}, c3={2,4,5}
    var_chk = np.array([[0, 2], [0, 2], [0, 3], [1, 2], [1, 3], [1, 3]])
    return SensingGraph.from_var_adjacency(var_chk, np.ones((6, 2)), 4)


def events_of(state):
    return [(e.variable, e.value, e.rule, e.iteration, e.round) for e in state.event_log]


def test_micro_instance_sbb_trace():
    g = micro_graph()
    c = np.array([5.0, 0.0, 0.0, 5.0])
    res = recover(g, c, "sbb")
    assert res.success and res.iterations == 1
    assert np.array_equal(res.values, [0, 0, 5, 0, 0, 0])
    ev = events_of(res.state)
    assert (2, 5.0, Rule.ECN_COMMON, 1, 1) in ev
    assert {(j, r, k) for j, _x, r, _i, k in ev if r is Rule.ECN_ZERO} == {
        (j, Rule.ECN_ZERO, 1) for j in (0, 1, 4, 5)
    }
    assert (3, 0.0, Rule.ZCN, 1, 2) in ev
    assert len(ev) == 6


def test_micro_instance_lm_trace():
    g = micro_graph()
    res = recover(g, np.array([5.0, 0.0, 0.0, 5.0]), "lm")
    assert res.success and res.iterations == 2
    ev = events_of(res.state)
    assert sorted(j for j, _x, r, i, k in ev if (r, i, k) == (Rule.ZCN, 1, 2)) == [0, 1, 3, 4, 5]
    assert (2, 5.0, Rule.DOCN, 2, 1) in ev
    assert not any(r in (Rule.ECN_COMMON, Rule.ECN_ZERO) for _j, _x, r, _i, _k in ev)


def test_individual_rules_on_micro_instance():
    g = micro_graph()
    c = np.array([5.0, 0.0, 0.0, 5.0])
    s = init_state(g, c)
    assert apply_docn(s, g) == []  # every check still has three unknowns
    zc = apply_zcn(s, g)
    assert sorted(e.variable for e in zc) == [0, 1, 3, 4, 5]
    assert all(e.value == 0 and e.rule is Rule.ZCN for e in zc)
    dc = apply_docn(s, g)
    assert [(e.variable, e.value, e.rule) for e in dc] == [(2, 5.0, Rule.DOCN)]
    assert s.n_unverified == 0

    s = init_state(g, c)
    ecn = apply_ecn(s, g)
    assert sorted((e.variable, e.rule) for e in ecn) == [
        (0, Rule.ECN_ZERO), (1, Rule.ECN_ZERO), (2, Rule.ECN_COMMON), (4, Rule.ECN_ZERO), (5, Rule.ECN_ZERO)
    ]


def test_ecn_ambiguous_group_verifies_no_common_value():
    # c0={0,1,2} and c1={0,1,3}: variables 0 and 1 both touch the whole group
    var_chk = np.array([[0, 2], [0, 2], [0, 3], [1, 3], [1, 3], [1, 2]])
    g = SensingGraph.from_var_adjacency(var_chk, np.ones((6, 2)), 4)
    s = init_state(g, np.array([4.0, 4.0, 7.0, 7.0]))
    ev = apply_ecn(s, g)
    assert all(e.rule is not Rule.ECN_COMMON for e in ev if e.variable in (0, 1))


def test_docn_conflict_raises():
    g = micro_graph()
    # inconsistent measurements: v2 is seen as 5 by c0 and as 7 by c3
    with pytest.raises(FalseVerificationConflict) as info:
        recover(g, np.array([5.0, 0.0, 0.0, 7.0]), "lm")
    assert info.value.variable == 2
    assert sorted(info.value.values) == [5.0, 7.0]


def test_measurement_length_is_checked():
    g = micro_graph()
    with pytest.raises(ConfigurationError):
        init_state(g, np.zeros(5))
    with pytest.raises(ConfigurationError):
        recover(g, np.zeros(4), "sbb", max_iter=0)
    with pytest.raises(ConfigurationError):
        AlgorithmKind.parse("bp")


def test_comparison_policy():
    ex = ComparisonPolicy.auto(np.array([1.0, -3.0, 0.0]))
    assert ex.exact
    tol = ComparisonPolicy.auto(np.array([0.5, 2.0]))
    assert not tol.exact and tol.abs_tol == pytest.approx(2e-13)
    assert tol.is_zero(1e-14) and not tol.is_zero(1e-11)
    assert tol.equal(1.0, 1.0 + 1e-15) and not tol.equal(1.0, 1.0 + 1e-9)
    assert ComparisonPolicy.tolerance(abs_tol=0.1).bind(np.array([1e6])).abs_tol == 0.1


def test_all_zero_signal_is_recovered_in_one_iteration():
    g = sample_graph(GraphConfig(120, 3, 6, seed=0))
    res = recover(g, np.zeros(g.m), "lm")
    assert res.success and res.iterations == 1 and np.all(res.values == 0)


def test_dense_signal_makes_no_progress():
    g = sample_graph(GraphConfig(120, 3, 6, seed=0))
    v = sample_signal(SignalConfig(120, 1.0, ValueMode.INTEGER, seed=0))
    res = recover(g, encode(g, v), "sbb")
    assert not res.success and res.iterations == 1 and not res.verified.any()


def test_max_iter_is_respected():
    g = sample_graph(GraphConfig(3000, 3, 6, seed=1))
    v = sample_signal(SignalConfig(3000, 0.2, ValueMode.INTEGER, seed=1))
    res = recover(g, encode(g, v), "sbb", max_iter=2)
    assert res.iterations == 2 and not res.success


def _instance(n, dv, dc, alpha, seed, int_range=2**31):
    n = admissible_n(n, dv, dc)
    g = sample_graph(GraphConfig(n, dv, dc, seed=seed))
    v = sample_signal(SignalConfig(n, alpha, ValueMode.INTEGER, seed=seed, int_range=int_range))
    return g, v


@pytest.mark.parametrize("alg", ["lm", "sbb"])
@pytest.mark.parametrize("dv,dc", [(3, 6), (5, 6), (4, 8)])
def test_matches_naive_decoder(alg, dv, dc):
    for seed in range(8):
        g, v = _instance(120, dv, dc, 0.15 + 0.03 * seed, seed)
        c = encode(g, v)
        res = recover(g, c, alg)
        ev, ver, val = naive_decode(g, c.values, alg)
        assert np.array_equal(res.verified, ver)
        assert np.array_equal(res.values, np.where(ver, val, 0.0))
        got = sorted((e.variable, e.value, e.rule.value, e.iteration, e.round) for e in res.state.event_log)
        assert got == sorted(ev)


def test_small_int_range_matches_naive_decoder():
    # values in +-[1, 3] create many equal residuals and exercise ECN grouping
    for seed in range(10):
        g, v = _instance(60, 3, 6, 0.2, seed, int_range=3)
        c = encode(g, v)
        try:
            res = recover(g, c, "sbb")
        except FalseVerificationConflict:
            with pytest.raises(AssertionError, match="conflict"):
                naive_decode(g, c.values, "sbb")
            continue
        _ev, ver, val = naive_decode(g, c.values, "sbb")
        assert np.array_equal(res.verified, ver)
        assert np.array_equal(res.values, np.where(ver, val, 0.0))


@settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(
    shape=st.sampled_from([(3, 6), (5, 6), (4, 8), (2, 4), (3, 4)]),
    n=st.integers(24, 240),
    alpha=st.floats(0.0, 0.6),
    seed=st.integers(0, 2**32 - 1),
    alg=st.sampled_from(["lm", "sbb"]),
)
def test_invariants_hold_every_iteration(shape, n, alpha, seed, alg):
    dv, dc = shape
    n = max(n, 2 * dc)
    g, v = _instance(n, dv, dc, alpha, seed, int_range=2**40)
    state = run_checked(g, v.values, init_state(g, encode(g, v)), alg)
    if state.n_unverified == 0:
        assert np.array_equal(state.value, v.values)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), alpha=st.floats(0.05, 0.5))
def test_round_order_does_not_matter(seed, alpha):
    """Permuting variable labels permutes the outcome and nothing else."""
    g, v = _instance(120, 3, 6, alpha, seed)
    perm = np.random.default_rng(seed).permutation(g.n)
    inv = np.argsort(perm)
    g2 = SensingGraph.from_var_adjacency(g.var_chk[inv], g.var_w[inv], g.m)
    v2 = v.values[inv]
    r1 = recover(g, encode(g, v), "sbb")
    r2 = recover(g2, encode(g2, v2), "sbb")
    assert np.array_equal(r1.verified[inv], r2.verified)
    assert [t.n_unverified for t in r1.trace] == [t.n_unverified for t in r2.trace]


def test_lm_never_outperforms_sbb_on_average():
    wins = {"lm": 0, "sbb": 0}
    for seed in range(30):
        g, v = _instance(600, 3, 6, 0.2, seed)
        for alg in wins:
            wins[alg] += recover(g, encode(g, v), alg).success
    assert wins["sbb"] >= wins["lm"]
    assert wins["sbb"] >= 25


def test_event_log_and_summary_files(tmp_path):
    g = micro_graph()
    res = recover(g, np.array([5.0, 0.0, 0.0, 5.0]), "sbb")
    write_event_log(res.state, tmp_path / "ev.jsonl")
    write_summary(res, tmp_path / "s.json")
    lines = [json.loads(x) for x in (tmp_path / "ev.jsonl").read_text().splitlines()]
    assert len(lines) == 6 and {"iteration", "round", "rule", "variable", "value"} <= set(lines[0])
    assert json.loads((tmp_path / "s.json").read_text())["success"] is True


def test_state_copy_is_independent():
    g, v = _instance(120, 3, 6, 0.2, 0)
    s = init_state(g, encode(g, v))
    t = s.copy()
    run_iteration(s, g, "sbb")
    assert not t.verified.any() and t.iteration == 0
