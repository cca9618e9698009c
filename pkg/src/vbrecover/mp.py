"""Message-passing formulation of the LM and SBB decoders.

Variables send ``(s, v)``: a status flag and, when verified, the value.
Checks send ``(d, c)``: the number of unverified neighbours and the residual.
An edge multiplies ``v`` by its weight on the way to a check and divides ``c``
by its weight on the way to a variable. Verified variables keep repeating
their last message.

For SBB the equal-pair clause of the round-1 variable map only matches the
node-based ECN rule when weights are drawn from a continuous distribution;
with all-ones weights a 4-cycle can make it fire on a zero variable. The
node-based engine in :mod:`vbrecover.decoder` is the reference.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .decoder import (
    _DOCN,
    _ECN_COMMON,
    _ZCN,
    AlgorithmKind,
    ComparisonPolicy,
    DecoderState,
    FalseVerificationConflict,
    IterationReport,
    RecoveryResult,
    Rule,
    default_max_iter,
    init_state,
    row_sums,
)
from .ensembles import ConfigurationError, Measurements, SensingGraph

__all__ = [
    "MpMessageV",
    "MpMessageC",
    "mp_phi_c",
    "mp_phi_c0",
    "mp_phi_v1",
    "mp_phi_v2",
    "recover_mp",
    "event_set",
]

_EXACT = ComparisonPolicy.exact_mode()


@dataclass(frozen=True)
class MpMessageV:
    s: int
    v: float = 0.0


@dataclass(frozen=True)
class MpMessageC:
    d: int
    c: float


def mp_phi_c0(c_i: float, d_c: int) -> MpMessageC:
    return MpMessageC(d_c, c_i)


def mp_phi_c(c_i: float, messages: Sequence[MpMessageV]) -> MpMessageC:
    """Check map: unverified count and residual. Values arrive weight-multiplied."""
    d = len(messages) - sum(m.s for m in messages)
    c = c_i
    for m in messages:
        if m.s:
            c -= m.v
    return MpMessageC(d, c)


def mp_phi_v1(
    messages: Sequence[MpMessageC],
    policy: ComparisonPolicy = _EXACT,
    equal_pairs: bool = True,
) -> MpMessageV:
    """Round-1 variable map (DOCN, and ECN via equal pairs when enabled).

    Messages must already be divided by their edge weights. Equal pairs only
    count for non-zero values; a zero pair is left to the round-2 map.
    """
    for o in messages:
        if o.d == 1:
            return MpMessageV(1, o.c)
    if equal_pairs:
        for i, oi in enumerate(messages):
            if policy.is_zero(oi.c):
                continue
            for oj in messages[i + 1 :]:
                if policy.equal(oi.c, oj.c):
                    return MpMessageV(1, oi.c)
    return MpMessageV(0, 0.0)


def mp_phi_v2(messages: Sequence[MpMessageC], policy: ComparisonPolicy = _EXACT) -> MpMessageV:
    if any(policy.is_zero(o.c) for o in messages):
        return MpMessageV(1, 0.0)
    return MpMessageV(0, 0.0)


def _check_messages(g: SensingGraph, c: np.ndarray, s: np.ndarray, v: np.ndarray):
    """Vectorised mp_phi_c over all checks."""
    flags = s[g.chk_var]
    d = g.d_c - flags.sum(axis=1)
    res = c - row_sums(g.chk_w * np.where(flags, v[g.chk_var], 0.0))
    return d, res


def _round1(g, d, res, unv, policy, equal_pairs):
    dd = d[g.var_chk[unv]]
    q = res[g.var_chk[unv]] / g.var_w[unv]
    one = dd == 1
    has_one = one.any(axis=1)
    pos = np.argmax(one, axis=1)
    val = q[np.arange(unv.size), pos]
    # every d == 1 edge must agree with the chosen one
    clash = one & ~policy.equal(q, val[:, None])
    if clash.any():
        r = np.flatnonzero(clash.any(axis=1))[0]
        raise FalseVerificationConflict(
            int(unv[r]), [float(x) for x in q[r][one[r]]], [Rule.DOCN] * int(one[r].sum())
        )
    fire = has_one.copy()
    rule = np.where(has_one, _DOCN, -1)
    if equal_pairs and g.d_v > 1:
        qz = np.where(policy.is_zero(q), np.nan, q)
        order = np.argsort(qz, axis=1)
        qs = np.take_along_axis(qz, order, axis=1)
        with np.errstate(invalid="ignore"):
            eq = policy.equal(qs[:, 1:], qs[:, :-1]) & ~np.isnan(qs[:, 1:])
        has_pair = eq.any(axis=1)
        pair_val = qs[np.arange(unv.size), np.argmax(eq, axis=1)]
        both = has_pair & has_one
        if both.any() and not np.all(policy.equal(pair_val[both], val[both])):
            r = np.flatnonzero(both & ~policy.equal(pair_val, val))[0]
            raise FalseVerificationConflict(
                int(unv[r]), [float(val[r]), float(pair_val[r])], [Rule.DOCN, Rule.ECN_COMMON]
            )
        only_pair = has_pair & ~has_one
        val = np.where(only_pair, pair_val, val)
        rule = np.where(only_pair, _ECN_COMMON, rule)
        fire |= has_pair
    return unv[fire], val[fire], rule[fire]


def _round2(g, res, unv, policy):
    q = res[g.var_chk[unv]] / g.var_w[unv]
    fire = policy.is_zero(q).any(axis=1)
    var = unv[fire]
    return var, np.zeros(var.size), np.full(var.size, _ZCN)


def recover_mp(
    g: SensingGraph,
    c: Measurements | np.ndarray,
    alg: AlgorithmKind | str,
    policy: ComparisonPolicy | None = None,
    max_iter: int | None = None,
) -> RecoveryResult:
    """Decode by exchanging messages; same contract as :func:`decoder.recover`."""
    alg = AlgorithmKind.parse(alg)
    max_iter = default_max_iter(g) if max_iter is None else max_iter
    if max_iter < 1:
        raise ConfigurationError("max_iter must be >= 1")
    state = init_state(g, c)
    meas = state.measurements
    policy = ComparisonPolicy.auto(meas) if policy is None else policy.bind(meas)
    s = np.zeros(g.n, dtype=bool)
    v = np.zeros(g.n)
    trace: list[IterationReport] = []

    def commit(var, val, rule, rnd):
        s[var] = True
        v[var] = val
        if var.size:
            state._log.append((var, val, rule, state.iteration + 1, rnd))
        return var

    while state.iteration < max_iter:
        d, res = _check_messages(g, meas, s, v)
        r1 = commit(*_round1(g, d, res, np.flatnonzero(~s), policy, alg is AlgorithmKind.SBB), 1)
        d, res = _check_messages(g, meas, s, v)
        r2 = commit(*_round2(g, res, np.flatnonzero(~s), policy), 2)
        state.iteration += 1
        rep = IterationReport(state.iteration, r1, r2, int(g.n - s.sum()))
        trace.append(rep)
        if rep.n_unverified == 0 or not rep.progressed:
            break

    d, res = _check_messages(g, meas, s, v)
    state.verified[:] = s
    state.value[:] = v
    state.chk_residual[:] = res
    state.chk_unverified_deg[:] = d
    values = np.where(s, v, 0.0)
    return RecoveryResult(values, s.copy(), bool(s.all()), trace, state)


def event_set(state: DecoderState) -> dict[int, tuple[float, int, int]]:
    """variable -> (value, iteration, round); handy for engine comparisons."""
    var, val, _rule, it, rnd = state.event_arrays()
    return {int(j): (float(x), int(i), int(k)) for j, x, i, k in zip(var, val, it, rnd)}
