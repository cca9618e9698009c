"""Node-based verification decoding (LM and SBB).

Each iteration has two rounds. Round 1 applies DOCN (and ECN for SBB) to a
frozen copy of the check residuals; round 2 applies ZCN. All verifications of a
round are collected first and committed together, so the order in which checks
are scanned never matters.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable

import numpy as np

from .ensembles import ConfigurationError, Measurements, SensingGraph

__all__ = [
    "AlgorithmKind",
    "Rule",
    "ComparisonPolicy",
    "VerificationEvent",
    "DecoderState",
    "IterationReport",
    "RecoveryResult",
    "FalseVerificationConflict",
    "init_state",
    "apply_zcn",
    "apply_docn",
    "apply_ecn",
    "run_iteration",
    "recover",
    "default_max_iter",
    "residuals_from_scratch",
    "row_sums",
    "write_event_log",
    "write_summary",
]


class AlgorithmKind(str, Enum):
    LM = "lm"
    SBB = "sbb"

    @classmethod
    def parse(cls, value: str | AlgorithmKind) -> AlgorithmKind:
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigurationError(f"unknown algorithm {value!r}") from None


class Rule(str, Enum):
    ZCN = "ZCN"
    DOCN = "DOCN"
    ECN_COMMON = "ECN_common"
    ECN_ZERO = "ECN_zero"


_RULES = [Rule.ZCN, Rule.DOCN, Rule.ECN_COMMON, Rule.ECN_ZERO]
_ZCN, _DOCN, _ECN_COMMON, _ECN_ZERO = range(4)


class FalseVerificationConflict(RuntimeError):
    """A variable received two different values within one round."""

    def __init__(self, variable: int, values: list[float], rules: list[Rule]):
        self.variable = variable
        self.values = values
        self.rules = rules
        super().__init__(
            f"variable {variable} assigned conflicting values {values} by {[r.value for r in rules]}"
        )


@dataclass(frozen=True)
class ComparisonPolicy:
    """How residuals are tested for zero and for equality.

    ``exact`` compares floats with ``==`` and is only meaningful when all
    signal values and weights are integers. In tolerance mode ``abs_tol=None``
    is replaced by ``1e-13 * max(1, max|c|)`` when bound to measurements.
    """

    exact: bool = False
    abs_tol: float | None = None
    rel_tol: float = 1e-13

    @classmethod
    def exact_mode(cls) -> ComparisonPolicy:
        return cls(exact=True, abs_tol=0.0, rel_tol=0.0)

    @classmethod
    def tolerance(cls, abs_tol: float | None = None, rel_tol: float = 1e-13) -> ComparisonPolicy:
        return cls(exact=False, abs_tol=abs_tol, rel_tol=rel_tol)

    @classmethod
    def auto(cls, c: np.ndarray) -> ComparisonPolicy:
        """Exact for integral measurements that floats represent exactly."""
        c = np.asarray(c)
        if c.size and np.all(c == np.round(c)) and np.max(np.abs(c)) < 2.0**52:
            return cls.exact_mode()
        return cls.tolerance().bind(c)

    def bind(self, c: np.ndarray) -> ComparisonPolicy:
        if self.exact or self.abs_tol is not None:
            return self
        cmax = float(np.max(np.abs(c))) if np.size(c) else 0.0
        return ComparisonPolicy(False, 1e-13 * max(1.0, cmax), self.rel_tol)

    def is_zero(self, x: np.ndarray) -> np.ndarray:
        if self.exact:
            return x == 0
        return np.abs(x) <= self.abs_tol

    def equal(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if self.exact:
            return a == b
        return np.abs(a - b) <= self.abs_tol + self.rel_tol * np.maximum(np.abs(a), np.abs(b))


@dataclass(frozen=True)
class VerificationEvent:
    variable: int
    value: float
    rule: Rule
    iteration: int
    round: int

    def as_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "round": self.round,
            "rule": self.rule.value,
            "variable": self.variable,
            "value": self.value,
        }


@dataclass
class DecoderState:
    verified: np.ndarray
    value: np.ndarray
    chk_residual: np.ndarray
    chk_unverified_deg: np.ndarray
    measurements: np.ndarray
    iteration: int = 0
    _log: list[tuple[np.ndarray, np.ndarray, np.ndarray, int, int]] = field(
        default_factory=list, repr=False
    )

    @property
    def n_unverified(self) -> int:
        return int(self.verified.size - np.count_nonzero(self.verified))

    def event_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Columnar event log: (variable, value, rule code, iteration, round)."""
        if not self._log:
            e = np.zeros(0, dtype=np.int64)
            return e, np.zeros(0), e.copy(), e.copy(), e.copy()
        var = np.concatenate([x[0] for x in self._log])
        val = np.concatenate([x[1] for x in self._log])
        rule = np.concatenate([x[2] for x in self._log])
        it = np.concatenate([np.full(x[0].size, x[3]) for x in self._log])
        rnd = np.concatenate([np.full(x[0].size, x[4]) for x in self._log])
        return var, val, rule, it, rnd

    @property
    def event_log(self) -> list[VerificationEvent]:
        return [
            VerificationEvent(int(v), float(x), _RULES[r], int(i), int(k))
            for v, x, r, i, k in zip(*self.event_arrays())
        ]

    def copy(self) -> DecoderState:
        return DecoderState(
            self.verified.copy(),
            self.value.copy(),
            self.chk_residual.copy(),
            self.chk_unverified_deg.copy(),
            self.measurements,
            self.iteration,
            list(self._log),
        )


@dataclass(frozen=True)
class IterationReport:
    iteration: int
    round1: np.ndarray
    round2: np.ndarray
    n_unverified: int

    @property
    def progressed(self) -> bool:
        return bool(self.round1.size or self.round2.size)


@dataclass
class RecoveryResult:
    values: np.ndarray
    verified: np.ndarray
    success: bool
    trace: list[IterationReport]
    state: DecoderState

    @property
    def iterations(self) -> int:
        return len(self.trace)

    def summary(self) -> dict:
        return {
            "success": self.success,
            "iterations": self.iterations,
            "unverified": [r.n_unverified for r in self.trace],
        }


@dataclass
class _Candidates:
    var: np.ndarray
    val: np.ndarray
    rule: np.ndarray

    @classmethod
    def empty(cls) -> _Candidates:
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0), np.zeros(0, dtype=np.int64))

    @classmethod
    def concat(cls, parts: Iterable[_Candidates]) -> _Candidates:
        parts = list(parts)
        return cls(
            np.concatenate([p.var for p in parts]),
            np.concatenate([p.val for p in parts]),
            np.concatenate([p.rule for p in parts]),
        )


def row_sums(a: np.ndarray) -> np.ndarray:
    """Left-to-right row sums; a fixed order keeps NB and MP bit-identical."""
    acc = a[:, 0].copy()
    for t in range(1, a.shape[1]):
        acc += a[:, t]
    return acc


def residuals_from_scratch(state: DecoderState, g: SensingGraph, checks=None) -> np.ndarray:
    rows = g.chk_var if checks is None else g.chk_var[checks]
    w = g.chk_w if checks is None else g.chk_w[checks]
    c = state.measurements if checks is None else state.measurements[checks]
    return c - row_sums(w * state.value[rows])


def init_state(g: SensingGraph, c: Measurements | np.ndarray) -> DecoderState:
    c = c.values if isinstance(c, Measurements) else np.asarray(c, dtype=np.float64)
    if c.shape != (g.m,):
        raise ConfigurationError(f"measurement length {c.shape} does not match m={g.m}")
    return DecoderState(
        verified=np.zeros(g.n, dtype=bool),
        value=np.zeros(g.n),
        chk_residual=c.copy(),
        chk_unverified_deg=np.full(g.m, g.d_c, dtype=np.int64),
        measurements=c,
    )


def _zcn_candidates(state: DecoderState, g: SensingGraph, policy: ComparisonPolicy) -> _Candidates:
    chk = np.flatnonzero((state.chk_unverified_deg > 0) & policy.is_zero(state.chk_residual))
    rows = g.chk_var[chk]
    var = rows[~state.verified[rows]]
    return _Candidates(var, np.zeros(var.size), np.full(var.size, _ZCN))


def _docn_candidates(state: DecoderState, g: SensingGraph, policy: ComparisonPolicy) -> _Candidates:
    chk = np.flatnonzero(state.chk_unverified_deg == 1)
    rows = g.chk_var[chk]
    pos = np.argmax(~state.verified[rows], axis=1)
    sel = np.arange(chk.size)
    var = rows[sel, pos]
    val = state.chk_residual[chk] / g.chk_w[chk, pos]
    return _Candidates(var, val, np.full(var.size, _DOCN))


def _group_members(members: np.ndarray, gid: np.ndarray, state: DecoderState, g: SensingGraph):
    """For each (group, unverified variable) pair: how many group checks it touches."""
    rows = g.chk_var[members]
    unv = ~state.verified[rows]
    pair_g = np.repeat(gid, g.d_c)[unv.ravel()]
    pair_v = rows[unv]
    keys = pair_g * g.n + pair_v
    uk, cnt = np.unique(keys, return_counts=True)
    return uk // g.n, uk % g.n, cnt


def _ecn_candidates(state: DecoderState, g: SensingGraph, policy: ComparisonPolicy) -> _Candidates:
    if g.unit_weights:
        return _ecn_unit(state, g, policy)
    return _ecn_weighted(state, g, policy)


def _ecn_unit(state: DecoderState, g: SensingGraph, policy: ComparisonPolicy) -> _Candidates:
    res = state.chk_residual
    cand = np.flatnonzero((state.chk_unverified_deg >= 1) & ~policy.is_zero(res))
    if cand.size < 2:
        return _Candidates.empty()
    order = np.argsort(res[cand], kind="stable")
    cs = cand[order]
    vs = res[cs]
    start = np.ones(cs.size, dtype=bool)
    start[1:] = ~policy.equal(vs[1:], vs[:-1])
    gid = np.cumsum(start) - 1
    sizes = np.bincount(gid)
    big = sizes[gid] >= 2
    if not big.any():
        return _Candidates.empty()
    # compact group ids over groups of size >= 2
    members, mgid = cs[big], gid[big]
    uniq, mgid = np.unique(mgid, return_inverse=True)
    gsize = sizes[uniq]
    gval = np.bincount(mgid, weights=vs[big]) / gsize

    kg, kv, cnt = _group_members(members, mgid, state, g)
    full = cnt == gsize[kg]
    nfull = np.bincount(kg[full], minlength=uniq.size)
    common = full & (nfull[kg] == 1)
    zero = ~full
    var = np.concatenate([kv[common], kv[zero]])
    val = np.concatenate([gval[kg[common]], np.zeros(int(zero.sum()))])
    rule = np.concatenate([np.full(int(common.sum()), _ECN_COMMON), np.full(int(zero.sum()), _ECN_ZERO)])
    return _Candidates(var, val, rule)


def _ecn_weighted(state: DecoderState, g: SensingGraph, policy: ComparisonPolicy) -> _Candidates:
    """ECN with weight-divided comparisons, grouped per unverified variable.

    Variable j is a common-value candidate when two of its checks agree on
    residual/weight. The group is every check of j agreeing on that value;
    variables touching only part of the group are zero candidates.
    """
    unv = np.flatnonzero(~state.verified)
    chk = g.var_chk[unv]
    res = state.chk_residual[chk]
    q = np.where(policy.is_zero(res), np.nan, res / g.var_w[unv])
    order = np.argsort(q, axis=1)
    qs = np.take_along_axis(q, order, axis=1)
    with np.errstate(invalid="ignore"):
        eq = policy.equal(qs[:, 1:], qs[:, :-1]) & ~np.isnan(qs[:, 1:])
    hit = np.flatnonzero(eq.any(axis=1))
    if hit.size == 0:
        return _Candidates.empty()
    first = np.argmax(eq[hit], axis=1)
    value = qs[hit, first]
    var = unv[hit]
    with np.errstate(invalid="ignore"):
        in_group = policy.equal(q[hit], value[:, None]) & ~np.isnan(q[hit])
    gid_full = np.repeat(np.arange(hit.size), g.d_v).reshape(hit.size, g.d_v)
    members = chk[hit][in_group]
    mgid = gid_full[in_group]
    gsize = in_group.sum(axis=1)
    kg, kv, cnt = _group_members(members, mgid, state, g)
    zero = (cnt < gsize[kg]) & (kv != var[kg])
    zv = kv[zero]
    return _Candidates(
        np.concatenate([var, zv]),
        np.concatenate([value, np.zeros(zv.size)]),
        np.concatenate([np.full(var.size, _ECN_COMMON), np.full(zv.size, _ECN_ZERO)]),
    )


def _commit(
    state: DecoderState, g: SensingGraph, policy: ComparisonPolicy, cand: _Candidates, rnd: int
) -> np.ndarray:
    """Apply a round's candidate verifications atomically; return new variables."""
    if cand.var.size == 0:
        return cand.var
    order = np.argsort(cand.var, kind="stable")
    var, val, rule = cand.var[order], cand.val[order], cand.rule[order]
    first = np.ones(var.size, dtype=bool)
    first[1:] = var[1:] != var[:-1]
    head = np.cumsum(first) - 1
    ref = val[first][head]
    bad = ~policy.equal(val, ref)
    if bad.any():
        j = var[np.argmax(bad)]
        sel = var == j
        raise FalseVerificationConflict(
            int(j), [float(x) for x in val[sel]], [_RULES[r] for r in rule[sel]]
        )
    var, val, rule = var[first], val[first], rule[first]
    fresh = ~state.verified[var]
    var, val, rule = var[fresh], val[fresh], rule[fresh]
    if var.size == 0:
        return var

    state.verified[var] = True
    state.value[var] = val
    touched = np.unique(g.var_chk[var].ravel())
    state.chk_residual[touched] = residuals_from_scratch(state, g, touched)
    state.chk_unverified_deg[touched] = g.d_c - state.verified[g.chk_var[touched]].sum(axis=1)
    state._log.append((var, val, rule, state.iteration + 1, rnd))
    return var


def _events(state: DecoderState, start: int) -> list[VerificationEvent]:
    out = []
    for var, val, rule, it, rnd in state._log[start:]:
        out.extend(
            VerificationEvent(int(v), float(x), _RULES[r], it, rnd) for v, x, r in zip(var, val, rule)
        )
    return out


def _bound(policy: ComparisonPolicy | None, state: DecoderState) -> ComparisonPolicy:
    if policy is None:
        return ComparisonPolicy.auto(state.measurements)
    return policy.bind(state.measurements)


def apply_zcn(state: DecoderState, g: SensingGraph, policy: ComparisonPolicy | None = None):
    policy = _bound(policy, state)
    start = len(state._log)
    _commit(state, g, policy, _zcn_candidates(state, g, policy), 2)
    return _events(state, start)


def apply_docn(state: DecoderState, g: SensingGraph, policy: ComparisonPolicy | None = None):
    policy = _bound(policy, state)
    start = len(state._log)
    _commit(state, g, policy, _docn_candidates(state, g, policy), 1)
    return _events(state, start)


def apply_ecn(state: DecoderState, g: SensingGraph, policy: ComparisonPolicy | None = None):
    policy = _bound(policy, state)
    start = len(state._log)
    _commit(state, g, policy, _ecn_candidates(state, g, policy), 1)
    return _events(state, start)


def run_iteration(
    state: DecoderState,
    g: SensingGraph,
    alg: AlgorithmKind | str,
    policy: ComparisonPolicy | None = None,
) -> IterationReport:
    alg = AlgorithmKind.parse(alg)
    policy = _bound(policy, state)
    parts = [_docn_candidates(state, g, policy)]
    if alg is AlgorithmKind.SBB:
        parts.append(_ecn_candidates(state, g, policy))
    r1 = _commit(state, g, policy, _Candidates.concat(parts), 1)
    r2 = _commit(state, g, policy, _zcn_candidates(state, g, policy), 2)
    state.iteration += 1
    return IterationReport(state.iteration, r1, r2, state.n_unverified)


def default_max_iter(g: SensingGraph) -> int:
    return int(10 * g.d_v * math.log2(max(g.n, 2)) + 100)


def recover(
    g: SensingGraph,
    c: Measurements | np.ndarray,
    alg: AlgorithmKind | str,
    policy: ComparisonPolicy | None = None,
    max_iter: int | None = None,
) -> RecoveryResult:
    """Run the decoder until it verifies everything, stalls, or hits ``max_iter``."""
    max_iter = default_max_iter(g) if max_iter is None else max_iter
    if max_iter < 1:
        raise ConfigurationError("max_iter must be >= 1")
    state = init_state(g, c)
    policy = _bound(policy, state)
    trace = []
    while state.iteration < max_iter:
        rep = run_iteration(state, g, alg, policy)
        trace.append(rep)
        if rep.n_unverified == 0 or not rep.progressed:
            break
    values = np.where(state.verified, state.value, 0.0)
    return RecoveryResult(values, state.verified.copy(), state.n_unverified == 0, trace, state)


def write_event_log(state: DecoderState, path: str | Path) -> None:
    """JSON-lines, one verification event per line."""
    with Path(path).open("w") as fh:
        for ev in state.event_log:
            fh.write(json.dumps(ev.as_dict()) + "\n")


def write_summary(result: RecoveryResult, path: str | Path) -> None:
    Path(path).write_text(json.dumps(result.summary(), indent=2) + "\n")
