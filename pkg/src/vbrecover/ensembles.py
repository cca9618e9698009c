"""Sensing-graph and signal ensembles, plus the linear encoder ``c = G v``.

Graphs are stored in canonical form: each variable's ``d_v`` checks are sorted
ascending, and each check's ``d_c`` variables are sorted ascending. Two graphs
with the same edge set and weights therefore compare equal array-for-array.
"""

from __future__ import annotations

import logging
import zlib
from functools import cached_property
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

__all__ = [
    "ConfigurationError",
    "GraphGenerationError",
    "WeightMode",
    "GraphConfig",
    "SensingGraph",
    "SignalConfig",
    "ValueMode",
    "Signal",
    "Measurements",
    "derive_rng",
    "admissible_n",
    "sample_graph",
    "sample_signal",
    "encode",
    "save_graph",
    "load_graph",
    "count_four_cycles",
    "INTEGER_RANGE",
]

INTEGER_RANGE = 2**31
_MAX_REPAIR_ROUNDS = 200


class ConfigurationError(ValueError):
    """Invalid ensemble or experiment parameters."""


class GraphGenerationError(RuntimeError):
    """Random graph construction failed to satisfy its constraints."""


def derive_rng(seed: int, purpose: str, *keys: int) -> np.random.Generator:
    """Independent generator for ``purpose`` derived from a master seed.

    Streams for different purposes (or different ``keys``, e.g. a trial
    index) are statistically independent and reproducible.
    """
    tag = zlib.crc32(purpose.encode())
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(tag, *map(int, keys)))
    return np.random.default_rng(ss)


class WeightMode(str, Enum):
    ALL_ONES = "all_ones"
    CONTINUOUS_UNIFORM = "continuous_uniform"


@dataclass(frozen=True)
class GraphConfig:
    n: int
    d_v: int
    d_c: int
    weight_mode: WeightMode = WeightMode.ALL_ONES
    weight_range: tuple[float, float] = (0.5, 2.0)
    seed: int = 0
    forbid_four_cycles: bool = False

    @property
    def m(self) -> int:
        return self.n * self.d_v // self.d_c

    def validate(self) -> None:
        if self.n < 1 or self.d_v < 1 or self.d_c < 1:
            raise ConfigurationError(f"n, d_v, d_c must be positive: {self}")
        if (self.n * self.d_v) % self.d_c:
            raise ConfigurationError(
                f"n*d_v = {self.n * self.d_v} is not divisible by d_c = {self.d_c}"
            )
        if self.d_c > self.n or self.d_v > self.m:
            raise ConfigurationError(f"degrees too large for n={self.n}, m={self.m}")
        if self.weight_mode is WeightMode.CONTINUOUS_UNIFORM:
            lo, hi = self.weight_range
            if not lo < hi:
                raise ConfigurationError(f"empty weight range {self.weight_range}")
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigurationError("seed must be a 64-bit unsigned integer")


def admissible_n(n: int, d_v: int, d_c: int) -> int:
    """Largest n' <= n with n'*d_v divisible by d_c (so m is an integer)."""
    step = d_c // np.gcd(d_v, d_c)
    return int(max(step, n - n % step))


@dataclass(frozen=True, eq=False)
class SensingGraph:
    """Weighted (d_v, d_c)-biregular bipartite graph.

    var_chk[j]   -- the d_v checks of variable j (sorted)
    var_w[j]     -- matching edge weights
    chk_var[i]   -- the d_c variables of check i (sorted)
    chk_w[i]     -- matching edge weights
    chk_edges[i] -- flat var-major edge ids of check i's edges, i.e.
                    chk_var[i] == chk_edges[i] // d_v
    """

    n: int
    m: int
    d_v: int
    d_c: int
    var_chk: np.ndarray
    var_w: np.ndarray
    chk_var: np.ndarray = field(repr=False)
    chk_w: np.ndarray = field(repr=False)
    chk_edges: np.ndarray = field(repr=False)

    @classmethod
    def from_var_adjacency(cls, var_chk: np.ndarray, var_w: np.ndarray, m: int) -> SensingGraph:
        var_chk = np.asarray(var_chk, dtype=np.int64)
        var_w = np.asarray(var_w, dtype=np.float64)
        n, d_v = var_chk.shape
        order = np.argsort(var_chk, axis=1, kind="stable")
        var_chk = np.take_along_axis(var_chk, order, axis=1)
        var_w = np.take_along_axis(var_w, order, axis=1)

        flat = var_chk.ravel()
        counts = np.bincount(flat, minlength=m)
        if flat.size and (flat.min() < 0 or flat.max() >= m):
            raise ConfigurationError("check index out of range")
        d_c = int(counts[0]) if m else 0
        if np.any(counts != d_c):
            raise ConfigurationError("check degrees are not constant")
        # stable sort keeps variables ascending inside each check
        chk_edges = np.argsort(flat, kind="stable").reshape(m, d_c)
        chk_var = chk_edges // d_v
        chk_w = var_w.ravel()[chk_edges]
        for arr in (var_chk, var_w, chk_var, chk_w, chk_edges):
            arr.setflags(write=False)
        return cls(n, m, d_v, d_c, var_chk, var_w, chk_var, chk_w, chk_edges)

    @property
    def edge_chk(self) -> np.ndarray:
        return self.var_chk.ravel()

    @property
    def edge_var(self) -> np.ndarray:
        return np.repeat(np.arange(self.n), self.d_v)

    @cached_property
    def unit_weights(self) -> bool:
        return bool(np.all(self.var_w == 1.0))

    def var_adj(self, j: int) -> list[tuple[int, float]]:
        return [(int(c), float(w)) for c, w in zip(self.var_chk[j], self.var_w[j])]

    def chk_adj(self, i: int) -> list[tuple[int, float]]:
        return [(int(v), float(w)) for v, w in zip(self.chk_var[i], self.chk_w[i])]

    def dense(self) -> np.ndarray:
        """Dense m x n biadjacency matrix (test oracle only)."""
        a = np.zeros((self.m, self.n))
        a[self.var_chk.ravel(), self.edge_var] = self.var_w.ravel()
        return a

    def has_parallel_edges(self) -> bool:
        return bool(np.any(np.diff(self.var_chk, axis=1) == 0))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SensingGraph):
            return NotImplemented
        return (
            (self.n, self.m, self.d_v, self.d_c) == (other.n, other.m, other.d_v, other.d_c)
            and np.array_equal(self.var_chk, other.var_chk)
            and np.array_equal(self.var_w, other.var_w)
        )

    __hash__ = None  # type: ignore[assignment]


def _duplicate_slots(chk: np.ndarray) -> np.ndarray:
    """Flat edge ids that repeat an earlier check of the same variable."""
    order = np.argsort(chk, axis=1, kind="stable")
    srt = np.take_along_axis(chk, order, axis=1)
    dup = np.zeros_like(chk, dtype=bool)
    np.put_along_axis(dup, order[:, 1:], srt[:, 1:] == srt[:, :-1], axis=1)
    return np.flatnonzero(dup)


def _repair_parallel(chk: np.ndarray, rng: np.random.Generator) -> None:
    """Edge-swap repair of parallel edges, in place on the (n, d_v) array."""
    n, d_v = chk.shape
    flat = chk.reshape(-1)
    for _ in range(_MAX_REPAIR_ROUNDS):
        dups = _duplicate_slots(chk)
        if dups.size == 0:
            return
        for e in dups:
            j = e // d_v
            for _attempt in range(100):
                f = int(rng.integers(flat.size))
                k = f // d_v
                if k == j:
                    continue
                ce, cf = flat[e], flat[f]
                if cf in chk[j] or ce in chk[k]:
                    continue
                flat[e], flat[f] = cf, ce
                break
    if _duplicate_slots(chk).size:
        raise GraphGenerationError("could not remove parallel edges")


def _four_cycle_pairs(chk: np.ndarray, m: int) -> np.ndarray:
    """Variables lying on a 4-cycle (two variables sharing two checks)."""
    n, d_v = chk.shape
    a, b = np.triu_indices(d_v, k=1)
    lo = np.minimum(chk[:, a], chk[:, b])
    hi = np.maximum(chk[:, a], chk[:, b])
    keys = (lo * m + hi).ravel()
    owners = np.repeat(np.arange(n), a.size)
    order = np.argsort(keys, kind="stable")
    ks = keys[order]
    same = np.zeros(ks.size, dtype=bool)
    same[1:] |= ks[1:] == ks[:-1]
    same[:-1] |= ks[1:] == ks[:-1]
    return np.unique(owners[order[same]])


def count_four_cycles(g: SensingGraph) -> int:
    """Number of (variable-pair, check-pair) 4-cycles in ``g``."""
    d_v = g.d_v
    a, b = np.triu_indices(d_v, k=1)
    keys = (g.var_chk[:, a] * g.m + g.var_chk[:, b]).ravel()
    _, counts = np.unique(keys, return_counts=True)
    return int(np.sum(counts * (counts - 1) // 2))


def _repair_four_cycles(chk: np.ndarray, m: int, rng: np.random.Generator) -> None:
    """Remove 4-cycles by local edge swaps; intended for small graphs."""
    n, d_v = chk.shape
    flat = chk.reshape(-1)
    chk_sets: list[set[int]] = [set() for _ in range(m)]
    for j in range(n):
        for c in chk[j]:
            chk_sets[c].add(j)

    def creates_cycle(j: int, c: int, drop: int) -> bool:
        # would edge (j, c) close a 4-cycle, given j loses check `drop`?
        if c in chk[j] and c != drop:
            return True
        others = chk_sets[c] - {j}
        for c2 in chk[j]:
            if c2 == drop or c2 == c:
                continue
            if others & (chk_sets[c2] - {j}):
                return True
        return False

    for _ in range(_MAX_REPAIR_ROUNDS):
        bad = _four_cycle_pairs(chk, m)
        if bad.size == 0:
            return
        for j in rng.permutation(bad):
            # re-check: earlier swaps in this pass may have fixed j
            slot = None
            for s in range(d_v):
                c = flat[j * d_v + s]
                chk_sets[c].discard(j)
                cyc = creates_cycle(j, c, drop=c)
                chk_sets[c].add(j)
                if cyc:
                    slot = s
                    break
            if slot is None:
                continue
            e = j * d_v + slot
            ce = int(flat[e])
            for _attempt in range(400):
                f = int(rng.integers(flat.size))
                k = f // d_v
                cf = int(flat[f])
                if k == j or cf == ce:
                    continue
                chk_sets[ce].discard(j)
                chk_sets[cf].discard(k)
                ok = not creates_cycle(j, cf, drop=ce) and not creates_cycle(k, ce, drop=cf)
                if ok:
                    flat[e], flat[f] = cf, ce
                    chk_sets[cf].add(j)
                    chk_sets[ce].add(k)
                    break
                chk_sets[ce].add(j)
                chk_sets[cf].add(k)
    if _four_cycle_pairs(chk, m).size:
        raise GraphGenerationError("could not remove all 4-cycles")


def sample_graph(cfg: GraphConfig) -> SensingGraph:
    """Draw a simple (d_v, d_c)-biregular graph by random stub pairing.

    Parallel edges left by the pairing are removed by random edge swaps,
    which keeps every degree fixed. With ``forbid_four_cycles`` the same
    swap repair also eliminates 4-cycles.
    """
    cfg.validate()
    n, d_v, d_c, m = cfg.n, cfg.d_v, cfg.d_c, cfg.m
    rng = derive_rng(cfg.seed, "graph")
    chk = rng.permutation(np.repeat(np.arange(m, dtype=np.int64), d_c)).reshape(n, d_v)
    _repair_parallel(chk, rng)
    if cfg.forbid_four_cycles:
        _repair_four_cycles(chk, m, rng)

    if cfg.weight_mode is WeightMode.ALL_ONES:
        w = np.ones((n, d_v))
    else:
        lo, hi = cfg.weight_range
        wrng = derive_rng(cfg.seed, "weights")
        w = wrng.uniform(lo, hi, size=(n, d_v))
        while np.any(w == 0.0):
            zero = w == 0.0
            w[zero] = wrng.uniform(lo, hi, size=int(zero.sum()))
    return SensingGraph.from_var_adjacency(chk, w, m)


class ValueMode(str, Enum):
    GAUSSIAN = "gaussian"
    INTEGER = "integer"


@dataclass(frozen=True)
class SignalConfig:
    n: int
    alpha: float
    value_mode: ValueMode = ValueMode.GAUSSIAN
    seed: int = 0
    int_range: int = INTEGER_RANGE

    def validate(self) -> None:
        if self.n < 1:
            raise ConfigurationError("signal length must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not 1 <= self.int_range <= 2**49:
            # sums of up to 14 such values stay exact in float64
            raise ConfigurationError(f"int_range must lie in [1, 2**49], got {self.int_range}")


@dataclass(frozen=True, eq=False)
class Signal:
    values: np.ndarray

    @property
    def n(self) -> int:
        return self.values.size

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.values)

    @property
    def nonzero(self) -> np.ndarray:
        return self.values != 0

    def __len__(self) -> int:
        return self.values.size


@dataclass(frozen=True, eq=False)
class Measurements:
    values: np.ndarray

    def __len__(self) -> int:
        return self.values.size


def sample_signal(cfg: SignalConfig) -> Signal:
    """Draw v from the mixture: 0 w.p. 1-alpha, else from ``value_mode``.

    The support is drawn from uniforms compared against alpha, so for a fixed
    seed the supports are nested in alpha.
    """
    cfg.validate()
    u = derive_rng(cfg.seed, "support").random(cfg.n)
    mask = u < cfg.alpha
    vrng = derive_rng(cfg.seed, "values")
    if cfg.value_mode is ValueMode.GAUSSIAN:
        draws = vrng.standard_normal(cfg.n)
        draws[draws == 0.0] = 1.0  # measure-zero; keeps support exact
    else:
        mag = vrng.integers(1, cfg.int_range, size=cfg.n, endpoint=True)
        sign = vrng.integers(0, 2, size=cfg.n) * 2 - 1
        draws = (mag * sign).astype(np.float64)
    values = np.where(mask, draws, 0.0)
    values.setflags(write=False)
    return Signal(values)


def encode(g: SensingGraph, v: Signal | np.ndarray) -> Measurements:
    values = v.values if isinstance(v, Signal) else np.asarray(v, dtype=np.float64)
    if values.shape != (g.n,):
        raise ConfigurationError(f"signal length {values.shape} does not match n={g.n}")
    c = np.sum(g.chk_w * values[g.chk_var], axis=1)
    return Measurements(c)


def save_graph(g: SensingGraph, path: str | Path) -> None:
    """Write the edge list: header ``n m d_v d_c`` then ``check var weight``."""
    path = Path(path)
    with path.open("w") as fh:
        fh.write(f"{g.n} {g.m} {g.d_v} {g.d_c}\n")
        for i in range(g.m):
            for v, w in zip(g.chk_var[i], g.chk_w[i]):
                fh.write(f"{i} {v} {float(w)!r}\n")


def load_graph(path: str | Path) -> SensingGraph:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().split()
        if len(header) != 4:
            raise ConfigurationError(f"{path}: bad header {header!r}")
        n, m, d_v, d_c = map(int, header)
        data = np.loadtxt(fh, ndmin=2) if n * d_v else np.zeros((0, 3))
    if data.shape != (n * d_v, 3):
        raise ConfigurationError(f"{path}: expected {n * d_v} edges, found {data.shape[0]}")
    chk = data[:, 0].astype(np.int64)
    var = data[:, 1].astype(np.int64)
    w = data[:, 2]
    if np.any(np.bincount(var, minlength=n) != d_v) or var.max(initial=0) >= n:
        raise ConfigurationError(f"{path}: variable degrees are not all {d_v}")
    order = np.lexsort((chk, var))
    g = SensingGraph.from_var_adjacency(chk[order].reshape(n, d_v), w[order].reshape(n, d_v), m)
    if g.d_c != d_c:
        raise ConfigurationError(f"{path}: check degree {g.d_c} != header {d_c}")
    return g
