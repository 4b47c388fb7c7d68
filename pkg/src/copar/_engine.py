"""Sparse time-vectorized evaluation of the COPAR vine.

The tiled COPAR matrix has O((mT)^2) edges, but only the m^2 k + m(m-1)/2
edge types with lag <= k carry a non-trivial copula.  For a column of
series j at time t, each such edge needs a second conditional argument
that the generic column recursion looks up in another column.  That
lookup is traced once, symbolically, on a reference matrix: the result is
a time-invariant description (time offset, series, direct/indirect,
edge position) of where every argument comes from.  Time points before
the first observation are padded with phantom variables joined by
independence copulas, which makes the description valid for every t.

Evaluation then runs edge type by edge type, vectorized over time, in a
topological order of the argument dependencies.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Mapping

import numpy as np

from .errors import DomainError
from .pair_copulas import INDEPENDENCE, CopulaFamily, PairCopula, h_array, hinv_array, logpdf_array
from .vine import BlockKey, _lookup, build_copar_structure, var_id, var_label


@dataclass(frozen=True)
class Source:
    """Where an edge's second argument lives.

    ``dt`` time offset back from the edge's column, ``series`` the source
    column's series, ``kind`` 'dir' or 'ind', ``pos`` the effective-edge
    position whose output is used (-1 with 'dir': the raw observation).
    """

    dt: int
    series: int
    kind: str
    pos: int


@dataclass(frozen=True)
class EdgeSpec:
    series: int
    pos: int
    key: BlockKey
    source: Source

    @property
    def lag(self) -> int:
        return self.key.lag


@dataclass(frozen=True)
class Schedule:
    m: int
    k: int
    columns: tuple[tuple[EdgeSpec, ...], ...]  # index series - 1
    order: tuple[tuple[int, int], ...]  # (series, pos) in dependency order
    window: int

    def edge(self, series: int, pos: int) -> EdgeSpec:
        return self.columns[series - 1][pos]

    def by_key(self) -> dict[BlockKey, EdgeSpec]:
        return {e.key: e for col in self.columns for e in col}


def _trace_column(S, keys, m: int, k: int, t: int, j: int):
    d = S.shape[0]

    def col_of(label: int) -> int:
        return d - label

    def eff_rows(c: int) -> list[int]:
        # effective rows of column c, bottom-up
        return [r for r in range(d - 1, c, -1) if keys[r, c].lag <= k]

    def dir_ref(r: int, c: int):
        rows = [x for x in eff_rows(c) if x > r]
        pos = len(rows) - 1  # the last processed effective edge below row r
        return c, "dir", pos

    def resolve(r: int, c: int):
        jc, direct = _lookup(S, r, c)
        if direct:
            return dir_ref(r, jc)
        # Vind[r, jc] is the output of the edge at row r + 1 of column jc
        if keys[r + 1, jc].lag <= k:
            return jc, "ind", eff_rows(jc).index(r + 1)
        return resolve(r + 1, jc)

    c = col_of(var_label(j, t, m))
    out = []
    for r in eff_rows(c):
        sc, kind, pos = resolve(r, c)
        sj, st = var_id(int(S[sc, sc]), m)
        out.append((keys[r, c], Source(t - st, sj, kind, pos)))
    return out


@lru_cache(maxsize=64)
def compile_schedule(m: int, k: int) -> Schedule:
    """Trace argument sources for a COPAR(k) model with m series."""
    if m < 2 or k < 1:
        raise DomainError("need m >= 2 and k >= 1")
    T_ref = 3 * k + 6
    ref = build_copar_structure(m, T_ref)
    S, keys = ref.structure, ref.keys
    columns = []
    for j in range(1, m + 1):
        traces = [_trace_column(S, keys, m, k, t, j) for t in (T_ref, T_ref - 1, T_ref - 2)]
        if not (traces[0] == traces[1] == traces[2]):
            raise AssertionError("COPAR argument sources are not time invariant")
        columns.append(tuple(EdgeSpec(j, pos, key, src) for pos, (key, src) in enumerate(traces[0])))
    columns = tuple(columns)

    # topological order, preferring lower (series, pos)
    deps = {}
    for col in columns:
        for e in col:
            dd = set()
            if e.pos > 0:
                dd.add((e.series, e.pos - 1))
            if e.source.pos >= 0:
                dd.add((e.source.series, e.source.pos))
            deps[(e.series, e.pos)] = dd
    indeg = {n: len(v) for n, v in deps.items()}
    users: dict = {n: [] for n in deps}
    for n, dd in deps.items():
        for x in dd:
            users[x].append(n)
    heap = [n for n, c in indeg.items() if c == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        n = heapq.heappop(heap)
        order.append(n)
        for u in users[n]:
            indeg[u] -= 1
            if indeg[u] == 0:
                heapq.heappush(heap, u)
    if len(order) != len(deps):
        raise AssertionError("cyclic argument dependencies")
    window = max(e.source.dt for col in columns for e in col)
    return Schedule(m, k, columns, tuple(order), max(window, 1))


# ---------------------------------------------------------------------------
# time-vectorized pass over observed data

@dataclass
class Pass:
    """Outputs of a full pass: per edge, arrays over time (NaN = phantom)."""

    raw: np.ndarray  # (T, m)
    dir_out: dict
    ind_out: dict
    loglik_terms: dict  # (series, pos) -> per-time log density (0 where inactive)

    def value(self, src: Source, t_shift: int | None = None) -> np.ndarray:
        if src.kind == "dir" and src.pos < 0:
            arr = self.raw[:, src.series - 1]
        elif src.kind == "dir":
            arr = self.dir_out[(src.series, src.pos)]
        else:
            arr = self.ind_out[(src.series, src.pos)]
        dt = src.dt if t_shift is None else t_shift
        out = np.full(arr.shape, np.nan)
        if dt < arr.shape[0]:
            out[dt:] = arr[: arr.shape[0] - dt]
        return out


def edge_arguments(sched: Schedule, p: Pass, series: int, pos: int):
    """(z1, z2, valid mask) of an edge type over all time points."""
    e = sched.edge(series, pos)
    T = p.raw.shape[0]
    z1 = p.raw[:, series - 1] if pos == 0 else p.dir_out[(series, pos - 1)]
    z2 = p.value(e.source)
    valid = np.arange(T) >= e.lag
    return z1, z2, valid


def apply_edge(p: Pass, e: EdgeSpec, pc: PairCopula, z1, z2, valid) -> None:
    dir_o = np.array(z1, dtype=float, copy=True)
    ind_o = np.array(z2, dtype=float, copy=True)
    terms = np.zeros(z1.shape[0])
    if pc.family is not CopulaFamily.INDEPENDENCE and valid.any():
        a, b = z1[valid], z2[valid]
        if np.isnan(a).any() or np.isnan(b).any():
            raise AssertionError(f"phantom value reached edge {e.key}")
        terms[valid] = logpdf_array(pc, a, b)
        dir_o[valid] = h_array(pc, a, b)
        ind_o[valid] = h_array(pc, b, a)
    p.dir_out[(e.series, e.pos)] = dir_o
    p.ind_out[(e.series, e.pos)] = ind_o
    p.loglik_terms[(e.series, e.pos)] = terms


def run_pass(
    sched: Schedule,
    U: np.ndarray,
    blocks: Mapping[BlockKey, PairCopula] | None = None,
    choose: Callable[[EdgeSpec, np.ndarray, np.ndarray], PairCopula] | None = None,
) -> tuple[Pass, dict[BlockKey, PairCopula]]:
    """Evaluate all edges on copula data U (T, m).

    With ``choose`` the copula of each block is decided on the fly from its
    pooled (z1, z2) arguments, in dependency order (sequential estimation).
    """
    U = np.asarray(U, dtype=float)
    if U.ndim != 2 or U.shape[1] != sched.m:
        raise DomainError(f"expected data with {sched.m} columns")
    p = Pass(U, {}, {}, {})
    chosen: dict[BlockKey, PairCopula] = {}
    for series, pos in sched.order:
        e = sched.edge(series, pos)
        z1, z2, valid = edge_arguments(sched, p, series, pos)
        if choose is not None:
            pc = choose(e, z1[valid], z2[valid])
        else:
            pc = blocks.get(e.key, INDEPENDENCE) if blocks is not None else INDEPENDENCE
        chosen[e.key] = pc
        apply_edge(p, e, pc, z1, z2, valid)
    return p, chosen


def loglik(sched: Schedule, U: np.ndarray, blocks: Mapping[BlockKey, PairCopula]) -> float:
    p, _ = run_pass(sched, U, blocks)
    return float(sum(t.sum() for t in p.loglik_terms.values()))


def block_logliks(sched: Schedule, U: np.ndarray, blocks) -> dict[BlockKey, float]:
    """Pooled log-likelihood contribution of every block."""
    p, _ = run_pass(sched, U, blocks)
    return {sched.edge(*n).key: float(p.loglik_terms[n].sum()) for n in sched.order}


# ---------------------------------------------------------------------------
# step-wise simulation (forecasting, sampling)

class StepState:
    """Rolling window of per-time outputs for a batch of paths.

    Each slice is a dict with 'raw' (n, m) and 'dir'/'ind' dicts keyed by
    (series, pos) of (n,) arrays.  Missing (pre-sample) times are phantom.
    """

    def __init__(self, sched: Schedule, n: int, t0: int, slices=None):
        self.sched = sched
        self.n = n
        self.t = t0  # 0-based index of the next time point
        self.slices: deque = deque(slices or [], maxlen=sched.window)

    @classmethod
    def from_history(cls, sched: Schedule, U: np.ndarray, blocks, n: int) -> "StepState":
        U = np.asarray(U, float)
        T = U.shape[0]
        p, _ = run_pass(sched, U, blocks)
        slices = []
        for t in range(max(0, T - sched.window), T):
            sl = {
                "raw": np.broadcast_to(U[t], (n, sched.m)),
                "dir": {key: np.full(n, v[t]) for key, v in p.dir_out.items()},
                "ind": {key: np.full(n, v[t]) for key, v in p.ind_out.items()},
            }
            slices.append(sl)
        return cls(sched, n, T, slices)

    def copy(self) -> "StepState":
        return StepState(self.sched, self.n, self.t, list(self.slices))

    def _past(self, dt: int):
        # slice for time self.t - dt, or None for phantom
        if self.t - dt < 0 or dt > len(self.slices):
            return None
        return self.slices[len(self.slices) - dt]

    def _source(self, src: Source, cur: dict) -> np.ndarray:
        sl = cur if src.dt == 0 else self._past(src.dt)
        if sl is None:
            return np.full(self.n, np.nan)
        if src.kind == "dir" and src.pos < 0:
            return sl["raw"][:, src.series - 1]
        return sl["dir" if src.kind == "dir" else "ind"][(src.series, src.pos)]

    def _active(self, e: EdgeSpec, pc: PairCopula) -> bool:
        return self.t >= e.lag and pc.family is not CopulaFamily.INDEPENDENCE

    def column_forward(self, j: int, x: np.ndarray, blocks, cur: dict) -> np.ndarray:
        """Push raw values x of series j through its column; returns F(x | past, partial)."""
        d = np.asarray(x, float)
        for e in self.sched.columns[j - 1]:
            pc = blocks.get(e.key, INDEPENDENCE)
            z2 = self._source(e.source, cur)
            z1 = d
            if self._active(e, pc):
                d = h_array(pc, z1, z2)
                ind = h_array(pc, z2, z1)
            else:
                ind = z2
            cur["dir"][(j, e.pos)] = d
            cur["ind"][(j, e.pos)] = ind
        return d

    def column_inverse(self, j: int, w: np.ndarray, blocks, cur: dict) -> np.ndarray:
        """Sample series j by inverting its column at probabilities w."""
        col = self.sched.columns[j - 1]
        z2s = [self._source(e.source, cur) for e in col]
        pcs = [blocks.get(e.key, INDEPENDENCE) for e in col]
        d = np.asarray(w, float)
        for e, pc, z2 in zip(reversed(col), reversed(pcs), reversed(z2s)):
            cur["dir"][(j, e.pos)] = d
            if self._active(e, pc):
                d = hinv_array(pc, d, z2)
        x = d
        z1 = x
        for e, pc, z2 in zip(col, pcs, z2s):
            cur["ind"][(j, e.pos)] = h_array(pc, z2, z1) if self._active(e, pc) else z2
            z1 = cur["dir"][(j, e.pos)]
        return x

    def new_slice(self) -> dict:
        return {"raw": np.full((self.n, self.sched.m), np.nan), "dir": {}, "ind": {}}

    def push(self, cur: dict) -> None:
        self.slices.append(cur)
        self.t += 1


def simulate_steps(
    sched: Schedule,
    blocks,
    state: StepState,
    W: np.ndarray,
    fixed: dict[int, np.ndarray] | None = None,
) -> np.ndarray:
    """Advance ``state`` by W.shape[1] steps.

    W has shape (n, h, m): one uniform per path, step and series (pivot
    order).  ``fixed`` maps a series to (n, h) copula-scale values that
    replace sampling for that series.  Returns sampled copula data (n, h, m).
    """
    n, h, m = W.shape
    out = np.empty((n, h, m))
    for s in range(h):
        cur = state.new_slice()
        for j in range(1, m + 1):
            if fixed is not None and j in fixed:
                x = np.asarray(fixed[j][:, s], float)
                cur["raw"][:, j - 1] = x
                state.column_forward(j, x, blocks, cur)
            else:
                x = state.column_inverse(j, W[:, s, j - 1], blocks, cur)
                cur["raw"][:, j - 1] = x
            out[:, s, j - 1] = x
        state.push(cur)
    return out
