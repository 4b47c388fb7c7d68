"""R-vine structure matrices, the COPAR structure builder, density and sampling.

Matrix convention (0-based numpy indices): ``M`` is lower triangular with
diagonal ``d, d-1, ..., 1``.  Column ``i`` holds the edges of variable
``M[i, i]``; the entry at row ``r > i`` pairs ``M[i, i]`` with ``M[r, i]``
conditioned on ``M[r+1:, i]``.  The bottom row is the first tree.

COPAR variables are flattened as ``label = (t - 1) * m + series`` (both
1-based), so the diagonal reads ..., Y_2, X_2, Y_1, X_1 for ``m = 2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, NamedTuple

import numpy as np

from .errors import DomainError
from .pair_copulas import (
    INDEPENDENCE,
    CopulaFamily,
    PairCopula,
    h_array,
    hinv_array,
    logpdf_array,
)


class BlockKey(NamedTuple):
    """Identifies a COPAR pair-copula block.

    ``first`` is the series of the earlier (or same-time, lower-index)
    variable, ``second`` the series of the later one, ``lag`` their time
    difference.  ``first == second`` is a serial block.
    """

    first: int
    second: int
    lag: int

    def label(self, m: int) -> str:
        names = series_names(m)
        if self.first == self.second:
            return f"C{self.lag}^{names[self.first - 1]}"
        return f"C{self.lag}^{names[self.first - 1]}{names[self.second - 1]}"


def series_names(m: int) -> list[str]:
    if m == 2:
        return ["X", "Y"]
    if m == 3:
        return ["X", "Y", "Z"]
    return [f"X{i}" for i in range(1, m + 1)]


def parse_block_label(label: str, m: int) -> BlockKey:
    """Inverse of ``BlockKey.label``."""
    if not label.startswith("C") or "^" not in label:
        raise DomainError(f"bad block label {label!r}")
    lag_s, names_s = label[1:].split("^", 1)
    names = series_names(m)
    # greedy match of one or two series names
    for a, na in enumerate(names, 1):
        if names_s == na:
            return BlockKey(a, a, int(lag_s))
        for b, nb in enumerate(names, 1):
            if a != b and names_s == na + nb:
                return BlockKey(a, b, int(lag_s))
    raise DomainError(f"bad block label {label!r}")


def var_label(series: int, t: int, m: int) -> int:
    """Flatten (series, time), both 1-based, to an integer label."""
    return (t - 1) * m + series


def var_id(label: int, m: int) -> tuple[int, int]:
    """Inverse of var_label: returns (series, time)."""
    return (label - 1) % m + 1, (label - 1) // m + 1


@dataclass(frozen=True, eq=False)
class RVineMatrix:
    """Structure matrix plus an aligned matrix of pair-copulas.

    ``copulas[r, i]`` (for ``r > i``) is the pair-copula of the edge at
    row ``r`` of column ``i``; other cells hold None.  ``copar`` records
    ``(m, T)`` for matrices produced by ``build_copar_structure``.
    """

    structure: np.ndarray
    copulas: np.ndarray
    copar: tuple[int, int] | None = None
    keys: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        s = np.array(self.structure, dtype=np.int64)
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise DomainError("structure must be a square matrix")
        s.setflags(write=False)
        object.__setattr__(self, "structure", s)
        d = s.shape[0]
        c = self.copulas
        if c is None:
            c = np.empty((d, d), dtype=object)
            for i in range(d):
                for r in range(i + 1, d):
                    c[r, i] = INDEPENDENCE
        else:
            c = np.array(c, dtype=object)
            if c.shape != (d, d):
                raise DomainError("copula matrix must match the structure shape")
        c.setflags(write=False)
        object.__setattr__(self, "copulas", c)
        if self.keys is not None:
            k = np.array(self.keys, dtype=object)
            k.setflags(write=False)
            object.__setattr__(self, "keys", k)

    @property
    def dim(self) -> int:
        return self.structure.shape[0]

    @property
    def families(self) -> np.ndarray:
        d = self.dim
        out = np.empty((d, d), dtype=object)
        for i in range(d):
            for r in range(i + 1, d):
                out[r, i] = self.copulas[r, i].family
        return out

    @property
    def params(self) -> np.ndarray:
        d = self.dim
        out = np.empty((d, d), dtype=object)
        for i in range(d):
            for r in range(i + 1, d):
                out[r, i] = self.copulas[r, i].params
        return out

    def edges(self):
        """Yield (row, col, conditioned pair, conditioning set, copula)."""
        M = self.structure
        d = self.dim
        for i in range(d):
            for r in range(i + 1, d):
                yield r, i, (int(M[i, i]), int(M[r, i])), tuple(int(x) for x in M[r + 1:, i]), self.copulas[r, i]

    def with_copulas(self, copulas: np.ndarray) -> "RVineMatrix":
        return RVineMatrix(self.structure, copulas, self.copar, self.keys)

    def __eq__(self, other) -> bool:
        if not isinstance(other, RVineMatrix):
            return NotImplemented
        if self.dim != other.dim or not np.array_equal(self.structure, other.structure):
            return False
        d = self.dim
        return all(self.copulas[r, i] == other.copulas[r, i] for i in range(d) for r in range(i + 1, d))

    def to_text(self) -> str:
        d = self.dim
        lines = [f"dim {d}", "structure"]
        lines += [" ".join(str(int(x)) for x in row) for row in self.structure]
        lines.append("copulas")
        for i in range(d):
            for r in range(i + 1, d):
                pc = self.copulas[r, i]
                lines.append(" ".join([str(r), str(i), pc.family.code] + [repr(p) for p in pc.params]))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RVineMatrix":
        lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
        if not lines or not lines[0].startswith("dim "):
            raise DomainError("vine text must start with 'dim'")
        d = int(lines[0].split()[1])
        if lines[1] != "structure" or lines[2 + d] != "copulas":
            raise DomainError("malformed vine text")
        structure = np.array([[int(x) for x in ln.split()] for ln in lines[2:2 + d]], dtype=np.int64)
        cop = np.empty((d, d), dtype=object)
        for ln in lines[3 + d:]:
            parts = ln.split()
            r, i = int(parts[0]), int(parts[1])
            cop[r, i] = PairCopula(CopulaFamily.from_code(parts[2]), tuple(float(p) for p in parts[3:]))
        return cls(structure, cop)


# ---------------------------------------------------------------------------
# COPAR structure

def _copar_column(t: int, j: int, m: int) -> list[tuple[int, int]]:
    """(series, time) entries below the diagonal of column (t, j), bottom-up."""
    out = []
    for i in range(1, m + 1):
        top = t if i < j else t - 1
        out.extend((i, s) for s in range(top, 0, -1))
    return out


def _check_mtk(m: int, T: int, k: int | None) -> None:
    if m < 2:
        raise DomainError("need at least two series (m >= 2)")
    if T < 2:
        raise DomainError("need at least two time points (T >= 2)")
    if k is not None and not 1 <= k <= T - 1:
        raise DomainError(f"order k must satisfy 1 <= k <= T-1, got k={k}, T={T}")


def build_copar_structure(
    m: int,
    T: int,
    k: int | None = None,
    blocks: Mapping[BlockKey, PairCopula] | None = None,
) -> RVineMatrix:
    """R-vine matrix of the COPAR model for m series of length T.

    Edges whose lag exceeds ``k`` get the Independence copula.  Edges
    within the order take their copula from ``blocks`` when given and are
    Independence placeholders otherwise; ``keys`` records each edge's block.
    """
    if k is None:
        k = T - 1
    _check_mtk(m, T, k)
    d = m * T
    M = np.zeros((d, d), dtype=np.int64)
    cop = np.empty((d, d), dtype=object)
    keys = np.empty((d, d), dtype=object)
    for col in range(d):
        label = d - col
        j, t = var_id(label, m)
        M[col, col] = label
        for q, (i, s) in enumerate(_copar_column(t, j, m)):
            r = d - 1 - q
            M[r, col] = var_label(i, s, m)
            key = BlockKey(i, j, t - s)
            keys[r, col] = key
            if key.lag > k:
                cop[r, col] = INDEPENDENCE
            elif blocks is not None:
                if key not in blocks:
                    raise DomainError(f"missing block {key.label(m)}")
                cop[r, col] = blocks[key]
            else:
                cop[r, col] = INDEPENDENCE
    return RVineMatrix(M, cop, (m, T), keys)


def copar_block_keys(m: int, k: int) -> list[BlockKey]:
    """All block keys of a COPAR(k) model in canonical order."""
    keys = [BlockKey(j, j, lag) for j in range(1, m + 1) for lag in range(1, k + 1)]
    for a in range(1, m + 1):
        for b in range(1, m + 1):
            if a < b:
                keys.extend(BlockKey(a, b, lag) for lag in range(0, k + 1))
            elif a > b:
                keys.extend(BlockKey(a, b, lag) for lag in range(1, k + 1))
    return keys


def count_copulas(m: int, T: int, k: int | None = None) -> int:
    """Number of distinct non-trivial pair-copula blocks: m^2 k + m(m-1)/2."""
    if k is None:
        k = T - 1
    _check_mtk(m, T, k)
    return m * m * k + m * (m - 1) // 2


def enumerate_blocks(M: RVineMatrix, k: int) -> set[BlockKey]:
    """Distinct block keys with lag <= k present in a COPAR matrix."""
    if M.keys is None:
        raise DomainError("matrix carries no block keys")
    d = M.dim
    return {M.keys[r, i] for i in range(d) for r in range(i + 1, d) if M.keys[r, i].lag <= k}


# ---------------------------------------------------------------------------
# validation

def _lookup(M: np.ndarray, r: int, i: int) -> tuple[int, bool]:
    """Column holding F(M[r,i] | M[r+1:, i]) and whether it is a direct value."""
    d = M.shape[0]
    mx = int(M[r:, i].max())
    return d - mx, mx == M[r, i]


def validate_rvine_matrix(M) -> bool:
    """Check the R-vine matrix admissibility conditions."""
    S = M.structure if isinstance(M, RVineMatrix) else np.asarray(M)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DomainError("structure must be a square matrix")
    d = S.shape[0]
    if np.any(np.triu(S, 1) != 0):
        return False
    if not np.array_equal(np.diag(S), np.arange(d, 0, -1)):
        return False
    for i in range(d):
        col = [int(x) for x in S[i + 1:, i]]
        if len(set(col)) != len(col) or set(col) != set(range(1, d - i)):
            return False
    for i in range(d):
        for r in range(i + 1, d - 1):
            j, direct = _lookup(S, r, i)
            if j <= i:
                return False
            if direct:
                if set(S[r + 1:, i].tolist()) != set(S[r + 1:, j].tolist()):
                    return False
            else:
                if r + 1 >= d or S[r + 1, j] != S[r, i]:
                    return False
                want = set(S[r + 1:, i].tolist())
                have = set(S[r + 2:, j].tolist()) | {int(S[j, j])}
                if want != have:
                    return False
    return True


# ---------------------------------------------------------------------------
# density and sampling

def _as_rows(u, d: int) -> tuple[np.ndarray, bool]:
    arr = np.asarray(u, dtype=float)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.shape[1] != d:
        raise DomainError(f"expected {d} columns, got {arr.shape[1]}")
    return arr, single


def rvine_logdensity(M: RVineMatrix, u):
    """Log copula density of the vine at u (a d-vector or an (n, d) array)."""
    if not validate_rvine_matrix(M):
        raise DomainError("invalid R-vine matrix")
    d = M.dim
    U, single = _as_rows(u, d)
    n = U.shape[0]
    S = M.structure
    vdir = np.empty((d, d, n))
    vind = np.empty((d, d, n))
    ll = np.zeros(n)
    for i in range(d - 1, -1, -1):
        vdir[d - 1, i] = U[:, S[i, i] - 1]
        for r in range(d - 1, i, -1):
            z1 = vdir[r, i]
            j, direct = _lookup(S, r, i)
            z2 = vdir[r, j] if direct else vind[r, j]
            pc = M.copulas[r, i]
            if pc.family is CopulaFamily.INDEPENDENCE:
                vdir[r - 1, i], vind[r - 1, i] = z1, z2
                continue
            ll += logpdf_array(pc, z1, z2)
            vdir[r - 1, i] = h_array(pc, z1, z2)
            vind[r - 1, i] = h_array(pc, z2, z1)
    return float(ll[0]) if single else ll


def rvine_sample_from_uniforms(M: RVineMatrix, W: np.ndarray) -> np.ndarray:
    """Inverse Rosenblatt transform of independent uniforms W (n, d).

    Column ``M[i, i] - 1`` of W drives variable ``M[i, i]``.
    """
    d = M.dim
    W = np.atleast_2d(np.asarray(W, float))
    n = W.shape[0]
    S = M.structure
    vdir = np.empty((d, d, n))
    vind = np.empty((d, d, n))
    out = np.empty((n, d))
    for i in range(d - 1, -1, -1):
        z2s = {}
        for r in range(d - 1, i, -1):
            j, direct = _lookup(S, r, i)
            z2s[r] = vdir[r, j] if direct else vind[r, j]
        # backward chain: F(a | all) = w  ->  raw u
        val = W[:, S[i, i] - 1]
        for r in range(i + 1, d):
            vdir[r - 1, i] = val
            val = hinv_array(M.copulas[r, i], val, z2s[r])
        vdir[d - 1, i] = val
        out[:, S[i, i] - 1] = val
        for r in range(d - 1, i, -1):
            pc = M.copulas[r, i]
            z1 = vdir[r, i]
            vind[r - 1, i] = z2s[r] if pc.family is CopulaFamily.INDEPENDENCE else h_array(pc, z2s[r], z1)
    return out


def rvine_sample(M: RVineMatrix, n: int, seed) -> np.ndarray:
    """Draw n samples (rows) from the vine; column c is variable c + 1."""
    if n < 1:
        raise DomainError("n must be at least 1")
    if not validate_rvine_matrix(M):
        raise DomainError("invalid R-vine matrix")
    W = np.random.default_rng(seed).random((n, M.dim))
    return rvine_sample_from_uniforms(M, W)


# ---------------------------------------------------------------------------
# forecasting extension

def copar_blocks_from_matrix(M: RVineMatrix) -> tuple[int, int, dict[BlockKey, PairCopula]]:
    """Recover (m, T, blocks) from a COPAR matrix, checking tiling consistency."""
    m, T = _copar_shape(M)
    keys = build_copar_structure(m, T).keys
    blocks: dict[BlockKey, PairCopula] = {}
    d = M.dim
    for i in range(d):
        for r in range(i + 1, d):
            key, pc = keys[r, i], M.copulas[r, i]
            if key in blocks and blocks[key] != pc:
                raise DomainError(f"block {key.label(m)} is not tiled consistently")
            blocks[key] = pc
    return m, T, blocks


def _copar_shape(M: RVineMatrix) -> tuple[int, int]:
    if M.copar is not None:
        m, T = M.copar
        if m * T == M.dim and np.array_equal(build_copar_structure(m, T).structure, M.structure):
            return m, T
    d = M.dim
    for m in range(2, d // 2 + 1):
        if d % m == 0 and np.array_equal(build_copar_structure(m, d // m).structure, M.structure):
            return m, d // m
    raise DomainError("matrix is not a COPAR structure")


def extend_structure_for_forecast(M: RVineMatrix, h: int) -> RVineMatrix:
    """Append m*h columns for the next h time points.

    New edges reuse the block copulas of M; lags that M never realized are
    Independence.  The bottom-right d x d block of the result equals M.
    """
    if h < 0:
        raise DomainError("horizon must be non-negative")
    m, T, blocks = copar_blocks_from_matrix(M)
    if h == 0:
        return M
    ext = build_copar_structure(m, T + h)
    d_new = ext.dim
    cop = np.empty((d_new, d_new), dtype=object)
    for i in range(d_new):
        for r in range(i + 1, d_new):
            cop[r, i] = blocks.get(ext.keys[r, i], INDEPENDENCE)
    return RVineMatrix(ext.structure, cop, (m, T + h), ext.keys)
