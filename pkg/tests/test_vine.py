import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from copar.errors import DomainError
from copar.pair_copulas import INDEPENDENCE, CopulaFamily, PairCopula, copula_logpdf, tau_to_params
from copar.vine import (
    BlockKey,
    RVineMatrix,
    build_copar_structure,
    copar_block_keys,
    count_copulas,
    enumerate_blocks,
    extend_structure_for_forecast,
    parse_block_label,
    rvine_logdensity,
    rvine_sample,
    validate_rvine_matrix,
    var_id,
    var_label,
)

from oracles import (
    gaussian_copula_logdensity,
    gaussian_vine_correlation,
    tree_proximity_check,
    vine_edges_with_rho,
)

F = CopulaFamily

MATRIX_14 = """
Y4
Y1 X4
Y2 Y1 Y3
Y3 Y2 Y1 X3
X1 Y3 Y2 Y1 Y2
X2 X1 X1 Y2 Y1 X2
X3 X2 X2 X1 X1 Y1 Y1
X4 X3 X3 X2 X2 X1 X1 X1
"""

MATRIX_16 = """
Z4
Z1 Y4
Z2 Z1 X4
Z3 Z2 Z1 Z3
Y1 Z3 Z2 Z1 Y3
Y2 Y1 Z3 Z2 Z1 X3
Y3 Y2 Y1 Y1 Z2 Z1 Z2
Y4 Y3 Y2 Y2 Y1 Z2 Z1 Y2
X1 X1 Y3 Y3 Y2 Y1 Y1 Z1 X2
X2 X2 X1 X1 X1 Y2 Y2 Y1 Z1 Z1
X3 X3 X2 X2 X2 X1 X1 X1 Y1 Y1 Y1
X4 X4 X3 X3 X3 X2 X2 X2 X1 X1 X1 X1
"""

MATRIX_EX6 = """
Y5
Y1 X5
Y2 Y1 Y4
Y3 Y2 Y1 X4
Y4 Y3 Y2 Y1 Y3
X1 Y4 Y3 Y2 Y1 X3
X2 X1 X1 Y3 Y2 Y1 Y2
X3 X2 X2 X1 X1 Y2 Y1 X2
X4 X3 X3 X2 X2 X1 X1 Y1 Y1
X5 X4 X4 X3 X3 X2 X2 X1 X1 X1
"""


def parse_named(text, m):
    rows = [ln.split() for ln in text.strip().splitlines()]
    d = len(rows)
    M = np.zeros((d, d), dtype=np.int64)
    names = "XYZ"[:m]
    for r, row in enumerate(rows):
        for c, tok in enumerate(row):
            M[r, c] = var_label(names.index(tok[0]) + 1, int(tok[1:]), m)
    return M


def gaussian_blocks(m, k, rng, lo=-0.7, hi=0.9):
    return {key: PairCopula(F.GAUSSIAN, (float(rng.uniform(lo, hi)),)) for key in copar_block_keys(m, k)}


# --- labels ---------------------------------------------------------------------------

def test_flattening_is_bijective():
    for m in (2, 3, 5):
        labels = [var_label(s, t, m) for t in range(1, 7) for s in range(1, m + 1)]
        assert labels == list(range(1, 6 * m + 1))
        assert all(var_id(var_label(s, t, m), m) == (s, t) for s in range(1, m + 1) for t in range(1, 7))


def test_block_label_roundtrip():
    for m in (2, 3, 4):
        for k in (1, 3):
            for key in copar_block_keys(m, k):
                assert parse_block_label(key.label(m), m) == key
    assert BlockKey(1, 2, 0).label(2) == "C0^XY"
    assert BlockKey(2, 1, 1).label(2) == "C1^YX"


# --- structure --------------------------------------------------------------------------

def test_matrix_14():
    M = build_copar_structure(2, 4, 3)
    assert np.array_equal(M.structure, parse_named(MATRIX_14, 2))
    diag = [var_id(int(x), 2) for x in np.diag(M.structure)]
    assert diag == [(2, 4), (1, 4), (2, 3), (1, 3), (2, 2), (1, 2), (2, 1), (1, 1)]
    col = [var_id(int(x), 2) for x in M.structure[1:, 0]]
    assert col == [(2, 1), (2, 2), (2, 3), (1, 1), (1, 2), (1, 3), (1, 4)]


def test_matrix_16():
    M = build_copar_structure(3, 4, 3)
    assert np.array_equal(M.structure, parse_named(MATRIX_16, 3))
    diag = "".join(f"{'XYZ'[s - 1]}{t}" for s, t in (var_id(int(x), 3) for x in np.diag(M.structure)))
    assert diag == "Z4Y4X4Z3Y3X3Z2Y2X2Z1Y1X1"


def test_lags_beyond_order_are_independence():
    M = build_copar_structure(2, 100, 1, gaussian_blocks(2, 1, np.random.default_rng(0)))
    d = M.dim
    for i in range(d):
        for r in range(i + 1, d):
            key = M.keys[r, i]
            if key.lag > 1:
                assert M.copulas[r, i] is INDEPENDENCE or M.copulas[r, i].family is F.INDEPENDENCE
            else:
                assert M.copulas[r, i].family is F.GAUSSIAN


def test_order_bounds():
    with pytest.raises(DomainError):
        build_copar_structure(2, 4, 4)
    with pytest.raises(DomainError):
        build_copar_structure(2, 4, 0)
    with pytest.raises(DomainError):
        build_copar_structure(1, 4, 1)


@pytest.mark.parametrize("m,T,k,n", [(2, 4, 3, 13), (2, 4, 1, 5), (2, 4, 2, 9)])
def test_count_examples(m, T, k, n):
    assert count_copulas(m, T, k) == n


def test_count_full_model():
    for T in range(2, 51):
        assert count_copulas(2, T, T - 1) == 4 * T - 3
        assert count_copulas(2, T) == 4 * T - 3


@pytest.mark.parametrize("m", [2, 3, 4, 5])
def test_count_matches_enumeration(m):
    for T in (3, 5):
        for k in range(1, T):
            M = build_copar_structure(m, T, k)
            n = len(enumerate_blocks(M, k))
            assert n == count_copulas(m, T, k) == m * m * k + m * (m - 1) // 2
            assert len(copar_block_keys(m, k)) == n


@pytest.mark.parametrize("m,T", [(2, 2), (2, 4), (2, 9), (3, 4), (4, 3), (5, 3)])
def test_built_structures_validate(m, T):
    M = build_copar_structure(m, T)
    assert validate_rvine_matrix(M)
    assert tree_proximity_check(M.structure)


@given(st.integers(2, 4), st.integers(2, 6))
def test_built_structures_validate_property(m, T):
    assert validate_rvine_matrix(build_copar_structure(m, T))


def test_validation_examples():
    S = parse_named(MATRIX_14, 2)
    assert validate_rvine_matrix(S)
    bad = S.copy()
    bad[[1, 2], 0] = bad[[2, 1], 0]
    assert not validate_rvine_matrix(bad)
    assert not tree_proximity_check(bad)
    assert validate_rvine_matrix(np.array([[1]]))
    with pytest.raises(DomainError):
        validate_rvine_matrix(np.zeros((2, 3), dtype=int))


def test_validation_agrees_with_exhaustive_check_on_swaps():
    S = parse_named(MATRIX_14, 2)
    d = S.shape[0]
    for c in range(d):
        for r1, r2 in itertools.combinations(range(c + 1, d), 2):
            P = S.copy()
            P[[r1, r2], c] = P[[r2, r1], c]
            assert validate_rvine_matrix(P) == tree_proximity_check(P)


def test_text_roundtrip():
    M = build_copar_structure(2, 3, 2, gaussian_blocks(2, 2, np.random.default_rng(1)))
    back = RVineMatrix.from_text(M.to_text())
    assert back == M


# --- density ------------------------------------------------------------------------------

def test_independence_density_is_zero(rng):
    M = build_copar_structure(2, 4)
    assert np.allclose(rvine_logdensity(M, rng.random((50, 8))), 0.0)


def test_d2_base_case(rng):
    for pc in (PairCopula(F.CLAYTON, (2.0,)), PairCopula(F.STUDENT_T, (0.4, 5.0)), PairCopula(F.SURVIVAL_GUMBEL, (1.7,))):
        cop = np.empty((2, 2), dtype=object)
        cop[1, 0] = pc
        M = RVineMatrix([[2, 0], [1, 1]], cop)
        u = rng.random((100, 2))
        assert np.allclose(rvine_logdensity(M, u), copula_logpdf(pc, u[:, 1], u[:, 0]), atol=1e-12)
        assert np.allclose(rvine_logdensity(M, u), copula_logpdf(pc, u[:, 0], u[:, 1]), atol=1e-12)


def test_degenerate_d1():
    M = RVineMatrix([[1]], None)
    assert rvine_logdensity(M, [0.3]) == 0.0
    assert rvine_sample(M, 5, 0).shape == (5, 1)


def _gaussian_copar(m, T, seed, lo=-0.7, hi=0.9):
    rng = np.random.default_rng(seed)
    return build_copar_structure(m, T, T - 1, gaussian_blocks(m, T - 1, rng, lo, hi))


@pytest.mark.parametrize("m,T", [(2, 2), (2, 3), (3, 2), (2, 4), (4, 2)])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gaussian_oracle_on_vine_draws(m, T, seed):
    M = _gaussian_copar(m, T, seed)
    R = gaussian_vine_correlation(vine_edges_with_rho(M), M.dim)
    assert np.all(np.linalg.eigvalsh(R) > 0)
    u = rvine_sample(M, 200, seed + 100)
    got = rvine_logdensity(M, u)
    want = gaussian_copula_logdensity(R, u)
    # exp(got) vs exp(want) within 1e-6 relative
    assert np.max(np.abs(np.expm1(got - want))) < 1e-6


@pytest.mark.parametrize("m,T", [(2, 2), (2, 3), (2, 4)])
def test_gaussian_oracle_on_uniform_cube(m, T):
    M = _gaussian_copar(m, T, 7, -0.5, 0.5)
    R = gaussian_vine_correlation(vine_edges_with_rho(M), M.dim)
    u = np.random.default_rng(3).uniform(0.001, 0.999, (500, M.dim))
    got = rvine_logdensity(M, u)
    want = gaussian_copula_logdensity(R, u)
    assert np.max(np.abs(np.expm1(got - want))) < 1e-6


def test_vine_draws_have_gaussian_correlation():
    M = _gaussian_copar(2, 2, 4)
    R = gaussian_vine_correlation(vine_edges_with_rho(M), 4)
    z = stats.norm.ppf(rvine_sample(M, 100_000, 5))
    assert np.allclose(np.corrcoef(z.T), R, atol=0.02)


def test_importance_identity():
    blocks = {
        BlockKey(1, 1, 1): PairCopula(F.CLAYTON, tau_to_params(F.CLAYTON, 0.3)),
        BlockKey(2, 2, 1): PairCopula(F.GAUSSIAN, tau_to_params(F.GAUSSIAN, 0.3)),
        BlockKey(1, 2, 0): PairCopula(F.FRANK, tau_to_params(F.FRANK, 0.3)),
        BlockKey(1, 2, 1): PairCopula(F.GUMBEL, tau_to_params(F.GUMBEL, 0.2)),
        BlockKey(2, 1, 1): PairCopula(F.STUDENT_T, tau_to_params(F.STUDENT_T, -0.2, 8.0)),
    }
    M = build_copar_structure(2, 2, 1, blocks)
    u = rvine_sample(M, 100_000, 11)
    w = np.exp(-rvine_logdensity(M, u))
    se = w.std(ddof=1) / np.sqrt(w.size)
    assert abs(w.mean() - 1.0) < 4 * se


# --- sampling -----------------------------------------------------------------------------

def test_sampling_deterministic():
    M = _gaussian_copar(2, 3, 0)
    assert np.array_equal(rvine_sample(M, 100, 42), rvine_sample(M, 100, 42))
    assert not np.array_equal(rvine_sample(M, 100, 42), rvine_sample(M, 100, 43))


def test_sampling_independence():
    u = rvine_sample(build_copar_structure(2, 3), 10_000, 0)
    for a, b in itertools.combinations(range(6), 2):
        assert abs(stats.kendalltau(u[:, a], u[:, b])[0]) <= 0.03


def test_sampling_d2_gaussian():
    cop = np.empty((2, 2), dtype=object)
    cop[1, 0] = PairCopula(F.GAUSSIAN, (0.26,))
    u = rvine_sample(RVineMatrix([[2, 0], [1, 1]], cop), 100_000, 1)
    assert stats.kendalltau(u[:, 0], u[:, 1])[0] == pytest.approx(0.17, abs=0.02)


def test_sampling_margins_and_first_tree_tau():
    fams = {
        BlockKey(1, 1, 1): (F.CLAYTON, 0.5),
        BlockKey(2, 2, 1): (F.SURVIVAL_JOE, 0.3),
        BlockKey(1, 2, 0): (F.STUDENT_T, -0.4),
        BlockKey(1, 2, 1): (F.GUMBEL, 0.3),
        BlockKey(2, 1, 1): (F.FRANK, -0.25),
    }
    blocks = {k: PairCopula(f, tau_to_params(f, t)) for k, (f, t) in fams.items()}
    M = build_copar_structure(2, 3, 1, blocks)
    u = rvine_sample(M, 100_000, 3)
    for j in range(M.dim):
        assert stats.kstest(u[:, j], "uniform").pvalue > 1e-3
    d = M.dim
    for i in range(d - 1):
        a, b = int(M.structure[i, i]), int(M.structure[d - 1, i])
        key = M.keys[d - 1, i]
        want = fams[key][1] if key.lag <= 1 else 0.0
        got = stats.kendalltau(u[:, a - 1], u[:, b - 1])[0]
        assert got == pytest.approx(want, abs=0.02)


# --- forecast extension -----------------------------------------------------------------

def test_extension_example_6():
    M = build_copar_structure(2, 4)
    E = extend_structure_for_forecast(M, 1)
    assert np.array_equal(E.structure, parse_named(MATRIX_EX6, 2))
    assert validate_rvine_matrix(E)


def test_extension_restricts_to_original():
    M = build_copar_structure(2, 4, 2, gaussian_blocks(2, 2, np.random.default_rng(3)))
    E = extend_structure_for_forecast(M, 2)
    d = M.dim
    sub = E.structure[-d:, -d:]
    assert np.array_equal(sub, M.structure)
    for i in range(d):
        for r in range(i + 1, d):
            assert E.copulas[E.dim - d + r, E.dim - d + i] == M.copulas[r, i]
    # lags beyond the original length are Independence
    for i in range(E.dim):
        for r in range(i + 1, E.dim):
            if E.keys[r, i].lag > 2:
                assert E.copulas[r, i].family is F.INDEPENDENCE


def test_extension_zero_and_composition():
    M = build_copar_structure(2, 4, 1, gaussian_blocks(2, 1, np.random.default_rng(5)))
    assert extend_structure_for_forecast(M, 0) == M
    two = extend_structure_for_forecast(M, 2)
    assert two == extend_structure_for_forecast(extend_structure_for_forecast(M, 1), 1)
    M3 = build_copar_structure(3, 3, 2, gaussian_blocks(3, 2, np.random.default_rng(6)))
    assert extend_structure_for_forecast(M3, 3) == extend_structure_for_forecast(
        extend_structure_for_forecast(M3, 1), 2)


def test_extension_rejects_non_copar():
    cop = np.empty((3, 3), dtype=object)
    cop[1, 0] = cop[2, 0] = cop[2, 1] = INDEPENDENCE
    with pytest.raises(DomainError):
        extend_structure_for_forecast(RVineMatrix([[3, 0, 0], [1, 2, 0], [2, 1, 1]], cop), 1)
    with pytest.raises(DomainError):
        extend_structure_for_forecast(build_copar_structure(2, 3), -1)
