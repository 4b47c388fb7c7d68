"""Acceptance criteria 1-11, each printing one PASS/FAIL line."""

import subprocess
import sys
import time

import numpy as np
import pytest
from scipy import stats

from copar import cli
from copar.forecast import ForecastRequest, forecast
from copar.inference import granger_test, mean_interval_score, rmse
from copar.model import (
    CoparModel,
    fit_copar_sequential,
    gaussian_model,
    refine_mle,
    select_order,
    simulate_copar,
)
from copar.pair_copulas import (
    CopulaFamily,
    PairCopula,
    copula_cdf,
    copula_pdf,
    hfunc,
    hfunc_inverse,
    kendall_tau,
    tau_to_params,
)
from copar.vine import (
    build_copar_structure,
    copar_block_keys,
    count_copulas,
    enumerate_blocks,
    extend_structure_for_forecast,
    rvine_logdensity,
    rvine_sample,
)

from conftest import ALL_SETTINGS, grid20
from oracles import gaussian_conditional, gaussian_copula_logdensity, gaussian_vine_correlation, vine_edges_with_rho
from test_vine import MATRIX_14, MATRIX_16, MATRIX_EX6, parse_named

F = CopulaFamily


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} - {detail}")
        assert ok, detail

    return emit


def test_criterion_01_structure_constants(report):
    t0 = time.perf_counter()
    ok = [count_copulas(2, 4, 3) == 13, count_copulas(2, 4, 1) == 5, count_copulas(2, 4, 2) == 9]
    for m in range(2, 6):
        for k in range(1, 11):
            n = len(enumerate_blocks(build_copar_structure(m, k + 1, k), k))
            ok.append(n == count_copulas(m, k + 1, k) == m * m * k + m * (m - 1) // 2)
            if m == 2:
                ok.append(n == 4 * k + 1)
    dt = time.perf_counter() - t0
    report(1, all(ok) and dt < 1.0, f"{sum(ok)}/{len(ok)} counts match, {dt:.2f}s")


def test_criterion_02_golden_matrices(report):
    t0 = time.perf_counter()
    m14 = np.array_equal(build_copar_structure(2, 4).structure, parse_named(MATRIX_14, 2))
    m16 = np.array_equal(build_copar_structure(3, 4).structure, parse_named(MATRIX_16, 3))
    ex6 = np.array_equal(extend_structure_for_forecast(build_copar_structure(2, 4), 1).structure,
                         parse_named(MATRIX_EX6, 2))
    dt = time.perf_counter() - t0
    report(2, m14 and m16 and ex6 and dt < 1.0, f"(14)={m14} (16)={m16} Example6={ex6}, {dt:.2f}s")


def _gaussian_vine(m, T, seed, lo, hi):
    rng = np.random.default_rng(seed)
    blocks = {key: PairCopula(F.GAUSSIAN, (float(rng.uniform(lo, hi)),)) for key in copar_block_keys(m, T - 1)}
    return build_copar_structure(m, T, T - 1, blocks)


def test_criterion_03_gaussian_oracle(report):
    t0 = time.perf_counter()
    worst = {}
    for d, (m, T) in {4: (2, 2), 6: (2, 3), 8: (2, 4)}.items():
        # route a: uniform points in the cube, moderate dependence
        M = _gaussian_vine(m, T, d, -0.5, 0.5)
        R = gaussian_vine_correlation(vine_edges_with_rho(M), d)
        u = np.random.default_rng(d).random((100, d))
        ea = np.max(np.abs(np.expm1(rvine_logdensity(M, u) - gaussian_copula_logdensity(R, u))))
        # route b: points drawn from the vine, strong dependence
        M = _gaussian_vine(m, T, d + 1, -0.7, 0.9)
        R = gaussian_vine_correlation(vine_edges_with_rho(M), d)
        u = rvine_sample(M, 100, d)
        eb = np.max(np.abs(np.expm1(rvine_logdensity(M, u) - gaussian_copula_logdensity(R, u))))
        worst[d] = max(ea, eb)
    dt = time.perf_counter() - t0
    ok = all(v < 1e-6 for v in worst.values()) and dt < 10
    report(3, ok, "max rel err " + ", ".join(f"d={d}: {v:.1e}" for d, v in worst.items()) + f", {dt:.2f}s")


def test_criterion_04_hfunction_suite(report):
    t0 = time.perf_counter()
    U, V = grid20()
    e = 1e-6
    fd_err = p_err = u_err = 0.0
    u_bad = []
    for pc in ALL_SETTINGS:
        h = hfunc(pc, U, V)
        fd = (copula_cdf(pc, U, V + e) - copula_cdf(pc, U, V - e)) / (2 * e)
        fd_err = max(fd_err, np.max(np.abs(fd - h)))
        p_err = max(p_err, np.max(np.abs(hfunc(pc, hfunc_inverse(pc, U, V), V) - U)))
        err = np.abs(hfunc_inverse(pc, h, V) - U)
        u_err = max(u_err, err.max())
        u_bad += [(str(pc), U[i], V[i], err[i], copula_pdf(pc, U[i], V[i])) for i in np.where(err > 1e-8)[0]]
    dt = time.perf_counter() - t0
    ok = fd_err < 1e-5 and p_err < 1e-8 and u_err < 1e-8 and dt < 30
    detail = (f"FD max {fd_err:.1e}; h(hinv(p)) max {p_err:.1e}; hinv(h(u)) max {u_err:.1e} "
              f"({len(u_bad)} of {U.size * len(ALL_SETTINGS)} points over 1e-8"
              + "".join(f"; {s} at u={u:.3f} v={v:.3f} err {er:.1e} density {c:.1e}" for s, u, v, er, c in u_bad)
              + f"), {dt:.1f}s")
    report(4, ok, detail)


def test_criterion_05_kendall_tau_fixtures(report):
    got = [kendall_tau(PairCopula(F.GAUSSIAN, (0.26,))), kendall_tau(PairCopula(F.FRANK, (15.6,))),
           kendall_tau(PairCopula(F.GUMBEL, (1.86,)))]
    ok = [round(g, 2) for g in got] == [0.17, 0.77, 0.46]
    report(5, ok, "taus " + ", ".join(f"{g:.4f}" for g in got))


RECOVERY_TAUS = {"C1^X": 0.5, "C0^XY": 0.4, "C1^XY": 0.3, "C1^YX": 0.2, "C1^Y": 0.3}


def test_criterion_06_parameter_recovery(report):
    t0 = time.perf_counter()
    truth = gaussian_model(2, 1, RECOVERY_TAUS)
    good, ascent = 0, True
    for seed in range(20):
        x = simulate_copar(truth, 1000, 6000 + seed)
        model, rep = fit_copar_sequential(x, 1, ["norm", "norm"])
        taus = model.taus()
        good += all(abs(taus[lab] - tau) <= 0.05 for lab, tau in RECOVERY_TAUS.items())
        _, rep2 = refine_mle(model, x)
        ascent &= rep2.loglik >= rep.loglik - 1e-9
    dt = time.perf_counter() - t0
    report(6, good >= 18 and ascent and dt < 300, f"{good}/20 runs within 0.05, ascent={ascent}, {dt:.0f}s")


def test_criterion_07_granger_size_power(report):
    t0 = time.perf_counter()
    null = gaussian_model(2, 1, {"C1^X": 0.4, "C1^Y": 0.3})
    size = np.mean([granger_test(simulate_copar(null, 500, 7000 + s), 1, (1, 0), families=["N"]).reject_at_5pct
                    for s in range(200)])
    alt = gaussian_model(2, 1, {"C1^X": 0.4, "C1^Y": 0.3, "C1^YX": 0.4})
    power = np.mean([granger_test(simulate_copar(alt, 500, 8000 + s), 1, (1, 0), families=["N"]).reject_at_5pct
                     for s in range(50)])
    dt = time.perf_counter() - t0
    ok = abs(size - 0.05) <= 0.02 + 1e-12 and power >= 0.95 and dt < 600
    report(7, ok, f"size {size:.3f} (200 reps), power {power:.2f} (50 reps), {dt:.0f}s")


def test_criterion_08_forecast_calibration(report):
    t0 = time.perf_counter()
    # coverage: bundled mixed-family model with skewed margin, 500 histories
    model, _ = CoparModel.from_text(cli.bundled("example_model.txt").read_text())
    hits = np.zeros(2)
    for rep in range(500):
        path = simulate_copar(model, 41, 9000 + rep)
        res = forecast(ForecastRequest(model, path[:40], n_samples=2000), seed=rep)
        hits += (res.lower[:, 0] <= path[40]) & (path[40] <= res.upper[:, 0])
    cover = hits / 500
    # Gaussian conditional oracle at n_samples = 1e4
    g = gaussian_model(2, 1, {"C1^X": 0.5, "C1^Y": 0.3, "C0^XY": 0.4, "C1^XY": 0.2, "C1^YX": 0.3})
    hist = simulate_copar(g, 30, 1)
    T = hist.shape[0]
    R = gaussian_vine_correlation(vine_edges_with_rho(g.to_rvine(T + 1)), 2 * (T + 1))
    z = np.concatenate([hist.reshape(-1), [0.0, 0.0]])
    n = 10_000
    checks = []
    res = forecast(ForecastRequest(g, hist, n_samples=n, mode="unconditional"), seed=2)
    checks.append((res, 0, *gaussian_conditional(R, z, 2 * T, list(range(2 * T)))))
    res = forecast(ForecastRequest(g, hist, n_samples=n, mode="joint"), seed=3)
    checks.append((res, 1, *gaussian_conditional(R, z, 2 * T + 1, list(range(2 * T)))))
    z[2 * T] = 0.8
    res = forecast(ForecastRequest(g, hist, n_samples=n, mode="conditional", conditioning=[0.8]), seed=4)
    checks.append((res, 0, *gaussian_conditional(R, z, 2 * T + 1, list(range(2 * T + 1)))))
    zs = []
    for res, row, mu, sd in checks:
        zs.append(abs(res.point[row, 0] - mu) / (sd / np.sqrt(n)))
        for q, got in ((0.025, res.lower[row, 0]), (0.975, res.upper[row, 0])):
            want = stats.norm.ppf(q, mu, sd)
            zs.append(abs(got - want) / (np.sqrt(q * (1 - q) / n) / stats.norm.pdf(want, mu, sd)))
    dt = time.perf_counter() - t0
    ok = all(abs(c - 0.95) <= 0.02 + 1e-12 for c in cover) and max(zs) <= 3 and dt < 600
    report(8, ok, f"coverage X {cover[0]:.3f} Y {cover[1]:.3f}; oracle max |z| {max(zs):.2f}, {dt:.0f}s")


def test_criterion_09_metric_formulas(report):
    vals = [rmse([1, 1], [0, 2]), rmse([3], [0]), rmse([1, 2], [1, 2]),
            mean_interval_score([0], [1], [0.5], 0.05), mean_interval_score([0], [1], [-0.1], 0.05),
            mean_interval_score([1], [1], [1], 0.05)]
    exact = all(abs(a - b) <= 1e-12 for a, b in zip(vals, [1.0, 3.0, 0.0, 1.0, 5.0, 0.0]))
    x = np.random.default_rng(0).normal(size=10_000)
    lo, up = stats.norm.ppf(0.025), stats.norm.ppf(0.975)
    best = mean_interval_score(np.full(x.size, lo), np.full(x.size, up), x, 0.05)
    optimal = all(best <= mean_interval_score(np.full(x.size, lo + a), np.full(x.size, up + b), x, 0.05)
                  for a, b in [(-0.2, 0), (0.2, 0), (0, -0.2), (0, 0.2), (-0.3, 0.3), (0.3, -0.3)])
    report(9, exact and optimal, f"fixtures exact={exact}, MIS optimal={optimal}")


def test_criterion_10_order_selection(report):
    t0 = time.perf_counter()
    truth = gaussian_model(2, 2, {"C1^X": 0.2, "C0^XY": 0.3, "C2^X": 0.4, "C2^Y": 0.4, "C2^XY": 0.4, "C2^YX": 0.4})
    picks = [select_order(simulate_copar(truth, 1000, 10_000 + s), 4, "bic").k_star for s in range(25)]
    hits = sum(k == 2 for k in picks)
    dt = time.perf_counter() - t0
    report(10, hits >= 20 and dt < 300, f"k*=2 in {hits}/25 runs, {dt:.0f}s")


def _cli(args, cwd):
    out = subprocess.run([sys.executable, "-m", "copar.cli", *args], capture_output=True, check=True, cwd=cwd)
    return out.stdout


def test_criterion_11_cli_pipeline(report, tmp_path):
    t0 = time.perf_counter()
    model = str(cli.bundled("example_model.txt"))
    fixture = str(cli.bundled("independent.csv"))
    runs = []
    for r in range(2):
        # separate directories, same relative file name, so echoed paths match
        cwd = tmp_path / f"run{r}"
        cwd.mkdir()
        outs = [_cli(["simulate", "--model", model, "--n", "300", "--seed", "5", "--out", "sim.csv"], cwd)
                + (cwd / "sim.csv").read_bytes()]
        outs.append(_cli(["fit", "--data", "sim.csv", "--margins", "norm,snorm"], cwd))
        outs.append(_cli(["granger", "--data", fixture, "--seed", "5"], cwd))
        outs.append(_cli(["evaluate", "--data", "sim.csv", "--split", "292", "--families", "N,C,F,G",
                          "--samples", "1000", "--seed", "5"], cwd))
        runs.append(outs)
    same = [a == b for a, b in zip(*runs)]
    dt = time.perf_counter() - t0
    report(11, all(same) and dt < 120, f"byte-identical simulate/fit/granger/evaluate: {same}, {dt:.0f}s")
