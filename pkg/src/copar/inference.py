"""Granger-causality likelihood-ratio test, forecast metrics and the VAR(k) baseline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import DomainError, FitError
from .forecast import ForecastResult
from .model import CoparModel, check_data, copar_loglik, fit_copar_sequential, refine_mle
from .pair_copulas import INDEPENDENCE
from .vine import series_names


@dataclass(frozen=True)
class GrangerResult:
    cause: str
    effect: str
    statistic: float
    df: int
    p_value: float
    loglik_full: float
    loglik_reduced: float
    p_full: int
    p_reduced: int
    full: CoparModel | None = None
    reduced: CoparModel | None = None

    @property
    def reject_at_5pct(self) -> bool:
        return self.p_value < 0.05

    def row(self) -> tuple:
        return (f"{self.cause}->{self.effect}", self.statistic, self.df, self.p_value,
                "reject" if self.reject_at_5pct else "accept")


def granger_test(
    data,
    k: int,
    direction: tuple[int, int] = (1, 0),
    families=None,
    margin_families=None,
    *,
    pretest: bool = False,
    refine: bool = True,
    names=None,
) -> GrangerResult:
    """Does series ``direction[0]`` Granger-cause series ``direction[1]``?

    The effect series becomes the pivot of a bivariate COPAR(k).  The
    reduced model drops every between-series block (independence), leaving
    two serial D-vines with the joint model's serial families, whose
    parameters are re-estimated.  Both models share the same margins, so
    the statistic 2 (l_full - l_reduced) is asymptotically chi-square with
    df equal to the number of between-series copula parameters.
    """
    X = check_data(data)
    cause, effect = (int(direction[0]), int(direction[1]))
    m = X.shape[1]
    if cause == effect or not (0 <= cause < m and 0 <= effect < m):
        raise DomainError("direction must name two distinct series indices")
    if names is None:
        names = series_names(m)
    sub = X[:, [effect, cause]]
    if margin_families is not None and not isinstance(margin_families, str) and len(margin_families) == m:
        margin_families = [margin_families[effect], margin_families[cause]]
    full, rep = fit_copar_sequential(sub, k, margin_families, families, pretest=pretest)
    if refine:
        full, rep = refine_mle(full, sub, trace=rep.trace)
    between = [key for key in full.blocks if key.first != key.second]
    reduced = full.with_blocks({key: INDEPENDENCE for key in between})
    if refine:
        reduced, rep_r = refine_mle(reduced, sub)
        ll_reduced = rep_r.loglik
    else:
        ll_reduced = copar_loglik(reduced, sub)
    for key in reduced.blocks:
        if key.first == key.second and reduced.blocks[key].family is not full.blocks[key].family:
            raise AssertionError("serial families differ between full and reduced model")
    stat = 2.0 * (rep.loglik - ll_reduced)
    df = full.n_params - reduced.n_params
    p = float(stats.chi2.sf(max(stat, 0.0), df)) if df > 0 else 1.0
    return GrangerResult(names[cause], names[effect], float(stat), int(df), p,
                         rep.loglik, ll_reduced, full.n_params, reduced.n_params, full, reduced)


# ---------------------------------------------------------------------------
# metrics

def _same_length(*arrs) -> list[np.ndarray]:
    out = [np.asarray(a, float).ravel() for a in arrs]
    n = out[0].size
    if n < 1:
        raise DomainError("need at least one value")
    if any(a.size != n for a in out):
        raise DomainError("sequences must have equal lengths")
    return out


def rmse(predictions, actuals) -> float:
    """Root mean squared error."""
    p, a = _same_length(predictions, actuals)
    return float(np.sqrt(np.mean((p - a) ** 2)))


def mean_interval_score(lower, upper, actuals, alpha: float) -> float:
    """Mean interval score of central (1 - alpha) prediction intervals."""
    if not 0.0 < alpha < 1.0:
        raise DomainError("alpha must lie in (0, 1)")
    lo, up, x = _same_length(lower, upper, actuals)
    if np.any(lo > up):
        raise DomainError("lower bound exceeds upper bound")
    pen = 2.0 / alpha
    score = (up - lo) + pen * (lo - x) * (x < lo) + pen * (x - up) * (x > up)
    return float(np.mean(score))


# ---------------------------------------------------------------------------
# VAR(k) baseline

@dataclass(frozen=True, eq=False)
class VarModel:
    intercept: np.ndarray  # (m,)
    coefs: np.ndarray  # (k, m, m): coefs[l - 1] = Phi_l
    sigma: np.ndarray  # (m, m)

    @property
    def k(self) -> int:
        return self.coefs.shape[0]

    @property
    def m(self) -> int:
        return self.intercept.shape[0]


def fit_var(data, k: int) -> VarModel:
    """Equation-by-equation least squares; Sigma = E'E / (T - k)."""
    if k < 1:
        raise DomainError("VAR order must be at least 1")
    X = check_data(data)
    T, m = X.shape
    if T <= m * k + 1:
        raise DomainError(f"need T > m k + 1 = {m * k + 1} observations")
    Z = np.column_stack([np.ones(T - k)] + [X[k - l:T - l] for l in range(1, k + 1)])
    Yt = X[k:]
    if np.linalg.matrix_rank(Z) < Z.shape[1]:
        raise FitError("singular VAR design (constant or collinear series)")
    B, *_ = np.linalg.lstsq(Z, Yt, rcond=None)
    E = Yt - Z @ B
    sigma = E.T @ E / (T - k)
    coefs = np.stack([B[1 + (l - 1) * m:1 + l * m].T for l in range(1, k + 1)])
    return VarModel(B[0].copy(), coefs, sigma)


def var_forecast(model: VarModel, history, h: int, alpha: float = 0.05, names=None) -> ForecastResult:
    """Iterated conditional means with normal intervals from the MA(infinity) MSE."""
    if h < 1:
        raise DomainError("horizon must be at least 1")
    if not 0.0 < alpha < 1.0:
        raise DomainError("alpha must lie in (0, 1)")
    X = check_data(history, model.m)
    k, m = model.k, model.m
    if X.shape[0] < k:
        raise DomainError(f"history must have at least k = {k} time points")
    path = list(X[-k:])
    means = []
    for _ in range(h):
        nxt = model.intercept + sum(model.coefs[l - 1] @ path[-l] for l in range(1, k + 1))
        path.append(nxt)
        means.append(nxt)
    psi = [np.eye(m)]
    for i in range(1, h):
        psi.append(sum(model.coefs[l - 1] @ psi[i - l] for l in range(1, min(i, k) + 1)))
    mse = np.cumsum([p @ model.sigma @ p.T for p in psi], axis=0)
    sd = np.sqrt(np.stack([np.diag(s) for s in mse]))  # (h, m)
    z = stats.norm.ppf(1.0 - alpha / 2.0)
    point = np.array(means).T
    if names is None:
        names = series_names(m)
    return ForecastResult(tuple(range(m)), tuple(names), point, point - z * sd.T, point + z * sd.T,
                          alpha, 0, None, "var")
