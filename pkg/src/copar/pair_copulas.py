"""Bivariate copula families used as building blocks of the vine.

Every family here is exchangeable, so ``h(v | u)`` is obtained from ``hfunc``
by swapping arguments.  All probability inputs are clamped to
``[EPS, 1 - EPS]`` before densities and h-functions are evaluated.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import integrate, optimize, special, stats

from .errors import DomainError, FitError, NumericalError

EPS = 1e-10
FRANK_ZERO = 1e-5
RHO_MAX = 0.9999
CLAYTON_MIN = 1e-4


class CopulaFamily(enum.Enum):
    """Copula family tags; values are the serialization codes."""

    INDEPENDENCE = "I"
    GAUSSIAN = "N"
    STUDENT_T = "t"
    CLAYTON = "C"
    GUMBEL = "G"
    FRANK = "F"
    JOE = "J"
    SURVIVAL_CLAYTON = "SC"
    SURVIVAL_GUMBEL = "SG"
    SURVIVAL_JOE = "SJ"

    @property
    def code(self) -> str:
        return self.value

    @property
    def n_params(self) -> int:
        if self is CopulaFamily.INDEPENDENCE:
            return 0
        if self is CopulaFamily.STUDENT_T:
            return 2
        return 1

    @property
    def order(self) -> int:
        return _ENUM_ORDER[self]

    @property
    def is_survival(self) -> bool:
        return self in _SURVIVAL_BASE

    @classmethod
    def from_code(cls, code: str) -> "CopulaFamily":
        for fam in cls:
            if fam.value == code:
                return fam
        raise DomainError(f"unknown copula family code {code!r}")


_ENUM_ORDER = {fam: i for i, fam in enumerate(CopulaFamily)}
ALL_FAMILIES = tuple(CopulaFamily)
PARAMETRIC_FAMILIES = tuple(f for f in CopulaFamily if f is not CopulaFamily.INDEPENDENCE)

_SURVIVAL_BASE = {
    CopulaFamily.SURVIVAL_CLAYTON: CopulaFamily.CLAYTON,
    CopulaFamily.SURVIVAL_GUMBEL: CopulaFamily.GUMBEL,
    CopulaFamily.SURVIVAL_JOE: CopulaFamily.JOE,
}

# Closed parameter boxes used for validation: (lower, upper, lower_open, upper_open)
_DOMAIN = {
    CopulaFamily.GAUSSIAN: [(-1.0, 1.0, True, True)],
    CopulaFamily.STUDENT_T: [(-1.0, 1.0, True, True), (2.0, 30.0, False, False)],
    CopulaFamily.CLAYTON: [(0.0, 28.0, True, False)],
    CopulaFamily.GUMBEL: [(1.0, 17.0, False, False)],
    CopulaFamily.FRANK: [(-35.0, 35.0, False, False)],
    CopulaFamily.JOE: [(1.0, 17.0, False, False)],
}

# Boxes handed to the optimizer (slightly inside the open bounds).
_OPT_BOUNDS = {
    CopulaFamily.GAUSSIAN: [(-RHO_MAX, RHO_MAX)],
    CopulaFamily.STUDENT_T: [(-RHO_MAX, RHO_MAX), (2.0, 30.0)],
    CopulaFamily.CLAYTON: [(CLAYTON_MIN, 28.0)],
    CopulaFamily.GUMBEL: [(1.0, 17.0)],
    CopulaFamily.FRANK: [(-35.0, 35.0)],
    CopulaFamily.JOE: [(1.0, 17.0)],
}


def _base(family: CopulaFamily) -> CopulaFamily:
    return _SURVIVAL_BASE.get(family, family)


def family_bounds(family: CopulaFamily) -> list[tuple[float, float]]:
    """Optimizer box for the family's parameter vector."""
    return list(_OPT_BOUNDS.get(_base(family), []))


@dataclass(frozen=True)
class PairCopula:
    """A bivariate copula: family tag plus parameter vector.

    ``fallback`` marks parameters obtained by Kendall's-tau inversion after
    the likelihood optimizer failed; it does not take part in equality.
    """

    family: CopulaFamily
    params: tuple[float, ...] = ()
    fallback: bool = field(default=False, compare=False)

    def __post_init__(self) -> None:
        fam = self.family
        if isinstance(fam, str):
            fam = CopulaFamily.from_code(fam)
            object.__setattr__(self, "family", fam)
        params = tuple(float(p) for p in np.atleast_1d(np.asarray(self.params, dtype=float)))
        object.__setattr__(self, "params", params)
        if len(params) != fam.n_params:
            raise DomainError(
                f"{fam.code} copula takes {fam.n_params} parameter(s), got {len(params)}"
            )
        for p, (lo, hi, lo_open, hi_open) in zip(params, _DOMAIN.get(_base(fam), [])):
            below = p <= lo if lo_open else p < lo
            above = p >= hi if hi_open else p > hi
            if not math.isfinite(p) or below or above:
                raise DomainError(f"parameter {p!r} outside the domain of the {fam.code} copula")
        if _base(fam) is CopulaFamily.FRANK and params[0] == 0.0:
            raise DomainError("Frank copula parameter must be non-zero")

    @property
    def n_params(self) -> int:
        return self.family.n_params

    @property
    def tau(self) -> float:
        return kendall_tau(self)

    def __str__(self) -> str:
        body = ", ".join(f"{p:.4g}" for p in self.params)
        return f"{self.family.code}({body})"


INDEPENDENCE = PairCopula(CopulaFamily.INDEPENDENCE)


# ---------------------------------------------------------------------------
# family kernels: functions of clamped arrays u, v and the parameter tuple

def _clamp(x):
    return np.clip(x, EPS, 1.0 - EPS)


def _ind_cdf(u, v, p):
    return u * v


def _ind_logpdf(u, v, p):
    return np.zeros(np.broadcast(u, v).shape)


def _ind_h(u, v, p):
    return np.broadcast_to(u, np.broadcast(u, v).shape).astype(float)


def _ind_hinv(q, v, p):
    return np.broadcast_to(q, np.broadcast(q, v).shape).astype(float)


def _bvn_cdf(x, y, rho):
    """Bivariate standard normal CDF via Owen's T function."""
    s = math.sqrt(1.0 - rho * rho)
    x = np.where(x == 0.0, 1e-15, x)
    y = np.where(y == 0.0, 1e-15, y)
    ax = (y - rho * x) / (x * s)
    ay = (x - rho * y) / (y * s)
    beta = np.where(x * y < 0, 0.5, 0.0)
    out = 0.5 * special.ndtr(x) + 0.5 * special.ndtr(y) - special.owens_t(x, ax) - special.owens_t(y, ay) - beta
    return np.clip(out, 0.0, 1.0)


def _gauss_cdf(u, v, p):
    return _bvn_cdf(special.ndtri(u), special.ndtri(v), p[0])


def _gauss_logpdf(u, v, p):
    rho = p[0]
    x, y = special.ndtri(u), special.ndtri(v)
    r2 = 1.0 - rho * rho
    return -0.5 * math.log(r2) - (rho * rho * (x * x + y * y) - 2.0 * rho * x * y) / (2.0 * r2)


def _gauss_h(u, v, p):
    rho = p[0]
    return special.ndtr((special.ndtri(u) - rho * special.ndtri(v)) / math.sqrt(1.0 - rho * rho))


def _gauss_hinv(q, v, p):
    rho = p[0]
    return special.ndtr(special.ndtri(q) * math.sqrt(1.0 - rho * rho) + rho * special.ndtri(v))


def _t_logpdf(u, v, p):
    rho, nu = p
    x, y = special.stdtrit(nu, u), special.stdtrit(nu, v)
    r2 = 1.0 - rho * rho
    const = (
        special.gammaln((nu + 2.0) / 2.0)
        + special.gammaln(nu / 2.0)
        - 2.0 * special.gammaln((nu + 1.0) / 2.0)
        - 0.5 * math.log(r2)
    )
    quad = (x * x + y * y - 2.0 * rho * x * y) / (nu * r2)
    return (
        const
        - (nu + 2.0) / 2.0 * np.log1p(quad)
        + (nu + 1.0) / 2.0 * (np.log1p(x * x / nu) + np.log1p(y * y / nu))
    )


def _t_h(u, v, p):
    rho, nu = p
    x, y = special.stdtrit(nu, u), special.stdtrit(nu, v)
    scale = np.sqrt((nu + y * y) * (1.0 - rho * rho) / (nu + 1.0))
    return special.stdtr(nu + 1.0, (x - rho * y) / scale)


def _t_hinv(q, v, p):
    rho, nu = p
    y = special.stdtrit(nu, v)
    scale = np.sqrt((nu + y * y) * (1.0 - rho * rho) / (nu + 1.0))
    return special.stdtr(nu, special.stdtrit(nu + 1.0, q) * scale + rho * y)


def _t_cdf(u, v, p):
    # C(u, v) = int_{-inf}^{y_v} t_nu(y) T_{nu+1}((x - rho y) / s(y)) dy
    rho, nu = p
    u, v = np.broadcast_arrays(np.asarray(u, float), np.asarray(v, float))
    x, yv = special.stdtrit(nu, u), special.stdtrit(nu, v)
    c = math.sqrt((1.0 - rho * rho) / (nu + 1.0))
    lnorm = special.gammaln((nu + 1.0) / 2.0) - special.gammaln(nu / 2.0) - 0.5 * math.log(nu * math.pi)
    out = np.empty(u.shape)
    for idx in np.ndindex(u.shape):
        xi = float(x[idx])

        def f(y):
            dens = math.exp(lnorm - (nu + 1.0) / 2.0 * math.log1p(y * y / nu))
            return dens * special.stdtr(nu + 1.0, (xi - rho * y) / (c * math.sqrt(nu + y * y)))

        with warnings.catch_warnings():
            # at clamped boundary points the tolerance is below roundoff
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            out[idx] = integrate.quad(f, -np.inf, float(yv[idx]), epsabs=1e-15, epsrel=1e-13, limit=200)[0]
    return out


def _clayton_logA(u, v, th):
    # log(u^-th + v^-th - 1), accurate for small and large th
    return np.log1p(np.expm1(-th * np.log(u)) + np.expm1(-th * np.log(v)))


def _clayton_cdf(u, v, p):
    th = p[0]
    return np.exp(-_clayton_logA(u, v, th) / th)


def _clayton_logpdf(u, v, p):
    th = p[0]
    lu, lv = np.log(u), np.log(v)
    return math.log1p(th) - (1.0 + th) * (lu + lv) - (2.0 + 1.0 / th) * _clayton_logA(u, v, th)


def _clayton_h(u, v, p):
    th = p[0]
    return np.exp(-(th + 1.0) * np.log(v) - (1.0 + 1.0 / th) * _clayton_logA(u, v, th))


def _clayton_hinv(q, v, p):
    th = p[0]
    with np.errstate(divide="ignore"):
        L = -th * np.log(v) + np.log(np.expm1(-th / (1.0 + th) * np.log(q)))
    return np.exp(-np.logaddexp(0.0, L) / th)


def _gumbel_parts(u, v, th):
    x, y = -np.log(u), -np.log(v)
    lx, ly = np.log(x), np.log(y)
    logA = np.logaddexp(th * lx, th * ly)
    return x, y, lx, ly, logA


def _gumbel_cdf(u, v, p):
    th = p[0]
    _, _, _, _, logA = _gumbel_parts(u, v, th)
    return np.exp(-np.exp(logA / th))


def _gumbel_logpdf(u, v, p):
    th = p[0]
    x, y, lx, ly, logA = _gumbel_parts(u, v, th)
    a = np.exp(logA / th)
    return -a + x + y + (th - 1.0) * (lx + ly) + (1.0 / th - 2.0) * logA + np.log(a + th - 1.0)


def _gumbel_h(u, v, p):
    th = p[0]
    x, y, lx, ly, logA = _gumbel_parts(u, v, th)
    return np.exp(-np.exp(logA / th) + y + (th - 1.0) * ly + (1.0 / th - 1.0) * logA)


def _frank_pos_parts(u, v, th):
    eu, ev = np.exp(-th * u), np.exp(-th * v)
    # D = (1 - e^-th) - (1 - e^-th u)(1 - e^-th v), written without cancellation
    D = -eu * np.expm1(-th * v) - ev * np.expm1(-th * (1.0 - v))
    return eu, ev, D


def _frank_pos_cdf(u, v, th):
    if th < 1.0:
        return -np.log1p(np.expm1(-th * u) * np.expm1(-th * v) / math.expm1(-th)) / th
    _, _, D = _frank_pos_parts(u, v, th)
    return -(np.log(D) - math.log(-math.expm1(-th))) / th


def _frank_pos_logpdf(u, v, th):
    _, _, D = _frank_pos_parts(u, v, th)
    return math.log(th) + math.log(-math.expm1(-th)) - th * (u + v) - 2.0 * np.log(D)


def _frank_pos_h(u, v, th):
    eu, ev, D = _frank_pos_parts(u, v, th)
    return ev * (-np.expm1(-th * u)) / D


def _frank_pos_hinv(q, v, th):
    with np.errstate(divide="ignore"):
        num = np.logaddexp(np.log1p(-q) - th * v, np.log(q) - th)
        den = np.log(q + (1.0 - q) * np.exp(-th * v))
    return -(num - den) / th


# Negative Frank parameters: C(u, v; -th) = v - C(1 - u, v; th).

def _frank_cdf(u, v, p):
    th = p[0]
    if abs(th) < FRANK_ZERO:
        return _ind_cdf(u, v, p)
    if th > 0:
        return _frank_pos_cdf(u, v, th)
    return v - _frank_pos_cdf(1.0 - u, v, -th)


def _frank_logpdf(u, v, p):
    th = p[0]
    if abs(th) < FRANK_ZERO:
        return _ind_logpdf(u, v, p)
    if th > 0:
        return _frank_pos_logpdf(u, v, th)
    return _frank_pos_logpdf(1.0 - u, v, -th)


def _frank_h(u, v, p):
    th = p[0]
    if abs(th) < FRANK_ZERO:
        return _ind_h(u, v, p)
    if th > 0:
        return _frank_pos_h(u, v, th)
    return 1.0 - _frank_pos_h(1.0 - u, v, -th)


def _frank_hinv(q, v, p):
    th = p[0]
    if abs(th) < FRANK_ZERO:
        return _ind_hinv(q, v, p)
    if th > 0:
        return _frank_pos_hinv(q, v, th)
    return 1.0 - _frank_pos_hinv(1.0 - q, v, -th)


def _joe_parts(u, v, th):
    lub, lvb = np.log1p(-u), np.log1p(-v)
    a, b = np.exp(th * lub), np.exp(th * lvb)
    S = a + b * (1.0 - a)
    return lub, lvb, a, b, S


def _joe_cdf(u, v, p):
    th = p[0]
    *_, S = _joe_parts(u, v, th)
    return 1.0 - np.exp(np.log(S) / th)


def _joe_logpdf(u, v, p):
    th = p[0]
    lub, lvb, a, b, S = _joe_parts(u, v, th)
    return (1.0 / th - 2.0) * np.log(S) + (th - 1.0) * (lub + lvb) + np.log(th - 1.0 + S)


def _joe_h(u, v, p):
    th = p[0]
    lub, lvb, a, b, S = _joe_parts(u, v, th)
    return np.exp((1.0 / th - 1.0) * np.log(S) + (th - 1.0) * lvb + np.log1p(-a))


def _numeric_hinv(h: Callable, logpdf: Callable) -> Callable:
    """Safeguarded Newton/bisection inverse of a monotone h-function."""

    def hinv(q, v, p):
        q, v = np.broadcast_arrays(np.asarray(q, float), np.asarray(v, float))
        q, v = q.ravel().copy(), v.ravel().copy()
        lo = np.full(q.shape, EPS)
        hi = np.full(q.shape, 1.0 - EPS)
        x = _clamp(q.copy())
        done = np.zeros(q.shape, bool)
        fprev = np.full(q.shape, np.inf)
        for _ in range(300):
            idx = np.flatnonzero(~done)
            if idx.size == 0:
                break
            xi, vi, qi = x[idx], v[idx], q[idx]
            f = h(xi, vi, p) - qi
            lo[idx] = np.where(f < 0, xi, lo[idx])
            hi[idx] = np.where(f > 0, xi, hi[idx])
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                step = f / np.exp(logpdf(xi, vi, p))
            xn = xi - step
            li, hii = lo[idx], hi[idx]
            # bisect when Newton leaves the bracket or stalls (rtsafe rule)
            bad = ~np.isfinite(xn) | (xn <= li) | (xn >= hii) | (np.abs(f) > 0.5 * fprev[idx])
            wide = hii > 1e3 * li
            mid = np.where(wide, np.sqrt(li * hii), 0.5 * (li + hii))
            xn = np.where(bad, mid, xn)
            fprev[idx] = np.abs(f)
            conv = (np.abs(f) <= 1e-15) | (np.abs(xn - xi) <= 1e-13 * xi)
            conv |= (hii - li) <= 1e-13 * hii
            x[idx] = np.where(np.abs(f) <= 1e-15, xi, xn)
            done[idx] = conv
        if not done.all():
            raise NumericalError("inverse h-function did not converge")
        return x

    return hinv


@dataclass(frozen=True)
class _Kernel:
    cdf: Callable
    logpdf: Callable
    h: Callable
    hinv: Callable


def _survival(k: _Kernel) -> _Kernel:
    return _Kernel(
        cdf=lambda u, v, p: u + v - 1.0 + k.cdf(1.0 - u, 1.0 - v, p),
        logpdf=lambda u, v, p: k.logpdf(1.0 - u, 1.0 - v, p),
        h=lambda u, v, p: 1.0 - k.h(1.0 - u, 1.0 - v, p),
        hinv=lambda q, v, p: 1.0 - k.hinv(1.0 - q, 1.0 - v, p),
    )


_KERNELS: dict[CopulaFamily, _Kernel] = {
    CopulaFamily.INDEPENDENCE: _Kernel(_ind_cdf, _ind_logpdf, _ind_h, _ind_hinv),
    CopulaFamily.GAUSSIAN: _Kernel(_gauss_cdf, _gauss_logpdf, _gauss_h, _gauss_hinv),
    CopulaFamily.STUDENT_T: _Kernel(_t_cdf, _t_logpdf, _t_h, _t_hinv),
    CopulaFamily.CLAYTON: _Kernel(_clayton_cdf, _clayton_logpdf, _clayton_h, _clayton_hinv),
    CopulaFamily.GUMBEL: _Kernel(
        _gumbel_cdf, _gumbel_logpdf, _gumbel_h, _numeric_hinv(_gumbel_h, _gumbel_logpdf)
    ),
    CopulaFamily.FRANK: _Kernel(_frank_cdf, _frank_logpdf, _frank_h, _frank_hinv),
    CopulaFamily.JOE: _Kernel(_joe_cdf, _joe_logpdf, _joe_h, _numeric_hinv(_joe_h, _joe_logpdf)),
}
for _fam, _b in _SURVIVAL_BASE.items():
    _KERNELS[_fam] = _survival(_KERNELS[_b])


# ---------------------------------------------------------------------------
# fast internal entry points (no validation; arrays in, arrays out)

def logpdf_array(pc: PairCopula, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Log density on clamped inputs."""
    return _KERNELS[pc.family].logpdf(_clamp(u), _clamp(v), pc.params)


def h_array(pc: PairCopula, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """h(u | v) on clamped inputs, clipped to [0, 1]."""
    if pc.family is CopulaFamily.INDEPENDENCE:
        return np.asarray(u, float)
    return np.clip(_KERNELS[pc.family].h(_clamp(u), _clamp(v), pc.params), 0.0, 1.0)


def hinv_array(pc: PairCopula, q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Inverse of h(. | v) at probability q."""
    if pc.family is CopulaFamily.INDEPENDENCE:
        return np.asarray(q, float)
    q = np.asarray(q, float)
    edge = (q <= 0.0) | (q >= 1.0)
    out = _KERNELS[pc.family].hinv(np.where(edge, 0.5, q), _clamp(v), pc.params)
    out = np.clip(np.reshape(out, np.broadcast(q, v).shape), 0.0, 1.0)
    out = np.where(q <= 0.0, 0.0, np.where(q >= 1.0, 1.0, out))
    return out


# ---------------------------------------------------------------------------
# public operations

def _prob(x, name: str, open_: bool = False) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise DomainError(f"{name} must lie in [0, 1]")
    return arr


def _ret(x, *inputs):
    if all(np.ndim(i) == 0 for i in inputs):
        return float(np.asarray(x).reshape(()))
    return np.asarray(x)


def copula_cdf(pc: PairCopula, u, v):
    """Copula distribution function C(u, v)."""
    u_in, v_in = _prob(u, "u"), _prob(v, "v")
    ub, vb = np.broadcast_arrays(u_in, v_in)
    val = np.asarray(_KERNELS[pc.family].cdf(_clamp(ub), _clamp(vb), pc.params), float)
    val = np.reshape(val, ub.shape)
    val = np.clip(val, np.maximum(ub + vb - 1.0, 0.0), np.minimum(ub, vb))
    val = np.where(ub >= 1.0, vb, np.where(vb >= 1.0, ub, val))
    val = np.where((ub <= 0.0) | (vb <= 0.0), 0.0, val)
    return _ret(val, u, v)


def copula_logpdf(pc: PairCopula, u, v):
    """Log copula density (inputs clamped away from the boundary)."""
    u_in, v_in = _prob(u, "u"), _prob(v, "v")
    return _ret(logpdf_array(pc, u_in, v_in), u, v)


def copula_pdf(pc: PairCopula, u, v):
    """Copula density c(u, v)."""
    return _ret(np.exp(copula_logpdf(pc, u, v)), u, v)


def hfunc(pc: PairCopula, u, v):
    """Conditional distribution h(u | v) = dC(u, v)/dv."""
    u_in, v_in = _prob(u, "u"), _prob(v, "v")
    val = h_array(pc, u_in, v_in)
    val = np.where(u_in <= 0.0, 0.0, np.where(u_in >= 1.0, 1.0, val))
    return _ret(val, u, v)


def hfunc_inverse(pc: PairCopula, p, v):
    """Solve h(u | v) = p for u."""
    p_in, v_in = _prob(p, "p"), _prob(v, "v")
    return _ret(hinv_array(pc, p_in, v_in), p, v)


def _debye1(x: float) -> float:
    if x == 0.0:
        return 1.0
    val, _ = integrate.quad(lambda t: t / math.expm1(t) if t > 0 else 1.0, 0.0, x, epsabs=1e-14, epsrel=1e-13)
    return val / x


def _frank_tau(th: float) -> float:
    if abs(th) < FRANK_ZERO:
        return 0.0
    a = abs(th)
    tau = 1.0 - 4.0 / a * (1.0 - _debye1(a))
    return math.copysign(tau, th)


def _joe_tau(th: float) -> float:
    if th == 1.0:
        return 0.0
    if abs(th - 2.0) < 1e-6:
        # series form, valid for all th >= 1
        k = np.arange(1, 200001, dtype=float)
        return float(1.0 - 4.0 * np.sum(1.0 / (k * (th * k + 2.0) * (th * (k - 1.0) + 2.0))))
    return 1.0 + 2.0 / (2.0 - th) * (special.digamma(2.0) - special.digamma(2.0 / th + 1.0))


def kendall_tau(pc: PairCopula) -> float:
    """Population Kendall's tau of the copula."""
    fam, p = _base(pc.family), pc.params
    if fam is CopulaFamily.INDEPENDENCE:
        return 0.0
    if fam in (CopulaFamily.GAUSSIAN, CopulaFamily.STUDENT_T):
        return 2.0 / math.pi * math.asin(p[0])
    if fam is CopulaFamily.CLAYTON:
        return p[0] / (p[0] + 2.0)
    if fam is CopulaFamily.GUMBEL:
        return 1.0 - 1.0 / p[0]
    if fam is CopulaFamily.FRANK:
        return _frank_tau(p[0])
    if fam is CopulaFamily.JOE:
        return float(_joe_tau(p[0]))
    raise DomainError(f"no Kendall's tau for {pc.family}")


def tau_to_params(family: CopulaFamily, tau: float, nu: float = 8.0) -> tuple[float, ...]:
    """Invert Kendall's tau to a parameter vector, clipped into the family box.

    For the Student-t family ``nu`` fills the second parameter.
    """
    fam = _base(family)
    if fam is CopulaFamily.INDEPENDENCE:
        return ()
    bounds = _OPT_BOUNDS[fam]
    tau = float(np.clip(tau, -0.999, 0.999))
    if fam in (CopulaFamily.GAUSSIAN, CopulaFamily.STUDENT_T):
        rho = float(np.clip(math.sin(math.pi * tau / 2.0), *bounds[0]))
        return (rho,) if fam is CopulaFamily.GAUSSIAN else (rho, float(nu))
    if fam is CopulaFamily.CLAYTON:
        th = 2.0 * tau / (1.0 - tau) if tau > 0 else bounds[0][0]
    elif fam is CopulaFamily.GUMBEL:
        th = 1.0 / (1.0 - tau) if tau > 0 else 1.0
    elif fam is CopulaFamily.FRANK:
        lo_t, hi_t = _frank_tau(-35.0), _frank_tau(35.0)
        if abs(tau) < 1e-6:
            th = FRANK_ZERO
        elif tau <= lo_t:
            th = -35.0
        elif tau >= hi_t:
            th = 35.0
        else:
            g = lambda t: _frank_tau(t) - tau
            th = optimize.brentq(g, 1e-4, 35.0) if tau > 0 else optimize.brentq(g, -35.0, -1e-4)
    else:  # Joe
        hi_t = _joe_tau(17.0)
        if tau <= 0:
            th = 1.0
        elif tau >= hi_t:
            th = 17.0
        else:
            th = optimize.brentq(lambda t: _joe_tau(t) - tau, 1.0, 17.0)
    return (float(np.clip(th, *bounds[0])),)


def _pairs(pairs, min_n: int = 10) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(pairs, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise DomainError("pairs must be an (n, 2) array")
    if arr.shape[0] < min_n:
        raise DomainError(f"need at least {min_n} pairs, got {arr.shape[0]}")
    if np.any(~np.isfinite(arr)) or np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise DomainError("pairs must lie in the open unit square")
    return arr[:, 0], arr[:, 1]


def pair_loglik(pc: PairCopula, u: np.ndarray, v: np.ndarray) -> float:
    """Log-likelihood of (u, v) under the copula."""
    return float(np.sum(logpdf_array(pc, u, v)))


def empirical_tau(u, v) -> float:
    """Tie-corrected (tau-b) sample Kendall's tau; 0 for constant input."""
    tau = stats.kendalltau(u, v).statistic
    return 0.0 if not np.isfinite(tau) else float(tau)


def _fd_grad(f: Callable, x: np.ndarray, bounds) -> np.ndarray:
    g = np.empty_like(x)
    for i in range(x.size):
        step = 1e-6 * max(1.0, abs(x[i]))
        lo, hi = bounds[i]
        xp, xm = x.copy(), x.copy()
        xp[i] = min(x[i] + step, hi)
        xm[i] = max(x[i] - step, lo)
        g[i] = (f(xp) - f(xm)) / (xp[i] - xm[i])
    return g


def minimize_box(f: Callable, x0: Sequence[float], bounds) -> tuple[np.ndarray, float, bool]:
    """Bounded quasi-Newton with central finite-difference gradients.

    Returns (x, f(x), ok).  ``ok`` is False when the optimizer produced a
    non-finite value; the returned point is never worse than ``x0``.
    """
    x0 = np.asarray(x0, dtype=float)
    f0 = f(x0)
    res = optimize.minimize(
        f,
        x0,
        jac=lambda x: _fd_grad(f, x, bounds),
        method="L-BFGS-B",
        bounds=bounds,
        options={"gtol": 1e-8, "maxiter": 500, "ftol": 1e-14},
    )
    x, fx = np.asarray(res.x, float), float(res.fun)
    if not np.all(np.isfinite(x)) or not np.isfinite(fx):
        return x0, f0, False
    if fx > f0:
        return x0, f0, np.isfinite(f0)
    return x, fx, True


def _make(family: CopulaFamily, x, fallback: bool = False) -> PairCopula:
    x = [float(t) for t in x]
    if _base(family) is CopulaFamily.FRANK and x[0] == 0.0:
        x[0] = FRANK_ZERO
    return PairCopula(family, tuple(x), fallback=fallback)


_NU_GRID = (3.0, 5.0, 8.0, 12.0, 20.0, 30.0)


def fit_pair_copula(family: CopulaFamily, pairs, *, start: Sequence[float] | None = None) -> PairCopula:
    """Maximum-likelihood fit of one family.

    Starts from Kendall's-tau inversion (for Student-t, the best degrees of
    freedom on a small grid).  If the optimizer breaks down, the tau-inverted
    parameters are returned with ``fallback=True``.
    """
    u, v = _pairs(pairs)
    if isinstance(family, str):
        family = CopulaFamily.from_code(family)
    if family is CopulaFamily.INDEPENDENCE:
        return INDEPENDENCE
    bounds = family_bounds(family)
    tau = empirical_tau(u, v)

    kern = _KERNELS[family]
    uc, vc = _clamp(u), _clamp(v)

    def nll(x):
        val = -float(np.sum(kern.logpdf(uc, vc, tuple(x))))
        return val if np.isfinite(val) else 1e300

    if start is not None:
        x0 = np.clip(np.asarray(start, float), [b[0] for b in bounds], [b[1] for b in bounds])
    elif family is CopulaFamily.STUDENT_T:
        cands = [np.array(tau_to_params(family, tau, nu)) for nu in _NU_GRID]
        x0 = min(cands, key=nll)
    else:
        x0 = np.array(tau_to_params(family, tau))
    x, fx, ok = minimize_box(nll, x0, bounds)
    if not ok:
        return _make(family, tau_to_params(family, tau), fallback=True)
    return _make(family, x)


def aic(loglik: float, n_params: int) -> float:
    return -2.0 * loglik + 2.0 * n_params


@dataclass(frozen=True)
class IndependenceTest:
    statistic: float
    p_value: float
    reject: bool

    def __iter__(self):
        return iter((self.statistic, self.p_value, self.reject))


def independence_test(pairs, level: float = 0.05) -> IndependenceTest:
    """Asymptotic Kendall's-tau test of independence."""
    u, v = _pairs(pairs)
    n = u.size
    tau = empirical_tau(u, v)
    stat = abs(tau) * math.sqrt(9.0 * n * (n - 1.0) / (2.0 * (2.0 * n + 5.0)))
    p = float(min(1.0, 2.0 * stats.norm.sf(stat)))
    return IndependenceTest(stat, p, p < level)


@dataclass(frozen=True)
class Selection:
    """Outcome of a family selection: winner plus per-candidate AIC."""

    copula: PairCopula
    aic: dict
    pretest: IndependenceTest | None


def select_pair_copula_detail(
    pairs,
    candidates: Iterable[CopulaFamily],
    *,
    pretest: bool = True,
) -> Selection:
    """Like select_pair_copula but also returns the AIC table."""
    cands = [CopulaFamily.from_code(c) if isinstance(c, str) else c for c in candidates]
    if not cands:
        raise DomainError("candidate family set is empty")
    u, v = _pairs(pairs)
    test = None
    if pretest:
        test = independence_test(np.column_stack([u, v]))
        if not test.reject:
            return Selection(INDEPENDENCE, {}, test)
    scores = {}
    best = None
    for fam in sorted(set(cands), key=lambda f: f.order):
        pc = fit_pair_copula(fam, np.column_stack([u, v]))
        a = aic(pair_loglik(pc, u, v), fam.n_params)
        scores[fam.code] = a
        key = (a, fam.n_params, fam.order)
        if best is None or key < best[0]:
            best = (key, pc)
    return Selection(best[1], scores, test)


def select_pair_copula(pairs, candidates: Iterable[CopulaFamily], *, pretest: bool = True) -> PairCopula:
    """Independence pretest, then the minimum-AIC candidate family."""
    return select_pair_copula_detail(pairs, candidates, pretest=pretest).copula


def sample_pair(pc: PairCopula, n: int, seed) -> np.ndarray:
    """Draw n pairs (u, v): v uniform, u = hinv(w | v)."""
    if n < 1:
        raise DomainError("n must be at least 1")
    rng = np.random.default_rng(seed)
    w = rng.random((n, 2))
    v = w[:, 1]
    u = hinv_array(pc, w[:, 0], v)
    return np.column_stack([u, v])


def parse_families(spec: str | Iterable[str]) -> tuple[CopulaFamily, ...]:
    """Parse a comma separated list of family codes (``all`` for every family)."""
    if isinstance(spec, str):
        items = [s.strip() for s in spec.split(",") if s.strip()]
    else:
        items = list(spec)
    if items == ["all"]:
        return ALL_FAMILIES
    fams = tuple(CopulaFamily.from_code(s) if isinstance(s, str) else s for s in items)
    if not fams:
        raise DomainError("empty family list")
    return fams
