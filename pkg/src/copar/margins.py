"""Unconditional marginal distributions: normal, skew-normal, hyperbolic.

Skew-normal follows Azzalini's parametrization, ``2/w phi(z) Phi(a z)`` with
``z = (x - location) / scale``.  The hyperbolic density is

    f(x) = g / (2 a d K1(d g)) exp(-a sqrt(d^2 + (x - m)^2) + b (x - m)),

with ``g = sqrt(a^2 - b^2)`` and fields shape=a, skew=b, scale=d, location=m.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import optimize, special, stats

from .errors import DomainError, FitError

EPS = 1e-10
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class MarginFamily(enum.Enum):
    NORMAL = "norm"
    SKEW_NORMAL = "snorm"
    HYPERBOLIC = "hyp"

    @property
    def code(self) -> str:
        return self.value

    @property
    def n_params(self) -> int:
        return {"norm": 2, "snorm": 3, "hyp": 4}[self.value]

    @classmethod
    def from_code(cls, code: str) -> "MarginFamily":
        for fam in cls:
            if fam.value == code:
                return fam
        raise DomainError(f"unknown margin family code {code!r}")


@dataclass(frozen=True)
class MarginModel:
    """A univariate distribution; ``skew``/``shape`` are unused where not applicable."""

    family: MarginFamily
    location: float
    scale: float
    skew: float = 0.0
    shape: float = 0.0

    def __post_init__(self) -> None:
        if isinstance(self.family, str):
            object.__setattr__(self, "family", MarginFamily.from_code(self.family))
        for name in ("location", "scale", "skew", "shape"):
            val = float(getattr(self, name))
            if not math.isfinite(val):
                raise DomainError(f"margin {name} must be finite")
            object.__setattr__(self, name, val)
        if self.scale <= 0:
            raise DomainError("margin scale must be positive")
        if self.family is MarginFamily.HYPERBOLIC:
            if self.shape <= 0:
                raise DomainError("hyperbolic shape must be positive")
            if abs(self.skew) >= self.shape:
                raise DomainError("hyperbolic requires |skew| < shape")

    @property
    def n_params(self) -> int:
        return self.family.n_params

    def to_text(self) -> str:
        fields = [f"location={self.location!r}", f"scale={self.scale!r}"]
        if self.family is not MarginFamily.NORMAL:
            fields.append(f"skew={self.skew!r}")
        if self.family is MarginFamily.HYPERBOLIC:
            fields.append(f"shape={self.shape!r}")
        return " ".join([self.family.code] + fields)

    @classmethod
    def from_text(cls, text: str) -> "MarginModel":
        parts = text.split()
        if not parts:
            raise DomainError("empty margin description")
        kw = {}
        for item in parts[1:]:
            key, _, val = item.partition("=")
            if key not in ("location", "scale", "skew", "shape"):
                raise DomainError(f"unknown margin field {key!r}")
            kw[key] = float(val)
        return cls(MarginFamily.from_code(parts[0]), **kw)


def normal(location: float = 0.0, scale: float = 1.0) -> MarginModel:
    return MarginModel(MarginFamily.NORMAL, location, scale)


# ---------------------------------------------------------------------------
# hyperbolic helpers (standardized by location and scale: y = (x - m) / d)

def _hyp_std(m: MarginModel) -> tuple[float, float]:
    # zeta-type parameters of the standardized density
    return m.shape * m.scale, m.skew * m.scale


def _hyp_logpdf_stable(y, a: float, b: float):
    """Log density of y = (x - m)/d, without the -log d Jacobian.

    Written as -a (r - 1) - (a - g) + b y so that large a does not overflow.
    """
    g = math.sqrt(a * a - b * b)
    r_minus_1 = y * y / (np.sqrt(1.0 + y * y) + 1.0)
    return (
        math.log(g) - math.log(2.0 * a) - math.log(special.kve(1, g))
        - a * r_minus_1 - b * b / (a + g) + b * y
    )


_GL_X, _GL_W = np.polynomial.legendre.leggauss(12)


@lru_cache(maxsize=64)
def _hyp_table(a: float, b: float):
    """Cumulative mass table of the standardized hyperbolic law.

    Nodes span the region where the log density is within 46 nats of the
    mode; beyond it the neglected mass is below 1e-17.
    """
    mode = b / math.sqrt(a * a - b * b)
    lf = lambda y: float(_hyp_logpdf_stable(np.asarray(y), a, b))
    peak = lf(mode)
    target = peak - 46.0

    def edge(sign: float) -> float:
        step = 1.0 / max(a, 1.0) + 1.0
        hi = mode + sign * step
        while lf(hi) > target:
            step *= 2.0
            hi = mode + sign * step
        return optimize.brentq(lambda y: lf(y) - target, mode, hi) if sign > 0 else optimize.brentq(
            lambda y: lf(y) - target, hi, mode
        )

    lo, hi = edge(-1.0), edge(1.0)
    n = 600
    nodes = np.linspace(lo, hi, n + 1)
    left, right = nodes[:-1, None], nodes[1:, None]
    pts = 0.5 * (right - left) * _GL_X + 0.5 * (right + left)
    mass = (np.exp(_hyp_logpdf_stable(pts, a, b)) @ _GL_W) * 0.5 * (nodes[1] - nodes[0])
    cum = np.concatenate([[0.0], np.cumsum(mass)])
    return nodes, cum


def _hyp_cdf_std(y, a: float, b: float):
    nodes, cum = _hyp_table(a, b)
    total = cum[-1]
    y = np.asarray(y, float)
    yc = np.clip(y, nodes[0], nodes[-1])
    k = np.clip(np.searchsorted(nodes, yc, side="right") - 1, 0, nodes.size - 2)
    left = nodes[k]
    half = 0.5 * (yc - left)
    pts = half[..., None] * _GL_X + (0.5 * (yc + left))[..., None]
    part = (np.exp(_hyp_logpdf_stable(pts, a, b)) @ _GL_W) * half
    out = (cum[k] + part) / total
    out = np.where(y <= nodes[0], 0.0, np.where(y >= nodes[-1], 1.0, out))
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# skew-normal helpers (standardized z)

def _sn_logpdf_std(z, alpha: float):
    return math.log(2.0) - _LOG_SQRT_2PI - 0.5 * z * z + special.log_ndtr(alpha * z)


def _sn_cdf_std(z, alpha: float):
    return np.clip(special.ndtr(z) - 2.0 * special.owens_t(z, alpha), 0.0, 1.0)


# ---------------------------------------------------------------------------
# public operations

def margin_logpdf(m: MarginModel, x):
    x_arr = np.asarray(x, dtype=float)
    if m.family is MarginFamily.HYPERBOLIC:
        a, b = _hyp_std(m)
        out = _hyp_logpdf_stable((x_arr - m.location) / m.scale, a, b) - math.log(m.scale)
    else:
        z = (x_arr - m.location) / m.scale
        if m.family is MarginFamily.NORMAL:
            out = -_LOG_SQRT_2PI - 0.5 * z * z - math.log(m.scale)
        else:
            out = _sn_logpdf_std(z, m.skew) - math.log(m.scale)
    return float(out) if np.ndim(x) == 0 else out


def margin_pdf(m: MarginModel, x):
    """Density of the margin."""
    return np.exp(margin_logpdf(m, x)) if np.ndim(x) else math.exp(margin_logpdf(m, x))


def margin_cdf(m: MarginModel, x):
    """Distribution function of the margin."""
    x_arr = np.asarray(x, dtype=float)
    if m.family is MarginFamily.HYPERBOLIC:
        a, b = _hyp_std(m)
        out = _hyp_cdf_std((x_arr - m.location) / m.scale, a, b)
    else:
        z = (x_arr - m.location) / m.scale
        out = special.ndtr(z) if m.family is MarginFamily.NORMAL else _sn_cdf_std(z, m.skew)
    return float(out) if np.ndim(x) == 0 else np.asarray(out)


def _invert(cdf, logpdf, p, lo, hi):
    """Vectorized safeguarded Newton on a bracketing interval [lo, hi]."""
    p = np.asarray(p, float)
    lo = np.broadcast_to(np.asarray(lo, float), p.shape).copy()
    hi = np.broadcast_to(np.asarray(hi, float), p.shape).copy()
    x = 0.5 * (lo + hi)
    fprev = np.full(p.shape, np.inf)
    for _ in range(200):
        f = cdf(x) - p
        lo = np.where(f < 0, x, lo)
        hi = np.where(f > 0, x, hi)
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            xn = x - f / np.exp(logpdf(x))
        bad = ~np.isfinite(xn) | (xn <= lo) | (xn >= hi) | (np.abs(f) > 0.5 * fprev)
        xn = np.where(bad, 0.5 * (lo + hi), xn)
        fprev = np.abs(f)
        # stop on step size, not residual: in thin tails a small residual
        # still leaves x far off
        done = (f == 0) | (np.abs(xn - x) <= 1e-14 * np.maximum(1.0, np.abs(x))) | (
            hi - lo <= 1e-14 * np.maximum(1.0, np.abs(x))
        )
        x = np.where(f == 0, x, xn)
        if done.all():
            break
    return x


def margin_quantile(m: MarginModel, p):
    """Quantile function; p must lie strictly inside (0, 1)."""
    p_arr = np.asarray(p, dtype=float)
    if np.any(~(p_arr > 0.0)) or np.any(~(p_arr < 1.0)):
        raise DomainError("quantile probability must lie strictly inside (0, 1)")
    if m.family is MarginFamily.NORMAL:
        out = m.location + m.scale * special.ndtri(p_arr)
    elif m.family is MarginFamily.SKEW_NORMAL:
        alpha = m.skew
        if alpha >= 0:
            lo, hi = special.ndtri(p_arr), special.ndtri(0.5 * (1.0 + p_arr))
        else:
            lo, hi = -special.ndtri(1.0 - 0.5 * p_arr), special.ndtri(p_arr)
        z = _invert(lambda z: _sn_cdf_std(z, alpha), lambda z: _sn_logpdf_std(z, alpha),
                    p_arr, lo - 1e-9, hi + 1e-9)
        out = m.location + m.scale * z
    else:
        a, b = _hyp_std(m)
        nodes, cum = _hyp_table(a, b)
        cdf_nodes = cum / cum[-1]
        k = np.clip(np.searchsorted(cdf_nodes, p_arr, side="right") - 1, 0, nodes.size - 2)
        y = _invert(lambda y: _hyp_cdf_std(y, a, b), lambda y: _hyp_logpdf_stable(y, a, b),
                    p_arr, nodes[k], nodes[k + 1])
        out = m.location + m.scale * y
    return float(out) if np.ndim(p) == 0 else out


def pit_transform(m: MarginModel, data):
    """Probability integral transform, clamped to [EPS, 1 - EPS]."""
    u = np.clip(margin_cdf(m, np.asarray(data, float)), EPS, 1.0 - EPS)
    return float(u) if np.ndim(data) == 0 else u


def margin_loglik(m: MarginModel, data) -> float:
    return float(np.sum(margin_logpdf(m, np.asarray(data, float))))


def margin_mean(m: MarginModel) -> float:
    """Mean of the margin (used for reporting and tests)."""
    if m.family is MarginFamily.NORMAL:
        return m.location
    if m.family is MarginFamily.SKEW_NORMAL:
        d = m.skew / math.sqrt(1.0 + m.skew ** 2)
        return m.location + m.scale * d * math.sqrt(2.0 / math.pi)
    a, b = _hyp_std(m)
    g = math.sqrt(a * a - b * b)
    return m.location + m.scale * b / g * special.kve(2, g) / special.kve(1, g)


def _check_data(data) -> np.ndarray:
    x = np.asarray(data, dtype=float).ravel()
    if x.size < 20:
        raise DomainError(f"need at least 20 observations to fit a margin, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise DomainError("margin data must be finite")
    if np.std(x) <= 1e-12 * max(1.0, np.abs(x).max()):
        raise FitError("degenerate margin data (zero variance)")
    return x


def _fit_normal(x: np.ndarray) -> MarginModel:
    return normal(float(np.mean(x)), float(np.std(x)))


def _best_of(nll, starts, bounds):
    best = None
    for s in starts:
        res = optimize.minimize(nll, np.asarray(s, float), method="L-BFGS-B", bounds=bounds,
                                options={"maxiter": 1000, "ftol": 1e-14, "gtol": 1e-9})
        cand = (float(res.fun), np.asarray(res.x)) if np.isfinite(res.fun) else None
        f0 = nll(np.asarray(s, float))
        if cand is None or (np.isfinite(f0) and f0 < cand[0]):
            cand = (f0, np.asarray(s, float))
        if best is None or cand[0] < best[0]:
            best = cand
    return best


def _fit_skew_normal(x: np.ndarray) -> MarginModel:
    mu0, sd0 = float(np.mean(x)), float(np.std(x))
    xs = (x - mu0) / sd0

    def nll(t):
        loc, lscale, alpha = t
        z = (xs - loc) / math.exp(lscale)
        val = -float(np.sum(_sn_logpdf_std(z, alpha))) + xs.size * lscale
        return val if np.isfinite(val) else 1e300

    starts = [(0.0, 0.0, 0.0)]
    g1 = float(stats.skew(x))
    if abs(g1) > 1e-8:
        # method of moments: invert the skewness of the skew-normal
        c = (2.0 * abs(g1) / (4.0 - math.pi)) ** (2.0 / 3.0)
        d2 = min(0.99, (math.pi / 2.0) * c / (1.0 + c))
        d = math.copysign(math.sqrt(d2), g1)
        alpha = d / math.sqrt(1.0 - d * d)
        scale = 1.0 / math.sqrt(1.0 - 2.0 * d * d / math.pi)
        starts.append((-scale * d * math.sqrt(2.0 / math.pi), math.log(scale), alpha))
        starts.append((-scale * d * math.sqrt(2.0 / math.pi), math.log(scale), 3.0 * alpha))
    fx, t = _best_of(nll, starts, [(-10.0, 10.0), (-10.0, 5.0), (-100.0, 100.0)])
    return MarginModel(MarginFamily.SKEW_NORMAL, mu0 + sd0 * t[0], sd0 * math.exp(t[1]), skew=float(t[2]))


def _fit_hyperbolic(x: np.ndarray) -> MarginModel:
    mu0, sd0 = float(np.median(x)), float(np.std(x))
    xs = (x - mu0) / sd0

    def unpack(t):
        loc, ldelta, lalpha, eta = t
        delta, alpha = math.exp(ldelta), math.exp(lalpha)
        return loc, delta, alpha, alpha * math.tanh(eta)

    def nll(t):
        loc, delta, alpha, beta = unpack(t)
        y = (xs - loc) / delta
        val = -float(np.sum(_hyp_logpdf_stable(y, alpha * delta, beta * delta))) + xs.size * math.log(delta)
        return val if np.isfinite(val) else 1e300

    starts = []
    for zeta in (0.5, 1.0, 2.0, 5.0, 20.0, 1e3):
        # variance of the symmetric law is d^2 K2(z) / (z K1(z)); match it to 1
        ratio = special.kve(2, zeta) / (zeta * special.kve(1, zeta))
        delta = 1.0 / math.sqrt(ratio)
        starts.append((0.0, math.log(delta), math.log(zeta / delta), 0.0))
    bounds = [(-10.0, 10.0), (-12.0, 10.0), (-10.0, 12.0), (-8.0, 8.0)]
    fx, t = _best_of(nll, starts, bounds)
    loc, delta, alpha, beta = unpack(t)
    return MarginModel(MarginFamily.HYPERBOLIC, mu0 + sd0 * loc, sd0 * delta,
                       skew=beta / sd0, shape=alpha / sd0)


def fit_margin(family: MarginFamily | str, data) -> MarginModel:
    """Maximum-likelihood fit treating the observations as identically distributed."""
    if isinstance(family, str):
        family = MarginFamily.from_code(family)
    x = _check_data(data)
    if family is MarginFamily.NORMAL:
        return _fit_normal(x)
    if family is MarginFamily.SKEW_NORMAL:
        return _fit_skew_normal(x)
    return _fit_hyperbolic(x)
