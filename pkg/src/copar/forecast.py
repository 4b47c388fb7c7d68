"""Monte Carlo forecasting by conditional inverse sampling through the COPAR vine.

Series indices in this module are 0-based positions in pivot order; series
0 is the pivot.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _engine
from .errors import DomainError
from .margins import pit_transform
from .model import CoparModel, check_data


class Mode(enum.Enum):
    UNCONDITIONAL = "unconditional"
    JOINT = "joint"
    CONDITIONAL = "conditional"

    @classmethod
    def parse(cls, value: "Mode | str") -> "Mode":
        if isinstance(value, Mode):
            return value
        try:
            return cls(value.lower())
        except ValueError:
            raise DomainError(f"unknown forecast mode {value!r}") from None


@dataclass(frozen=True, eq=False)
class ForecastRequest:
    """What to forecast.

    ``conditioning`` holds the observed future pivot values (data scale, one
    per horizon step) and is required in conditional mode.  ``series``
    selects the reported series; by default the pivot in unconditional mode,
    all series in joint mode, and the non-pivot series in conditional mode.
    """

    model: CoparModel
    history: np.ndarray
    horizon: int = 1
    n_samples: int = 10_000
    alpha: float = 0.05
    mode: Mode | str = Mode.JOINT
    conditioning: Sequence[float] | None = None
    series: Sequence[int] | None = None
    keep_samples: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", Mode.parse(self.mode))
        object.__setattr__(self, "history", check_data(self.history, self.model.m))
        if self.horizon < 1:
            raise DomainError("horizon must be at least 1")
        if self.n_samples < 100:
            raise DomainError("n_samples must be at least 100")
        if not 0.0 < self.alpha < 1.0:
            raise DomainError("alpha must lie in (0, 1)")
        m = self.model.m
        if self.mode is Mode.CONDITIONAL:
            if self.conditioning is None:
                raise DomainError("conditional mode needs the future pivot values")
            cond = np.asarray(self.conditioning, float).ravel()
            if cond.size != self.horizon or not np.all(np.isfinite(cond)):
                raise DomainError(f"conditional mode needs exactly {self.horizon} finite pivot values")
            object.__setattr__(self, "conditioning", cond)
        elif self.conditioning is not None:
            raise DomainError("conditioning values are only used in conditional mode")
        if self.series is None:
            default = {Mode.UNCONDITIONAL: (0,), Mode.JOINT: tuple(range(m)),
                       Mode.CONDITIONAL: tuple(range(1, m))}
            object.__setattr__(self, "series", default[self.mode])
        else:
            sel = tuple(int(s) for s in self.series)
            if not sel or any(not 0 <= s < m for s in sel):
                raise DomainError(f"series indices must lie in 0..{m - 1}")
            if self.mode is Mode.CONDITIONAL and 0 in sel:
                raise DomainError("the pivot series cannot be forecast conditionally on itself")
            object.__setattr__(self, "series", sel)


@dataclass(frozen=True, eq=False)
class ForecastResult:
    """Per series (rows of ``series``) and horizon step (columns): summaries."""

    series: tuple[int, ...]
    names: tuple[str, ...]
    point: np.ndarray  # (len(series), h)
    lower: np.ndarray
    upper: np.ndarray
    alpha: float
    n_samples: int
    seed: int | None
    mode: str
    samples: np.ndarray | None = field(default=None, repr=False)  # (n, h, len(series))

    @property
    def horizon(self) -> int:
        return self.point.shape[1]

    def rows(self):
        for i, s in enumerate(self.series):
            for step in range(self.horizon):
                yield (self.names[i], step + 1, float(self.point[i, step]),
                       float(self.lower[i, step]), float(self.upper[i, step]))

    def to_table(self, sep: str = ",") -> str:
        head = sep.join(["series", "horizon", "point", "lower", "upper", "alpha", "n_samples", "seed"])
        out = [head]
        for name, step, p, lo, up in self.rows():
            out.append(sep.join([name, str(step), repr(p), repr(lo), repr(up), repr(self.alpha),
                                 str(self.n_samples), str(self.seed)]))
        return "\n".join(out) + "\n"

    def fan_data(self, probs: Sequence[float] = (0.025, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.975)):
        """Rows (series, horizon, quantile, value) for fan charts; needs samples."""
        if self.samples is None:
            raise DomainError("fan data needs retained samples (keep_samples=True)")
        q = np.quantile(self.samples, probs, axis=0)  # (len(probs), h, ns)
        rows = []
        for i, name in enumerate(self.names):
            for step in range(self.horizon):
                for pi, p in enumerate(probs):
                    rows.append((name, step + 1, float(p), float(q[pi, step, i])))
        return rows


def path_uniforms(seed: int, n: int, h: int, m: int) -> np.ndarray:
    """Uniforms (n, h, m): path p uses its own generator seeded with seed + p.

    Every path draws one uniform per step and series in pivot order (also
    for series that end up conditioned on), so a path's draws do not depend
    on the mode, n or the other paths.
    """
    return np.stack([np.random.default_rng(seed + p).random((h, m)) for p in range(n)])


def sample_paths_u(model: CoparModel, U_hist: np.ndarray, W: np.ndarray,
                   fixed_pivot_u: np.ndarray | None = None) -> np.ndarray:
    """Copula-scale forecast paths (n, h, m) from copula-scale history.

    ``fixed_pivot_u`` (h,) or (n, h) replaces sampling of the pivot.
    """
    W = np.asarray(W, float)
    if W.ndim != 3 or W.shape[2] != model.m:
        raise DomainError(f"uniforms must have shape (n, h, {model.m})")
    n, h, _ = W.shape
    sched = model.schedule
    state = _engine.StepState.from_history(sched, np.asarray(U_hist, float), model.blocks, n)
    fixed = None
    if fixed_pivot_u is not None:
        f = np.broadcast_to(np.asarray(fixed_pivot_u, float), (n, h))
        fixed = {1: f}
    return _engine.simulate_steps(sched, model.blocks, state, W, fixed)


def sample_paths(model: CoparModel, history, W: np.ndarray, conditioning=None) -> np.ndarray:
    """Data-scale forecast paths (n, h, m) given data-scale history and uniforms."""
    U_hist = model.pit(history)
    fixed = None
    if conditioning is not None:
        fixed = pit_transform(model.margins[0], np.asarray(conditioning, float).ravel())
    U = sample_paths_u(model, U_hist, W, fixed)
    X = model.quantile(U)
    if conditioning is not None:
        X[:, :, 0] = np.asarray(conditioning, float).ravel()
    return X


def forecast(req: ForecastRequest, seed: int = 0) -> ForecastResult:
    """Point forecasts (sample means) and (alpha/2, 1 - alpha/2) sample-quantile intervals."""
    model = req.model
    W = path_uniforms(seed, req.n_samples, req.horizon, model.m)
    cond = req.conditioning if req.mode is Mode.CONDITIONAL else None
    X = sample_paths(model, req.history, W, cond)
    sel = list(req.series)
    S = X[:, :, sel]  # (n, h, ns)
    point = S.mean(axis=0).T
    lower = np.quantile(S, req.alpha / 2.0, axis=0).T
    upper = np.quantile(S, 1.0 - req.alpha / 2.0, axis=0).T
    return ForecastResult(
        tuple(sel),
        tuple(model.names[s] for s in sel),
        point, lower, upper,
        req.alpha, req.n_samples, seed, req.mode.value,
        S if req.keep_samples else None,
    )


def conditional_next_cdf(model: CoparModel, history, target: int,
                         partial: Sequence[float] = ()) -> Callable[[np.ndarray], np.ndarray]:
    """u -> F(U_{T+1, target} <= u | history, current values of earlier series).

    ``partial`` holds the copula-scale (PIT) values of series 0..target-1 at
    time T+1.  The returned function acts on the copula scale.
    """
    m = model.m
    if not 0 <= target < m:
        raise DomainError(f"target must lie in 0..{m - 1}")
    partial = np.asarray(partial, float).ravel()
    if partial.size != target:
        raise DomainError(f"series {target} needs exactly {target} current values of earlier series")
    if partial.size and (np.any(partial <= 0) or np.any(partial >= 1)):
        raise DomainError("current values must lie in (0, 1)")
    X = check_data(history, m)
    if X.shape[0] < model.k:
        raise DomainError(f"history must have at least k = {model.k} time points")
    U_hist = model.pit(X)
    sched = model.schedule
    base = _engine.StepState.from_history(sched, U_hist, model.blocks, 1)
    cur = base.new_slice()
    for j in range(target):
        cur["raw"][:, j] = partial[j]
        base.column_forward(j + 1, partial[j:j + 1], model.blocks, cur)

    def cdf(u):
        u = np.asarray(u, float)
        flat = u.ravel()
        st = _engine.StepState(sched, flat.size, base.t, [
            {"raw": np.broadcast_to(sl["raw"][:1], (flat.size, m)),
             "dir": {key: np.broadcast_to(v[:1], flat.shape) for key, v in sl["dir"].items()},
             "ind": {key: np.broadcast_to(v[:1], flat.shape) for key, v in sl["ind"].items()}}
            for sl in base.slices])
        c = {"raw": np.broadcast_to(cur["raw"][:1], (flat.size, m)).copy(),
             "dir": {key: np.broadcast_to(v[:1], flat.shape) for key, v in cur["dir"].items()},
             "ind": {key: np.broadcast_to(v[:1], flat.shape) for key, v in cur["ind"].items()}}
        out = st.column_forward(target + 1, flat, model.blocks, c)
        return out.reshape(u.shape) if u.ndim else float(out[0])

    return cdf
