"""The COPAR(k) model: sequential selection, joint refinement, likelihood, order selection."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import _engine
from .errors import DomainError, FitError, NumericalError
from .margins import (
    MarginFamily,
    MarginModel,
    fit_margin,
    margin_loglik,
    margin_quantile,
    pit_transform,
)
from .pair_copulas import (
    INDEPENDENCE,
    PARAMETRIC_FAMILIES,
    CopulaFamily,
    PairCopula,
    family_bounds,
    kendall_tau,
    minimize_box,
    parse_families,
    select_pair_copula_detail,
)
from .vine import (
    BlockKey,
    RVineMatrix,
    build_copar_structure,
    copar_block_keys,
    parse_block_label,
    rvine_logdensity,
    series_names,
)

CRITERIA = ("aic", "bic", "hqc")


@dataclass(frozen=True)
class BlockTrace:
    """How one block was chosen during sequential estimation."""

    label: str
    family: str
    n_pairs: int
    pretest_stat: float | None = None
    pretest_p: float | None = None
    aic: tuple[tuple[str, float], ...] = ()

    def to_text(self) -> str:
        parts = ["trace", self.label, f"family={self.family}", f"n={self.n_pairs}"]
        if self.pretest_stat is not None:
            parts += [f"stat={self.pretest_stat!r}", f"p={self.pretest_p!r}"]
        if self.aic:
            parts.append("aic=" + ",".join(f"{c}:{a!r}" for c, a in self.aic))
        return " ".join(parts)

    @classmethod
    def from_text(cls, line: str) -> "BlockTrace":
        tok = line.split()
        kw: dict = {}
        for item in tok[2:]:
            key, _, val = item.partition("=")
            kw[key] = val
        aic = ()
        if "aic" in kw:
            aic = tuple((c, float(a)) for c, a in (x.split(":") for x in kw["aic"].split(",")))
        return cls(
            tok[1],
            kw["family"],
            int(kw["n"]),
            float(kw["stat"]) if "stat" in kw else None,
            float(kw["p"]) if "p" in kw else None,
            aic,
        )


@dataclass(frozen=True)
class FitReport:
    loglik: float
    n_params: int
    n_obs: int
    aic: float
    bic: float
    hqc: float
    trace: tuple[BlockTrace, ...] = ()
    method: str = "sequential"
    converged: bool = True

    def criterion(self, name: str) -> float:
        name = name.lower()
        if name not in CRITERIA:
            raise DomainError(f"unknown criterion {name!r}")
        return getattr(self, name)

    def to_text(self) -> str:
        head = (
            f"fit method={self.method} loglik={self.loglik!r} n_params={self.n_params} "
            f"n_obs={self.n_obs} aic={self.aic!r} bic={self.bic!r} hqc={self.hqc!r} "
            f"converged={int(self.converged)}"
        )
        return "\n".join([head] + [t.to_text() for t in self.trace])

    @classmethod
    def from_lines(cls, lines: Sequence[str]) -> "FitReport":
        kw = dict(item.partition("=")[::2] for item in lines[0].split()[1:])
        trace = tuple(BlockTrace.from_text(x) for x in lines[1:])
        return cls(
            float(kw["loglik"]),
            int(kw["n_params"]),
            int(kw["n_obs"]),
            float(kw["aic"]),
            float(kw["bic"]),
            float(kw["hqc"]),
            trace,
            kw["method"],
            bool(int(kw["converged"])),
        )


@dataclass(frozen=True, eq=False)
class CoparModel:
    """m series, order k, margins in pivot order and one copula per block."""

    m: int
    k: int
    margins: tuple[MarginModel, ...]
    blocks: Mapping[BlockKey, PairCopula]
    names: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if self.m < 2:
            raise DomainError("need at least two series")
        if self.k < 1:
            raise DomainError("order k must be at least 1")
        object.__setattr__(self, "margins", tuple(self.margins))
        if len(self.margins) != self.m:
            raise DomainError(f"expected {self.m} margins, got {len(self.margins)}")
        keys = copar_block_keys(self.m, self.k)
        blocks = dict(self.blocks)
        extra = set(blocks) - set(keys)
        if extra:
            raise DomainError(f"blocks outside COPAR({self.k}): {sorted(extra)}")
        missing = [key.label(self.m) for key in keys if key not in blocks]
        if missing:
            raise DomainError(f"missing blocks: {', '.join(missing)}")
        object.__setattr__(self, "blocks", {key: blocks[key] for key in keys})
        if self.names is None:
            object.__setattr__(self, "names", tuple(series_names(self.m)))
        elif len(self.names) != self.m:
            raise DomainError("one name per series required")
        else:
            object.__setattr__(self, "names", tuple(self.names))

    def __eq__(self, other) -> bool:
        if not isinstance(other, CoparModel):
            return NotImplemented
        return (self.m, self.k, self.margins, self.blocks, self.names) == (
            other.m, other.k, other.margins, other.blocks, other.names)

    @property
    def schedule(self) -> _engine.Schedule:
        return _engine.compile_schedule(self.m, self.k)

    def label(self, key: BlockKey) -> str:
        return key.label(self.m)

    def block(self, label: str) -> PairCopula:
        return self.blocks[parse_block_label(label, self.m)]

    def taus(self) -> dict[str, float]:
        return {self.label(key): kendall_tau(pc) for key, pc in self.blocks.items()}

    @property
    def n_copula_params(self) -> int:
        return sum(pc.n_params for pc in self.blocks.values())

    @property
    def n_params(self) -> int:
        return self.n_copula_params + sum(mm.n_params for mm in self.margins)

    def with_blocks(self, updates: Mapping[BlockKey, PairCopula]) -> "CoparModel":
        blocks = dict(self.blocks)
        blocks.update(updates)
        return replace(self, blocks=blocks)

    def to_rvine(self, T: int) -> RVineMatrix:
        """The tiled (m T)-dimensional R-vine of this model."""
        return build_copar_structure(self.m, T, min(self.k, T - 1),
                                     {key: pc for key, pc in self.blocks.items() if key.lag <= T - 1})

    def pit(self, data) -> np.ndarray:
        X = check_data(data, self.m)
        return np.column_stack([pit_transform(mm, X[:, j]) for j, mm in enumerate(self.margins)])

    def quantile(self, U: np.ndarray) -> np.ndarray:
        """Map copula-scale values (..., m) to the data scale."""
        U = np.asarray(U, float)
        out = np.empty_like(U)
        for j, mm in enumerate(self.margins):
            out[..., j] = margin_quantile(mm, np.clip(U[..., j], 1e-15, 1 - 1e-15))
        return out

    # serialization -------------------------------------------------------

    def to_text(self, report: FitReport | None = None) -> str:
        lines = ["copar-model 1", f"m {self.m}", f"k {self.k}", "series " + " ".join(self.names)]
        for mm in self.margins:
            lines.append("margin " + mm.to_text())
        for key, pc in self.blocks.items():
            params = " ".join(repr(p) for p in pc.params)
            tail = f" {params}" if params else ""
            lines.append(f"block {self.label(key)} {pc.family.code}{tail} tau={kendall_tau(pc)!r}")
        if report is not None:
            lines.append(report.to_text())
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> tuple["CoparModel", FitReport | None]:
        lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
        if not lines or lines[0].split()[0] != "copar-model":
            raise DomainError("not a COPAR model file")
        m = k = None
        names: tuple[str, ...] | None = None
        margins, blocks, rep = [], {}, []
        for ln in lines[1:]:
            tag, _, rest = ln.partition(" ")
            if tag == "m":
                m = int(rest)
            elif tag == "k":
                k = int(rest)
            elif tag == "series":
                names = tuple(rest.split())
            elif tag == "margin":
                margins.append(MarginModel.from_text(rest))
            elif tag == "block":
                if m is None:
                    raise DomainError("'m' must precede blocks")
                tok = rest.split()
                params = tuple(float(t) for t in tok[2:] if not t.startswith("tau="))
                fam = CopulaFamily.from_code(tok[1])
                blocks[parse_block_label(tok[0], m)] = PairCopula(fam, params)
            elif tag in ("fit", "trace"):
                rep.append(ln)
            else:
                raise DomainError(f"unknown model file entry {tag!r}")
        if m is None or k is None:
            raise DomainError("model file lacks m or k")
        report = FitReport.from_lines(rep) if rep else None
        return cls(m, k, tuple(margins), blocks, names), report


# ---------------------------------------------------------------------------

def check_data(data, m: int | None = None) -> np.ndarray:
    X = np.asarray(data, dtype=float)
    if X.ndim != 2:
        raise DomainError("data must be a (T, m) array")
    if m is not None and X.shape[1] != m:
        raise DomainError(f"expected {m} series, got {X.shape[1]}")
    if X.shape[1] < 2:
        raise DomainError("need at least two series")
    if not np.all(np.isfinite(X)):
        raise DomainError("data contain missing or non-finite values")
    return X


def information_criteria(loglik: float, p: int, n_obs: int) -> tuple[float, float, float]:
    """(AIC, BIC, HQC) with sample size n_obs (m T scalar observations)."""
    if p < 0:
        raise DomainError("parameter count must be non-negative")
    if n_obs <= math.e:
        raise DomainError("HQC requires n_obs > e")
    base = -2.0 * loglik
    return (base + 2.0 * p, base + math.log(n_obs) * p, base + 2.0 * math.log(math.log(n_obs)) * p)


def _report(model: CoparModel, loglik: float, n_obs: int, trace=(), method="sequential",
            converged=True) -> FitReport:
    p = model.n_params
    a, b, h = information_criteria(loglik, p, n_obs)
    return FitReport(loglik, p, n_obs, a, b, h, tuple(trace), method, converged)


def _margin_models(families, X: np.ndarray) -> tuple[MarginModel, ...]:
    m = X.shape[1]
    if families is None:
        families = [MarginFamily.NORMAL] * m
    elif isinstance(families, (str, MarginFamily)):
        families = [families] * m
    families = list(families)
    if len(families) == 1:
        families = families * m
    if len(families) != m:
        raise DomainError(f"need 1 or {m} margin families, got {len(families)}")
    return tuple(fit_margin(f, X[:, j]) for j, f in enumerate(families))


def _candidates(candidates) -> tuple[CopulaFamily, ...]:
    if candidates is None:
        return PARAMETRIC_FAMILIES
    if isinstance(candidates, str):
        return parse_families(candidates)
    return tuple(CopulaFamily.from_code(c) if isinstance(c, str) else c for c in candidates)


def fit_copar_sequential(
    data,
    k: int,
    margin_families=None,
    candidates: Iterable[CopulaFamily | str] | str | None = None,
    *,
    margins: Sequence[MarginModel] | None = None,
    pretest: bool = True,
    names: Sequence[str] | None = None,
) -> tuple[CoparModel, FitReport]:
    """Sequential (IFM-type) estimation of a COPAR(k) model.

    ``data`` is a (T, m) array whose column order is the pivot order.
    Margins are fitted first (unless given) and the data mapped to the
    copula scale; then every block is selected and estimated on its pooled
    conditional pairs, in dependency order, the conditional CDFs being
    updated after each block.  With ``pretest`` a block whose pairs pass the
    independence test becomes the independence copula.
    """
    X = check_data(data)
    T, m = X.shape
    if k < 1:
        raise DomainError("order k must be at least 1")
    if T < 5 * k + 5:
        raise DomainError(f"need T >= 5k + 5 = {5 * k + 5} observations, got {T}")
    cands = _candidates(candidates)
    if margins is None:
        margins = _margin_models(margin_families, X)
    margins = tuple(margins)
    U = np.column_stack([pit_transform(mm, X[:, j]) for j, mm in enumerate(margins)])
    sched = _engine.compile_schedule(m, k)
    trace = []

    def choose(e: _engine.EdgeSpec, z1, z2) -> PairCopula:
        label = e.key.label(m)
        try:
            sel = select_pair_copula_detail(np.column_stack([z1, z2]), cands, pretest=pretest)
        except (DomainError, NumericalError, FitError, FloatingPointError) as exc:
            raise FitError(f"block {label}: {exc}") from exc
        pc = sel.copula
        if pc.fallback and not np.isfinite(sel.aic.get(pc.family.code, np.nan)):
            raise FitError(f"block {label}: optimizer failed for family {pc.family.code}")
        pt = sel.pretest
        trace.append(BlockTrace(
            label, pc.family.code, int(z1.size),
            None if pt is None else float(pt.statistic),
            None if pt is None else float(pt.p_value),
            tuple(sel.aic.items()),
        ))
        return pc

    p, blocks = _engine.run_pass(sched, U, choose=choose)
    model = CoparModel(m, k, margins, blocks, tuple(names) if names is not None else None)
    cop_ll = float(sum(t.sum() for t in p.loglik_terms.values()))
    ll = cop_ll + sum(margin_loglik(mm, X[:, j]) for j, mm in enumerate(margins))
    return model, _report(model, ll, m * T, trace)


def copula_loglik(model: CoparModel, U, method: str = "pooled") -> float:
    """Copula part of the log-likelihood on copula-scale data U (T, m)."""
    U = np.asarray(U, float)
    if U.ndim != 2 or U.shape[1] != model.m:
        raise DomainError(f"expected data with {model.m} columns")
    if method == "pooled":
        return _engine.loglik(model.schedule, U, model.blocks)
    if method == "tiled":
        T = U.shape[0]
        if T < 2:
            return 0.0
        return float(rvine_logdensity(model.to_rvine(T), U.reshape(-1)))
    raise DomainError(f"unknown evaluation method {method!r}")


def copar_loglik(model: CoparModel, data, method: str = "pooled") -> float:
    """Full log-likelihood: margins plus the COPAR vine on the PIT data.

    ``method='pooled'`` sums per-block contributions over time (sparse,
    O(m^2 k T)); ``method='tiled'`` evaluates the materialized R-vine matrix.
    """
    X = check_data(data, model.m)
    U = model.pit(X)
    return copula_loglik(model, U, method) + sum(
        margin_loglik(mm, X[:, j]) for j, mm in enumerate(model.margins))


def block_logliks(model: CoparModel, data) -> dict[str, float]:
    """Pooled copula log-likelihood contribution of every block."""
    U = model.pit(data)
    return {key.label(model.m): v for key, v in _engine.block_logliks(model.schedule, U, model.blocks).items()}


def _free_blocks(model: CoparModel, fixed: Iterable[BlockKey] = ()):
    fixed = set(fixed)
    return [key for key, pc in model.blocks.items() if pc.n_params > 0 and key not in fixed]


def refine_mle(
    model: CoparModel,
    data,
    *,
    fixed: Iterable[BlockKey] = (),
    trace: Sequence[BlockTrace] = (),
) -> tuple[CoparModel, FitReport]:
    """Joint maximum likelihood over all copula parameters.

    Families and margins stay fixed, as do blocks listed in ``fixed``.  The
    result never has a lower likelihood than the start; if the optimizer
    breaks down the starting model is returned with ``converged=False``.
    """
    X = check_data(data, model.m)
    U = model.pit(X)
    m_ll = sum(margin_loglik(mm, X[:, j]) for j, mm in enumerate(model.margins))
    free = _free_blocks(model, fixed)
    sched = model.schedule
    sizes = [model.blocks[key].n_params for key in free]
    bounds = [b for key in free for b in family_bounds(model.blocks[key].family)]
    x0 = np.array([p for key in free for p in model.blocks[key].params], float)

    def unpack(x) -> dict[BlockKey, PairCopula]:
        out, i = {}, 0
        for key, s in zip(free, sizes):
            out[key] = PairCopula(model.blocks[key].family, tuple(float(v) for v in x[i:i + s]))
            i += s
        return out

    blocks = dict(model.blocks)

    def nll(x) -> float:
        try:
            blocks.update(unpack(x))
            val = -_engine.loglik(sched, U, blocks)
        except (DomainError, FloatingPointError):
            return 1e300
        return val if np.isfinite(val) else 1e300

    ok = True
    if free:
        with np.errstate(all="ignore"):
            x, fx, ok = minimize_box(nll, x0, bounds)
        new = model.with_blocks(unpack(x)) if ok else model
    else:
        new = model
    if not ok:
        warnings.warn("joint likelihood optimization failed; returning the starting model")
    ll = copula_loglik(new, U) + m_ll
    return new, _report(new, ll, model.m * X.shape[0], trace, "joint", ok)


def fit_copar(
    data,
    k: int,
    margin_families=None,
    candidates=None,
    *,
    refine: bool = True,
    pretest: bool = True,
    names=None,
) -> tuple[CoparModel, FitReport]:
    """Sequential fit optionally followed by joint refinement."""
    model, rep = fit_copar_sequential(data, k, margin_families, candidates, pretest=pretest, names=names)
    if refine:
        return refine_mle(model, data, trace=rep.trace)
    return model, rep


@dataclass(frozen=True)
class OrderSelection:
    k_star: int
    criterion: str
    reports: dict[int, FitReport] = field(default_factory=dict)
    models: dict[int, CoparModel] = field(default_factory=dict)

    def __iter__(self):
        return iter((self.k_star, self.reports))


def select_order(
    data,
    k_max: int,
    criterion: str = "bic",
    margin_families=None,
) -> OrderSelection:
    """Fit all-Gaussian COPAR(k), k = 1..k_max, and minimize the criterion.

    Gaussian blocks act as a proxy for the final family choice.  Margins are
    fitted once and shared by all orders so that criteria are comparable;
    ties go to the smaller order.
    """
    X = check_data(data)
    T = X.shape[0]
    crit = criterion.lower()
    if crit not in CRITERIA:
        raise DomainError(f"unknown criterion {criterion!r}")
    if k_max < 1 or k_max > (T - 5) / 5:
        raise DomainError(f"k_max must satisfy 1 <= k_max <= (T - 5) / 5, got {k_max}")
    margins = _margin_models(margin_families, X)
    reports, models = {}, {}
    for k in range(1, k_max + 1):
        models[k], reports[k] = fit_copar_sequential(
            X, k, candidates=(CopulaFamily.GAUSSIAN,), margins=margins, pretest=False)
    k_star = min(reports, key=lambda k: (reports[k].criterion(crit), k))
    return OrderSelection(k_star, crit, reports, models)


def simulate_copula(model: CoparModel, T: int, seed) -> np.ndarray:
    """Copula-scale sample path (T, m) of the model."""
    if T < 1:
        raise DomainError("T must be at least 1")
    W = np.random.default_rng(seed).random((1, T, model.m))
    state = _engine.StepState(model.schedule, 1, 0)
    return _engine.simulate_steps(model.schedule, model.blocks, state, W)[0]


def simulate_copar(model: CoparModel, T: int, seed) -> np.ndarray:
    """Data-scale sample path (T, m): copula path mapped through the margins."""
    return model.quantile(simulate_copula(model, T, seed))


def gaussian_model(m: int, k: int, taus: Mapping[str, float] | Mapping[BlockKey, float],
                   margins: Sequence[MarginModel] | None = None) -> CoparModel:
    """Convenience constructor: Gaussian blocks with given Kendall's taus (others independent)."""
    from .margins import normal

    blocks = {key: INDEPENDENCE for key in copar_block_keys(m, k)}
    for lab, tau in taus.items():
        key = lab if isinstance(lab, BlockKey) else parse_block_label(lab, m)
        blocks[key] = PairCopula(CopulaFamily.GAUSSIAN, (math.sin(math.pi * tau / 2.0),))
    if margins is None:
        margins = [normal()] * m
    return CoparModel(m, k, tuple(margins), blocks)


def independence_order(data, k_max: int, candidates=(CopulaFamily.GAUSSIAN,), margin_families=None) -> int:
    """Order from the independence pretest.

    Fits COPAR(k_max) sequentially with the pretest and returns the largest
    lag carrying a non-independence block (at least 1).
    """
    X = check_data(data)
    model, _ = fit_copar_sequential(X, k_max, margin_families, candidates, pretest=True)
    lags = [key.lag for key, pc in model.blocks.items() if pc.family is not CopulaFamily.INDEPENDENCE]
    return max([1] + lags)
