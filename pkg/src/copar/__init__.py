"""Copula autoregressive (COPAR) models for multivariate time series."""

from .errors import CoparError, DomainError, FitError, IngestError, NumericalError
from .forecast import (
    ForecastRequest,
    ForecastResult,
    Mode,
    conditional_next_cdf,
    forecast,
    path_uniforms,
    sample_paths,
    sample_paths_u,
)
from .inference import (
    GrangerResult,
    VarModel,
    fit_var,
    granger_test,
    mean_interval_score,
    rmse,
    var_forecast,
)
from .margins import (
    MarginFamily,
    MarginModel,
    fit_margin,
    margin_cdf,
    margin_logpdf,
    margin_pdf,
    margin_quantile,
    pit_transform,
)
from .model import (
    BlockTrace,
    CoparModel,
    FitReport,
    OrderSelection,
    block_logliks,
    copar_loglik,
    copula_loglik,
    fit_copar,
    fit_copar_sequential,
    gaussian_model,
    independence_order,
    information_criteria,
    refine_mle,
    select_order,
    simulate_copar,
    simulate_copula,
)
from .pair_copulas import (
    INDEPENDENCE,
    CopulaFamily,
    PairCopula,
    copula_cdf,
    copula_logpdf,
    copula_pdf,
    fit_pair_copula,
    hfunc,
    hfunc_inverse,
    independence_test,
    kendall_tau,
    select_pair_copula,
    tau_to_params,
)
from .vine import (
    BlockKey,
    RVineMatrix,
    build_copar_structure,
    copar_block_keys,
    count_copulas,
    enumerate_blocks,
    extend_structure_for_forecast,
    rvine_logdensity,
    rvine_sample,
    validate_rvine_matrix,
)

__version__ = "0.1.0"
