import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from copar.pair_copulas import CopulaFamily, PairCopula, tau_to_params

settings.register_profile(
    "default",
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

F = CopulaFamily
POSITIVE_ONLY = (F.CLAYTON, F.GUMBEL, F.JOE, F.SURVIVAL_CLAYTON, F.SURVIVAL_GUMBEL, F.SURVIVAL_JOE)
TAUS_POSITIVE = (0.1, 0.25, 0.4, 0.55, 0.7)
TAUS_SIGNED = (-0.6, -0.3, 0.1, 0.4, 0.7)
T_NUS = (4.0, 8.0, 15.0, 4.0, 25.0)


def family_settings(family):
    """Five parameter settings per parametric family, spread over its tau range."""
    if family in POSITIVE_ONLY:
        return [PairCopula(family, tau_to_params(family, t)) for t in TAUS_POSITIVE]
    if family is F.STUDENT_T:
        return [PairCopula(family, tau_to_params(family, t, nu)) for t, nu in zip(TAUS_SIGNED, T_NUS)]
    return [PairCopula(family, tau_to_params(family, t)) for t in TAUS_SIGNED]


ALL_SETTINGS = [pc for fam in CopulaFamily if fam is not F.INDEPENDENCE for pc in family_settings(fam)]


def grid20():
    g = np.arange(1, 21) / 21.0
    U, V = np.meshgrid(g, g, indexing="ij")
    return U.ravel(), V.ravel()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
