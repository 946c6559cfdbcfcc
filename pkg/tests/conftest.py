import numpy as np
import pytest

from splitlaw.laws import SplitLawParams
from splitlaw.synth import REFERENCE_PARAMS, generate_runs, default_grid


def random_split_params(rng: np.random.Generator, **fixed) -> SplitLawParams:
    """In-bounds parameter draw with coefficients in a range that keeps losses realistic."""
    values = dict(
        E_p=rng.uniform(0.05, 1.0),
        E_0=rng.uniform(1.0, 3.0),
        N_s=float(np.exp(rng.uniform(np.log(1e7), np.log(1e11)))),
        D_s=rng.uniform(500.0, 700.0),
        A=rng.uniform(0.5, 5.0),
        B=rng.uniform(20.0, 500.0),
        gamma1=rng.uniform(0.1, 1.0),
        gamma2=rng.uniform(0.1, 1.0),
        alpha1=rng.uniform(0.1, 1.0),
        alpha2=rng.uniform(0.1, 1.0),
        c=rng.uniform(0.5, 4.0),
        kappa=rng.uniform(0.1, 1.0),
    )
    values.update(fixed)
    return SplitLawParams(**values)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def reference_runs():
    return generate_runs(REFERENCE_PARAMS, default_grid(0.01, seed=1))


@pytest.fixture(scope="session")
def fitted_law(reference_runs):
    """Split law fitted to the noisy default grid."""
    from splitlaw.fitter import FitConfig, fit_basin_hopping

    return fit_basin_hopping(reference_runs, "split", FitConfig(n_random_starts=8, hops_per_start=5, seed=0)).params


ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
