import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session", autouse=True)
def _basis_cache(tmp_path_factory):
    # eigenbasis cache shared by the whole session, isolated from the user cache
    path = tmp_path_factory.mktemp("basis-cache")
    old = os.environ.get("NLCHNS_CACHE_DIR")
    os.environ["NLCHNS_CACHE_DIR"] = str(path)
    yield path
    if old is None:
        os.environ.pop("NLCHNS_CACHE_DIR", None)
    else:
        os.environ["NLCHNS_CACHE_DIR"] = old


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def build_small_system(backend="BOX_NOSLIP", n=16, modes=12, rho=(1.0, 3.0), delta=1e-3, eps=0.05,
                       forcing=None, theta=0.3, amplitude=3.5, mobility=None, viscosity=None):
    from nlchns.density import DensityModel
    from nlchns.galerkin import CoefficientLaw, GalerkinSystem
    from nlchns.geometry import Grid2D, build_spectral_basis
    from nlchns.kernels import ConvolutionOperator, KernelSpec
    from nlchns.potentials import LogarithmicPotential, regularize

    grid = Grid2D(n, n, 1.0, 1.0, backend)
    basis = build_spectral_basis(grid, modes, modes)
    conv = ConvolutionOperator(grid, KernelSpec.gaussian(amplitude, 0.125))
    return GalerkinSystem(basis, conv, regularize(LogarithmicPotential(theta, 1.0), eps), DensityModel(*rho),
                          viscosity or CoefficientLaw.constant(0.05), mobility or CoefficientLaw.constant(1.0),
                          delta, forcing)


@pytest.fixture(scope="session")
def small_system():
    return build_small_system


@pytest.fixture(scope="session")
def box_system():
    return build_small_system()


@pytest.fixture(scope="session")
def periodic_system():
    return build_small_system("PERIODIC")


# ---------------------------------------------------------------------------
# acceptance report
# ---------------------------------------------------------------------------

ACCEPTANCE: dict = {}


@pytest.fixture(scope="session")
def criterion():
    """Record one acceptance criterion and fail the test unless every check holds."""
    def record(cid: str, title: str, checks: dict, **details):
        ok = all(bool(v) for v in checks.values())
        ACCEPTANCE[cid] = (title, ok, checks, details)
        failed = [k for k, v in checks.items() if not v]
        assert ok, f"{cid} {title}: failed {failed}; details {details}"
    return record


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.3g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE, key=lambda c: int(c[1:])):
        title, ok, checks, details = ACCEPTANCE[cid]
        shown = ", ".join(f"{k}={_fmt(v)}" for k, v in details.items())
        terminalreporter.write_line(f"{cid:<4}{'PASS' if ok else 'FAIL'}  {title}  [{shown}]")
