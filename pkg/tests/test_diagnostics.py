import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nlchns.diagnostics import (COLUMNS, DiagnosticsSample, barrier_monitor, cancellation_identities,
                                check_cancellation_identities, check_neumann_identities, dual_norm,
                                energy_identity_residual, energy_monotone, gradient_coercivity_check, gradient_coercivity_terms, grad_norm,
                                random_state, random_zero_mean, sample, weighted_neumann_solve,
                                weighted_operator)
from nlchns.galerkin import GalerkinState
from nlchns.geometry import Backend, Grid2D, LinearSolverError, build_scalar_basis, project_scalar

seeds = st.integers(0, 2 ** 32 - 1)
both = pytest.mark.parametrize("which", ["box_system", "periodic_system"])


def smooth_mobility(grid, rng):
    X, Y = grid.mesh()
    return 1.0 + 0.5 * np.sin(2 * np.pi * X) * np.cos(np.pi * Y) + 0.1 * rng.uniform(size=grid.shape)


# ---------------------------------------------------------------------------
# weighted Neumann operator
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("backend", [Backend.BOX_NOSLIP, Backend.PERIODIC])
def test_unit_mobility_eigenfunction_oracle(backend):
    g = Grid2D(16, 12, 1.0, 1.0, backend)
    sb = build_scalar_basis(g, 6)
    for j in range(1, 6):
        f = sb.psi[j]
        u = weighted_neumann_solve(g, np.ones(g.shape), f)
        assert np.max(np.abs(u - f / (sb.mu[j] - 1.0))) <= 1e-9


@pytest.mark.parametrize("backend", [Backend.BOX_NOSLIP, Backend.PERIODIC])
def test_neumann_identities_hundred_pairs(backend, rng):
    g = Grid2D(16, 16, 1.0, 1.0, backend)
    rep = check_neumann_identities(g, smooth_mobility(g, rng), n_pairs=100, seed=1)
    assert rep.passed, rep.failures()


@settings(max_examples=15)
@given(seeds)
def test_neumann_solution_is_zero_mean_and_solves(seed):
    g = Grid2D(12, 12)
    rng = np.random.default_rng(seed)
    m = smooth_mobility(g, rng)
    f = random_zero_mean(g, rng)
    u = weighted_neumann_solve(g, m, f)
    assert abs(g.integrate(u)) <= 1e-12
    assert np.linalg.norm(weighted_operator(g, m)(u) - f) <= 1e-9 * np.linalg.norm(f)
    nf, gn = dual_norm(g, f), grad_norm(g, u)
    assert nf / m.max() * (1 - 1e-9) <= gn <= nf / m.min() * (1 + 1e-9)


def test_neumann_rejects_nonzero_mean_and_reports_history():
    g = Grid2D(12, 12)
    with pytest.raises(ValueError):
        weighted_neumann_solve(g, np.ones(g.shape), np.ones(g.shape))
    f = random_zero_mean(g, np.random.default_rng(0))
    with pytest.raises(LinearSolverError) as info:
        weighted_neumann_solve(g, np.ones(g.shape), f, maxiter=2)
    assert len(info.value.history) >= 1


# ---------------------------------------------------------------------------
# energies and samples
# ---------------------------------------------------------------------------

def test_zero_state_energies(box_system):
    s = sample(box_system, GalerkinState(0.0, np.zeros(box_system.n_u), np.zeros(box_system.n_phi)))
    assert s.energy == 0.0 and s.dissipation == 0.0 and s.art_norm == 0.0


@both
def test_constant_state_energy(request, which):
    sys_ = request.getfixturevalue(which)
    c = 0.35
    b = project_scalar(sys_.basis, np.full(sys_.grid.shape, c), sys_.n_phi)
    s = sample(sys_, GalerkinState(0.0, np.zeros(sys_.n_u), b))
    F = sys_.potential.value(np.array([c]))[0]
    assert s.energy == pytest.approx(sys_.grid.area * F, rel=1e-12)
    assert s.D_visc == 0.0 and s.D_hyper == 0.0 and s.D_mix <= 1e-24


def test_row_matches_columns(box_system, rng):
    s = sample(box_system, random_state(box_system, rng))
    assert len(s.row()) == len(COLUMNS)
    assert s.row()[COLUMNS.index("phi_max")] == s.phi_max


def _fake(E, R=0.0):
    return [DiagnosticsSample(i, e, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0.5, 0, 0.0, R) for i, e in enumerate(E)]


def test_energy_identity_residual_needs_three_samples():
    with pytest.raises(ValueError):
        energy_identity_residual(_fake([1.0, 0.9]))
    assert energy_identity_residual(_fake([1.0, 0.9, 0.8], R=1e-12))["max_abs"] == 1e-12


def test_energy_monotone():
    assert energy_monotone(_fake([1.0, 0.8, 0.8 + 1e-9], R=2e-9))["passed"]
    assert not energy_monotone(_fake([1.0, 0.8, 0.9], R=1e-9))["passed"]


def test_barrier_monitor():
    samples = _fake([1.0, 0.9, 0.8])
    samples[2].phi_max, samples[2].art_norm = 1.05, 1e-6
    rep = barrier_monitor(samples, 0.05)
    assert rep.passed and rep.details["excursions_above_one"] == 1
    samples[0].art_norm = 1e-9
    assert not barrier_monitor(samples, 0.05).passed


# ---------------------------------------------------------------------------
# coercivity inequality
# ---------------------------------------------------------------------------

def test_gradient_coercivity_constant_field_both_sides_zero(box_system):
    b = project_scalar(box_system.basis, np.full(box_system.grid.shape, 0.2), box_system.n_phi)
    t = gradient_coercivity_terms(box_system, GalerkinState(0.0, np.zeros(box_system.n_u), b))
    assert abs(t["lhs"]) <= 1e-12 and abs(t["rhs"]) <= 1e-12


def test_gradient_coercivity_thousand_random_states(box_system):
    rng = np.random.default_rng(8)
    viol = sum(not gradient_coercivity_check(box_system, random_state(box_system, rng, phi_amplitude=1.2)).passed
               for _ in range(1000))
    assert viol == 0


# ---------------------------------------------------------------------------
# cancellation identities
# ---------------------------------------------------------------------------

@both
def test_cancellation_identities_random_states(request, which):
    rep = check_cancellation_identities(request.getfixturevalue(which), n_states=25, seed=3)
    assert rep.passed, rep.to_dict()


def test_cancellation_identities_outside_physical_range(box_system):
    rep = check_cancellation_identities(box_system, n_states=10, seed=4, phi_amplitude=1.2)
    assert rep.passed, rep.to_dict()


def _fft_grad(f, L=1.0):
    n = f.shape[0]
    k = 2 * np.pi * np.fft.fftfreq(n, d=L / n)
    fh = np.fft.fft2(f)
    return np.real(np.fft.ifft2(1j * k[None, :] * fh)), np.real(np.fft.ifft2(1j * k[:, None] * fh))


def test_band_limited_literal_oracle(small_system):
    """Convection and flux-convection pairings against literal quadrature with exact derivatives.

    On the torus with low-wavenumber fields every integrand is a trigonometric
    polynomial below the grid Nyquist frequency, so the trapezoidal rule is exact.
    """
    s = small_system("PERIODIC", n=16, modes=5)
    g = s.grid
    rng = np.random.default_rng(9)
    a = rng.uniform(-1, 1, s.n_u)
    b = np.concatenate([[0.0], 0.15 * rng.uniform(-1, 1, s.n_phi - 1)])
    ev = s.evaluate(a, b)
    assert np.max(np.abs(ev["phi"])) < 1.0
    u, phi, mu = ev["u"], ev["phi"], ev["mu"]
    u2 = np.sum(u ** 2, axis=0)
    px, py = _fft_grad(phi)
    beta = s.density.beta
    conv_literal = -0.5 * g.weight * np.sum(beta * (u[0] * px + u[1] * py) * u2)
    assert np.dot(s.force_terms(ev)["convection"], a) == pytest.approx(conv_literal, rel=1e-10)
    mx, my = _fft_grad(mu)
    lap_mu = _fft_grad(mx)[0] + _fft_grad(my)[1]
    flux_literal = 0.5 * g.weight * np.sum(beta * lap_mu * u2)
    assert np.dot(s.force_terms(ev)["flux_convection"], a) == pytest.approx(flux_literal, rel=1e-10)


@both
def test_identity_errors_single_state(request, which):
    sys_ = request.getfixturevalue(which)
    st_ = random_state(sys_, np.random.default_rng(0))
    r = cancellation_identities(sys_, st_.a, st_.b)
    assert max(r["time_derivative"], r["convection"], r["flux_convection"]) <= 1e-8
