import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st

from nlchns.geometry import (Backend, CapacityError, Grid2D, apply_fractional_stokes, build_scalar_basis,
                             build_spectral_basis, build_velocity_basis, discrete_gradient_velocity,
                             leray_project, load_velocity_basis, project_scalar, project_velocity,
                             reconstruct_scalar, save_velocity_basis)

BOX = Backend.BOX_NOSLIP
PER = Backend.PERIODIC
seeds = st.integers(0, 2 ** 32 - 1)
backends = st.sampled_from([BOX, PER])
sizes = st.sampled_from([8, 12, 16])


def random_velocity(grid, rng):
    return rng.standard_normal((2,) + grid.shape) * grid.velocity_mask


# ---------------------------------------------------------------------------
# scalar operators
# ---------------------------------------------------------------------------

@given(seeds, backends, sizes, sizes)
def test_div_is_negative_adjoint_of_grad(seed, backend, nx, ny):
    g = Grid2D(nx, ny, 1.0, 1.3, backend)
    rng = np.random.default_rng(seed)
    f = rng.standard_normal(g.shape)
    flux = g.grad(rng.standard_normal(g.shape))
    lhs = g.flux_inner(g.grad(f), flux)
    rhs = -g.inner(f, g.div(flux))
    assert abs(lhs - rhs) <= 1e-10 * (abs(lhs) + 1.0)


@given(seeds, backends)
def test_nodal_is_adjoint_of_vec_to_flux(seed, backend):
    g = Grid2D(12, 10, 1.0, 1.0, backend)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((2,) + g.shape)
    flux = g.grad(rng.standard_normal(g.shape))
    lhs = g.flux_inner(g.vec_to_flux(v), flux)
    rhs = g.weight * float(np.sum(v * g.nodal(flux)))
    assert abs(lhs - rhs) <= 1e-10 * (abs(lhs) + 1.0)


@pytest.mark.parametrize("backend", [BOX, PER])
def test_helmholtz_resolvent_matches_dense_solve(backend, rng):
    g = Grid2D(10, 8, 1.0, 0.8, backend)
    f = rng.standard_normal(g.shape)
    B = g.scalar_operator_matrix()
    alpha = 0.3
    dense = np.linalg.solve(np.eye(g.size) + alpha * B, f.ravel()).reshape(g.shape)
    assert np.max(np.abs(g.helmholtz_resolvent(f, alpha) - dense)) <= 1e-10


@pytest.mark.parametrize("backend", [BOX, PER])
def test_solve_neg_laplacian_inverts_on_its_range(backend, rng):
    g = Grid2D(16, 12, 1.0, 1.0, backend)
    # PERIODIC spectral derivatives drop the Nyquist modes, so draw f from the range
    f = g.neg_laplacian(rng.standard_normal(g.shape))
    u = g.solve_neg_laplacian(f)
    assert np.max(np.abs(g.neg_laplacian(u) - f)) <= 1e-9
    assert abs(u.mean()) <= 1e-12


# ---------------------------------------------------------------------------
# scalar eigenbasis
# ---------------------------------------------------------------------------

def test_first_scalar_mode_is_constant():
    sb = build_scalar_basis(Grid2D(16, 16), 4)
    assert sb.mu[0] == pytest.approx(1.0, abs=1e-14)
    assert np.ptp(sb.psi[0]) <= 1e-12


def test_second_scalar_eigenvalue_matches_dense_eigensolve_and_continuum():
    g = Grid2D(16, 16)
    sb = build_scalar_basis(g, 3)
    dense = np.sort(np.linalg.eigvalsh(g.scalar_operator_matrix()))
    assert sb.mu[1] == pytest.approx(dense[1], rel=1e-10)
    # second-order convergence to 1 + pi^2
    h = g.hx
    cont = 1.0 + np.pi ** 2
    assert abs(sb.mu[1] - cont) <= np.pi ** 4 * h ** 2 / 12 * 1.01
    assert sb.mu[1] < cont


@given(backends, sizes, st.integers(1, 30))
def test_scalar_basis_orthonormal(backend, n, k):
    g = Grid2D(n, n, 1.0, 1.0, backend)
    k = min(k, g.size)
    sb = build_scalar_basis(g, k)
    G = g.weight * sb.matrix @ sb.matrix.T
    assert np.max(np.abs(G - np.eye(k))) <= 1e-10


@pytest.mark.parametrize("backend", [BOX, PER])
def test_scalar_basis_eigen_residual(backend):
    g = Grid2D(16, 12, 1.0, 0.75, backend)
    sb = build_scalar_basis(g, 20)
    for psi, mu in zip(sb.psi, sb.mu):
        assert np.max(np.abs(psi + g.neg_laplacian(psi) - mu * psi)) <= 1e-9 * mu


def test_scalar_capacity_error():
    with pytest.raises(CapacityError):
        build_scalar_basis(Grid2D(8, 8), 65)


def test_projection_examples(rng):
    g = Grid2D(12, 12)
    sb = build_scalar_basis(g, 10)
    e = project_scalar(sb, sb.psi[2])
    assert np.allclose(e, np.eye(10)[2], atol=1e-12)
    c = project_scalar(sb, np.full(g.shape, 0.3))
    assert c[0] == pytest.approx(0.3 * np.sqrt(g.area), rel=1e-12)
    assert np.max(np.abs(c[1:])) <= 1e-12
    f = rng.standard_normal(g.shape)
    pf = reconstruct_scalar(sb, project_scalar(sb, f))
    assert np.sqrt(g.inner(pf, pf)) <= np.sqrt(g.inner(f, f))


# ---------------------------------------------------------------------------
# velocity eigenbasis
# ---------------------------------------------------------------------------

def test_periodic_first_stokes_eigenvalue_and_residuals():
    g = Grid2D(16, 16, 1.0, 1.0, PER)
    vb = build_velocity_basis(g, 20)
    assert vb.lam[0] == pytest.approx(4 * np.pi ** 2, rel=1e-12)
    for w, lam in zip(vb.w, vb.lam):
        # analytic value against the spectral Laplacian
        assert np.max(np.abs(g.vneg_laplacian(w) - lam * w)) <= 1e-8 * lam
        rq = g.weight * float(np.sum(w * g.vneg_laplacian(w)))
        assert rq == pytest.approx(lam, rel=1e-8)


def saddle_point_stokes_eigenvalues(g):
    """Finite eigenvalues of the pencil ``[[L, D^T], [D, 0]] - lam [[I, 0], [0, 0]]``.

    Centred differences leave spurious pressure modes, so the constraint rows are
    first reduced to a basis of their row space to keep the pencil regular.
    """
    idx, div, lap = g._box_velocity_matrices()
    _, s, vt = np.linalg.svd(div.toarray())
    D = vt[: int(np.sum(s > 1e-10 * s[0]))]
    L = sla.block_diag(lap.toarray(), lap.toarray())
    nv, npr = L.shape[0], D.shape[0]
    A = np.block([[L, D.T], [D, np.zeros((npr, npr))]])
    B = np.zeros_like(A)
    B[:nv, :nv] = np.eye(nv)
    ev = sla.eig(A, B, right=False)
    ev = ev[np.isfinite(ev)].real
    return np.sort(ev[ev > 1e-8])


def test_box_stokes_eigenvalues_match_saddle_point_oracle():
    g = Grid2D(12, 12)
    vb = build_velocity_basis(g, 12, use_cache=False)
    oracle = saddle_point_stokes_eigenvalues(g)
    assert np.allclose(vb.lam, oracle[:12], rtol=1e-8)


def test_box_reference_grid_eigenvalues_regression():
    # frozen from the saddle-point oracle run at first build
    vb = build_velocity_basis(Grid2D(32, 32), 32)
    assert vb.lam[0] == pytest.approx(56.03, rel=1e-3)
    assert vb.lam[31] == pytest.approx(642.5, rel=1e-3)


@pytest.mark.parametrize("backend", [BOX, PER])
def test_velocity_basis_orthonormal_and_solenoidal(backend):
    g = Grid2D(16, 16, 1.0, 1.0, backend)
    vb = build_velocity_basis(g, 16)
    G = g.weight * vb.matrix @ vb.matrix.T
    assert np.max(np.abs(G - np.eye(vb.n))) <= 1e-10
    for w in vb.w:
        assert np.max(np.abs(g.vdiv(w))) <= 1e-9
    if backend is BOX:
        assert np.all(vb.w[:, :, ~g.velocity_mask] == 0.0)


def test_box_velocity_modes_are_projected_laplacian_eigenfields():
    g = Grid2D(12, 12)
    vb = build_velocity_basis(g, 10)
    for w, lam in zip(vb.w, vb.lam):
        r = leray_project(g, g.vneg_laplacian(w)) - lam * w
        assert np.max(np.abs(r)) <= 1e-8 * lam


def test_velocity_cache_roundtrip(tmp_path):
    g = Grid2D(10, 10)
    vb = build_velocity_basis(g, 6, use_cache=False)
    path = save_velocity_basis(tmp_path / "v.bin", vb)
    back = load_velocity_basis(path, g, 6)
    assert np.array_equal(back.w, vb.w) and np.array_equal(back.lam, vb.lam)
    assert load_velocity_basis(path, Grid2D(10, 10, 2.0, 1.0), 6) is None
    assert load_velocity_basis(tmp_path / "missing.bin", g, 6) is None


def test_fractional_stokes():
    g = Grid2D(16, 16)
    vb = build_velocity_basis(g, 8)
    c = np.arange(1.0, 9.0)
    assert np.array_equal(apply_fractional_stokes(vb, c, 0.0), c)
    e = np.zeros(8)
    e[3] = 1.0
    Aw = apply_fractional_stokes(vb, e, 1.0)[3]
    quad = g.weight * float(np.sum(vb.w[3] * g.vneg_laplacian(vb.w[3])))
    assert Aw == pytest.approx(quad, rel=1e-8)
    a = np.linspace(0.1, 1.0, 8)
    d = float(np.sum(apply_fractional_stokes(vb, a, 1.5) ** 2))
    assert d == pytest.approx(float(np.sum(vb.lam ** 3 * a ** 2)), rel=1e-12)


def test_velocity_projection_of_mode_is_unit_vector():
    g = Grid2D(12, 12)
    basis = build_spectral_basis(g, 4, 6)
    a = project_velocity(basis, basis.velocity.w[1])
    assert np.allclose(a, np.eye(6)[1], atol=1e-12)


# ---------------------------------------------------------------------------
# Leray projector
# ---------------------------------------------------------------------------

@settings(max_examples=15)
@given(seeds, backends)
def test_leray_idempotent_self_adjoint_solenoidal(seed, backend):
    g = Grid2D(12, 10, 1.0, 1.0, backend)
    rng = np.random.default_rng(seed)
    v1, v2 = random_velocity(g, rng), random_velocity(g, rng)
    p1 = leray_project(g, v1)
    assert np.max(np.abs(leray_project(g, p1) - p1)) <= 1e-9
    lhs = g.weight * np.sum(p1 * v2)
    rhs = g.weight * np.sum(v1 * leray_project(g, v2))
    assert abs(lhs - rhs) <= 1e-9
    assert np.max(np.abs(g.vdiv(p1))) <= 1e-9


@pytest.mark.parametrize("backend", [BOX, PER])
def test_leray_kills_discrete_gradients(backend, rng):
    g = Grid2D(12, 12, 1.0, 1.0, backend)
    v = discrete_gradient_velocity(g, rng.standard_normal(g.shape))
    assert np.linalg.norm(leray_project(g, v)) <= 1e-8 * np.linalg.norm(v)


def test_leray_fixes_basis_fields():
    g = Grid2D(12, 12)
    vb = build_velocity_basis(g, 5)
    for w in vb.w:
        assert np.max(np.abs(leray_project(g, w) - w)) <= 1e-10


def test_leray_rejects_non_finite():
    g = Grid2D(8, 8)
    v = np.zeros((2,) + g.shape)
    v[0, 3, 3] = np.nan
    with pytest.raises(ValueError):
        leray_project(g, v)
