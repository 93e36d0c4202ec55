"""Monitored quantities, identity residuals and the weighted Neumann solver."""

from __future__ import annotations

from dataclasses import astuple, dataclass, fields

import numpy as np
import scipy.sparse.linalg as spla

from .geometry import Grid2D, LinearSolverError
from .reports import CheckReport

COLUMNS = ("t", "E_kin", "E_int", "E_pot", "E_grad", "D_visc", "D_hyper", "D_mix", "power",
           "mass", "mu_mean", "phi_max", "barrier_frac", "art_norm", "R")
CSV_SCHEMA_VERSION = 1


@dataclass
class DiagnosticsSample:
    t: float
    E_kin: float
    E_int: float
    E_pot: float
    E_grad: float
    D_visc: float
    D_hyper: float
    D_mix: float
    power: float
    mass: float
    mu_mean: float
    phi_max: float
    barrier_frac: float
    art_norm: float
    R: float = 0.0

    @property
    def energy(self) -> float:
        return self.E_kin + self.E_int + self.E_pot + self.E_grad

    @property
    def dissipation(self) -> float:
        return self.D_visc + self.D_hyper + self.D_mix

    def row(self) -> tuple:
        return astuple(self)


assert tuple(f.name for f in fields(DiagnosticsSample)) == COLUMNS


def artificial_term_norm(system, ev: dict) -> float:
    """``int |1/2 rho''(phi) m(phi) (grad phi . grad mu) u|``."""
    speed = np.sqrt(np.sum(ev["u"] ** 2, axis=0))
    return 0.5 * system.grid.weight * float(np.sum(np.abs(ev["Q"]) * speed))


def sample(system, state, accumulated: float | None = None, energy0: float | None = None) -> DiagnosticsSample:
    """All monitored quantities at one state; ``R`` filled when the running integral is supplied."""
    g = system.grid
    ev = system.evaluate(state.a, state.b, state.t, with_rates=False)
    en = system.energies(ev)
    d = system.dissipation(ev)
    phi = ev["phi"]
    s = DiagnosticsSample(
        t=float(state.t), **en, **d,
        mass=g.integrate(phi),
        mu_mean=g.integrate(ev["mu"]) / g.area,
        phi_max=float(np.max(np.abs(phi))),
        barrier_frac=float(np.mean(np.abs(phi) > 1.0 - system.potential.eps)),
        art_norm=artificial_term_norm(system, ev),
    )
    if accumulated is not None and energy0 is not None:
        s.R = s.energy - energy0 + accumulated
    return s


def trajectory_samples(system, traj) -> list[DiagnosticsSample]:
    out = []
    e0 = None
    for i in range(len(traj.times)):
        s = sample(system, traj.state(i))
        if e0 is None:
            e0 = s.energy
        s.R = s.energy - e0 + traj.accumulated[i]
        out.append(s)
    return out


def energy_identity_residual(samples) -> dict:
    """Residual series ``R(t_i) = E(t_i) - E(t_0) + int (D - power)``.

    The time integral is carried by the integrator itself as an extra ODE
    component, so it has the same order as the solution.
    """
    if len(samples) < 3:
        raise ValueError("energy identity residual needs at least 3 samples")
    R = np.array([s.R for s in samples])
    return {"R": R, "max_abs": float(np.max(np.abs(R)))}


def energy_monotone(samples, slack: float | None = None) -> dict:
    """With zero power: ``E(t_i) <= E(t_j) + |R|`` for every ``i > j``."""
    E = np.array([s.energy for s in samples])
    R = float(np.max(np.abs([s.R for s in samples]))) if slack is None else slack
    running_min = np.minimum.accumulate(E)
    # max over i > j of E_i - E_j
    increase = float(np.max(np.maximum(E[1:] - running_min[:-1], 0.0))) if len(E) > 1 else 0.0
    ok = increase <= R + 1e-14 * max(1.0, float(np.max(np.abs(E))))
    return {"passed": bool(ok), "max_increase": increase, "slack": R}


# ---------------------------------------------------------------------------
# weighted Neumann problem
# ---------------------------------------------------------------------------

def weighted_operator(grid: Grid2D, m_field):
    """``B_phi u = -div(m grad u)`` with face mobility the average of nodal values."""
    mf = grid.to_flux(np.asarray(m_field, float))

    def apply(u):
        gx, gy = grid.grad(u)
        return -grid.div((mf[0] * gx, mf[1] * gy))
    return apply


def _null_component(grid: Grid2D, f) -> float:
    """Size of the part of ``f`` in the kernel of ``grad_h`` (relative to ``|f|``)."""
    f = np.asarray(f, float)
    scale = max(float(np.sqrt(grid.inner(f, f))), 1e-300)
    mean = grid.integrate(f) / grid.area
    rest = 0.0
    if grid.periodic:
        fh = np.fft.rfft2(f)
        sym = grid._lap_symbol
        mask = sym == 0
        mask[0, 0] = False
        rest = float(np.sqrt(np.sum(np.abs(fh[mask]) ** 2)) / np.sqrt(grid.size)) * np.sqrt(grid.weight)
    return (abs(mean) * np.sqrt(grid.area) + rest) / scale


def weighted_neumann_solve(grid: Grid2D, m_field, f, rtol: float = 1e-10, maxiter: int | None = None):
    """Zero-mean ``u`` with ``-div(m grad u) = f`` by conjugate gradients.

    ``f`` must have zero mean (and, on PERIODIC grids, no content in the
    Nyquist modes annihilated by the spectral gradient).
    """
    f = np.asarray(f, dtype=float)
    m_field = np.asarray(m_field, dtype=float)
    if np.min(m_field) <= 0:
        raise ValueError("mobility field must be positive")
    scale = max(float(np.max(np.abs(f))), 1e-300)
    if abs(grid.integrate(f) / grid.area) > 1e-12 * max(1.0, scale) or _null_component(grid, f) > 1e-10:
        raise ValueError("weighted Neumann solve needs a zero-mean right-hand side")
    apply = weighted_operator(grid, m_field)
    n = grid.size
    op = spla.LinearOperator((n, n), matvec=lambda v: apply(v.reshape(grid.shape)).ravel(), dtype=float)
    history = []
    fn = np.linalg.norm(f)
    if fn == 0:
        return np.zeros(grid.shape)

    def cb(xk):
        history.append(float(np.linalg.norm(op @ xk - f.ravel()) / fn))

    u, info = spla.cg(op, f.ravel(), rtol=rtol * 0.1, atol=0.0, maxiter=maxiter or 20 * n, callback=cb)
    u = u.reshape(grid.shape)
    u -= grid.integrate(u) / grid.area
    res = float(np.linalg.norm(apply(u) - f) / fn)
    if info != 0 or res > rtol:
        err = LinearSolverError(f"weighted Neumann CG did not converge (relative residual {res:.3e})")
        err.history = history
        raise err
    return u


def dual_norm(grid: Grid2D, f) -> float:
    """Discrete ``V0'`` norm ``sqrt((f, (-Delta_h)^{-1} f))`` of a zero-mean field."""
    return float(np.sqrt(max(grid.inner(f, grid.solve_neg_laplacian(f)), 0.0)))


def grad_norm(grid: Grid2D, u) -> float:
    gx, gy = grid.grad(u)
    return float(np.sqrt(grid.flux_inner((gx, gy), (gx, gy))))


def random_zero_mean(grid: Grid2D, rng, smooth: float = 4.0) -> np.ndarray:
    """Random smooth zero-mean field lying in the range of ``grad_h^T``."""
    f = rng.standard_normal(grid.shape)
    f = grid.helmholtz_resolvent(f, (smooth * max(grid.hx, grid.hy)) ** 2)
    f = -grid.div(grid.grad(grid.solve_neg_laplacian(f - grid.integrate(f) / grid.area)))
    return f - grid.integrate(f) / grid.area


def check_neumann_identities(grid: Grid2D, m_field, n_pairs: int = 100, seed: int = 0,
                             tol: float = 1e-9) -> CheckReport:
    """Adjoint identity, symmetry and the two-sided dual-norm bounds of ``N_phi``."""
    rng = np.random.default_rng(seed)
    B = weighted_operator(grid, m_field)
    m_lo, m_hi = float(np.min(m_field)), float(np.max(m_field))
    worst1 = worst2 = 0.0
    bound_viol = 0
    for _ in range(n_pairs):
        f = random_zero_mean(grid, rng)
        gq = random_zero_mean(grid, rng)
        u = rng.standard_normal(grid.shape)
        Nf = weighted_neumann_solve(grid, m_field, f)
        Ng = weighted_neumann_solve(grid, m_field, gq)
        lhs, rhs = grid.inner(B(u), Nf), grid.inner(f, u)
        worst1 = max(worst1, abs(lhs - rhs) / max(abs(rhs), np.sqrt(grid.inner(f, f) * grid.inner(u, u))))
        s1, s2 = grid.inner(f, Ng), grid.inner(gq, Nf)
        worst2 = max(worst2, abs(s1 - s2) / max(abs(s1), 1e-300, np.sqrt(grid.inner(f, f) * grid.inner(gq, gq)) * 1e-3))
        nf = dual_norm(grid, f)
        gn = grad_norm(grid, Nf)
        if not (nf / m_hi * (1 - 1e-9) <= gn <= nf / m_lo * (1 + 1e-9)):
            bound_viol += 1
    children = [
        CheckReport("adjoint_identity", worst1 <= tol, {"max_rel_error": worst1, "pairs": n_pairs}),
        CheckReport("symmetry", worst2 <= tol, {"max_rel_error": worst2, "pairs": n_pairs}),
        CheckReport("dual_norm_bounds", bound_viol == 0, {"violations": bound_viol,
                                                          "m_lower": m_lo, "m_upper": m_hi}),
    ]
    return CheckReport.group("neumann_operator", children)


# ---------------------------------------------------------------------------
# inequality and barrier reports
# ---------------------------------------------------------------------------

def gradient_coercivity_terms(system, state) -> dict:
    """Both sides of ``(grad mu, grad phi) >= c0 |grad phi|^2 - 2 |grad J|_1 |grad phi| |phi| + delta |Lap phi|^2``.

    The spectral forms are exact for the discrete operators:
    ``(grad mu, grad phi) = sum (mu_j - 1) c_j b_j`` and so on.
    """
    b = np.asarray(state.b, float)
    lap = system.lap_eig
    c = system.chemical_potential(b).c
    lhs = float(np.sum(lap * c * b))
    g2 = float(np.sum(lap * b * b))
    l2 = float(np.sum(b * b))
    lap2 = float(np.sum(lap * lap * b * b))
    c0 = system.c0
    gj = system.conv.grad_l1
    rhs = c0 * g2 - 2.0 * gj * np.sqrt(g2) * np.sqrt(l2) + system.delta * lap2
    magnitude = abs(lhs) + c0 * g2 + 2.0 * gj * np.sqrt(g2 * l2) + system.delta * lap2
    return {"lhs": lhs, "rhs": float(rhs), "magnitude": float(magnitude), "c0": c0, "gradJ_l1": gj}


def gradient_coercivity_check(system, state, rel_tol: float = 1e-6) -> CheckReport:
    t = gradient_coercivity_terms(system, state)
    ok = t["lhs"] >= t["rhs"] - rel_tol * t["magnitude"]
    return CheckReport("gradient_coercivity", bool(ok), t)


def barrier_monitor(samples, eps: float) -> CheckReport:
    phi_max = np.array([s.phi_max for s in samples])
    art = np.array([s.art_norm for s in samples])
    inside = phi_max <= 1.0
    art_zero_inside = bool(np.all(art[inside] == 0.0))
    excursions = int(np.sum(~inside))
    return CheckReport("barrier", art_zero_inside, {
        "eps": eps, "phi_max_series": phi_max, "art_norm_series": art,
        "time_max_phi": float(phi_max.max()), "time_max_art_norm": float(art.max()),
        "excursions_above_one": excursions})


# ---------------------------------------------------------------------------
# cancellation identities
# ---------------------------------------------------------------------------

def _ddt(fun, tau: float) -> float:
    # fourth-order central difference
    return (-fun(2 * tau) + 8 * fun(tau) - 8 * fun(-tau) + fun(-2 * tau)) / (12 * tau)


def cancellation_identities(system, a, b, t: float = 0.0, tau: float = 1e-4) -> dict:
    """Relative errors of the three integration-by-parts identities at one state.

    * time-derivative identity:
      ``((rho u)', u) = d/dt int rho u^2 / 2 + 1/2 int rho' phi' u^2``,
      with ``d/dt`` taken by a fourth-order difference along the ODE velocity;
    * convection: ``-(rho u (x) u, D u) = 1/2 int rho' (u . grad phi) u^2``;
    * flux convection: ``-int u . (J . grad) u = -1/2 int (rho'' m grad phi . grad mu + rho' div(m grad mu)) u^2``.
    """
    g = system.grid
    ev = system.evaluate(a, b, t)
    adot, bdot = system.rates(ev)
    u2 = np.sum(ev["u"] ** 2, axis=0)
    M = system.gram_matrix(b, ev["rho"], ev["phi"])
    q = system.coupling(ev)
    lhs1 = float(np.dot(a, M @ adot + q))

    def kin(s):
        e = system.evaluate(a + s * adot, b + s * bdot, t, with_rates=False)
        return 0.5 * g.weight * float(np.sum(e["rho"] * e["u"] ** 2))

    extra = 0.5 * g.weight * float(np.sum(ev["drho"] * ev["phidot"] * u2))
    rhs1 = _ddt(kin, tau) + extra
    scale1 = max(abs(lhs1), abs(extra), 1e-300)

    terms = system.force_terms(ev)
    lhs2 = -float(np.dot(terms["convection"], a))
    rhs2 = 0.5 * g.weight * float(np.sum(ev["drho"] * ev["adv"] * u2))
    f2, s2 = system.force_fields(ev)["convection"]
    scale2 = max(abs(float(np.dot(system.modal(None, s2), a))), abs(rhs2), 1e-300)

    lhs3 = -float(np.dot(terms["flux_convection"], a))
    rhs3 = -0.5 * g.weight * float(np.sum(ev["L"] * u2))
    f3, s3 = system.force_fields(ev)["flux_convection"]
    scale3 = max(abs(float(np.dot(system.modal(None, s3), a))), abs(rhs3), 1e-300)
    return {
        "time_derivative": abs(lhs1 - rhs1) / scale1,
        "convection": abs(lhs2 - rhs2) / scale2,
        "flux_convection": abs(lhs3 - rhs3) / scale3,
        "values": {"time_derivative": (lhs1, rhs1), "convection": (lhs2, rhs2),
                   "flux_convection": (lhs3, rhs3)},
    }


def random_state(system, rng, phi_amplitude: float = 0.7, u_amplitude: float = 1.0, decay: float = 1.0):
    """Random coefficients with algebraic spectral decay; ``phi`` rescaled into ``(-phi_amp, phi_amp)``."""
    from .galerkin import GalerkinState
    nb, na = system.n_phi, system.n_u
    b = rng.standard_normal(nb) / (1.0 + np.arange(nb)) ** decay
    phi = system.phi_field(b)
    peak = float(np.max(np.abs(phi)))
    if peak > 0:
        b *= phi_amplitude / peak * rng.uniform(0.5, 1.0)
    a = u_amplitude * rng.standard_normal(na) / (1.0 + np.arange(na)) ** decay
    return GalerkinState(0.0, a, b)


def check_cancellation_identities(system, n_states: int = 200, seed: int = 0, tol: float = 1e-8,
                                  phi_amplitude: float = 0.7) -> CheckReport:
    rng = np.random.default_rng(seed)
    worst = {"time_derivative": 0.0, "convection": 0.0, "flux_convection": 0.0}
    for _ in range(n_states):
        st = random_state(system, rng, phi_amplitude=phi_amplitude)
        r = cancellation_identities(system, st.a, st.b)
        for k in worst:
            worst[k] = max(worst[k], r[k])
    children = [CheckReport(k, v <= tol, {"max_rel_error": v, "states": n_states}) for k, v in worst.items()]
    return CheckReport.group("cancellation_identities", children)
