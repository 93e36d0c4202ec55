"""Faedo-Galerkin ODE system for the regularised nonlocal CH-NS problem.

State: velocity coefficients ``a`` in the Stokes eigenbasis and order
parameter coefficients ``b`` in the ``B_h`` eigenbasis.  The momentum
equation is assembled from nine force contributions, each written in a form
whose discrete pairing with ``u`` reproduces the continuous cancellation
exactly:

* convection and flux-convection are split into a stress part paired with
  ``grad w_k`` and a skew companion paired with ``w_k``;
* the divergence fields ``u . grad phi`` and ``div(m grad mu)`` entering the
  momentum terms are the very fields that drive ``d b/dt``.

With these choices the semi-discrete energy balance holds to round-off, so
the time-integrated residual measures only time-integration error.  Mass is
conserved because ``psi_1`` is constant and both pairings in ``d b/dt``
contract against ``grad psi_1 = 0``.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.integrate import RK45

from .density import DensityModel
from .geometry import SpectralBasis, project_scalar, project_velocity
from .kernels import ConvolutionOperator, check_kernel_assumptions
from .potentials import RegularPotential, check_regularized_bounds, check_singular_assumptions
from .reports import CheckReport


class PreflightError(RuntimeError):
    def __init__(self, message, report: CheckReport | None = None):
        super().__init__(message)
        self.report = report


class InitialDataError(ValueError):
    pass


class DivergenceError(RuntimeError):
    def __init__(self, message, last_good=None):
        super().__init__(message)
        self.last_good = last_good


class StepUnderflowError(RuntimeError):
    def __init__(self, message, last_good=None, step=None):
        super().__init__(message)
        self.last_good = last_good
        self.step = step


class GramFactorizationError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# coefficient laws and forcing
# ---------------------------------------------------------------------------

class LawKind(str, enum.Enum):
    CONSTANT = "CONSTANT"
    TANH_BLEND = "TANH_BLEND"


@dataclass(frozen=True)
class CoefficientLaw:
    """Bounded positive coefficient ``nu(s)`` or ``m(s)``.

    ``TANH_BLEND`` interpolates ``0.5 (low + high) + 0.5 (high - low) tanh(s)``.
    """

    kind: LawKind = LawKind.CONSTANT
    value: float = 1.0
    low: float = 1.0
    high: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", LawKind(self.kind))
        lo, hi = self.bounds
        if not lo > 0:
            raise ValueError(f"coefficient law must be bounded below by a positive constant, got {lo}")

    @classmethod
    def constant(cls, value: float) -> "CoefficientLaw":
        return cls(LawKind.CONSTANT, value=value, low=value, high=value)

    @classmethod
    def tanh_blend(cls, low: float, high: float) -> "CoefficientLaw":
        return cls(LawKind.TANH_BLEND, low=low, high=high)

    @property
    def bounds(self) -> tuple[float, float]:
        if self.kind is LawKind.CONSTANT:
            return self.value, self.value
        return min(self.low, self.high), max(self.low, self.high)

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind is LawKind.CONSTANT:
            return np.full_like(s, self.value)
        return 0.5 * (self.low + self.high) + 0.5 * (self.high - self.low) * np.tanh(s)

    def to_dict(self) -> dict:
        if self.kind is LawKind.CONSTANT:
            return {"law": "CONSTANT", "value": self.value}
        return {"law": "TANH_BLEND", "low": self.low, "high": self.high}


def check_law(law: CoefficientLaw, name: str, samples: int = 8001) -> CheckReport:
    s = np.linspace(-4.0, 4.0, samples)
    v = law(s)
    lo, hi = law.bounds
    ok = bool(np.all(v >= lo - 1e-14) and np.all(v <= hi + 1e-14) and lo > 0)
    return CheckReport(f"{name}_bounds", ok, {"lower": lo, "upper": hi,
                                              "sampled_min": float(v.min()), "sampled_max": float(v.max())})


class ForcingKind(str, enum.Enum):
    ZERO = "ZERO"
    CONSTANT = "CONSTANT"
    TIME_SINUSOID = "TIME_SINUSOID"


@dataclass(frozen=True)
class Forcing:
    """Body force ``h(x, t) = T(t) (v_x sin(2 pi y / l_y), v_y sin(2 pi x / l_x))``.

    ``T = 1`` for ``CONSTANT`` and ``cos(2 pi f t)`` for ``TIME_SINUSOID``.
    """

    kind: ForcingKind = ForcingKind.ZERO
    vector: tuple[float, float] = (0.0, 0.0)
    frequency: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", ForcingKind(self.kind))
        object.__setattr__(self, "vector", tuple(float(v) for v in self.vector))

    @property
    def is_zero(self) -> bool:
        return self.kind is ForcingKind.ZERO or self.vector == (0.0, 0.0)

    def profile(self, grid) -> np.ndarray:
        X, Y = grid.mesh()
        return np.stack([self.vector[0] * np.sin(2 * np.pi * Y / grid.ly),
                         self.vector[1] * np.sin(2 * np.pi * X / grid.lx)])

    def time_factor(self, t: float) -> float:
        if self.kind is ForcingKind.TIME_SINUSOID:
            return math.cos(2 * math.pi * self.frequency * t)
        return 0.0 if self.kind is ForcingKind.ZERO else 1.0

    def to_dict(self) -> dict:
        d = {"preset": self.kind.value}
        if self.kind is not ForcingKind.ZERO:
            d["vector"] = list(self.vector)
        if self.kind is ForcingKind.TIME_SINUSOID:
            d["frequency"] = self.frequency
        return d


# ---------------------------------------------------------------------------
# state
# ---------------------------------------------------------------------------

@dataclass
class GalerkinState:
    t: float
    a: np.ndarray
    b: np.ndarray

    def copy(self) -> "GalerkinState":
        return GalerkinState(float(self.t), self.a.copy(), self.b.copy())


@dataclass
class MuCoefficients:
    c: np.ndarray


TERM_NAMES = ("convection", "viscous", "hyperviscous", "flux_convection", "artificial",
              "commutator_advection", "commutator_diffusion", "korteweg", "forcing")


# ---------------------------------------------------------------------------
# system
# ---------------------------------------------------------------------------

class GalerkinSystem:
    """Immutable assembled problem; evaluation methods are pure."""

    def __init__(self, basis: SpectralBasis, conv: ConvolutionOperator, potential: RegularPotential,
                 density: DensityModel, viscosity: CoefficientLaw, mobility: CoefficientLaw,
                 delta: float, forcing: Forcing | None = None, preflight: bool = True):
        if conv.grid != basis.grid:
            raise ValueError("kernel and basis live on different grids")
        if delta < 0:
            raise ValueError("delta must be non-negative")
        self.basis = basis
        self.grid = basis.grid
        self.conv = conv
        self.potential = potential
        self.density = density
        self.viscosity = viscosity
        self.mobility = mobility
        self.delta = float(delta)
        self.forcing = forcing or Forcing()
        self.preflight_report = self._preflight()
        if preflight and not self.preflight_report.passed:
            raise PreflightError("pre-flight checks failed: " + ", ".join(self.preflight_report.failures()),
                                 self.preflight_report)

        g = self.grid
        self.n_phi = basis.scalar.n
        self.n_u = basis.velocity.n
        self.Psi = basis.scalar.matrix                       # (n_phi, N)
        self.mu_eig = basis.scalar.mu
        self.lap_eig = basis.scalar.mu - 1.0                 # eigenvalues of -Delta_h
        self.lam = basis.velocity.lam
        self.W = np.ascontiguousarray(basis.velocity.w.reshape(self.n_u, 2 * g.size))
        # rows hold d_j w_i flattened with component index 2 i + j
        self.gradW = np.stack([g.vgrad(w).reshape(4 * g.size) for w in basis.velocity.w])
        # Gram matrix of the affine density: M = rho0 I + beta sum_j b_j T_j while |phi| <= 1
        W3 = self.W.reshape(self.n_u, 2, g.size)
        self._gram_T = g.weight * np.einsum("kin,jn,lin->jkl", W3, self.Psi, W3, optimize=True)
        self._h_profile = self.forcing.profile(g)
        self._h_modal = g.weight * (self.W @ self._h_profile.ravel())

    # -- setup ------------------------------------------------------------
    def _preflight(self) -> CheckReport:
        kernel = check_kernel_assumptions(self.conv, self.potential.parent)
        children = [kernel,
                    check_singular_assumptions(self.potential.parent),
                    check_law(self.viscosity, "viscosity"),
                    check_law(self.mobility, "mobility"),
                    CheckReport("density_positive", self.density.rho_lower > 0,
                                {"rho_lower": self.density.rho_lower, "rho_upper": self.density.rho_upper})]
        if kernel.passed:
            children.append(check_regularized_bounds(self.potential, kernel))
        return CheckReport.group("preflight", children)

    @property
    def c0(self) -> float:
        return self.preflight_report.find("kernel_assumptions").details.get("c0", float("nan"))

    # -- reconstruction -----------------------------------------------------
    def phi_field(self, b) -> np.ndarray:
        return (np.asarray(b) @ self.Psi).reshape(self.grid.shape)

    def u_field(self, a) -> np.ndarray:
        return (np.asarray(a) @ self.W).reshape((2,) + self.grid.shape)

    def forcing_field(self, t: float) -> np.ndarray:
        return self.forcing.time_factor(t) * self._h_profile

    def forcing_modal(self, t: float) -> np.ndarray:
        return self.forcing.time_factor(t) * self._h_modal

    def project(self, f) -> np.ndarray:
        return self.grid.weight * (self.Psi @ np.asarray(f).ravel())

    def reconstruct(self, c) -> np.ndarray:
        return (np.asarray(c) @ self.Psi).reshape(self.grid.shape)

    # -- phase-field pieces ---------------------------------------------------
    def chemical_potential(self, b, phi=None) -> MuCoefficients:
        phi = self.phi_field(b) if phi is None else phi
        g = self.conv.a * phi - self.conv.apply(phi) + self.potential.d1(phi)
        c = self.project(g) + self.delta * self.lap_eig * np.asarray(b)
        return MuCoefficients(c)

    def gram_matrix(self, b, rho=None, phi=None) -> np.ndarray:
        """``M_kj = (rho(phi) w_j, w_k)``; uses the affine shortcut when ``|phi| <= 1`` on the grid."""
        if phi is None:
            phi = self.phi_field(b)
        if np.abs(phi).max() <= 1.0:
            M = np.tensordot(self.density.beta * np.asarray(b, float), self._gram_T, axes=1)
            M[np.diag_indices_from(M)] += self.density.rho0
            return 0.5 * (M + M.T)
        return self.gram_matrix_quadrature(rho if rho is not None else self.density.rho(phi))

    def gram_matrix_quadrature(self, rho) -> np.ndarray:
        """Direct quadrature of ``rho(phi) w_j . w_k`` for an arbitrary density field."""
        r = np.asarray(rho).ravel()
        M = self.grid.weight * ((self.W * np.concatenate([r, r])) @ self.W.T)
        return 0.5 * (M + M.T)

    def factorize_gram(self, M):
        try:
            return sla.cho_factor(M, lower=False, check_finite=True)
        except (sla.LinAlgError, ValueError) as exc:
            lmin = float(np.linalg.eigvalsh(M).min()) if np.all(np.isfinite(M)) else float("nan")
            raise GramFactorizationError(
                f"Gram matrix not positive definite (min eigenvalue {lmin:.3e}, "
                f"rho_lower {self.density.rho_lower:.3e})") from exc

    # -- full evaluation ------------------------------------------------------
    def evaluate(self, a, b, t: float = 0.0, with_rates: bool = True) -> dict:
        """All reconstructed fields needed by the right-hand side and diagnostics."""
        g = self.grid
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        phi = self.phi_field(b)
        u = self.u_field(a)
        rho, drho, d2rho = self.density.evaluate(phi)
        m = self.mobility(phi)
        nu = self.viscosity(phi)
        c = self.chemical_potential(b, phi).c
        mu = self.reconstruct(c)
        gmu = g.grad(mu)
        mf = g.to_flux(m)
        mflux = (mf[0] * gmu[0], mf[1] * gmu[1])
        divflux = g.div(mflux)
        adv = g.div(g.vec_to_flux(phi[None] * u))
        gcphi = g.grad_nodes(phi)
        gcmu = g.nodal(gmu)
        ev = dict(t=t, a=a, b=b, phi=phi, u=u, rho=rho, drho=drho, d2rho=d2rho, m=m, nu=nu,
                  c=c, mu=mu, gmu=gmu, mflux=mflux, divflux=divflux, adv=adv,
                  gcphi=gcphi, gcmu=gcmu, vgrad=g.vgrad(u))
        if with_rates:
            p_div = self.project(divflux)
            p_adv = self.project(adv)
            bdot = p_div - p_adv
            ev.update(P_divflux=self.reconstruct(p_div), P_adv=self.reconstruct(p_adv), bdot=bdot,
                      phidot=self.reconstruct(bdot))
        gphi_dot_gmu = np.sum(gcphi * gcmu, axis=0)
        ev["Q"] = d2rho * m * gphi_dot_gmu
        ev["Jflux"] = -drho * m * gcmu
        ev["L"] = ev["Q"] + drho * divflux
        return ev

    def force_fields(self, ev: dict) -> dict:
        """Per term: ``(f, sigma)`` with ``r_k = (f, w_k) + (sigma, grad w_k)``.

        ``f`` is a nodal vector field (2, ny, nx), ``sigma`` a nodal tensor
        (2, 2, ny, nx) paired with ``d_j w_i`` at index ``[i, j]``.  The
        hyperviscous and forcing terms are diagonal / modal and are handled
        in :meth:`force_terms`.
        """
        u, G = ev["u"], ev["vgrad"]
        rho, drho = ev["rho"], ev["drho"]
        J = ev["Jflux"]
        u_grad_u = np.einsum("jyx,ijyx->iyx", u, G)
        J_grad_u = np.einsum("jyx,ijyx->iyx", J, G)
        D = 0.5 * (G + G.transpose(1, 0, 2, 3))
        out = {}
        out["convection"] = (-0.5 * rho * u_grad_u - 0.5 * drho * ev["adv"] * u,
                             0.5 * rho * u[:, None] * u[None, :])
        out["viscous"] = (None, -2.0 * ev["nu"] * D)
        out["flux_convection"] = (-0.5 * J_grad_u + 0.5 * ev["L"] * u,
                                  0.5 * u[:, None] * J[None, :])
        out["artificial"] = (-0.5 * ev["Q"] * u, None)
        if "P_adv" in ev:
            out["commutator_advection"] = (-0.5 * drho * (ev["P_adv"] - ev["adv"]) * u, None)
            out["commutator_diffusion"] = (-0.5 * drho * (ev["divflux"] - ev["P_divflux"]) * u, None)
        out["korteweg"] = (-ev["phi"] * ev["gcmu"], None)
        return out

    def modal(self, f=None, sigma=None) -> np.ndarray:
        g = self.grid
        r = np.zeros(self.n_u)
        if f is not None:
            r += g.weight * (self.W @ f.ravel())
        if sigma is not None:
            r += g.weight * (self.gradW @ sigma.ravel())
        return r

    def force_terms(self, ev: dict) -> dict:
        """Modal force vector of every momentum contribution (right-hand-side sign)."""
        fields = self.force_fields(ev)
        terms = {name: self.modal(*fs) for name, fs in fields.items()}
        terms["hyperviscous"] = -self.delta * self.lam ** 3 * ev["a"]
        terms["forcing"] = self.forcing_modal(ev["t"])
        return {name: terms[name] for name in TERM_NAMES if name in terms}

    def _total_force(self, ev: dict) -> np.ndarray:
        # same forms as force_terms, summed in field space before a single projection
        fields = self.force_fields(ev)
        f = sum(v[0] for v in fields.values() if v[0] is not None)
        s = sum(v[1] for v in fields.values() if v[1] is not None)
        return self.modal(f, s) - self.delta * self.lam ** 3 * ev["a"] + self.forcing_modal(ev["t"])

    def coupling(self, ev: dict) -> np.ndarray:
        """``q_k = (rho'(phi) phi' u, w_k)`` built from the already computed ``phi'``."""
        return self.modal(ev["drho"] * ev["phidot"] * ev["u"])

    def rates(self, ev: dict):
        r = self._total_force(ev)
        q = self.coupling(ev)
        M = self.gram_matrix(ev["b"], ev["rho"], ev["phi"])
        adot = sla.cho_solve(self.factorize_gram(M), r - q)
        return adot, ev["bdot"]

    def rhs(self, state: GalerkinState):
        return self.rates(self.evaluate(state.a, state.b, state.t))

    # -- energy bookkeeping -----------------------------------------------------
    def dissipation(self, ev: dict) -> dict:
        g = self.grid
        G = ev["vgrad"]
        D = 0.5 * (G + G.transpose(1, 0, 2, 3))
        d_visc = 2.0 * g.weight * float(np.sum(ev["nu"] * D * D))
        d_hyper = self.delta * float(np.sum(self.lam ** 3 * ev["a"] ** 2))
        mf = g.to_flux(ev["m"])
        gmu = ev["gmu"]
        d_mix = g.weight * float(np.sum(mf[0] * gmu[0] ** 2) + np.sum(mf[1] * gmu[1] ** 2))
        power = float(np.dot(self.forcing_modal(ev["t"]), ev["a"]))
        return {"D_visc": d_visc, "D_hyper": d_hyper, "D_mix": d_mix, "power": power}

    def energies(self, ev: dict) -> dict:
        g = self.grid
        phi = ev["phi"]
        e_kin = 0.5 * g.weight * float(np.sum(ev["rho"] * ev["u"] ** 2))
        e_int = 0.5 * g.weight * float(np.sum(self.conv.a * phi * phi) - np.sum(phi * self.conv.apply(phi)))
        e_pot = g.weight * float(np.sum(self.potential.value(phi)))
        e_grad = 0.5 * self.delta * float(np.sum(self.lap_eig * ev["b"] ** 2))
        return {"E_kin": e_kin, "E_int": e_int, "E_pot": e_pot, "E_grad": e_grad}

    def total_energy(self, a, b) -> float:
        return sum(self.energies(self.evaluate(a, b, with_rates=False)).values())


# ---------------------------------------------------------------------------
# initial data
# ---------------------------------------------------------------------------

def mollify_initial_phi(basis, phi0, delta: float) -> np.ndarray:
    """``(I + sqrt(delta) B_h)^{-1} phi0``; coefficientwise ``b_j / (1 + sqrt(delta) mu_j)``."""
    phi0 = np.asarray(phi0, dtype=float)
    grid = basis.grid
    if np.max(np.abs(phi0)) > 1.0:
        raise InitialDataError(f"initial order parameter exceeds 1 in magnitude (max {np.max(np.abs(phi0)):.6g})")
    mean = grid.integrate(phi0) / grid.area
    if not abs(mean) < 1.0:
        raise InitialDataError(f"initial mean {mean:.6g} must lie strictly inside (-1, 1)")
    if delta == 0:
        return phi0.copy()
    return grid.helmholtz_resolvent(phi0, math.sqrt(delta))


def initial_state(system: GalerkinSystem, u0, phi0, div_tol: float = 1e-8):
    """Project initial data; returns ``(state, info)`` with a flag if ``u0`` was not solenoidal."""
    g = system.grid
    u0 = np.zeros((2,) + g.shape) if u0 is None else np.asarray(u0, dtype=float)
    div = g.vdiv(u0)
    scale = max(float(np.max(np.abs(u0))), 1e-300)
    leray_needed = bool(np.max(np.abs(div)) > div_tol * scale / min(g.hx, g.hy))
    phi_d = mollify_initial_phi(system.basis, phi0, system.delta)
    a = project_velocity(system.basis, u0, system.n_u)
    b = project_scalar(system.basis, phi_d, system.n_phi)
    info = {"leray_projected": leray_needed, "phi0_mollified": phi_d}
    return GalerkinState(0.0, a, b), info


# ---------------------------------------------------------------------------
# time integration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IntegratorConfig:
    rtol: float = 1e-6
    atol: float = 1e-9
    max_step: float = 0.01
    min_step: float = 1e-12
    first_step: float | None = None

    def halved(self) -> "IntegratorConfig":
        return IntegratorConfig(self.rtol / 2, self.atol / 2, self.max_step, self.min_step, self.first_step)

    def to_dict(self) -> dict:
        return {"rtol": self.rtol, "atol": self.atol, "max_step": self.max_step, "min_step": self.min_step}


@dataclass
class Trajectory:
    times: list = field(default_factory=list)
    a: list = field(default_factory=list)
    b: list = field(default_factory=list)
    accumulated: list = field(default_factory=list)   # time integral of dissipation minus power
    channels: list = field(default_factory=list)      # running integrals of each CHANNELS entry
    status: str = "COMPLETED"
    message: str = ""
    n_steps: int = 0
    n_rhs: int = 0
    wall: float = 0.0

    def state(self, i: int) -> GalerkinState:
        return GalerkinState(self.times[i], self.a[i], self.b[i])


CHANNELS = ("D_visc", "D_hyper", "D_mix", "power")


def _pack(state: GalerkinState) -> np.ndarray:
    return np.concatenate([state.a, state.b, np.zeros(len(CHANNELS))])


def _accumulated(y) -> float:
    d_visc, d_hyper, d_mix, power = y[-len(CHANNELS):]
    return float(d_visc + d_hyper + d_mix - power)


def integrate(system: GalerkinSystem, state: GalerkinState, t_end: float, controller: IntegratorConfig,
              cadence: float | None = None, on_sample=None) -> Trajectory:
    """Adaptive Dormand-Prince 5(4) integration with samples at a fixed cadence.

    The ODE is augmented with the running integrals of ``D_visc``, ``D_hyper``,
    ``D_mix`` and ``power``; with ``Q`` the dissipation integrals minus the
    power integral, the energy residual ``E(t) - E(0) + Q(t)`` is available at
    every sample.  The
    stepper lands exactly on every sample time.  Integration errors are
    recorded in the returned trajectory's status; the last good state is kept.
    """
    n_u = system.n_u
    n_phi = system.n_phi
    counter = {"n": 0}

    def fun(t, y):
        counter["n"] += 1
        a, b = y[:n_u], y[n_u:n_u + n_phi]
        ev = system.evaluate(a, b, t)
        adot, bdot = system.rates(ev)
        d = system.dissipation(ev)
        out = np.concatenate([adot, bdot, [d[k] for k in CHANNELS]])
        if not np.all(np.isfinite(out)):
            raise FloatingPointError(f"non-finite right-hand side at t = {t:.6g}")
        return out

    cadence = t_end if cadence is None or cadence <= 0 else cadence
    n_out = max(int(round(t_end / cadence)), 1)
    sample_times = [min(t_end, state.t + (i + 1) * t_end / n_out) for i in range(n_out)]
    traj = Trajectory()
    y = _pack(state)
    t = float(state.t)

    def record(t, y):
        traj.times.append(float(t))
        traj.a.append(y[:n_u].copy())
        traj.b.append(y[n_u:n_u + n_phi].copy())
        traj.accumulated.append(_accumulated(y))
        traj.channels.append(y[-len(CHANNELS):].copy())
        if on_sample is not None:
            on_sample(traj, len(traj.times) - 1)

    start = time.perf_counter()
    record(t, y)
    step = controller.first_step
    try:
        for t_next in sample_times:
            if t_next <= t:
                continue
            solver = RK45(fun, t, y, t_next, max_step=controller.max_step, rtol=controller.rtol,
                          atol=controller.atol,
                          first_step=None if step is None else min(step, t_next - t))
            while solver.status == "running":
                msg = solver.step()
                if solver.status == "failed":
                    raise StepUnderflowError(f"step-size underflow at t = {solver.t:.6g}: {msg}",
                                             step=solver.step_size)
                traj.n_steps += 1
                if solver.status == "running" or solver.t < t_next:
                    if solver.step_size is not None and solver.step_size < controller.min_step:
                        raise StepUnderflowError(
                            f"step size {solver.step_size:.3e} below floor {controller.min_step:.1e} "
                            f"at t = {solver.t:.6g}; the hyperviscous stiffness grows like delta * lambda^3, "
                            "reduce n_u or delta, or lower the step floor", step=solver.step_size)
                if solver.step_size is not None and solver.step_size > 0:
                    # keep the natural step for the next segment, not the clipped landing step
                    if solver.t < t_next:
                        step = solver.step_size
                if not np.all(np.isfinite(solver.y)):
                    raise FloatingPointError(f"non-finite state at t = {solver.t:.6g}")
            t, y = float(solver.t), solver.y.copy()
            record(t, y)
    except FloatingPointError as exc:
        traj.status = "DIVERGED"
        traj.message = str(exc)
    except StepUnderflowError as exc:
        traj.status = "STEP_UNDERFLOW"
        traj.message = str(exc)
    except GramFactorizationError as exc:
        traj.status = "DIVERGED"
        traj.message = str(exc)
    traj.n_rhs = counter["n"]
    traj.wall = time.perf_counter() - start
    return traj
