"""Interaction kernels ``J``, the convolution ``J * phi`` over the domain and ``a = J * 1``."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft as sfft
from scipy import integrate

from . import binio
from .geometry import Grid2D
from .reports import CheckReport


class ResolutionError(ValueError):
    """Kernel too narrow for the grid: quadrature of ``a`` would be meaningless."""


class GridMismatchError(ValueError):
    pass


class KernelFamily(str, enum.Enum):
    GAUSSIAN = "GAUSSIAN"
    COMPACT_MOLLIFIER = "COMPACT_MOLLIFIER"
    TABULATED = "TABULATED"


def _mollifier_mass() -> float:
    # integral over the unit disc of exp(-1 / (1 - r^2))
    val, _ = integrate.quad(lambda r: 2 * np.pi * r * np.exp(-1.0 / (1.0 - r * r)), 0.0, 1.0)
    return val


_MOLLIFIER_MASS = _mollifier_mass()


@dataclass(frozen=True)
class KernelSpec:
    """Radial kernel description.

    ``amplitude`` is the integral of ``J`` over the plane for the analytic
    families.  TABULATED kernels carry their values on the offset lattice
    ``z = (i h_x, j h_y)``, ``|i| < nx``, ``|j| < ny``, centre in the middle.
    """

    family: KernelFamily
    amplitude: float = 1.0
    sigma: float | None = None
    radius: float | None = None
    table: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "family", KernelFamily(self.family))
        if self.family is KernelFamily.GAUSSIAN and not (self.sigma and self.sigma > 0):
            raise ValueError("GAUSSIAN kernel needs sigma > 0")
        if self.family is KernelFamily.COMPACT_MOLLIFIER and not (self.radius and self.radius > 0):
            raise ValueError("COMPACT_MOLLIFIER kernel needs radius > 0")
        if self.family is KernelFamily.TABULATED and self.table is None:
            raise ValueError("TABULATED kernel needs a table")
        if self.family is not KernelFamily.TABULATED and not self.amplitude > 0:
            raise ValueError("kernel amplitude must be positive")

    @classmethod
    def gaussian(cls, amplitude: float, sigma: float) -> "KernelSpec":
        return cls(KernelFamily.GAUSSIAN, amplitude=amplitude, sigma=sigma)

    @classmethod
    def mollifier(cls, amplitude: float, radius: float) -> "KernelSpec":
        return cls(KernelFamily.COMPACT_MOLLIFIER, amplitude=amplitude, radius=radius)

    @classmethod
    def from_file(cls, path) -> "KernelSpec":
        meta, arrays = binio.read(path)
        if "J" not in arrays:
            raise binio.FormatError(f"{path}: tabulated kernel file needs an array named 'J'")
        return cls(KernelFamily.TABULATED, amplitude=float(meta.get("amplitude", 1.0)),
                   table=arrays["J"])

    def value(self, zx, zy) -> np.ndarray:
        r2 = np.asarray(zx) ** 2 + np.asarray(zy) ** 2
        if self.family is KernelFamily.GAUSSIAN:
            s2 = self.sigma ** 2
            return self.amplitude / (2 * np.pi * s2) * np.exp(-0.5 * r2 / s2)
        if self.family is KernelFamily.COMPACT_MOLLIFIER:
            t = r2 / self.radius ** 2
            inside = t < 1.0
            tt = np.where(inside, t, 0.0)
            val = np.exp(-1.0 / (1.0 - tt))
            return np.where(inside, self.amplitude * val / (_MOLLIFIER_MASS * self.radius ** 2), 0.0)
        raise TypeError("tabulated kernels are only defined on their lattice")

    def gradient(self, zx, zy) -> tuple[np.ndarray, np.ndarray]:
        zx, zy = np.asarray(zx, float), np.asarray(zy, float)
        if self.family is KernelFamily.GAUSSIAN:
            j = self.value(zx, zy)
            s2 = self.sigma ** 2
            return -zx / s2 * j, -zy / s2 * j
        if self.family is KernelFamily.COMPACT_MOLLIFIER:
            r2 = zx ** 2 + zy ** 2
            t = r2 / self.radius ** 2
            inside = t < 1.0
            tt = np.where(inside, t, 0.0)
            j = self.value(zx, zy)
            # d/dz exp(-1/(1-t)) = -exp(.) * 2 z / (R^2 (1-t)^2)
            fac = np.where(inside, -2.0 / (self.radius ** 2 * (1.0 - tt) ** 2), 0.0)
            return fac * zx * j, fac * zy * j
        raise TypeError("tabulated kernels are only defined on their lattice")

    def to_dict(self) -> dict:
        d = {"family": self.family.value, "amplitude": self.amplitude}
        if self.sigma is not None:
            d["sigma"] = self.sigma
        if self.radius is not None:
            d["radius"] = self.radius
        return d


def save_tabulated_kernel(path, table: np.ndarray, amplitude: float = 1.0):
    return binio.write(path, {"kind": "tabulated_kernel", "amplitude": amplitude}, {"J": table})


class Realization(str, enum.Enum):
    DENSE = "DENSE"
    FFT = "FFT"


class ConvolutionOperator:
    """Discrete ``(J*phi)_i = sum_j h^2 J(x_i - x_j) phi_j``.

    BOX grids use zero-padded linear convolution (no wrap-around, the
    integral runs over the domain only); PERIODIC grids use circular
    convolution with the kernel periodised over neighbouring images.
    """

    def __init__(self, grid: Grid2D, spec: KernelSpec, realization: Realization = Realization.FFT):
        self.grid = grid
        self.spec = spec
        self.realization = Realization(realization)
        self._check_resolution()
        self.offsets = self._offset_table()
        if grid.periodic:
            self._kernel_hat = sfft.rfft2(grid.weight * self._circulant_kernel())
        else:
            ny, nx = grid.shape
            # only the central n outputs are kept, so a period of 2n - 1 already avoids aliasing them
            self._pad = (sfft.next_fast_len(2 * ny - 1, real=True), sfft.next_fast_len(2 * nx - 1, real=True))
            self._kernel_hat = sfft.rfft2(grid.weight * self.offsets, s=self._pad)
        self.a = self.apply(np.ones(grid.shape))

    # -- construction -----------------------------------------------------
    def _check_resolution(self):
        g, s = self.grid, self.spec
        h = max(g.hx, g.hy)
        width = s.sigma if s.family is KernelFamily.GAUSSIAN else s.radius
        if width is not None and width < 2 * h:
            raise ResolutionError(
                f"{s.family.value} kernel width {width:g} is below 2 cells ({2 * h:g}) on this grid")

    def _lattice(self):
        g = self.grid
        ix = np.arange(-(g.nx - 1), g.nx)
        iy = np.arange(-(g.ny - 1), g.ny)
        return np.meshgrid(ix * g.hx, iy * g.hy)

    def _offset_table(self) -> np.ndarray:
        g, s = self.grid, self.spec
        if s.family is KernelFamily.TABULATED:
            tab = np.asarray(s.table, float)
            if tab.shape != (2 * g.ny - 1, 2 * g.nx - 1):
                raise GridMismatchError(
                    f"tabulated kernel shape {tab.shape} does not match grid offsets {(2 * g.ny - 1, 2 * g.nx - 1)}")
            return tab
        zx, zy = self._lattice()
        return s.value(zx, zy)

    def _circulant_kernel(self) -> np.ndarray:
        g, s = self.grid, self.spec
        ix = np.arange(g.nx)
        iy = np.arange(g.ny)
        if s.family is KernelFamily.TABULATED:
            cx, cy = g.nx - 1, g.ny - 1
            kern = np.zeros(g.shape)
            for my in (-1, 0, 1):
                for mx in (-1, 0, 1):
                    ox = ix + mx * g.nx
                    oy = iy + my * g.ny
                    okx = (np.abs(ox) <= g.nx - 1)
                    oky = (np.abs(oy) <= g.ny - 1)
                    sub = self.offsets[np.clip(oy + cy, 0, 2 * g.ny - 2)][:, np.clip(ox + cx, 0, 2 * g.nx - 2)]
                    kern += sub * oky[:, None] * okx[None, :]
            return kern
        kern = np.zeros(g.shape)
        X, Y = np.meshgrid(ix * g.hx, iy * g.hy)
        for my in (-2, -1, 0, 1, 2):
            for mx in (-2, -1, 0, 1, 2):
                kern += s.value(X + mx * g.lx, Y + my * g.ly)
        return kern

    # -- application ------------------------------------------------------
    def _fft_apply(self, phi):
        g = self.grid
        if g.periodic:
            return sfft.irfft2(sfft.rfft2(phi) * self._kernel_hat, s=g.shape)
        ny, nx = g.shape
        full = sfft.irfft2(sfft.rfft2(phi, s=self._pad) * self._kernel_hat, s=self._pad)
        return full[ny - 1: 2 * ny - 1, nx - 1: 2 * nx - 1]

    @cached_property
    def dense_matrix(self) -> np.ndarray:
        g = self.grid
        iy, ix = np.divmod(np.arange(g.size), g.nx)
        dx = ix[:, None] - ix[None, :]
        dy = iy[:, None] - iy[None, :]
        if g.periodic:
            kern = self._circulant_kernel()
            return g.weight * kern[dy % g.ny, dx % g.nx]
        return g.weight * self.offsets[dy + g.ny - 1, dx + g.nx - 1]

    def apply(self, phi, realization: Realization | None = None) -> np.ndarray:
        phi = np.asarray(phi, float)
        if phi.shape != self.grid.shape:
            raise GridMismatchError(f"field shape {phi.shape} does not match grid {self.grid.shape}")
        real = self.realization if realization is None else Realization(realization)
        if real is Realization.DENSE:
            return (self.dense_matrix @ phi.ravel()).reshape(self.grid.shape)
        return self._fft_apply(phi)

    # -- cached scalars ---------------------------------------------------
    @property
    def a_inf(self) -> float:
        return float(np.max(np.abs(self.a)))

    @property
    def a_min(self) -> float:
        return float(np.min(self.a))

    @cached_property
    def grad_l1(self) -> float:
        """Quadrature of ``|grad J|`` over the offset lattice ``Omega - Omega``."""
        g, s = self.grid, self.spec
        if s.family is KernelFamily.TABULATED:
            gy, gx = np.gradient(self.offsets, g.hy, g.hx)
        else:
            zx, zy = self._lattice()
            gx, gy = s.gradient(zx, zy)
        return float(g.weight * np.sum(np.hypot(gx, gy)))

    @cached_property
    def l1(self) -> float:
        return float(self.grid.weight * np.sum(np.abs(self.offsets)))


def assemble(grid: Grid2D, spec: KernelSpec, realization: Realization = Realization.FFT) -> ConvolutionOperator:
    return ConvolutionOperator(grid, spec, realization)


def conv_apply(op: ConvolutionOperator, phi) -> np.ndarray:
    return op.apply(phi)


def interaction_energy(op: ConvolutionOperator, phi) -> float:
    """``1/2 ||sqrt(a) phi||^2 - 1/2 (phi, J*phi)``, the nonlocal part of the free energy."""
    phi = np.asarray(phi, float)
    g = op.grid
    return 0.5 * g.inner(op.a * phi, phi) - 0.5 * g.inner(phi, op.apply(phi))


def interaction_energy_double_sum(op: ConvolutionOperator, phi) -> float:
    """Direct ``1/4 sum_ij h^4 J(x_i - x_j) (phi_i - phi_j)^2`` (oracle; O(N^2) memory)."""
    f = np.asarray(phi, float).ravel()
    diff2 = (f[:, None] - f[None, :]) ** 2
    return 0.25 * op.grid.weight * float(np.sum(op.dense_matrix * diff2))


def check_symmetry(op: ConvolutionOperator, n_pairs: int = 3, seed: int = 0) -> CheckReport:
    g = op.grid
    rng = np.random.default_rng(seed)
    tab = op.offsets
    even = float(np.max(np.abs(tab - tab[::-1, ::-1]))) / max(float(np.max(np.abs(tab))), 1e-300)
    worst = 0.0
    for _ in range(n_pairs):
        f, h = rng.standard_normal((2,) + g.shape)
        lhs, rhs = g.inner(op.apply(f), h), g.inner(f, op.apply(h))
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300))
    passed = even <= 1e-12 and worst <= 1e-10
    return CheckReport("kernel_symmetry", passed,
                       {"even_mismatch": even, "operator_asymmetry": worst, "n_pairs": n_pairs})


def check_kernel_assumptions(op: ConvolutionOperator, potential) -> CheckReport:
    """Executable version of the kernel assumptions and the coercivity interplay with ``F``.

    For the logarithmic potential the coercivity criterion is
    ``inf a > theta_c - theta`` and the certified constant is
    ``c0 = inf a - (theta_c - theta)``.  Other potentials get a sampled lower
    bound of ``F''(s) + inf a`` over ``s`` in (-1, 1).
    """
    from .potentials import LogarithmicPotential, SingularPotential, sample_open_interval

    a_min, a_inf = op.a_min, op.a_inf
    children = [
        CheckReport("a_nonnegative", a_min >= 0.0, {"inf_a": a_min, "a_inf": a_inf}),
        check_symmetry(op),
        CheckReport("kernel_integrable", bool(np.isfinite(op.l1) and np.isfinite(op.grad_l1)),
                    {"J_l1": op.l1, "gradJ_l1": op.grad_l1}),
    ]
    details = {"inf_a": a_min, "a_inf": a_inf, "gradJ_l1": op.grad_l1}
    if isinstance(potential, LogarithmicPotential):
        th, thc = potential.theta, potential.theta_c
        if not (0 < th < thc):
            children.append(CheckReport(
                "log_temperature_range", False, {"theta": th, "theta_c": thc},
                message="precondition violated: logarithmic potential requires 0 < theta < theta_c"))
            return CheckReport.group("kernel_assumptions", children, **details)
        c0 = a_min - (thc - th)
        children.append(CheckReport(
            "kernel_coercivity", c0 > 0, {"criterion": "inf_a > theta_c - theta", "inf_a": a_min,
                                      "theta_c_minus_theta": thc - th, "margin": c0},
            message="" if c0 > 0 else f"inf a = {a_min:.6g} does not exceed theta_c - theta = {thc - th:.6g}"))
        details["c0"] = c0
    elif isinstance(potential, SingularPotential):
        s = sample_open_interval(-1.0, 1.0)
        c0 = float(np.min(potential.d2(s))) + a_min
        children.append(CheckReport("kernel_coercivity", c0 > 0,
                                    {"sampled_min_F2_plus_inf_a": c0, "samples": len(s)},
                                    message="passes on sample" if c0 > 0 else "fails on sample"))
        details["c0"] = c0
    else:
        s = np.linspace(-5, 5, 20481)
        c0 = float(np.min(potential.d2(s))) + a_min
        children.append(CheckReport("kernel_coercivity", c0 > 0, {"sampled_min_F2_plus_inf_a": c0}))
        details["c0"] = c0
    return CheckReport.group("kernel_assumptions", children, **details)
