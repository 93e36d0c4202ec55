"""Rectangular grids, discrete differential operators and spectral bases.

Nodes sit at cell centres, ``x_i = (i + 1/2) h_x``, and fields are stored
row-major over ``(y, x)``.  Two backends share one interface:

``BOX_NOSLIP``
    Scalars use the compact Neumann stencil: the gradient lives on interior
    cell faces (boundary faces carry zero flux) and ``div = -grad^T``.
    Velocities are nodal with the outer ring of nodes held at zero (the
    no-slip boundary nodes) and centred differences everywhere.
``PERIODIC``
    Fourier pseudo-spectral derivatives on the torus, Nyquist symbol zeroed so
    that the derivative matrix is exactly skew-symmetric.

Every identity the Galerkin scheme relies on (summation by parts, exact
discrete divergence of the basis) holds to round-off for both backends.
"""

from __future__ import annotations

import enum
import hashlib
import json
import os
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.fft as sfft
import scipy.linalg as sla
import scipy.sparse as sp

from . import binio


def _zpad(f, py: int, px: int) -> np.ndarray:
    """Zero padding by ``py`` rows and ``px`` columns on each side (cheaper than ``np.pad``)."""
    ny, nx = f.shape
    out = np.zeros((ny + 2 * py, nx + 2 * px))
    out[py: py + ny, px: px + nx] = f
    return out


class CapacityError(ValueError):
    """Requested more modes than the discrete space can hold."""


class EigenSolverError(RuntimeError):
    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class LinearSolverError(RuntimeError):
    pass


class Backend(str, enum.Enum):
    PERIODIC = "PERIODIC"
    BOX_NOSLIP = "BOX_NOSLIP"


MIN_CELLS = 8


@dataclass(frozen=True)
class Grid2D:
    nx: int
    ny: int
    lx: float = 1.0
    ly: float = 1.0
    backend: Backend = Backend.BOX_NOSLIP

    def __post_init__(self):
        if self.nx < MIN_CELLS or self.ny < MIN_CELLS:
            raise ValueError(f"grid needs at least {MIN_CELLS} cells per axis, got {self.nx}x{self.ny}")
        if not (self.lx > 0 and self.ly > 0):
            raise ValueError("domain edge lengths must be positive")
        object.__setattr__(self, "backend", Backend(self.backend))

    # -- geometry ---------------------------------------------------------
    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def size(self) -> int:
        return self.nx * self.ny

    @property
    def hx(self) -> float:
        return self.lx / self.nx

    @property
    def hy(self) -> float:
        return self.ly / self.ny

    @property
    def weight(self) -> float:
        """Quadrature weight of every node."""
        return self.hx * self.hy

    @property
    def area(self) -> float:
        return self.lx * self.ly

    @property
    def periodic(self) -> bool:
        return self.backend is Backend.PERIODIC

    @cached_property
    def x(self) -> np.ndarray:
        return (np.arange(self.nx) + 0.5) * self.hx

    @cached_property
    def y(self) -> np.ndarray:
        return (np.arange(self.ny) + 0.5) * self.hy

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.y)

    def key(self) -> dict:
        return {"backend": self.backend.value, "nx": self.nx, "ny": self.ny,
                "lx": float(self.lx), "ly": float(self.ly)}

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.key(), sort_keys=True).encode()).hexdigest()[:16]

    # -- quadrature -------------------------------------------------------
    def integrate(self, f) -> float:
        return float(self.weight * np.sum(f))

    def inner(self, f, g) -> float:
        return float(self.weight * np.sum(np.asarray(f) * np.asarray(g)))

    def flux_inner(self, fa, fb) -> float:
        return float(self.weight * (np.sum(fa[0] * fb[0]) + np.sum(fa[1] * fb[1])))

    # -- spectral symbols (periodic) ----------------------------------------
    @cached_property
    def _kx(self) -> np.ndarray:
        k = 2 * np.pi * sfft.rfftfreq(self.nx, d=self.hx)
        if self.nx % 2 == 0:
            k[-1] = 0.0
        return k

    @cached_property
    def _ky(self) -> np.ndarray:
        k = 2 * np.pi * sfft.fftfreq(self.ny, d=self.hy)
        if self.ny % 2 == 0:
            k[self.ny // 2] = 0.0
        return k

    def _dx_spec(self, f):
        return sfft.irfft2(1j * self._kx[None, :] * sfft.rfft2(f), s=self.shape)

    def _dy_spec(self, f):
        return sfft.irfft2(1j * self._ky[:, None] * sfft.rfft2(f), s=self.shape)

    # -- scalar operators -------------------------------------------------
    def grad(self, f):
        """Scalar gradient into flux space (faces for BOX, nodes for PERIODIC)."""
        if self.periodic:
            return self._dx_spec(f), self._dy_spec(f)
        return np.diff(f, axis=1) / self.hx, np.diff(f, axis=0) / self.hy

    def div(self, flux):
        """Divergence of a flux-space vector; exactly ``-grad^T``."""
        gx, gy = flux
        if self.periodic:
            return self._dx_spec(gx) + self._dy_spec(gy)
        gxp = _zpad(gx, 0, 1)
        gyp = _zpad(gy, 1, 0)
        return np.diff(gxp, axis=1) / self.hx + np.diff(gyp, axis=0) / self.hy

    def to_flux(self, f):
        """Interpolate a nodal scalar to flux locations (face averages)."""
        if self.periodic:
            return f, f
        return 0.5 * (f[:, 1:] + f[:, :-1]), 0.5 * (f[1:, :] + f[:-1, :])

    def vec_to_flux(self, v):
        """Average each velocity component onto its own face family; adjoint of :meth:`nodal`."""
        if self.periodic:
            return v[0], v[1]
        return 0.5 * (v[0][:, 1:] + v[0][:, :-1]), 0.5 * (v[1][1:, :] + v[1][:-1, :])

    def nodal(self, flux) -> np.ndarray:
        """Average a flux-space vector back to the nodes."""
        gx, gy = flux
        if self.periodic:
            return np.stack([gx, gy])
        gxp = _zpad(gx, 0, 1)
        gyp = _zpad(gy, 1, 0)
        return np.stack([0.5 * (gxp[:, 1:] + gxp[:, :-1]), 0.5 * (gyp[1:, :] + gyp[:-1, :])])

    def grad_nodes(self, f) -> np.ndarray:
        return self.nodal(self.grad(f))

    def neg_laplacian(self, f):
        return -self.div(self.grad(f))

    @cached_property
    def _lap_symbol(self) -> np.ndarray:
        """Eigenvalues of ``-div grad`` in the transform that diagonalises it."""
        if self.periodic:
            return self._ky[:, None] ** 2 + self._kx[None, :] ** 2
        jx = np.arange(self.nx)
        jy = np.arange(self.ny)
        ex = (2.0 / self.hx * np.sin(np.pi * jx / (2 * self.nx))) ** 2
        ey = (2.0 / self.hy * np.sin(np.pi * jy / (2 * self.ny))) ** 2
        return ey[:, None] + ex[None, :]

    def helmholtz_resolvent(self, f, alpha: float):
        """Solve ``(I + alpha B_h) u = f`` with ``B_h = I - Delta_h`` exactly."""
        denom = 1.0 + alpha * (1.0 + self._lap_symbol)
        if self.periodic:
            return sfft.irfft2(sfft.rfft2(f) / denom, s=self.shape)
        return sfft.idctn(sfft.dctn(f, type=2, norm="ortho") / denom, type=2, norm="ortho")

    def solve_neg_laplacian(self, f):
        """Zero-mean solution of ``-Delta_h u = f`` for zero-mean ``f`` (Neumann / periodic)."""
        sym = self._lap_symbol
        inv = np.where(sym > 0, 1.0 / np.where(sym > 0, sym, 1.0), 0.0)
        if self.periodic:
            return sfft.irfft2(sfft.rfft2(f) * inv, s=self.shape)
        return sfft.idctn(sfft.dctn(f, type=2, norm="ortho") * inv, type=2, norm="ortho")

    def scalar_operator_matrix(self) -> np.ndarray:
        """Dense matrix of ``B_h = I - Delta_h`` (oracle use only)."""
        eye = np.eye(self.size)
        cols = [(f.reshape(self.shape) + self.neg_laplacian(f.reshape(self.shape))).ravel()
                for f in eye]
        return np.array(cols).T

    # -- velocity operators -----------------------------------------------
    @cached_property
    def velocity_mask(self) -> np.ndarray:
        """Boolean (ny, nx) mask of free velocity nodes."""
        m = np.ones(self.shape, dtype=bool)
        if not self.periodic:
            m[0, :] = m[-1, :] = m[:, 0] = m[:, -1] = False
        return m

    def vgrad(self, u) -> np.ndarray:
        """Nodal velocity gradient ``G[i, j] = d_j u_i``, shape (2, 2, ny, nx)."""
        out = np.empty((2, 2) + self.shape)
        for i in range(2):
            if self.periodic:
                out[i, 0] = self._dx_spec(u[i])
                out[i, 1] = self._dy_spec(u[i])
            else:
                p = _zpad(u[i], 1, 1)
                out[i, 0] = (p[1:-1, 2:] - p[1:-1, :-2]) / (2 * self.hx)
                out[i, 1] = (p[2:, 1:-1] - p[:-2, 1:-1]) / (2 * self.hy)
        return out

    def vdiv(self, u):
        g = self.vgrad(u)
        return g[0, 0] + g[1, 1]

    def vgrad_faces(self, u):
        """Compact velocity gradient with ``-Delta_h = grad^T grad`` (no-slip: zero outside)."""
        if self.periodic:
            g = self.vgrad(u)
            return [g[0, 0], g[0, 1], g[1, 0], g[1, 1]]
        out = []
        for i in range(2):
            p = _zpad(u[i], 1, 1)
            out.append(np.diff(p[1:-1, :], axis=1) / self.hx)
            out.append(np.diff(p[:, 1:-1], axis=0) / self.hy)
        return out

    def vgrad_faces_norm2(self, u) -> float:
        return float(self.weight * sum(np.sum(g * g) for g in self.vgrad_faces(u)))

    def vneg_laplacian(self, u) -> np.ndarray:
        if self.periodic:
            return np.stack([self.neg_laplacian(u[0]), self.neg_laplacian(u[1])])
        out = np.empty_like(u)
        for i in range(2):
            p = _zpad(u[i], 1, 1)
            out[i] = ((2 * p[1:-1, 1:-1] - p[1:-1, 2:] - p[1:-1, :-2]) / self.hx ** 2
                      + (2 * p[1:-1, 1:-1] - p[2:, 1:-1] - p[:-2, 1:-1]) / self.hy ** 2)
        return out * self.velocity_mask

    # -- sparse assembly (BOX) ----------------------------------------------
    def _box_velocity_matrices(self):
        """Centred divergence and Dirichlet Laplacian on the interior velocity unknowns."""
        def cdiff(n, h):
            e = np.ones(n - 1)
            return sp.diags([-e, e], [-1, 1], shape=(n, n)) / (2 * h)

        def lap1(n, h):
            e = np.ones(n)
            return sp.diags([e[1:], -2 * e, e[1:]], [-1, 0, 1], shape=(n, n)) / h ** 2

        ix, iy = sp.identity(self.nx), sp.identity(self.ny)
        dx = sp.kron(iy, cdiff(self.nx, self.hx))
        dy = sp.kron(cdiff(self.ny, self.hy), ix)
        lap = sp.kron(iy, lap1(self.nx, self.hx)) + sp.kron(lap1(self.ny, self.hy), ix)
        idx = np.flatnonzero(self.velocity_mask.ravel())
        ext = sp.identity(self.size, format="csr")[:, idx]
        div = sp.hstack([dx @ ext, dy @ ext]).tocsr()
        lap_int = (ext.T @ (-lap) @ ext).tocsr()
        return idx, div, lap_int


# ---------------------------------------------------------------------------
# spectral bases
# ---------------------------------------------------------------------------

@dataclass
class ScalarBasis:
    """Orthonormal eigenfunctions of ``B_h = I - Delta_h`` (Neumann / periodic)."""

    grid: Grid2D
    psi: np.ndarray          # (n, ny, nx)
    mu: np.ndarray           # (n,)
    wavenumbers: np.ndarray  # (n, 2) integer wavenumbers
    kind: np.ndarray         # (n,) 0 = cos, 1 = sin

    @property
    def n(self) -> int:
        return len(self.mu)

    @cached_property
    def matrix(self) -> np.ndarray:
        return self.psi.reshape(self.n, -1)


@dataclass
class VelocityBasis:
    """Orthonormal discretely divergence-free eigenfields of the Stokes operator."""

    grid: Grid2D
    w: np.ndarray    # (n, 2, ny, nx)
    lam: np.ndarray  # (n,)
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.lam)

    @cached_property
    def matrix(self) -> np.ndarray:
        return self.w.reshape(self.n, -1)


@dataclass
class SpectralBasis:
    grid: Grid2D
    scalar: ScalarBasis
    velocity: VelocityBasis

    @property
    def meta(self) -> dict:
        return {"grid": self.grid.key(), "grid_hash": self.grid.digest(),
                "n_phi": self.scalar.n, "n_u": self.velocity.n}


def _orthonormalize(grid: Grid2D, fields: np.ndarray) -> np.ndarray:
    """Gram-Schmidt (via QR) in the discrete L2 product, keeping each field's orientation."""
    n = fields.shape[0]
    flat = fields.reshape(n, -1).T * np.sqrt(grid.weight)
    q, r = np.linalg.qr(flat)
    q = q * np.sign(np.diag(r))[None, :]
    return (q.T / np.sqrt(grid.weight)).reshape(fields.shape)


def scalar_capacity(grid: Grid2D) -> int:
    if grid.periodic:
        return (2 * ((grid.nx - 1) // 2) + 1) * (2 * ((grid.ny - 1) // 2) + 1)
    return grid.size


def _periodic_wavevectors(grid: Grid2D, include_zero: bool):
    kx_max, ky_max = (grid.nx - 1) // 2, (grid.ny - 1) // 2
    out = []
    for ky in range(0, ky_max + 1):
        for kx in range(-kx_max, kx_max + 1):
            if ky == 0 and kx < 0:
                continue
            if kx == 0 and ky == 0 and not include_zero:
                continue
            out.append((kx, ky))
    return out


def build_scalar_basis(grid: Grid2D, n_modes: int) -> ScalarBasis:
    cap = scalar_capacity(grid)
    if n_modes < 1 or n_modes > cap:
        raise CapacityError(f"{n_modes} scalar modes requested, grid capacity is {cap}")
    X, Y = grid.mesh()
    entries = []
    if grid.periodic:
        for kx, ky in _periodic_wavevectors(grid, include_zero=True):
            mu = 1.0 + (2 * np.pi * kx / grid.lx) ** 2 + (2 * np.pi * ky / grid.ly) ** 2
            kinds = (0,) if (kx, ky) == (0, 0) else (0, 1)
            for kind in kinds:
                entries.append((mu, kx, ky, kind))
    else:
        sym = grid._lap_symbol
        for ky in range(grid.ny):
            for kx in range(grid.nx):
                entries.append((1.0 + sym[ky, kx], kx, ky, 0))
    entries.sort()
    entries = entries[:n_modes]
    psi = np.empty((n_modes,) + grid.shape)
    for m, (_, kx, ky, kind) in enumerate(entries):
        if grid.periodic:
            theta = 2 * np.pi * (kx * X / grid.lx + ky * Y / grid.ly)
            psi[m] = np.sin(theta) if kind else np.cos(theta)
        else:
            psi[m] = np.cos(kx * np.pi * X / grid.lx) * np.cos(ky * np.pi * Y / grid.ly)
    psi = _orthonormalize(grid, psi)
    return ScalarBasis(grid, psi, np.array([e[0] for e in entries]),
                       np.array([(e[1], e[2]) for e in entries], dtype=int),
                       np.array([e[3] for e in entries], dtype=int))


def _periodic_velocity_basis(grid: Grid2D, n_modes: int) -> VelocityBasis:
    cap = scalar_capacity(grid) - 1
    if n_modes < 1 or n_modes > cap:
        raise CapacityError(f"{n_modes} velocity modes requested, divergence-free capacity is {cap}")
    X, Y = grid.mesh()
    entries = []
    for kx, ky in _periodic_wavevectors(grid, include_zero=False):
        lam = (2 * np.pi * kx / grid.lx) ** 2 + (2 * np.pi * ky / grid.ly) ** 2
        entries.extend([(lam, kx, ky, 0), (lam, kx, ky, 1)])
    entries.sort()
    entries = entries[:n_modes]
    w = np.empty((n_modes, 2) + grid.shape)
    for m, (_, kx, ky, kind) in enumerate(entries):
        kp = np.array([kx / grid.lx, ky / grid.ly])
        e = np.array([-kp[1], kp[0]]) / np.linalg.norm(kp)
        theta = 2 * np.pi * (kx * X / grid.lx + ky * Y / grid.ly)
        prof = np.sin(theta) if kind else np.cos(theta)
        w[m, 0] = e[0] * prof
        w[m, 1] = e[1] * prof
    w = _orthonormalize(grid, w) * grid.velocity_mask
    return VelocityBasis(grid, w, np.array([e[0] for e in entries]),
                         {"route": "analytic-fourier"})


def _probe_fields(grid: Grid2D, count: int) -> np.ndarray:
    rng = np.random.default_rng(20240601)
    return rng.standard_normal((count, 2) + grid.shape) * grid.velocity_mask


def _box_velocity_basis(grid: Grid2D, n_modes: int) -> VelocityBasis:
    idx, div, lap_int = grid._box_velocity_matrices()
    dmat = div.toarray()
    try:
        z = sla.null_space(dmat, rcond=1e-10)
    except np.linalg.LinAlgError as exc:
        raise EigenSolverError(f"SVD of discrete divergence failed: {exc}") from exc
    if z.shape[1] < n_modes:
        raise CapacityError(
            f"{n_modes} velocity modes requested, discrete divergence-free no-slip subspace "
            f"has dimension {z.shape[1]} on a {grid.nx}x{grid.ny} grid")
    lap2 = sp.block_diag([lap_int, lap_int]).tocsr()
    lz = lap2 @ z
    h = z.T @ lz
    h = 0.5 * (h + h.T)
    try:
        lam, v = sla.eigh(h, subset_by_index=[0, n_modes - 1])
    except np.linalg.LinAlgError as exc:
        raise EigenSolverError(f"dense symmetric eigensolve failed: {exc}") from exc
    residuals = np.linalg.norm(h @ v - v * lam[None, :], axis=0)
    if np.any(residuals > 1e-8 * np.abs(lam)):
        raise EigenSolverError("Stokes eigenpairs failed the residual test", residuals)

    nint = len(idx)
    full = np.zeros((n_modes, 2, grid.size))
    zv = z @ v
    full[:, 0, idx] = zv[:nint].T
    full[:, 1, idx] = zv[nint:].T
    full = full.reshape((n_modes, 2) + grid.shape)

    # canonical orientation inside (near-)degenerate eigenspaces
    probes = _probe_fields(grid, n_modes).reshape(n_modes, -1)
    flat = full.reshape(n_modes, -1)
    j = 0
    while j < n_modes:
        k = j + 1
        while k < n_modes and lam[k] - lam[k - 1] <= 1e-8 * abs(lam[k - 1]):
            k += 1
        block = flat[j:k]
        proj = block @ probes[: k - j].T
        q, r = np.linalg.qr(proj)
        q = q * np.sign(np.diag(r) + (np.diag(r) == 0))[None, :]
        flat[j:k] = q.T @ block
        lam[j:k] = np.mean(lam[j:k]) if k - j > 1 else lam[j:k]
        j = k
    w = flat.reshape(full.shape) / np.sqrt(grid.weight)
    w = _orthonormalize(grid, w) * grid.velocity_mask
    return VelocityBasis(grid, w, lam.copy(),
                         {"route": "dense-nullspace-eigh", "nullspace_dim": int(z.shape[1]),
                          "residual_max": float(np.max(residuals / np.abs(lam)))})


def default_cache_dir() -> Path:
    return Path(os.environ.get("NLCHNS_CACHE_DIR", Path.home() / ".cache" / "nlchns"))


def _cache_path(cache_dir: Path, grid: Grid2D, n_modes: int) -> Path:
    return Path(cache_dir) / f"velocity_{grid.backend.value}_{grid.nx}x{grid.ny}_{grid.digest()}_{n_modes}.bin"


def _cache_meta(grid: Grid2D, n_modes: int) -> dict:
    return {"kind": "velocity_basis", **grid.key(), "n_modes": int(n_modes)}


def save_velocity_basis(path, basis: VelocityBasis) -> Path:
    meta = {**_cache_meta(basis.grid, basis.n), "info": basis.meta}
    return binio.write(path, meta, {"lam": basis.lam, "w": basis.w})


def load_velocity_basis(path, grid: Grid2D, n_modes: int) -> VelocityBasis | None:
    """Load a cached basis; ``None`` when the file is missing or its header does not match."""
    path = Path(path)
    if not path.exists():
        return None
    try:
        meta, arrays = binio.read(path)
    except (binio.FormatError, OSError, KeyError, ValueError):
        return None
    expected = _cache_meta(grid, n_modes)
    if any(meta.get(k) != v for k, v in expected.items()):
        return None
    if arrays["w"].shape != (n_modes, 2) + grid.shape:
        return None
    return VelocityBasis(grid, arrays["w"], arrays["lam"], dict(meta.get("info", {})))


_MEMO: dict = {}


def build_velocity_basis(grid: Grid2D, n_modes: int, cache_dir=None, use_cache: bool = True) -> VelocityBasis:
    if grid.periodic:
        return _periodic_velocity_basis(grid, n_modes)
    memo_key = (grid, n_modes)
    if use_cache and memo_key in _MEMO:
        return _MEMO[memo_key]
    path = _cache_path(cache_dir or default_cache_dir(), grid, n_modes)
    basis = load_velocity_basis(path, grid, n_modes) if use_cache else None
    if basis is None:
        basis = _box_velocity_basis(grid, n_modes)
        if use_cache:
            try:
                save_velocity_basis(path, basis)
            except OSError:
                pass
    if use_cache:
        _MEMO[memo_key] = basis
    return basis


def build_spectral_basis(grid: Grid2D, n_phi: int, n_u: int, cache_dir=None) -> SpectralBasis:
    return SpectralBasis(grid, build_scalar_basis(grid, n_phi),
                         build_velocity_basis(grid, n_u, cache_dir=cache_dir))


# ---------------------------------------------------------------------------
# projections and spectral calculus
# ---------------------------------------------------------------------------

def _scalar_part(basis):
    return basis.scalar if isinstance(basis, SpectralBasis) else basis


def _velocity_part(basis):
    return basis.velocity if isinstance(basis, SpectralBasis) else basis


def project_scalar(basis, f, n: int | None = None) -> np.ndarray:
    sb = _scalar_part(basis)
    n = sb.n if n is None else n
    if n > sb.n:
        raise CapacityError(f"{n} modes requested, basis holds {sb.n}")
    return sb.grid.weight * (sb.matrix[:n] @ np.asarray(f).ravel())


def reconstruct_scalar(basis, coeffs) -> np.ndarray:
    sb = _scalar_part(basis)
    c = np.asarray(coeffs)
    return (c @ sb.matrix[: len(c)]).reshape(sb.grid.shape)


def project_velocity(basis, v, n: int | None = None) -> np.ndarray:
    vb = _velocity_part(basis)
    n = vb.n if n is None else n
    if n > vb.n:
        raise CapacityError(f"{n} modes requested, basis holds {vb.n}")
    return vb.grid.weight * (vb.matrix[:n] @ np.asarray(v).ravel())


def reconstruct_velocity(basis, coeffs) -> np.ndarray:
    vb = _velocity_part(basis)
    c = np.asarray(coeffs)
    return (c @ vb.matrix[: len(c)]).reshape((2,) + vb.grid.shape)


def apply_fractional_stokes(basis, coeffs, s: float) -> np.ndarray:
    """Coefficients of ``A^s u`` for ``u`` given in the velocity eigenbasis."""
    vb = _velocity_part(basis)
    c = np.asarray(coeffs, dtype=float)
    return vb.lam[: len(c)] ** s * c


# ---------------------------------------------------------------------------
# Leray projector
# ---------------------------------------------------------------------------

_LERAY_CACHE: dict = {}


def _box_leray_factors(grid: Grid2D):
    if grid not in _LERAY_CACHE:
        idx, div, _ = grid._box_velocity_matrices()
        d = div.toarray()
        s = d @ d.T
        evals, evecs = np.linalg.eigh(s)
        keep = evals > 1e-10 * evals.max()
        pinv = (evecs[:, keep] / evals[keep]) @ evecs[:, keep].T
        _LERAY_CACHE[grid] = (idx, d, pinv)
    return _LERAY_CACHE[grid]


def leray_project(grid: Grid2D, v) -> np.ndarray:
    """Discrete L2-orthogonal projection onto divergence-free (no-slip) velocity fields.

    ``P v = v - grad_h p`` with ``grad_h = div_h^T`` and ``p`` solving the
    discrete pressure-Poisson problem in the least-squares sense.
    """
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("leray_project: non-finite input")
    if grid.periodic:
        vh = np.stack([sfft.rfft2(v[0]), sfft.rfft2(v[1])])
        kx = grid._kx[None, :] * np.ones((grid.ny, 1))
        ky = grid._ky[:, None] * np.ones((1, len(grid._kx)))
        k2 = kx ** 2 + ky ** 2
        safe = np.where(k2 > 0, k2, 1.0)
        dot = (kx * vh[0] + ky * vh[1]) / safe
        dot = np.where(k2 > 0, dot, 0.0)
        out = np.stack([sfft.irfft2(vh[0] - kx * dot, s=grid.shape),
                        sfft.irfft2(vh[1] - ky * dot, s=grid.shape)])
        return out
    idx, d, pinv = _box_leray_factors(grid)
    vi = np.concatenate([v[0].ravel()[idx], v[1].ravel()[idx]])
    rhs = d @ vi
    p = pinv @ rhs
    resid = d.T @ (d @ (d.T @ p)) - d.T @ rhs
    scale = max(np.linalg.norm(d.T @ rhs), 1e-300)
    if np.linalg.norm(resid) > 1e-8 * scale:
        raise LinearSolverError(f"pressure-Poisson solve inconsistent (residual {np.linalg.norm(resid):.3e})")
    pi = vi - d.T @ p
    out = np.zeros((2, grid.size))
    out[0, idx] = pi[: len(idx)]
    out[1, idx] = pi[len(idx):]
    return out.reshape((2,) + grid.shape)


def discrete_gradient_velocity(grid: Grid2D, q) -> np.ndarray:
    """The velocity field ``div_h^* q`` (negative adjoint of the velocity divergence)."""
    if grid.periodic:
        return np.stack([grid._dx_spec(q), grid._dy_spec(q)])
    idx, d, _ = _box_leray_factors(grid)
    g = -(d.T @ np.asarray(q).ravel())
    out = np.zeros((2, grid.size))
    out[0, idx] = g[: len(idx)]
    out[1, idx] = g[len(idx):]
    return out.reshape((2,) + grid.shape)
