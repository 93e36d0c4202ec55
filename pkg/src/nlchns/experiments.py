"""Simulation configs, single runs, continuation studies and the property-check suite."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, binio
from .density import DensityConfigError, DensityModel
from .diagnostics import (COLUMNS, DiagnosticsSample, check_cancellation_identities, check_neumann_identities,
                          gradient_coercivity_check, random_state, sample)
from .galerkin import (CoefficientLaw, Forcing, GalerkinState, GalerkinSystem, InitialDataError,
                       IntegratorConfig, PreflightError, CHANNELS, initial_state, integrate)
from .geometry import (Backend, CapacityError, Grid2D, build_spectral_basis, build_velocity_basis,
                       default_cache_dir, leray_project)
from .kernels import ConvolutionOperator, KernelFamily, KernelSpec, Realization, ResolutionError
from .potentials import LogarithmicPotential, regularize
from .reports import CheckReport, _plain

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_PREFLIGHT = 2
EXIT_INTEGRATOR = 3
EXIT_IO = 4


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def _strict(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    return cls(**data)


@dataclass(frozen=True)
class GridConfig:
    backend: str = "BOX_NOSLIP"
    nx: int = 32
    ny: int = 32
    lx: float = 1.0
    ly: float = 1.0


@dataclass(frozen=True)
class ModesConfig:
    n_u: int = 32
    n_phi: int = 32


@dataclass(frozen=True)
class KernelConfig:
    family: str = "GAUSSIAN"
    amplitude: float = 3.5
    sigma: float | None = 0.125
    radius: float | None = None
    path: str | None = None


@dataclass(frozen=True)
class PotentialConfig:
    theta: float = 0.3
    theta_c: float = 1.0
    p: int = 4


@dataclass(frozen=True)
class DensityConfig:
    rho1: float = 1.0
    rho2: float = 3.0
    width: float = 0.25


@dataclass(frozen=True)
class LawConfig:
    law: str = "CONSTANT"
    value: float | None = 1.0
    low: float | None = None
    high: float | None = None


@dataclass(frozen=True)
class ForcingConfig:
    preset: str = "ZERO"
    vector: tuple = (0.0, 0.0)
    frequency: float = 0.0


@dataclass(frozen=True)
class InitialConfig:
    preset: str = "RANDOM_SMOOTH"
    seed: int = 0
    amplitude: float = 0.6
    mean: float = 0.0
    velocity_amplitude: float = 0.0
    margin: float = 0.05
    width: float = 0.05
    path: str | None = None


@dataclass(frozen=True)
class IntegratorSection:
    rtol: float = 1e-6
    atol: float = 1e-8
    max_step: float = 0.01
    min_step: float = 1e-10


@dataclass(frozen=True)
class OutputConfig:
    cadence: float = 0.01
    snapshots: int = 3
    dir: str | None = None


@dataclass(frozen=True)
class SimulationConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    modes: ModesConfig = field(default_factory=ModesConfig)
    kernel: KernelConfig = field(default_factory=KernelConfig)
    potential: PotentialConfig = field(default_factory=PotentialConfig)
    density: DensityConfig = field(default_factory=DensityConfig)
    viscosity: LawConfig = field(default_factory=lambda: LawConfig("CONSTANT", 0.05))
    mobility: LawConfig = field(default_factory=LawConfig)
    epsilon: float = 0.05
    delta: float = 1e-3
    t_end: float = 0.5
    forcing: ForcingConfig = field(default_factory=ForcingConfig)
    initial: InitialConfig = field(default_factory=InitialConfig)
    integrator: IntegratorSection = field(default_factory=IntegratorSection)
    output: OutputConfig = field(default_factory=OutputConfig)
    schema_version: int = SCHEMA_VERSION

    _SECTIONS = {"grid": GridConfig, "modes": ModesConfig, "kernel": KernelConfig,
                 "potential": PotentialConfig, "density": DensityConfig, "viscosity": LawConfig,
                 "mobility": LawConfig, "forcing": ForcingConfig, "initial": InitialConfig,
                 "integrator": IntegratorSection, "output": OutputConfig}

    @classmethod
    def from_dict(cls, data: dict) -> "SimulationConfig":
        if not isinstance(data, dict):
            raise ConfigError("config: expected a JSON object")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"config: unknown key(s) {', '.join(unknown)}")
        version = data.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"config: unsupported schema_version {version} (expected {SCHEMA_VERSION})")
        kwargs = {}
        for key, value in data.items():
            if key in cls._SECTIONS:
                kwargs[key] = _strict(cls._SECTIONS[key], value, key)
            else:
                kwargs[key] = value
        if "forcing" in kwargs:
            kwargs["forcing"] = dataclasses.replace(kwargs["forcing"], vector=tuple(kwargs["forcing"].vector))
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "SimulationConfig":
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        d = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            d[f.name] = dataclasses.asdict(v) if dataclasses.is_dataclass(v) else v
        d["forcing"]["vector"] = list(d["forcing"]["vector"])
        return d

    def replace(self, **changes) -> "SimulationConfig":
        """Copy with top-level fields or dotted section fields (``"modes.n_u"``) replaced."""
        top, nested = {}, {}
        for key, value in changes.items():
            if "." in key:
                sec, name = key.split(".", 1)
                nested.setdefault(sec, {})[name] = value
            else:
                top[key] = value
        for sec, vals in nested.items():
            top[sec] = dataclasses.replace(getattr(self, sec), **vals)
        cfg = dataclasses.replace(self, **top)
        cfg.validate()
        return cfg

    def digest(self) -> str:
        d = self.to_dict()
        d["output"] = {k: v for k, v in d["output"].items() if k != "dir"}
        raw = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(raw).hexdigest()[:16]

    def validate(self):
        try:
            Backend(self.grid.backend)
        except ValueError as exc:
            raise ConfigError(f"grid.backend: {exc}") from exc
        if self.modes.n_u < 1 or self.modes.n_phi < 1:
            raise ConfigError("modes: counts must be positive")
        if not (0 < self.epsilon <= 0.5):
            raise ConfigError("epsilon must lie in (0, 0.5]")
        if self.delta < 0:
            raise ConfigError("delta must be non-negative")
        if not self.t_end > 0:
            raise ConfigError("t_end must be positive")
        ini = self.initial
        if ini.preset not in ("RANDOM_SMOOTH", "TANH_STRIPE", "FILE"):
            raise ConfigError(f"initial.preset: unknown preset {ini.preset}")
        if not abs(ini.mean) < 1:
            raise ConfigError("initial.mean must satisfy |mean| < 1")
        if ini.preset in ("RANDOM_SMOOTH", "TANH_STRIPE") and abs(ini.mean) + ini.amplitude > 1 - ini.margin + 1e-12:
            raise ConfigError(f"initial: |mean| + amplitude = {abs(ini.mean) + ini.amplitude:g} exceeds "
                              f"1 - margin = {1 - ini.margin:g}")
        if self.forcing.preset not in ("ZERO", "CONSTANT", "TIME_SINUSOID"):
            raise ConfigError(f"forcing.preset: unknown preset {self.forcing.preset}")
        if self.output.cadence <= 0:
            raise ConfigError("output.cadence must be positive")
        try:
            DensityModel(self.density.rho1, self.density.rho2, self.density.width)
        except DensityConfigError as exc:
            raise ConfigError(f"density: {exc}") from exc


def reference_config() -> SimulationConfig:
    return SimulationConfig()


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------

def make_grid(cfg: SimulationConfig) -> Grid2D:
    g = cfg.grid
    return Grid2D(g.nx, g.ny, g.lx, g.ly, Backend(g.backend))


def make_kernel(cfg: SimulationConfig) -> KernelSpec:
    k = cfg.kernel
    fam = KernelFamily(k.family)
    if fam is KernelFamily.GAUSSIAN:
        return KernelSpec.gaussian(k.amplitude, k.sigma)
    if fam is KernelFamily.COMPACT_MOLLIFIER:
        return KernelSpec.mollifier(k.amplitude, k.radius)
    if k.path is None:
        raise ConfigError("kernel.path is required for TABULATED kernels")
    return KernelSpec.from_file(k.path)


def make_law(lc: LawConfig) -> CoefficientLaw:
    if lc.law == "CONSTANT":
        return CoefficientLaw.constant(lc.value)
    if lc.law == "TANH_BLEND":
        return CoefficientLaw.tanh_blend(lc.low, lc.high)
    raise ConfigError(f"unknown coefficient law {lc.law}")


def make_forcing(cfg: SimulationConfig) -> Forcing:
    f = cfg.forcing
    return Forcing(f.preset, tuple(f.vector), f.frequency)


def build_system(cfg: SimulationConfig, preflight: bool = True, cache_dir=None) -> GalerkinSystem:
    grid = make_grid(cfg)
    basis = build_spectral_basis(grid, cfg.modes.n_phi, cfg.modes.n_u, cache_dir=cache_dir)
    conv = ConvolutionOperator(grid, make_kernel(cfg), Realization.FFT)
    pot = regularize(LogarithmicPotential(cfg.potential.theta, cfg.potential.theta_c, cfg.potential.p),
                     cfg.epsilon)
    dens = DensityModel(cfg.density.rho1, cfg.density.rho2, cfg.density.width)
    return GalerkinSystem(basis, conv, pot, dens, make_law(cfg.viscosity), make_law(cfg.mobility),
                          cfg.delta, make_forcing(cfg), preflight=preflight)


def _smooth_noise(grid: Grid2D, rng, length: float) -> np.ndarray:
    f = rng.standard_normal(grid.shape)
    for _ in range(2):
        f = grid.helmholtz_resolvent(f, length ** 2)
    return f


def initial_fields(cfg: SimulationConfig, grid: Grid2D):
    """``(u0, phi0)`` for the configured preset."""
    ini = cfg.initial
    if ini.preset == "FILE":
        if ini.path is None:
            raise ConfigError("initial.path is required for the FILE preset")
        _, arrays = binio.read(ini.path)
        phi0 = arrays["phi"]
        u0 = arrays.get("u", np.zeros((2,) + grid.shape))
        if phi0.shape != grid.shape:
            raise ConfigError(f"initial file field shape {phi0.shape} does not match grid {grid.shape}")
        return u0, phi0
    if ini.preset == "TANH_STRIPE":
        X, _ = grid.mesh()
        prof = np.tanh((0.25 * grid.lx - np.abs(X - 0.5 * grid.lx)) / ini.width)
        return np.zeros((2,) + grid.shape), ini.mean + ini.amplitude * prof
    rng = np.random.default_rng(ini.seed)
    length = 0.1 * min(grid.lx, grid.ly)
    f = _smooth_noise(grid, rng, length)
    f -= grid.integrate(f) / grid.area
    f /= max(float(np.max(np.abs(f))), 1e-300)
    phi0 = ini.mean + ini.amplitude * f
    u0 = np.zeros((2,) + grid.shape)
    if ini.velocity_amplitude > 0:
        v = np.stack([_smooth_noise(grid, rng, length), _smooth_noise(grid, rng, length)])
        v = leray_project(grid, v * grid.velocity_mask)
        u0 = ini.velocity_amplitude * v / max(float(np.max(np.abs(v))), 1e-300)
    return u0, phi0


# ---------------------------------------------------------------------------
# runs
# ---------------------------------------------------------------------------

@dataclass
class RunRecord:
    config_hash: str
    code_version: str
    out_dir: str
    csv_path: str | None
    snapshot_paths: list
    status: str
    message: str = ""
    wall: float = 0.0
    n_steps: int = 0
    n_rhs: int = 0
    summary: dict = field(default_factory=dict)
    time_integrals: dict = field(default_factory=dict)
    final_state: GalerkinState | None = field(default=None, repr=False)
    phi0_mollified: np.ndarray | None = field(default=None, repr=False)
    phi0: np.ndarray | None = field(default=None, repr=False)

    @property
    def exit_code(self) -> int:
        return {"COMPLETED": EXIT_OK, "PREFLIGHT_FAILED": EXIT_PREFLIGHT, "IO_ERROR": EXIT_IO}.get(
            self.status, EXIT_INTEGRATOR)


def format_row(values) -> list[str]:
    return ["%.17g" % v for v in values]


def write_csv(path: Path, samples) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for s in samples:
        w.writerow(format_row(s.row()))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())
    return path


def read_csv(path) -> dict[str, np.ndarray]:
    with open(path) as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    if tuple(header) != COLUMNS:
        raise binio.FormatError(f"{path}: unexpected diagnostics header {header}")
    data = np.array([[float(x) for x in r] for r in rows[1:]])
    return {name: data[:, i] for i, name in enumerate(header)}


def summarize(columns: dict[str, np.ndarray], grid_area: float) -> dict:
    """Summary numbers recomputed from the diagnostics columns only."""
    E = columns["E_kin"] + columns["E_int"] + columns["E_pot"] + columns["E_grad"]
    R = columns["R"]
    mass = columns["mass"]
    zero_power = bool(np.all(columns["power"] == 0.0))
    run_min = np.minimum.accumulate(E)
    increase = float(np.max(np.maximum(E[1:] - run_min[:-1], 0.0))) if len(E) > 1 else 0.0
    return {
        "samples": int(len(R)),
        "t_final": float(columns["t"][-1]),
        "max_abs_R": float(np.max(np.abs(R))),
        "mass_drift": float(np.max(np.abs(mass - mass[0])) / grid_area),
        "energy_initial": float(E[0]),
        "energy_final": float(E[-1]),
        "max_energy_increase": increase,
        "zero_power": zero_power,
        "time_max_phi": float(np.max(columns["phi_max"])),
        "time_max_art_norm": float(np.max(columns["art_norm"])),
        "excursions_above_one": int(np.sum(columns["phi_max"] > 1.0)),
    }


def _snapshot_indices(n_samples: int, n_snap: int) -> list[int]:
    if n_snap <= 0:
        return []
    if n_snap == 1:
        return [n_samples - 1]
    return sorted({int(round(i * (n_samples - 1) / (n_snap - 1))) for i in range(n_snap)})


def run(cfg: SimulationConfig, out_dir=None, cache_dir=None) -> RunRecord:
    """Pre-flight, integrate, and write CSV, snapshots and a JSON summary."""
    out = Path(out_dir if out_dir is not None else (cfg.output.dir or f"runs/{cfg.digest()}"))
    rec = RunRecord(cfg.digest(), __version__, str(out), None, [], "RUNNING")
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        rec.status, rec.message = "IO_ERROR", str(exc)
        return rec
    try:
        system = build_system(cfg, cache_dir=cache_dir)
    except (PreflightError, ResolutionError, ConfigError, DensityConfigError, CapacityError, ValueError) as exc:
        rec.status, rec.message = "PREFLIGHT_FAILED", str(exc)
        report = getattr(exc, "report", None)
        if report is not None:
            _write_json(out / "preflight.json", report.to_dict())
        _write_json(out / "summary.json", _record_dict(rec))
        return rec
    _write_json(out / "preflight.json", system.preflight_report.to_dict())
    try:
        u0, phi0 = initial_fields(cfg, system.grid)
        state, info = initial_state(system, u0, phi0)
    except (InitialDataError, ConfigError, binio.FormatError, OSError, KeyError) as exc:
        rec.status, rec.message = "PREFLIGHT_FAILED", f"initial data: {exc}"
        _write_json(out / "summary.json", _record_dict(rec))
        return rec
    rec.phi0 = phi0
    rec.phi0_mollified = info["phi0_mollified"]

    samples: list[DiagnosticsSample] = []

    def on_sample(traj, i):
        e0 = samples[0].energy if samples else None
        s = sample(system, traj.state(i), traj.accumulated[i], e0)
        samples.append(s)

    ic = cfg.integrator
    traj = integrate(system, state, cfg.t_end, IntegratorConfig(ic.rtol, ic.atol, ic.max_step, ic.min_step),
                     cadence=cfg.output.cadence, on_sample=on_sample)
    rec.status, rec.message = traj.status, traj.message
    rec.wall, rec.n_steps, rec.n_rhs = traj.wall, traj.n_steps, traj.n_rhs
    rec.final_state = traj.state(len(traj.times) - 1)
    rec.time_integrals = {k: float(v) for k, v in zip(CHANNELS, traj.channels[-1])}
    try:
        rec.csv_path = str(write_csv(out / "diagnostics.csv", samples))
        for i in _snapshot_indices(len(traj.times), cfg.output.snapshots):
            st = traj.state(i)
            path = out / "snapshots" / f"snap_{i:05d}.bin"
            binio.write(path, {"t": st.t, "config_hash": rec.config_hash, "index": i},
                        {"a": st.a, "b": st.b, "phi": system.phi_field(st.b), "u": system.u_field(st.a)})
            rec.snapshot_paths.append(str(path))
        cols = read_csv(rec.csv_path)
        rec.summary = summarize(cols, system.grid.area)
        rec.summary["barrier"] = {"eps": cfg.epsilon, "flagged": rec.summary["excursions_above_one"] > 0}
        rec.summary["leray_projected_initial_velocity"] = info["leray_projected"]
        _write_json(out / "summary.json", _record_dict(rec))
    except OSError as exc:
        rec.status, rec.message = "IO_ERROR", str(exc)
    return rec


def _record_dict(rec: RunRecord) -> dict:
    return {"config_hash": rec.config_hash, "code_version": rec.code_version, "status": rec.status,
            "message": rec.message, "csv": rec.csv_path, "snapshots": rec.snapshot_paths,
            "wall_seconds": rec.wall, "steps": rec.n_steps, "rhs_evaluations": rec.n_rhs,
            "time_integrals": rec.time_integrals, "summary": rec.summary}


def _write_json(path: Path, data):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_plain(data), indent=2, sort_keys=True, allow_nan=True) + "\n")


# ---------------------------------------------------------------------------
# continuation studies
# ---------------------------------------------------------------------------

def _run_member(args):
    cfg_dict, out_dir, cache_dir = args
    from threadpoolctl import threadpool_limits
    with threadpool_limits(1):
        return run(SimulationConfig.from_dict(cfg_dict), out_dir, cache_dir)


def run_many(configs, out_root, threads: int = 1, cache_dir=None) -> list[RunRecord]:
    out_root = Path(out_root)
    jobs = [(c.to_dict(), str(out_root / c.digest()), cache_dir) for c in configs]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(_run_member, jobs))
    return [_run_member(j) for j in jobs]


def _l2(grid: Grid2D, f) -> float:
    return float(np.sqrt(grid.inner(f, f)))


def _final_phi(cfg, rec: RunRecord, grid: Grid2D):
    if rec.final_state is None:
        return None
    sb = build_spectral_basis(grid, cfg.modes.n_phi, cfg.modes.n_u).scalar
    return (rec.final_state.b @ sb.matrix[: len(rec.final_state.b)]).reshape(grid.shape)


def _non_increasing(values, rel: float = 0.0) -> bool:
    v = np.asarray(values, float)
    return bool(np.all(v[1:] <= v[:-1] * (1 + rel) + 1e-300))


def _strictly_decreasing(values) -> bool:
    v = np.asarray(values, float)
    return bool(np.all(v[1:] < v[:-1]))


def _member_failures(records) -> list:
    return [{"config_hash": r.config_hash, "status": r.status, "message": r.message}
            for r in records if r.status != "COMPLETED"]


def sweep_epsilon(cfg: SimulationConfig, eps_list, out_root, threads: int = 1, cache_dir=None) -> dict:
    eps_list = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ConfigError("epsilon list must be strictly decreasing")
    cfgs = [cfg.replace(epsilon=e) for e in eps_list]
    recs = run_many(cfgs, out_root, threads, cache_dir)
    grid = make_grid(cfg)
    rows = []
    finals = []
    for e, c, r in zip(eps_list, cfgs, recs):
        rows.append({"epsilon": e, "config_hash": r.config_hash, "status": r.status,
                     "time_max_phi": r.summary.get("time_max_phi"),
                     "time_max_art_norm": r.summary.get("time_max_art_norm"),
                     "max_abs_R": r.summary.get("max_abs_R"), "mass_drift": r.summary.get("mass_drift")})
        finals.append(_final_phi(c, r, grid))
    diffs = [(_l2(grid, finals[i] - finals[i + 1]) if finals[i] is not None and finals[i + 1] is not None
              else None) for i in range(len(finals) - 1)]
    report = {"study": "epsilon", "values": eps_list, "members": rows, "pairwise_final_l2": diffs,
              "failures": _member_failures(recs)}
    if len(eps_list) > 1 and not report["failures"]:
        art = [r["time_max_art_norm"] for r in rows]
        report["assertions"] = {"art_norm_non_increasing": _non_increasing(art),
                                "pairwise_differences_non_increasing": _non_increasing(diffs)}
    _write_json(Path(out_root) / "study_epsilon.json", report)
    return report


def sweep_delta(cfg: SimulationConfig, delta_list, out_root, threads: int = 1, epsilon: float | None = 0.025,
                cache_dir=None) -> dict:
    delta_list = [float(d) for d in delta_list]
    if any(b >= a for a, b in zip(delta_list, delta_list[1:])):
        raise ConfigError("delta list must be strictly decreasing")
    base = cfg if epsilon is None else cfg.replace(epsilon=epsilon)
    cfgs = [base.replace(delta=d) for d in delta_list]
    recs = run_many(cfgs, out_root, threads, cache_dir)
    grid = make_grid(cfg)
    rows, finals = [], []
    for d, c, r in zip(delta_list, cfgs, recs):
        row = {"delta": d, "config_hash": r.config_hash, "status": r.status}
        if r.csv_path:
            cols = read_csv(r.csv_path)
            row["hyper_dissipation_integral"] = r.time_integrals["D_hyper"]
            row["grad_energy_time_max"] = float(np.max(cols["E_grad"]))
        if r.phi0_mollified is not None:
            p0d, p0 = r.phi0_mollified, r.phi0
            gx, gy = grid.grad(p0d)
            row["delta_grad_phi0d_sq"] = d * grid.flux_inner((gx, gy), (gx, gy))
            row["initial_gradient_bound"] = 0.5 * math.sqrt(d) * grid.inner(p0, p0)
            m0 = grid.integrate(p0) / grid.area
            row["mean_contraction_error"] = abs(grid.integrate(p0d) / grid.area - m0 / (1 + math.sqrt(d)))
        rows.append(row)
        finals.append(_final_phi(c, r, grid))
    diffs = [(_l2(grid, finals[i] - finals[i + 1]) if finals[i] is not None and finals[i + 1] is not None
              else None) for i in range(len(finals) - 1)]
    report = {"study": "delta", "epsilon": base.epsilon, "values": delta_list, "members": rows,
              "pairwise_final_l2": diffs, "failures": _member_failures(recs)}
    if len(delta_list) > 1 and not report["failures"]:
        report["assertions"] = {
            "hyper_dissipation_integral_decreasing": _strictly_decreasing([r["hyper_dissipation_integral"] for r in rows]),
            "grad_energy_time_max_decreasing": _strictly_decreasing([r["grad_energy_time_max"] for r in rows]),
            "delta_grad_phi0d_decreasing": _strictly_decreasing([r["delta_grad_phi0d_sq"] for r in rows]),
            "initial_gradient_bound_holds": all(r["delta_grad_phi0d_sq"] <= r["initial_gradient_bound"] for r in rows),
            "mean_contraction": all(r["mean_contraction_error"] <= 1e-12 for r in rows),
        }
    _write_json(Path(out_root) / "study_delta.json", report)
    return report


def sweep_modes(cfg: SimulationConfig, n_list, out_root, threads: int = 1, cache_dir=None) -> dict:
    n_list = [int(n) for n in n_list]
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ConfigError("mode list must be strictly increasing")
    cfgs = [cfg.replace(**{"modes.n_u": n, "modes.n_phi": n}) for n in n_list]
    recs = run_many(cfgs, out_root, threads, cache_dir)
    grid = make_grid(cfg)
    rows, finals = [], []
    for n, c, r in zip(n_list, cfgs, recs):
        rows.append({"n": n, "config_hash": r.config_hash, "status": r.status,
                     "max_abs_R": r.summary.get("max_abs_R"), "mass_drift": r.summary.get("mass_drift")})
        finals.append(_final_phi(c, r, grid))
    diffs = [(_l2(grid, finals[i] - finals[i + 1]) if finals[i] is not None and finals[i + 1] is not None
              else None) for i in range(len(finals) - 1)]
    report = {"study": "modes", "values": n_list, "members": rows, "pairwise_final_l2": diffs,
              "failures": _member_failures(recs)}
    if len(n_list) > 1 and not report["failures"]:
        res = np.array([max(r["max_abs_R"], 1e-300) for r in rows])
        report["assertions"] = {"residual_flat_within_10x": bool(res.max() <= 10 * res.min() or res.max() < 1e-12),
                                "differences_decreasing": _non_increasing(diffs)}
    _write_json(Path(out_root) / "study_modes.json", report)
    return report


# ---------------------------------------------------------------------------
# property-check suite
# ---------------------------------------------------------------------------

def check_geometry(system: GalerkinSystem) -> CheckReport:
    g = system.grid
    sb, vb = system.basis.scalar, system.basis.velocity
    gram_s = g.weight * sb.matrix @ sb.matrix.T
    gram_v = g.weight * vb.matrix @ vb.matrix.T
    res_s = max(float(np.max(np.abs(psi + g.neg_laplacian(psi) - mu * psi))) / mu
                for psi, mu in zip(sb.psi, sb.mu))
    div_v = max(float(np.max(np.abs(g.vdiv(w)))) for w in vb.w)
    rng = np.random.default_rng(0)
    v1 = rng.standard_normal((2,) + g.shape) * g.velocity_mask
    v2 = rng.standard_normal((2,) + g.shape) * g.velocity_mask
    p1 = leray_project(g, v1)
    idem = float(np.max(np.abs(leray_project(g, p1) - p1)))
    sa = abs(g.weight * (np.sum(p1 * v2) - np.sum(v1 * leray_project(g, v2))))
    children = [
        CheckReport("scalar_orthonormal", float(np.max(np.abs(gram_s - np.eye(sb.n)))) <= 1e-10, {}),
        CheckReport("velocity_orthonormal", float(np.max(np.abs(gram_v - np.eye(vb.n)))) <= 1e-10, {}),
        CheckReport("scalar_eigen_residual", res_s <= 1e-7, {"max_rel_residual": res_s}),
        CheckReport("velocity_divergence_free", div_v <= 1e-9, {"max_abs_div": div_v}),
        CheckReport("leray_idempotent", idem <= 1e-9, {"error": idem}),
        CheckReport("leray_self_adjoint", sa <= 1e-9, {"error": sa}),
    ]
    return CheckReport.group("geometry", children)


def check_gram(system: GalerkinSystem, n_states: int = 100, seed: int = 0) -> CheckReport:
    rng = np.random.default_rng(seed)
    worst = math.inf
    for _ in range(n_states):
        st = random_state(system, rng, phi_amplitude=1.0)
        M = system.gram_matrix_quadrature(system.density.rho(system.phi_field(st.b)))
        worst = min(worst, float(np.linalg.eigvalsh(M).min()))
    bound = 0.99 * system.density.rho_lower
    return CheckReport("gram_coercivity", worst >= bound, {"min_eigenvalue": worst, "bound": bound,
                                                           "rho_lower": system.density.rho_lower})


def check(cfg: SimulationConfig, n_states: int = 200, seed: int = 0, cache_dir=None) -> CheckReport:
    """Every property suite on the configured system, as one pass/fail tree."""
    children = []
    try:
        system = build_system(cfg, preflight=False, cache_dir=cache_dir)
    except (ResolutionError, ValueError, CapacityError) as exc:
        return CheckReport("check", False, message=str(exc))
    children.append(system.preflight_report)
    if not system.preflight_report.passed:
        return CheckReport.group("check", children, config_hash=cfg.digest())
    children.append(check_geometry(system))
    rng = np.random.default_rng(seed)
    phi = system.phi_field(random_state(system, rng).b)
    children.append(check_neumann_identities(system.grid, system.mobility(phi), n_pairs=20, seed=seed))
    children.append(check_cancellation_identities(system, n_states=n_states, seed=seed))
    children.append(check_gram(system, n_states=min(n_states, 100), seed=seed))
    viol = 0
    for _ in range(n_states):
        if not gradient_coercivity_check(system, random_state(system, rng)).passed:
            viol += 1
    children.append(CheckReport("gradient_coercivity_random_states", viol == 0, {"violations": viol, "states": n_states}))
    forcing_ok = bool(np.all(np.isfinite(system.forcing_field(0.0))))
    children.append(CheckReport("forcing_square_integrable", forcing_ok, {"preset": cfg.forcing.preset}))
    return CheckReport.group("check", children, config_hash=cfg.digest())


def precompute_basis(cfg: SimulationConfig, cache_dir=None) -> dict:
    grid = make_grid(cfg)
    t0 = time.perf_counter()
    vb = build_velocity_basis(grid, cfg.modes.n_u, cache_dir=cache_dir)
    return {"grid": grid.key(), "n_u": vb.n, "lambda_min": float(vb.lam[0]), "lambda_max": float(vb.lam[-1]),
            "cache_dir": str(cache_dir or default_cache_dir()), "seconds": time.perf_counter() - t0}
