"""Two routes to the same dynamics.

``evolve_schrodinger`` integrates i hbar psi_t = H psi with a Strang split-step
scheme. ``evolve_madelung`` integrates the Euler-Lagrange equations of the
modified Lagrangian directly in the hydrodynamic variables,

    p_t = -(p s')' / m
    s_t = -(s'^2 / 2m + V + Q),      Q = -(hbar^2 / 2m) (sqrt p)'' / sqrt p,

with hbar = 2 sqrt(C), spectral derivatives and classical RK4. A second
group of functions evaluates the Lagrangians, the quantum potential as the
functional derivative of the fluctuation term, and the stochastic-mechanics
velocities.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft as sfft

from . import serialize
from .errors import (
    ExactUncertaintyError,
    GridTooSmall,
    InvalidArgument,
    InvalidPerturbation,
    NodeFormed,
    NodePresent,
    UnstableStep,
)
from .grid import ComplexField, Grid1D, RealField, boundary_leakage
from .states import (
    P_FLOOR_REL,
    MadelungState,
    _parse_pairs,
    fields_to_wavefunction,
    find_nodes,
    support_mask,
    wavefunction_to_fields,
)
from .theorem import hbar_from_c
from .uncertainty import (
    _fisher_information_psi,
    fisher_information,
    position_moments,
    variance_decomposition,
)

LEAKAGE_TOL = 1e-10
# densities are kept above this fraction of the initial peak during Madelung
# runs; a cell that reached exactly zero could never refill
VACUUM_REL = 1e-30
# explicit RK4 with spectral derivatives: stable while dt * hbar k_max^2 / 2m
# stays inside the imaginary-axis stability interval (|z| <= 2.83), i.e.
# dt <= 0.573 dx^2 m / hbar
DEFAULT_CFL = 0.55


# -- potentials ------------------------------------------------------------

POTENTIAL_DEFAULTS = {
    "free": {},
    "harmonic": {"omega": 1.0, "x0": 0.0},
    "well": {"a": -5.0, "b": 5.0, "height": 10.0, "width": 0.5},
    "sampled": {},
}


@dataclass(frozen=True)
class PotentialSpec:
    """free, harmonic (m w^2 (x-x0)^2 / 2), smooth box-like well, or sampled."""

    kind: str = "free"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in POTENTIAL_DEFAULTS:
            raise InvalidArgument(f"unknown potential kind {self.kind!r}")
        if self.kind == "sampled":
            if "values" not in self.params and "path" not in self.params:
                raise InvalidArgument("sampled potential needs values or path")
            return
        bad = set(self.params) - set(POTENTIAL_DEFAULTS[self.kind])
        if bad:
            raise InvalidArgument(f"unknown potential parameter(s) {sorted(bad)}")
        object.__setattr__(
            self, "params", {**POTENTIAL_DEFAULTS[self.kind], **{k: float(v) for k, v in self.params.items()}}
        )

    def values(self, grid: Grid1D, mass: float = 1.0) -> np.ndarray:
        x = grid.x
        p = self.params
        if self.kind == "free":
            v = np.zeros(grid.n)
        elif self.kind == "harmonic":
            v = 0.5 * mass * p["omega"] ** 2 * (x - p["x0"]) ** 2
        elif self.kind == "well":
            inside = 0.5 * (np.tanh((x - p["a"]) / p["width"]) - np.tanh((x - p["b"]) / p["width"]))
            v = p["height"] * (1.0 - inside)
        else:
            v = np.asarray(p["values"], float) if "values" in p else _read_sampled(p["path"])
        if v.shape != (grid.n,) or not np.all(np.isfinite(v)):
            raise InvalidArgument("potential must be finite with one value per grid point")
        return v

    def to_string(self) -> str:
        if self.kind == "sampled":
            return "sampled:" + (f"path={self.params['path']}" if "path" in self.params else "values")
        if not self.params:
            return self.kind
        return self.kind + ":" + ",".join(f"{k}={v!r}" for k, v in self.params.items())


def _read_sampled(path) -> np.ndarray:
    vals = []
    with open(path, newline="") as fh:
        for rec in csv.reader(fh):
            try:
                vals.append(float(rec[-1]))
            except (ValueError, IndexError):
                continue
    return np.array(vals)


def parse_potential_spec(text: str) -> PotentialSpec:
    kind, _, rest = text.partition(":")
    pairs = _parse_pairs(rest)
    if kind.strip() == "sampled":
        return PotentialSpec("sampled", pairs)
    try:
        return PotentialSpec(kind.strip(), {k: float(v) for k, v in pairs.items()})
    except ValueError as exc:
        raise InvalidArgument(f"non-numeric potential parameter: {exc}") from None


def _potential_array(V, grid: Grid1D, mass: float) -> np.ndarray:
    if isinstance(V, PotentialSpec):
        return V.values(grid, mass)
    if isinstance(V, RealField):
        if V.grid != grid:
            raise InvalidArgument("potential lives on a different grid")
        return np.asarray(V.values)
    if isinstance(V, str):
        return parse_potential_spec(V).values(grid, mass)
    v = np.asarray(V, float)
    if v.shape != (grid.n,) or not np.all(np.isfinite(v)):
        raise InvalidArgument("potential must be finite with one value per grid point")
    return v


# -- field helpers ------------------------------------------------------------


def phase_gradient(p: np.ndarray, s: np.ndarray, grid: Grid1D, hbar: float | None = None) -> np.ndarray:
    """s'(x) for a momentum potential that need not be periodic.

    s is folded into the amplitude sqrt(p) exp(i s / h) and differentiated
    spectrally; that amplitude decays at the box edges even when s grows
    linearly or quadratically. With hbar given, h = hbar and the amplitude
    is the wavefunction itself, so jumps of s by multiples of 2 pi hbar in
    the nearly empty tails are harmless. Otherwise h is chosen so the phase
    advances at most pi/8 per cell on the support. Where p vanishes
    identically the second-order finite-difference slope of s is used.
    """
    if hbar is not None and hbar > 0:
        h = float(hbar)
    else:
        sup = support_mask(p)
        steps = np.abs(np.diff(s))[sup[1:] & sup[:-1]]
        h = max(float(np.max(steps)) * 8 / np.pi if steps.size else 0.0, 1e-300)
    amp = np.sqrt(p) * np.exp(1j * s / h)
    d = grid.spectral_derivative(amp, 1)
    out = grid.fd_derivative(s, 1)
    pos = p > 0
    out[pos] = h * np.imag(np.conj(amp[pos]) * d[pos]) / p[pos]
    return out


def _log_density_gradient(p: np.ndarray, grid: Grid1D) -> np.ndarray:
    """p'/p on the support, 0 in the decayed tails."""
    dp = grid.spectral_derivative(p, 1)
    sup = support_mask(p)
    out = np.zeros(grid.n)
    out[sup] = dp[sup] / p[sup]
    return out


def _check_mass(mass: float):
    if not mass > 0:
        raise InvalidArgument("mass must be positive")


# -- Lagrangians and the quantum potential ------------------------------------------


def classical_lagrangian(m_state: MadelungState, ds_dt: RealField, V, mass: float = 1.0) -> float:
    """Integral of p [s_t + s'^2/2m + V] at one instant."""
    _check_mass(mass)
    grid = m_state.grid
    if ds_dt.grid != grid:
        raise InvalidArgument("ds_dt lives on a different grid")
    p = m_state.p.values
    sp = phase_gradient(p, m_state.s.values, grid)
    v = _potential_array(V, grid, mass)
    return grid.integrate(p * (ds_dt.values + sp**2 / (2 * mass) + v))


def fluctuation_kinetic_term(p: RealField, C: float, mass: float = 1.0) -> float:
    """(Delta N)^2 / 2m with (Delta N)^2 = C * Fisher information of p."""
    if not C > 0:
        raise InvalidArgument("C must be positive")
    _check_mass(mass)
    return C * fisher_information(p) / (2 * mass)


def modified_lagrangian(m_state: MadelungState, ds_dt: RealField, V, mass: float = 1.0, C: float = 0.0) -> float:
    """Classical Lagrangian plus the fluctuation kinetic term (omitted at C = 0)."""
    if C < 0:
        raise InvalidArgument("C must be nonnegative")
    out = classical_lagrangian(m_state, ds_dt, V, mass)
    if C > 0:
        out += fluctuation_kinetic_term(m_state.p, C, mass)
    return out


def _quantum_potential_values(p: np.ndarray, grid: Grid1D, hbar: float, mass: float) -> np.ndarray:
    # (sqrt p)''/sqrt p = p''/2p - (p'/2p)^2, from the smooth density itself
    dp = grid.spectral_derivative(p, 1)
    d2p = grid.spectral_derivative(p, 2)
    sup = support_mask(p)
    out = np.zeros(grid.n)
    ps = p[sup]
    out[sup] = -(hbar**2 / (2 * mass)) * (d2p[sup] / (2 * ps) - (dp[sup] / (2 * ps)) ** 2)
    return out


def quantum_potential(p: RealField, hbar: float = 1.0, mass: float = 1.0) -> RealField:
    """Q = -(hbar^2/2m) (sqrt p)''/sqrt p on the support of p, 0 outside it.

    The ratio is formed from spectral derivatives of p rather than of sqrt p:
    sqrt p can have minima narrower than a grid cell even when p is smooth.
    """
    if not hbar > 0:
        raise InvalidArgument("hbar must be positive")
    _check_mass(mass)
    grid = p.grid
    nodes = find_nodes(p.values)
    if nodes.size:
        raise NodePresent(f"node at x={grid.x[nodes[0]]:.6g}")
    return RealField(grid, _quantum_potential_values(p.values, grid, hbar, mass), {"support_floor": P_FLOOR_REL})


@dataclass
class FunctionalDerivativeCheck:
    lhs: float
    rhs: float
    residual: float
    tolerance: float
    eps: float

    @property
    def passed(self) -> bool:
        return self.residual <= self.tolerance


def _fisher_on_mask(grid: Grid1D, p: np.ndarray, mask: np.ndarray) -> float:
    dp = grid.spectral_derivative(p, 1)
    return float(np.sum(dp[mask] ** 2 / p[mask]) * grid.dx)


def functional_derivative_check(
    p: RealField, dp: RealField, C: float, mass: float = 1.0, eps: float | None = None
) -> FunctionalDerivativeCheck:
    """Directional derivative of (2m)^-1 (Delta N)^2 along dp against the integral of Q dp.

    The left side is a central difference in eps of the discretized
    fluctuation term, evaluated on the support of the unperturbed p so both
    sides share one integration domain.
    """
    if not C > 0:
        raise InvalidArgument("C must be positive")
    _check_mass(mass)
    grid = p.grid
    pv, dv = p.values, dp.values
    if dp.grid != grid:
        raise InvalidPerturbation("perturbation lives on a different grid")
    scale = float(np.max(np.abs(dv)))
    if abs(grid.integrate(dv)) > 1e-12 * max(scale * grid.length, 1e-300):
        raise InvalidPerturbation("perturbation does not integrate to zero")
    nodes = find_nodes(pv)
    if nodes.size:
        raise InvalidPerturbation("density has nodes")
    mask = support_mask(pv)
    if scale > 0 and np.max(np.abs(dv[~mask])) > 1e-12 * scale:
        raise InvalidPerturbation("perturbation reaches outside the node-free support")
    max_step = 1e-4 * float(np.max(pv))
    if eps is None:
        eps = max_step / scale if scale > 0 else 1.0
    elif eps * scale > max_step * (1 + 1e-12):
        raise InvalidPerturbation("perturbation scale exceeds 1e-4 of max p")
    if np.any(pv[mask] - eps * np.abs(dv[mask]) <= 0):
        raise InvalidPerturbation("perturbation drives the density negative")

    hbar = hbar_from_c(C)
    pref = C / (2 * mass)
    f_plus = pref * _fisher_on_mask(grid, pv + eps * dv, mask)
    f_minus = pref * _fisher_on_mask(grid, pv - eps * dv, mask)
    lhs = (f_plus - f_minus) / (2 * eps)
    rhs = grid.integrate(_quantum_potential_values(pv, grid, hbar, mass) * dv)
    tol = max(1e-6 * abs(rhs), 1e-10)
    return FunctionalDerivativeCheck(float(lhs), float(rhs), float(abs(lhs - rhs)), tol, float(eps))


def random_density_perturbation(p: RealField, rng: np.random.Generator, modes: int = 4) -> RealField:
    """Zero-mean smooth perturbation p*(g - <g>) with g a random low-order Fourier series."""
    grid = p.grid
    x = grid.x
    xc = x - 0.5 * (grid.x_min + grid.x_max)
    g = np.zeros(grid.n)
    for j in range(1, modes + 1):
        a, b = rng.normal(size=2) / j
        g += a * np.cos(j * np.pi * xc / (0.25 * grid.length)) + b * np.sin(j * np.pi * xc / (0.25 * grid.length))
    pv = p.values
    dp = pv * (g - grid.integrate(pv * g) / grid.integrate(pv))
    dp[~support_mask(pv)] = 0.0
    dp -= pv * grid.integrate(dp) / grid.integrate(pv)
    dp[~support_mask(pv)] = 0.0
    return RealField(grid, dp)


@dataclass
class StochasticStats:
    m2_vv: float
    delta_n2: float
    uv: float
    identity_residual: float


def stochastic_velocities(
    m_state: MadelungState, hbar: float = 1.0, mass: float = 1.0
) -> tuple[RealField, RealField, StochasticStats]:
    """Drift u = s'/m and osmotic v = (hbar/2m) p'/p, with their p-weighted moments."""
    if not hbar > 0:
        raise InvalidArgument("hbar must be positive")
    _check_mass(mass)
    grid = m_state.grid
    p = m_state.p.values
    nodes = find_nodes(p)
    if nodes.size:
        raise NodePresent(f"node at x={grid.x[nodes[0]]:.6g}")
    # like v, u is reported on the support only; far-tail ratios are round-off
    u = np.where(support_mask(p), phase_gradient(p, m_state.s.values, grid, hbar) / mass, 0.0)
    v = hbar / (2 * mass) * _log_density_gradient(p, grid)
    m2vv = mass**2 * grid.integrate(p * v * v)
    dn2 = (hbar**2 / 4) * fisher_information(m_state.p)
    uv = grid.integrate(p * u * v)
    stats = StochasticStats(m2vv, dn2, uv, abs(m2vv - dn2) / dn2)
    return RealField(grid, u), RealField(grid, v), stats


# -- evolution --------------------------------------------------------------------


@dataclass
class SolverConfig:
    dt: float
    steps: int
    mass: float = 1.0
    hbar: float = 1.0
    solver: str = "schrodinger"
    store_every: int | None = None
    cfl_safety: float = DEFAULT_CFL
    leakage_tol: float = LEAKAGE_TOL

    def __post_init__(self):
        if not self.dt > 0 or int(self.steps) < 1:
            raise InvalidArgument("need dt > 0 and steps >= 1")
        self.steps = int(self.steps)
        if self.solver not in ("schrodinger", "madelung", "both"):
            raise InvalidArgument(f"unknown solver {self.solver!r}")
        _check_mass(self.mass)
        if self.store_every is None:
            self.store_every = max(1, self.steps // 64)
        if int(self.store_every) < 1:
            raise InvalidArgument("store_every must be >= 1")
        self.store_every = int(self.store_every)

    def refined(self, factor: int = 2) -> "SolverConfig":
        return SolverConfig(
            self.dt / factor,
            self.steps * factor,
            self.mass,
            self.hbar,
            self.solver,
            self.store_every * factor,
            self.cfl_safety,
            self.leakage_tol,
        )


@dataclass
class EvolutionTrace:
    solver: str
    grid: Grid1D
    hbar: float
    mass: float
    dt: float
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    norm: list = field(default_factory=list)
    energy: list = field(default_factory=list)
    leakage: list = field(default_factory=list)
    error: dict | None = None

    def densities(self) -> np.ndarray:
        if self.solver == "schrodinger":
            return np.array([s.density for s in self.states])
        return np.array([s.p.values for s in self.states])

    def wavefunction(self, i: int) -> ComplexField:
        st = self.states[i]
        if isinstance(st, ComplexField):
            return st
        return fields_to_wavefunction(st, self.hbar)

    def norm_drift(self) -> float:
        return float(np.max(np.abs(np.array(self.norm) - self.norm[0])))

    def energy_drift(self) -> float:
        e = np.array(self.energy)
        return float(np.max(np.abs(e - e[0])) / abs(e[0]))

    def rows(self) -> list[tuple]:
        """(t, norm, energy, dX, deltaX, dP_nc, product) per stored step."""
        out = []
        for i, t in enumerate(self.times):
            if self.hbar > 0:
                rep = variance_decomposition(self.wavefunction(i), self.hbar)
                dX, deltaX, dpnc, prod = rep.dX, rep.deltaX, rep.dP_nc, rep.product_exact
            else:
                st = self.states[i]
                dX = float(np.sqrt(position_moments(st.p)[1]))
                deltaX = float(fisher_information(st.p) ** -0.5)
                dpnc, prod = 0.0, 0.0
            out.append((t, self.norm[i], self.energy[i], dX, deltaX, dpnc, prod))
        return out

    def to_csv(self, path):
        serialize.write_csv(path, ["t", "norm", "energy", "dX", "deltaX", "dP_nc", "product"], self.rows())

    def dump_fields(self, directory):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        x = self.grid.x
        for i, st in enumerate(self.states):
            name = d / f"{self.solver}_{i:05d}.csv"
            if isinstance(st, ComplexField):
                rows = zip(x, st.values.real, st.values.imag)
                serialize.write_csv(name, ["x", "re_psi", "im_psi"], rows)
            else:
                serialize.write_csv(name, ["x", "p", "s"], zip(x, st.p.values, st.s.values))

    def summary(self) -> dict:
        return {
            "solver": self.solver,
            "hbar": self.hbar,
            "mass": self.mass,
            "dt": self.dt,
            "stored_steps": len(self.times),
            "t_final": self.times[-1] if self.times else 0.0,
            "norm_drift": self.norm_drift() if self.norm else None,
            "energy_drift": self.energy_drift() if self.energy and self.energy[0] != 0 else None,
            "error": self.error,
        }


def _schrodinger_energy(grid: Grid1D, psi: np.ndarray, v: np.ndarray, hbar: float, mass: float) -> float:
    kin = np.sum(np.abs(sfft.fft(psi)) ** 2 * grid.k_fft**2) * grid.dx / grid.n
    return float(hbar**2 * kin / (2 * mass) + grid.integrate(v * np.abs(psi) ** 2))


def _fail(trace: EvolutionTrace, err: ExactUncertaintyError, t: float):
    trace.error = {"error": err.name, "message": str(err), "t": t}
    err.trace = trace
    if isinstance(err, NodeFormed):
        err.t = t
    raise err


def evolve_schrodinger(psi0: ComplexField, V, cfg: SolverConfig) -> EvolutionTrace:
    """Strang splitting: half potential kick, exact kinetic step in k-space, half kick."""
    grid = psi0.grid
    hbar, mass, dt = cfg.hbar, cfg.mass, cfg.dt
    if not hbar > 0:
        raise InvalidArgument("hbar must be positive")
    norm0 = psi0.norm()
    if abs(norm0 - 1.0) > 1e-8:
        raise InvalidArgument(f"initial state norm {norm0!r} differs from 1")
    v = _potential_array(V, grid, mass)
    half_kick = np.exp(-0.5j * v * dt / hbar)
    drift = np.exp(-0.5j * hbar * grid.k_fft**2 * dt / mass)
    trace = EvolutionTrace("schrodinger", grid, hbar, mass, dt)

    def record(psi, t):
        trace.times.append(t)
        trace.states.append(ComplexField(grid, psi))
        trace.norm.append(grid.integrate(np.abs(psi) ** 2))
        trace.energy.append(_schrodinger_energy(grid, psi, v, hbar, mass))
        trace.leakage.append(boundary_leakage(trace.states[-1]))

    psi = np.array(psi0.values)
    record(psi, 0.0)
    for i in range(1, cfg.steps + 1):
        psi = half_kick * sfft.ifft(drift * sfft.fft(half_kick * psi))
        dens = np.abs(psi[[0, -1]]) ** 2
        if max(dens) > cfg.leakage_tol * np.max(np.abs(psi) ** 2):
            record(psi, i * dt)
            _fail(trace, GridTooSmall("wavefunction reached the box edge"), i * dt)
        if i % cfg.store_every == 0 or i == cfg.steps:
            record(psi, i * dt)
    return trace


def madelung_cfl_limit(grid: Grid1D, hbar: float, mass: float, safety: float = DEFAULT_CFL) -> float:
    return safety * grid.dx**2 * mass / hbar


def _madelung_rhs_quantum(p, s, v, grid, hbar, mass):
    # psi = sqrt(p) e^{is/hbar} is only a vehicle for the spectral derivatives:
    #   -Im(psi* psi'') hbar/m      = -(p s')'/m              (continuity)
    #   Re(psi* psi'') hbar^2/2m/p  = -(s'^2/2m + Q)          (quantum Hamilton-Jacobi)
    # Forming the products before dividing by p keeps round-off proportional to
    # |psi|, so the nearly empty tails stay quiet.
    psi = np.sqrt(p) * np.exp(1j * s / hbar)
    lap = sfft.ifft(-grid.k_fft**2 * sfft.fft(psi))
    z = np.conj(psi) * lap
    p_t = -(hbar / mass) * z.imag
    s_t = -v + (hbar**2 / (2 * mass)) * z.real / p
    return p_t, s_t


def _madelung_rhs_classical(p, s, v, grid, mass):
    # C = 0: the Hamilton-Jacobi equation no longer involves p, and s is
    # generally not periodic (a chirp is quadratic), so s' uses
    # non-periodic finite differences while the decaying flux p s' is
    # differentiated spectrally
    sp = grid.fd_derivative(s, 1)
    p_t = -grid.spectral_derivative(p * sp, 1) / mass
    s_t = -(sp**2) / (2 * mass) - v
    return p_t, s_t, float(np.max(np.abs(sp)))


def madelung_terms(m_state: MadelungState, V, hbar: float = 1.0, mass: float = 1.0) -> dict:
    """Explicit pieces of the Madelung right-hand side on the support.

    Returns p_t and s_t as the solver forms them, together with s'^2/2m, V
    and the independently computed quantum potential, so callers can confirm
    s_t = -(s'^2/2m + V + Q).
    """
    grid = m_state.grid
    p, s = m_state.p.values, m_state.s.values
    v = _potential_array(V, grid, mass)
    p_t, s_t = _madelung_rhs_quantum(np.maximum(p, VACUUM_REL * np.max(p)), s, v, grid, hbar, mass)
    sp = phase_gradient(p, s, grid, hbar)
    return {
        "support": support_mask(p),
        "p_t": p_t,
        "s_t": s_t,
        "convective": sp**2 / (2 * mass),
        "V": v,
        "Q": _quantum_potential_values(p, grid, hbar, mass),
        "flux_divergence": grid.spectral_derivative(p * sp, 1) / mass,
    }


def _madelung_energy(grid, p, s, v, hbar, mass) -> float:
    if hbar > 0:
        psi = np.sqrt(p) * np.exp(1j * s / hbar)
        dpsi = grid.spectral_derivative(psi, 1)
        pos = p > 0
        sp = np.zeros(grid.n)
        sp[pos] = hbar * np.imag(np.conj(psi[pos]) * dpsi[pos]) / p[pos]
        classical = grid.integrate(p * sp**2) / (2 * mass)
        fluct = hbar**2 * _fisher_information_psi(grid, psi, dpsi) / (8 * mass)
        return classical + fluct + grid.integrate(p * v)
    sp = grid.fd_derivative(s, 1)
    return grid.integrate(p * (sp**2 / (2 * mass) + v))


def evolve_madelung(m0: MadelungState, V, cfg: SolverConfig, C: float) -> EvolutionTrace:
    """RK4 in (p, s). hbar = 2 sqrt(C); C = 0 gives the classical ensemble."""
    if C < 0:
        raise InvalidArgument("C must be nonnegative")
    grid = m0.grid
    mass, dt = cfg.mass, cfg.dt
    hbar = hbar_from_c(C) if C > 0 else 0.0
    if hbar > 0:
        limit = madelung_cfl_limit(grid, hbar, mass, cfg.cfl_safety)
        if dt > limit:
            raise UnstableStep(f"dt={dt:.6g} exceeds the stability bound {limit:.6g} (c*dx^2*m/hbar)")
    v = _potential_array(V, grid, mass)
    p = np.array(m0.p.values, float)
    s = np.array(m0.s.values, float)
    nodes = find_nodes(p, 10 * P_FLOOR_REL)
    if nodes.size:
        raise NodePresent(f"initial density has a node at x={grid.x[nodes[0]]:.6g}")
    vac = VACUUM_REL * float(np.max(p))
    p = np.maximum(p, vac)
    trace = EvolutionTrace("madelung", grid, hbar, mass, dt)
    t0 = m0.t

    def record(p, s, t):
        trace.times.append(t - t0)
        trace.states.append(MadelungState(RealField(grid, p), RealField(grid, s), t))
        trace.norm.append(grid.integrate(p))
        trace.energy.append(_madelung_energy(grid, p, s, v, hbar, mass))
        trace.leakage.append(float(max(p[0], p[-1]) / np.max(p)))

    if hbar > 0:
        def rhs(p, s):
            return _madelung_rhs_quantum(np.maximum(p, vac), s, v, grid, hbar, mass)
    else:
        def rhs(p, s):
            p_t, s_t, umax = _madelung_rhs_classical(p, s, v, grid, mass)
            if dt * umax / mass > cfg.cfl_safety * grid.dx:
                raise UnstableStep(f"dt={dt:.6g} exceeds the advective bound c*dx*m/max|s'|")
            return p_t, s_t

    record(p, s, t0)
    for i in range(1, cfg.steps + 1):
        t = t0 + i * dt
        try:
            a = rhs(p, s)
            b = rhs(p + 0.5 * dt * a[0], s + 0.5 * dt * a[1])
            c = rhs(p + 0.5 * dt * b[0], s + 0.5 * dt * b[1])
            d = rhs(p + dt * c[0], s + dt * c[1])
        except UnstableStep as err:
            _fail(trace, err, t - dt)
        p = np.maximum(p + dt / 6 * (a[0] + 2 * b[0] + 2 * c[0] + d[0]), vac)
        s = s + dt / 6 * (a[1] + 2 * b[1] + 2 * c[1] + d[1])
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(s))):
            _fail(trace, UnstableStep("non-finite fields"), t)
        nodes = find_nodes(p, 10 * P_FLOOR_REL)
        if nodes.size:
            _fail(trace, NodeFormed(f"density fell below 10*p_floor at x={grid.x[nodes[0]]:.6g}"), t)
        if max(p[0], p[-1]) > cfg.leakage_tol * np.max(p):
            _fail(trace, GridTooSmall("density reached the box edge"), t)
        if i % cfg.store_every == 0 or i == cfg.steps:
            record(p, s, t)
    return trace


# -- dual-solver comparison ----------------------------------------------------------


def _l2(grid: Grid1D, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum((a - b) ** 2, axis=-1) * grid.dx)


def trace_distance(a: EvolutionTrace, b: EvolutionTrace) -> float:
    """Largest L2 density distance over common stored steps."""
    if len(a.times) != len(b.times) or not np.allclose(a.times, b.times, rtol=1e-12, atol=1e-12):
        raise InvalidArgument("traces do not share stored times")
    return float(np.max(_l2(a.grid, a.densities(), b.densities())))


def _order(d_coarse: float, d_fine: float) -> float | None:
    if d_coarse > 0 and d_fine > 0:
        return float(np.log2(d_coarse / d_fine))
    return None


@dataclass
class CrossValidation:
    hbar: float
    C: float
    dt: float
    steps: int
    l2_final: float
    l2_max: float
    phase_gradient_max: float
    l2_max_refined: float
    discrepancy_order: float | None
    schrodinger_self: list
    schrodinger_order: float | None
    madelung_self: list
    madelung_order: float | None
    schrodinger: dict
    madelung: dict
    traces: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "traces"}
        return d


ROUNDOFF_DISTANCE = 1e-13


def cross_validate(
    psi0: ComplexField, V, cfg: SolverConfig, C: float, self_convergence: bool = True
) -> CrossValidation:
    """Run both solvers from the same data at dt and dt/2 and compare densities.

    hbar is always 2 sqrt(C). The discrepancy order is measured between the
    two solvers at matched dt. Self-convergence distances compare each solver
    at dt, dt/2 and dt/4; an order is reported only when both distances sit
    above the round-off floor.
    """
    if not C > 0:
        raise InvalidArgument("cross-validation needs C > 0")
    hbar = hbar_from_c(C)
    cfg = SolverConfig(cfg.dt, cfg.steps, cfg.mass, hbar, "both", cfg.store_every, cfg.cfl_safety, cfg.leakage_tol)
    m0 = wavefunction_to_fields(psi0, hbar)
    psi_start = fields_to_wavefunction(m0, hbar)

    cfgs = [cfg, cfg.refined(2)] + ([cfg.refined(4)] if self_convergence else [])
    sch = [evolve_schrodinger(psi_start, V, c) for c in cfgs]
    mad = [evolve_madelung(m0, V, c, C) for c in cfgs[:2]]
    if self_convergence:
        mad.append(evolve_madelung(m0, V, cfgs[2], C))

    grid = psi0.grid
    ds, dm = sch[0].densities(), mad[0].densities()
    l2 = _l2(grid, ds, dm)
    refined = trace_distance(sch[1], mad[1])

    p_end = dm[-1]
    sel = p_end > 1e-6 * np.max(p_end)
    grad_m = phase_gradient(p_end, mad[0].states[-1].s.values, grid, hbar)
    psi_end = sch[0].states[-1].values
    dpsi = grid.spectral_derivative(psi_end, 1)
    grad_s = hbar * np.imag(np.conj(psi_end) * dpsi) / np.maximum(np.abs(psi_end) ** 2, 1e-300)
    phase_max = float(np.max(np.abs(grad_m[sel] - grad_s[sel])))

    def self_order(runs):
        if len(runs) < 3:
            return [], None
        d = [trace_distance(runs[0], runs[1]), trace_distance(runs[1], runs[2])]
        if min(d) <= ROUNDOFF_DISTANCE:
            return d, None
        return d, _order(*d)

    s_self, s_order = self_order(sch)
    m_self, m_order = self_order(mad)
    return CrossValidation(
        hbar=hbar,
        C=C,
        dt=cfg.dt,
        steps=cfg.steps,
        l2_final=float(l2[-1]),
        l2_max=float(np.max(l2)),
        phase_gradient_max=phase_max,
        l2_max_refined=refined,
        discrepancy_order=_order(float(np.max(l2)), refined),
        schrodinger_self=s_self,
        schrodinger_order=s_order,
        madelung_self=m_self,
        madelung_order=m_order,
        schrodinger=sch[0].summary(),
        madelung=mad[0].summary(),
        traces={"schrodinger": sch[0], "madelung": mad[0]},
    )
