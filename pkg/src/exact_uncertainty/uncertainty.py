"""Classical/nonclassical momentum decomposition and the exact uncertainty relation.

For a pure state psi with density p the classical momentum field is
P_cl = hbar Im(psi'/psi), the nonclassical remainder P_nc = P - P_cl has
zero mean, and its spread obeys deltaX * dP_nc = hbar/2 exactly, where
deltaX = I_w^(-1/2) is the Fisher length of p.

The nonclassical spread is computed two independent ways:

(a) sqrt(dP^2 - dP_cl^2), with dP from the momentum representation and dP_cl
    from position-space quadrature;
(b) hbar/(2 deltaX), from the Fisher information alone.

Their agreement is the content of the exact relation, so reports carry both.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DensityUnderflow, GridTooSmall, InvalidArgument, NodePresent, NotNormalized
from .grid import (
    ComplexField,
    Grid1D,
    RealField,
    boundary_leakage,
    fourier_transform,
    to_momentum,
)
from .states import P_FLOOR_REL, find_nodes, make_state, StateSpec, support_mask

LEAKAGE_TOL = 1e-10
NORM_TOL = 1e-8
CRAMER_RAO_SLACK = 1e-10

TOLERANCES = {
    "product_rel": 1e-6,
    "variance_residual_rel": 1e-8,
    "nc_discrepancy_rel": 1e-7,
    "cramer_rao_slack": CRAMER_RAO_SLACK,
}


def _check_hbar(hbar: float):
    if not hbar > 0:
        raise InvalidArgument("hbar must be positive")


def _require_node_free(p: np.ndarray, grid: Grid1D, err=NodePresent):
    nodes = find_nodes(p)
    if nodes.size:
        raise err(f"{nodes.size} sample(s) at or below the density floor, first at x={grid.x[nodes[0]]:.6g}")


def _log_derivative_field(grid: Grid1D, psi: np.ndarray, deriv: np.ndarray, scale: float) -> np.ndarray:
    """scale * Im(psi'/psi) wherever psi != 0.

    In the decayed tails the ratio is dominated by round-off, but it enters
    statistics only weighted by p, where it contributes at the round-off
    level squared. Exact zeros of psi (underflow) get 0.
    """
    p = np.abs(psi) ** 2
    pos = p > 0
    out = np.zeros(grid.n)
    out[pos] = scale * np.imag(np.conj(psi[pos]) * deriv[pos]) / p[pos]
    return out


def _classical_momentum_values(psi: ComplexField, hbar: float) -> np.ndarray:
    # raw ratio everywhere p > 0: statistics weighted by p then satisfy the
    # decomposition identity to round-off, tails included
    _check_hbar(hbar)
    grid = psi.grid
    _require_node_free(psi.density, grid)
    vals = psi.values
    if np.all(vals.imag == 0):
        # a real transform keeps a real psi free of imaginary round-off
        dpsi = grid.spectral_derivative(vals.real, 1).astype(complex)
    else:
        dpsi = grid.spectral_derivative(vals, 1)
    return _log_derivative_field(grid, vals, dpsi, hbar)


def classical_momentum_field(psi: ComplexField, hbar: float = 1.0) -> RealField:
    """P_cl(x) = hbar Im(psi'/psi) with a spectral psi'.

    Outside the support (density below 1e-13 of its peak) the ratio is
    round-off over round-off; there the field carries hbar times the
    finite-difference slope of the unwrapped phase instead, which stays
    bounded and is exact for analytically sampled states.
    """
    vals = _classical_momentum_values(psi, hbar)
    sup = support_mask(psi.density)
    if not np.all(sup):
        slope = hbar * psi.grid.fd_derivative(np.unwrap(np.angle(psi.values)), 1)
        vals = np.where(sup, vals, slope)
    return RealField(psi.grid, vals, {"support_floor": P_FLOOR_REL})


@dataclass
class NonclassicalStats:
    mean: float
    variance: float


def _estimator_mse_values(grid: Grid1D, psi: np.ndarray, dpsi: np.ndarray, f: np.ndarray, hbar: float) -> float:
    resid = -1j * hbar * dpsi - f * psi
    return grid.integrate(np.abs(resid) ** 2)


def nonclassical_field(psi: ComplexField, hbar: float = 1.0) -> NonclassicalStats:
    """Mean and second moment of P_nc = P - P_cl(X) in state psi."""
    pcl = _classical_momentum_values(psi, hbar)
    grid = psi.grid
    vals = psi.values
    dpsi = grid.spectral_derivative(vals, 1)
    mean = grid.integrate(np.real(np.conj(vals) * (-1j * hbar * dpsi - pcl * vals)))
    var = _estimator_mse_values(grid, vals, dpsi, pcl, hbar)
    return NonclassicalStats(mean, var)


def estimator_mse(psi: ComplexField, f: RealField, hbar: float = 1.0) -> float:
    """<(P - f(X))^2> = integral of |(-i hbar d/dx - f) psi|^2."""
    _check_hbar(hbar)
    if f.grid != psi.grid:
        raise InvalidArgument("estimator and state live on different grids")
    grid = psi.grid
    return _estimator_mse_values(grid, psi.values, grid.spectral_derivative(psi.values, 1), f.values, hbar)


def fisher_information(p: RealField) -> float:
    """I_w = integral p (d ln p/dx)^2 = integral p'^2 / p, spectral p'."""
    vals = p.values
    if np.any(vals < 0):
        raise DensityUnderflow("negative density samples")
    _require_node_free(vals, p.grid, DensityUnderflow)
    return p.grid.fisher_information(vals)


def _fisher_information_psi(grid: Grid1D, psi: np.ndarray, dpsi: np.ndarray) -> float:
    # p' = 2 Re(psi* psi') stays accurate where |psi| has a sharp minimum
    # that sqrt(p) sampled on the grid would not resolve
    return grid.fisher_information(np.abs(psi) ** 2, 2 * np.real(np.conj(psi) * dpsi))


def _length_from_information(iw: float) -> float:
    if not iw > 0:
        raise DensityUnderflow("Fisher information vanishes on this grid")
    return float(iw**-0.5)


def _check_norm(grid: Grid1D, p: np.ndarray):
    norm = grid.integrate(p)
    if abs(norm - 1.0) > NORM_TOL:
        raise NotNormalized(f"density integrates to {norm!r}")


def fisher_length(p: RealField) -> float:
    """deltaX = I_w^(-1/2)."""
    _check_norm(p.grid, p.values)
    return _length_from_information(fisher_information(p))


def fisher_length_psi(psi: ComplexField) -> float:
    """Fisher length of |psi|^2, with p' taken from psi in product form."""
    grid = psi.grid
    p = psi.density
    _check_norm(grid, p)
    if np.any(p < 0):
        raise DensityUnderflow("negative density samples")
    _require_node_free(p, grid, DensityUnderflow)
    return _length_from_information(_fisher_information_psi(grid, psi.values, grid.spectral_derivative(psi.values, 1)))


def position_moments(p: RealField) -> tuple[float, float]:
    grid = p.grid
    x = grid.x
    mean = grid.integrate(x * p.values)
    var = grid.integrate((x - mean) ** 2 * p.values)
    return mean, max(var, 0.0)


def _momentum_moments(grid: Grid1D, psi: np.ndarray, hbar: float) -> tuple[float, float, float]:
    phi = fourier_transform(grid, psi)
    k = grid.momentum_grid().k
    w = np.abs(phi) ** 2 * grid.dk
    mean = float(np.sum(w * hbar * k))
    second = float(np.sum(w * (hbar * k) ** 2))
    return mean, max(second - mean**2, 0.0), second


def momentum_variance(psi: ComplexField, hbar: float = 1.0) -> tuple[float, float]:
    """Mean and variance of hbar*k under |phi(k)|^2."""
    _check_hbar(hbar)
    leak = boundary_leakage(psi)
    if leak > LEAKAGE_TOL:
        raise GridTooSmall(f"state leaks to the box edge (relative density {leak:.3g})")
    to_momentum(psi)  # normalization contract
    mean, var, _ = _momentum_moments(psi.grid, psi.values, hbar)
    return mean, var


@dataclass
class UncertaintyReport:
    dX: float
    deltaX: float
    dP: float
    dP_cl: float
    dP_nc: float
    product_exact: float
    heisenberg: float
    variance_residual: float
    hbar: float
    dP_nc_fisher: float = 0.0
    nc_discrepancy: float = 0.0
    mean_P: float = 0.0
    mean_P_nc: float = 0.0
    grid: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=lambda: dict(TOLERANCES))

    @property
    def product_rel_error(self) -> float:
        return abs(self.product_exact - self.hbar / 2) / (self.hbar / 2)

    def invariant_failures(self) -> list[str]:
        out = []
        for key, val in asdict(self).items():
            if not isinstance(val, float):
                continue
            if not np.isfinite(val) or (val < 0 and key not in ("mean_P", "mean_P_nc")):
                out.append(f"bad entry {key}={val!r}")
        if self.dX < self.deltaX - self.tolerances["cramer_rao_slack"]:
            out.append("Cramer-Rao bound violated")
        if self.product_rel_error > self.tolerances["product_rel"]:
            out.append("exact uncertainty product off")
        if self.variance_residual > self.tolerances["variance_residual_rel"] * self.dP**2:
            out.append("variance decomposition residual too large")
        if self.nc_discrepancy > self.tolerances["nc_discrepancy_rel"]:
            out.append("nonclassical spread routes disagree")
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["product_rel_error"] = self.product_rel_error
        return d


def variance_decomposition(psi: ComplexField, hbar: float = 1.0) -> UncertaintyReport:
    """Full set of section statistics for one pure state."""
    _check_hbar(hbar)
    grid = psi.grid
    p = RealField(grid, psi.density)
    pcl = _classical_momentum_values(psi, hbar)
    dX = float(np.sqrt(position_moments(p)[1]))
    deltaX = fisher_length_psi(psi)

    mean_P, var_P = momentum_variance(psi, hbar)
    dP = float(np.sqrt(var_P))
    mean_cl = grid.integrate(p.values * pcl)
    var_cl = max(grid.integrate(p.values * pcl**2) - mean_cl**2, 0.0)
    nc = nonclassical_field(psi, hbar)

    dP_nc = float(np.sqrt(max(var_P - var_cl, 0.0)))  # route (a)
    dP_nc_fisher = hbar / (2 * deltaX)  # route (b)
    return UncertaintyReport(
        dX=dX,
        deltaX=deltaX,
        dP=dP,
        dP_cl=float(np.sqrt(var_cl)),
        dP_nc=dP_nc,
        product_exact=deltaX * dP_nc,
        heisenberg=dX * dP,
        variance_residual=abs(var_P - var_cl - nc.variance),
        hbar=hbar,
        dP_nc_fisher=dP_nc_fisher,
        nc_discrepancy=abs(dP_nc - dP_nc_fisher) / dP_nc_fisher,
        mean_P=mean_P,
        mean_P_nc=nc.mean,
        grid=grid.to_dict(),
    )


def exact_uncertainty_product(psi: ComplexField, hbar: float = 1.0) -> float:
    return variance_decomposition(psi, hbar).product_exact


@dataclass
class KineticDecomposition:
    total: float
    classical: float
    nonclassical: float
    residual: float


def kinetic_decomposition(psi: ComplexField, hbar: float = 1.0, mass: float = 1.0) -> KineticDecomposition:
    """<P^2>/2m split into the P_cl part and the fluctuation part.

    ``residual`` compares the nonclassical remainder with <P_nc^2>/2m from
    position-space quadrature, relative to the total.
    """
    if not mass > 0:
        raise InvalidArgument("mass must be positive")
    _check_hbar(hbar)
    grid = psi.grid
    pcl = _classical_momentum_values(psi, hbar)
    _, _, second = _momentum_moments(grid, psi.values, hbar)
    total = second / (2 * mass)
    classical = grid.integrate(psi.density * pcl**2) / (2 * mass)
    nonclassical = total - classical
    direct = nonclassical_field(psi, hbar).variance / (2 * mass)
    return KineticDecomposition(total, classical, nonclassical, abs(nonclassical - direct) / total)


def cramer_rao_check(p: RealField) -> tuple[float, float, bool]:
    dX = float(np.sqrt(position_moments(p)[1]))
    deltaX = fisher_length(p)
    return dX, deltaX, bool(dX >= deltaX - CRAMER_RAO_SLACK)


@dataclass
class ConjugateReport:
    dX: float
    dX_cl: float
    dX_nc: float
    dX_nc_direct: float
    deltaP: float
    product: float
    hbar: float


def conjugate_report(psi: ComplexField, hbar: float = 1.0) -> ConjugateReport:
    """Mirror of the decomposition with the roles of X and P exchanged.

    In the momentum representation X acts as i d/dk. With phi(k) the momentum
    amplitude, X_cl(k) = -Im(phi'/phi) and deltaP = hbar/sqrt(I_w[|phi|^2]).
    phi' is the transform of -i x psi (physical x), which avoids the wrap-
    around an FFT derivative in k would introduce for off-centre states.
    dX_nc is route (a): sqrt(dX^2 - dX_cl^2) with dX from the position density.
    """
    _check_hbar(hbar)
    _, phi_field = to_momentum(psi)
    grid = psi.grid
    phi = phi_field.values
    pk = np.abs(phi) ** 2
    _require_node_free(pk, grid)
    dphi = fourier_transform(grid, -1j * grid.x * psi.values)
    dk = grid.dk
    sup = support_mask(pk)
    xcl = _log_derivative_field(grid, phi, dphi, -1.0)
    # |phi|' = Re(phi* phi')/|phi|; Fisher information of |phi|^2 on the support
    iw = 4.0 * np.sum(np.real(np.conj(phi[sup]) * dphi[sup]) ** 2 / pk[sup]) * dk
    deltaP = hbar / np.sqrt(iw)

    dX = float(np.sqrt(position_moments(RealField(grid, psi.density))[1]))
    mean_cl = np.sum(pk * xcl) * dk
    var_cl = max(np.sum(pk * xcl**2) * dk - mean_cl**2, 0.0)
    dX_nc = float(np.sqrt(max(dX**2 - var_cl, 0.0)))
    direct = float(np.sqrt(np.sum(np.abs(1j * dphi - xcl * phi) ** 2) * dk))
    return ConjugateReport(dX, float(np.sqrt(var_cl)), dX_nc, direct, float(deltaP), float(deltaP * dX_nc), hbar)


def conjugate_uncertainty_product(psi: ComplexField, hbar: float = 1.0) -> float:
    return conjugate_report(psi, hbar).product


def confinement_study(
    interval: tuple[float, float] = (-1.0, 1.0),
    sigma: float = 1.0,
    resolutions: list[int] = (256, 512, 1024, 2048, 4096),
    box: tuple[float, float] = (-8.0, 8.0),
    hbar: float = 1.0,
    x0: float = 0.0,
) -> list[dict]:
    """Truncated Gaussian at increasing resolution, cut smoothed over one cell.

    Each row also carries a control value: the Fisher length of the untruncated
    Gaussian on the same grid, which should not move with n.
    """
    a, b = interval
    if not (box[0] < a < b < box[1]):
        raise InvalidArgument("truncation interval must lie strictly inside the box")
    rows = []
    for n in resolutions:
        grid = Grid1D(box[0], box[1], int(n))
        spec = StateSpec("truncated_gaussian", {"x0": x0, "sigma": sigma, "a": a, "b": b, "width": 1.0})
        rep = variance_decomposition(make_state(spec, grid, hbar), hbar)
        control = make_state(StateSpec("gaussian", {"x0": x0, "sigma": sigma}), grid, hbar)
        rows.append(
            {
                "n": int(n),
                "deltaX": rep.deltaX,
                "dP_nc": rep.dP_nc,
                "product": rep.product_exact,
                "product_rel_error": rep.product_rel_error,
                "control_deltaX": fisher_length(RealField(grid, control.density)),
            }
        )
    return rows
