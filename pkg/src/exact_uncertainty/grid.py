"""Uniform periodic grids, sampled fields and spectral calculus.

All fields are immutable value objects. The heavy lifting happens on plain
numpy arrays through the ``Grid1D`` helpers; the module-level functions wrap
them with validation for public use.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft as sfft

from .errors import InvalidArgument, InvalidField, NotNormalized

NORM_TOL = 1e-8


@dataclass(frozen=True)
class Grid1D:
    """Periodic lattice x_j = x_min + j*dx, j = 0..n-1."""

    x_min: float
    x_max: float
    n: int
    periodic: bool = True

    def __post_init__(self):
        n = self.n
        if not isinstance(n, (int, np.integer)) or n < 16 or (n & (n - 1)) != 0:
            raise InvalidArgument(f"grid size must be a power of two >= 16, got {n}")
        if not (np.isfinite(self.x_min) and np.isfinite(self.x_max)) or self.x_max <= self.x_min:
            raise InvalidArgument(f"bad grid extent [{self.x_min}, {self.x_max})")
        object.__setattr__(self, "n", int(n))
        object.__setattr__(self, "x_min", float(self.x_min))
        object.__setattr__(self, "x_max", float(self.x_max))

    @property
    def length(self) -> float:
        return self.x_max - self.x_min

    @property
    def dx(self) -> float:
        return self.length / self.n

    @property
    def dk(self) -> float:
        return 2 * np.pi / self.length

    @cached_property
    def x(self) -> np.ndarray:
        x = self.x_min + np.arange(self.n) * self.dx
        x.setflags(write=False)
        return x

    @cached_property
    def k_fft(self) -> np.ndarray:
        """Wavenumbers in raw FFT order."""
        k = 2 * np.pi * sfft.fftfreq(self.n, self.dx)
        k.setflags(write=False)
        return k

    @cached_property
    def _k_first(self) -> np.ndarray:
        # Nyquist mode has no odd-derivative partner for real data; zero it
        k = np.array(self.k_fft)
        k[self.n // 2] = 0.0
        k.setflags(write=False)
        return k

    def momentum_grid(self) -> "MomentumGrid":
        return MomentumGrid(self)

    # -- array-level calculus -------------------------------------------------

    def spectral_derivative(self, values: np.ndarray, order: int = 1) -> np.ndarray:
        values = np.asarray(values)
        if order not in (1, 2):
            raise InvalidArgument(f"derivative order must be 1 or 2, got {order}")
        if np.isrealobj(values):
            k = self._k_first if order == 1 else self.k_fft
            half = self.n // 2 + 1
            return sfft.irfft((1j * k[:half]) ** order * sfft.rfft(values), self.n)
        # complex samples keep the Nyquist mode so sum |f'|^2 matches Parseval
        return sfft.ifft((1j * self.k_fft) ** order * sfft.fft(values))

    def fd_derivative(self, values: np.ndarray, order: int = 1) -> np.ndarray:
        """Second-order finite differences without wrap-around."""
        values = np.asarray(values)
        dx = self.dx
        if order == 1:
            return np.gradient(values, dx, edge_order=2)
        if order == 2:
            out = np.empty_like(values)
            out[1:-1] = (values[2:] - 2 * values[1:-1] + values[:-2]) / dx**2
            out[0] = (2 * values[0] - 5 * values[1] + 4 * values[2] - values[3]) / dx**2
            out[-1] = (2 * values[-1] - 5 * values[-2] + 4 * values[-3] - values[-4]) / dx**2
            return out
        raise InvalidArgument(f"derivative order must be 1 or 2, got {order}")

    def fisher_information(self, p: np.ndarray, dp: np.ndarray | None = None) -> float:
        """Integral of dp^2/p over samples with p > 0.

        ``dp`` defaults to the spectral derivative of p. Where p has decayed
        to round-off the quotient is noise over noise, so samples below
        1e-13 of the peak are left out unless ``dp`` is supplied in product
        form (2 Re(psi* psi')), whose square already carries a factor of p.
        """
        p = np.asarray(p)
        if dp is None:
            dp = self.spectral_derivative(p, 1)
            keep = p > 1e-13 * np.max(p)
        else:
            keep = p > 0
        return float(np.sum(dp[keep] ** 2 / p[keep]) * self.dx)

    def integrate(self, values: np.ndarray) -> float:
        return float(np.sum(values) * self.dx)

    def is_periodic(self, values: np.ndarray) -> bool:
        """Wrap-around jump no larger than the steepest interior step."""
        values = np.asarray(values)
        scale = float(np.max(np.abs(values))) if values.size else 0.0
        if scale == 0.0:
            return True
        wrap = abs(values[0] - values[-1])
        steep = float(np.max(np.abs(np.diff(values))))
        return wrap <= 2.0 * steep + 1e-12 * scale

    def to_dict(self) -> dict:
        return {"x_min": self.x_min, "x_max": self.x_max, "n": self.n, "dx": self.dx}


@dataclass(frozen=True)
class MomentumGrid:
    """Conjugate wavenumbers of a Grid1D, fftshifted to ascending order."""

    grid: Grid1D

    @cached_property
    def k(self) -> np.ndarray:
        k = sfft.fftshift(self.grid.k_fft)
        k.setflags(write=False)
        return k

    @property
    def dk(self) -> float:
        return self.grid.dk

    @property
    def n(self) -> int:
        return self.grid.n


def _freeze(values: np.ndarray, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class RealField:
    grid: Grid1D
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = np.asarray(self.values)
        if np.iscomplexobj(vals):
            raise InvalidField("RealField values must be real")
        vals = _freeze(vals, float)
        if vals.shape != (self.grid.n,):
            raise InvalidField(f"expected {self.grid.n} samples, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise InvalidField("field contains non-finite values")
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True, eq=False)
class ComplexField:
    grid: Grid1D
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = _freeze(self.values, complex)
        if vals.shape != (self.grid.n,):
            raise InvalidField(f"expected {self.grid.n} samples, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise InvalidField("field contains non-finite values")
        object.__setattr__(self, "values", vals)

    @property
    def density(self) -> np.ndarray:
        return np.abs(self.values) ** 2

    def norm(self) -> float:
        return self.grid.integrate(self.density)


Field = RealField | ComplexField


def derivative(f: Field, order: int = 1, mode: str = "auto") -> Field:
    """Spatial derivative of a sampled field.

    ``mode`` is "spectral" (Fourier multiplier (ik)^order), "fd" (second-order
    central differences, no wrap-around) or "auto", which uses the spectral
    route when the samples are numerically periodic and falls back to finite
    differences otherwise. The mode that ran is stored in ``meta["mode"]``.
    """
    if order not in (1, 2):
        raise InvalidArgument(f"derivative order must be 1 or 2, got {order}")
    if mode not in ("auto", "spectral", "fd"):
        raise InvalidArgument(f"unknown derivative mode {mode!r}")
    vals = f.values
    if not np.all(np.isfinite(vals)):
        raise InvalidField("field contains non-finite values")
    grid = f.grid
    if mode == "auto":
        mode = "spectral" if grid.is_periodic(vals) else "fd"
    if mode == "spectral":
        out = grid.spectral_derivative(vals, order)
    else:
        out = grid.fd_derivative(vals, order)
    meta = {"mode": mode, "order": order}
    if isinstance(f, RealField):
        return RealField(grid, np.real(out), meta)
    return ComplexField(grid, out, meta)


def integrate(f: RealField) -> float:
    """Periodic rectangle rule dx * sum f_j."""
    vals = f.values
    if not np.all(np.isfinite(vals)):
        raise InvalidField("field contains non-finite values")
    return f.grid.integrate(vals)


def boundary_leakage(f: Field) -> float:
    """Edge magnitude relative to the peak (density for complex fields)."""
    vals = np.abs(f.values)
    if isinstance(f, ComplexField):
        vals = vals**2
    peak = float(np.max(vals))
    if peak == 0.0:
        return 0.0
    return float(max(vals[0], vals[-1]) / peak)


def fourier_transform(grid: Grid1D, psi: np.ndarray) -> np.ndarray:
    """Unitary continuous-FT approximation, output ordered like MomentumGrid.k."""
    k = sfft.fftshift(grid.k_fft)
    raw = sfft.fftshift(sfft.fft(psi))
    return raw * grid.dx / np.sqrt(2 * np.pi) * np.exp(-1j * k * grid.x_min)


def inverse_fourier_transform(grid: Grid1D, phi: np.ndarray) -> np.ndarray:
    k = sfft.fftshift(grid.k_fft)
    raw = phi * np.exp(1j * k * grid.x_min) * np.sqrt(2 * np.pi) / grid.dx
    return sfft.ifft(sfft.ifftshift(raw))


def to_momentum(psi: ComplexField) -> tuple[MomentumGrid, ComplexField]:
    """Momentum-representation amplitude phi(k) on the shifted wavenumber grid.

    The returned ComplexField reuses the position grid object for its sample
    count; its samples sit at ``MomentumGrid.k`` with spacing ``dk``.
    """
    norm = psi.norm()
    if abs(norm - 1.0) > NORM_TOL:
        raise NotNormalized(f"state norm {norm!r} differs from 1")
    grid = psi.grid
    phi = fourier_transform(grid, psi.values)
    return grid.momentum_grid(), ComplexField(grid, phi, {"representation": "momentum"})


def from_momentum(mgrid: MomentumGrid, phi: ComplexField) -> ComplexField:
    grid = mgrid.grid
    return ComplexField(grid, inverse_fourier_transform(grid, phi.values))
