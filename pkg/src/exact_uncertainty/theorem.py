"""Numerical form of the uniqueness argument for the fluctuation term.

Any fluctuation term built from p alone that is additive over independent
subsystems is a combination of four functionals,

    I_u = int p ln p,   I_v = int x p',   I_w = int p'^2 / p,   I_r = int x^2 p,

weighted by constants (A, B, C, D). Under the dilation p -> k p(kx) these
behave as I_u + ln k, I_v, k^2 I_w and k^-2 I_r. Only I_w has the k^2 law
the exact uncertainty relation demands, which forces A = B = D = 0.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass

import numpy as np
import scipy.fft as sfft

from .errors import GridTooLarge, GridTooSmall, InconsistentEvidence, InvalidArgument, NodePresent
from .grid import Grid1D, RealField, boundary_leakage
from .states import find_nodes, support_mask
from .uncertainty import fisher_information

MAX_2D_SAMPLES = 1024 * 1024
ADDITIVITY_TOL = 1e-8
ADDITIVITY_ABS = 1e-10
LAW_TOL = 1e-8
K2_TOL = 1e-6
TERMS = ("u", "v", "w", "r")
COEFF_NAMES = {"u": "A", "v": "B", "w": "C", "r": "D"}


def hbar_from_c(C: float) -> float:
    """hbar := 2 sqrt(C)."""
    if not C > 0:
        raise InvalidArgument("C must be positive")
    return 2.0 * float(np.sqrt(C))


@dataclass
class BasisTerms:
    I_u: float
    I_v: float
    I_w: float
    I_r: float

    def get(self, term: str) -> float:
        return getattr(self, "I_" + term)


@dataclass(frozen=True, eq=False)
class ProductDensity:
    """p1(x) p2(y) on the tensor grid of the two factors."""

    p1: RealField
    p2: RealField

    def __post_init__(self):
        if self.p1.grid.n * self.p2.grid.n > MAX_2D_SAMPLES:
            raise GridTooLarge(f"2-D grid {self.p1.grid.n}x{self.p2.grid.n} exceeds {MAX_2D_SAMPLES} samples")

    def values(self) -> np.ndarray:
        return np.outer(self.p1.values, self.p2.values)


def _basis_1d(p: RealField) -> BasisTerms:
    grid = p.grid
    vals = p.values
    x = grid.x
    pos = vals > 0
    i_u = float(np.sum(vals[pos] * np.log(vals[pos])) * grid.dx)
    i_v = grid.integrate(x * grid.spectral_derivative(vals, 1))
    return BasisTerms(i_u, i_v, fisher_information(p), grid.integrate(x**2 * vals))


def _axis_derivative(grid: Grid1D, arr: np.ndarray, axis: int) -> np.ndarray:
    k = np.array(grid.k_fft)
    k[grid.n // 2] = 0.0
    shape = [1, 1]
    shape[axis] = grid.n
    return np.real(sfft.ifft(1j * k.reshape(shape) * sfft.fft(arr, axis=axis), axis=axis))


def _basis_2d(prod: ProductDensity) -> BasisTerms:
    g1, g2 = prod.p1.grid, prod.p2.grid
    P = prod.values()
    area = g1.dx * g2.dx
    X, Y = g1.x[:, None], g2.x[None, :]
    dPx = _axis_derivative(g1, P, 0)
    dPy = _axis_derivative(g2, P, 1)
    pos = P > 0
    i_u = float(np.sum(P[pos] * np.log(P[pos])) * area)
    i_v = float(np.sum(X * dPx + Y * dPy) * area)
    sup = support_mask(P)
    i_w = float(np.sum((dPx[sup] ** 2 + dPy[sup] ** 2) / P[sup]) * area)
    i_r = float(np.sum((X**2 + Y**2) * P) * area)
    return BasisTerms(i_u, i_v, i_w, i_r)


def basis_terms(p: RealField | ProductDensity) -> BasisTerms:
    """The four functionals, with spectral derivatives and rectangle-rule quadrature."""
    if isinstance(p, ProductDensity):
        for f in (p.p1, p.p2):
            if find_nodes(f.values).size:
                raise NodePresent("factor density has a node")
        return _basis_2d(p)
    if find_nodes(p.values).size:
        raise NodePresent("density has a node")
    return _basis_1d(p)


def additivity_check(p1: RealField, p2: RealField) -> dict:
    """Each term on p1 (x) p2 against the sum of the 1-D values."""
    prod = ProductDensity(p1, p2)
    whole = basis_terms(prod)
    a, b = basis_terms(p1), basis_terms(p2)
    terms = {}
    for t in TERMS:
        expected = a.get(t) + b.get(t)
        observed = whole.get(t)
        diff = abs(observed - expected)
        if abs(expected) < ADDITIVITY_ABS:
            resid, ok = diff, diff <= ADDITIVITY_ABS
        else:
            resid = diff / abs(expected)
            ok = resid <= ADDITIVITY_TOL
        terms["I_" + t] = {
            "product": observed,
            "sum_of_parts": expected,
            "part_1": a.get(t),
            "part_2": b.get(t),
            "residual": resid,
            "passed": bool(ok),
        }
    return {"terms": terms, "passed": all(v["passed"] for v in terms.values())}


def dilate(p: RealField, k: float) -> RealField:
    """k p(kx), evaluated by trigonometric interpolation; zero outside the box."""
    if not k > 0:
        raise InvalidArgument("scale factor must be positive")
    grid = p.grid
    n = grid.n
    y = k * grid.x
    inside = (y >= grid.x_min) & (y < grid.x_max)
    coef = sfft.fft(p.values) / n
    m = np.fft.fftfreq(n, 1.0 / n)
    basis = np.exp(2j * np.pi * np.outer(y[inside] - grid.x_min, m) / grid.length)
    # the unpaired Nyquist mode enters as a cosine so the interpolant stays real
    basis[:, n // 2] = np.cos(np.pi * (y[inside] - grid.x_min) * n / grid.length)
    vals = np.zeros(n)
    vals[inside] = k * np.real(basis @ coef)
    # interpolation round-off leaves tiny negative samples in the tails
    return RealField(grid, np.maximum(vals, 0.0))


LAWS = {
    "u": "I_u + ln k",
    "v": "I_v",
    "w": "k^2 I_w",
    "r": "k^-2 I_r",
}


def _predicted(term: str, value: float, k: float) -> float:
    return {"u": value + np.log(k), "v": value, "w": k**2 * value, "r": value / k**2}[term]


def _density_label(p: RealField) -> str:
    return hashlib.sha1(np.ascontiguousarray(p.values).tobytes()).hexdigest()[:12]


def scaling_check(p: RealField, k: float, label: str | None = None) -> dict:
    """Transformation law of each term under p -> k p(kx), plus k^2 compatibility."""
    pk = dilate(p, k)
    leak = boundary_leakage(pk)
    if leak > 1e-10 or boundary_leakage(p) > 1e-10:
        raise GridTooSmall(f"dilated density reaches the box edge (relative {leak:.3g})")
    before, after = basis_terms(p), basis_terms(pk)
    terms = {}
    for t in TERMS:
        orig, new = before.get(t), after.get(t)
        pred = _predicted(t, orig, k)
        scale = abs(np.log(k)) if t == "u" else abs(pred)
        law_resid = float(abs(new - pred) / max(scale, 1e-300))
        ratio = new / orig if orig != 0 else float("inf")
        k2_resid = abs(ratio / k**2 - 1.0)
        terms["I_" + t] = {
            "law": LAWS[t],
            "original": orig,
            "scaled": new,
            "predicted": pred,
            "law_residual": law_resid,
            "law_holds": bool(law_resid <= LAW_TOL),
            "k2_ratio_residual": k2_resid,
            "k2_compatible": bool(k2_resid < K2_TOL),
        }
    return {"density": label or _density_label(p), "k": float(k), "terms": terms}


@dataclass
class Coefficients:
    """Surviving constants; None marks a free (undetermined) coefficient."""

    A: float | None
    B: float | None
    C: float | None
    D: float | None

    def mask(self) -> tuple:
        return tuple("free" if v is None else v for v in (self.A, self.B, self.C, self.D))

    def verdict(self) -> str:
        zero = [n for n, v in zip("ABCD", (self.A, self.B, self.C, self.D)) if v == 0]
        return "=".join(zero) + "=0" if zero else "none forced"

    def to_dict(self) -> dict:
        return asdict(self)


def coefficient_filter(reports: list[dict]) -> Coefficients:
    """Keep only the terms whose observed law is multiplicative k^2 everywhere.

    Needs at least three densities and three distinct k != 1 (k = 1 tests
    nothing). A term never tested cannot earn the k^2 law and is set to 0.
    A term that is k^2-compatible for some inputs and not others raises
    InconsistentEvidence.
    """
    informative = [r for r in reports if abs(r["k"] - 1.0) > 1e-12]
    densities = {r["density"] for r in informative}
    ks = {round(r["k"], 12) for r in informative}
    if len(densities) < 3 or len(ks) < 3:
        raise InvalidArgument(
            f"need >= 3 densities and >= 3 distinct k != 1, got {len(densities)} and {len(ks)}"
        )
    coeffs = {}
    for t in TERMS:
        seen = [r["terms"]["I_" + t]["k2_compatible"] for r in informative if "I_" + t in r["terms"]]
        if seen and all(seen):
            coeffs[COEFF_NAMES[t]] = None
        elif not any(seen):
            coeffs[COEFF_NAMES[t]] = 0.0
        else:
            raise InconsistentEvidence(f"term I_{t} is k^2-compatible for some inputs only")
    return Coefficients(**coeffs)


def fluctuation_from_theorem(p: RealField, C: float) -> tuple[float, float]:
    """Delta N = sqrt(C I_w) and deltaX * Delta N, which is sqrt(C) identically."""
    if not C > 0:
        raise InvalidArgument("C must be positive")
    iw = fisher_information(p)
    delta_n = float(np.sqrt(C * iw))
    return delta_n, float(iw**-0.5) * delta_n


def mixture_density(grid: Grid1D, components: list[tuple[float, float, float]]) -> RealField:
    """Normalized sum of w N(x0, sigma^2); positive everywhere, so node-free."""
    x = grid.x
    vals = np.zeros(grid.n)
    for x0, sigma, w in components:
        vals += w * np.exp(-((x - x0) ** 2) / (2 * sigma**2)) / (sigma * np.sqrt(2 * np.pi))
    return RealField(grid, vals / grid.integrate(vals))


def verification_ensemble(grid: Grid1D, seed: int = 0, extra: int = 2) -> dict[str, RealField]:
    """Two fixed densities plus ``extra`` seeded random mixtures."""
    rng = np.random.default_rng(seed)
    out = {
        "gaussian": mixture_density(grid, [(0.0, 1.0, 1.0)]),
        "bimodal": mixture_density(grid, [(-2.0, 0.8, 1.0), (2.0, 0.8, 1.0)]),
    }
    for i in range(extra):
        m = int(rng.integers(2, 5))
        comps = [
            (float(rng.uniform(-3, 3)), float(rng.uniform(0.7, 1.5)), float(rng.uniform(0.5, 1.5)))
            for _ in range(m)
        ]
        out[f"mixture_{i + 1}"] = mixture_density(grid, comps)
    return out


def verify_theorem(
    ks=(0.5, 2.0, 3.0),
    seed: int = 0,
    scaling_grid: Grid1D | None = None,
    additivity_grid: Grid1D | None = None,
    C: float = 0.25,
    pairs: int = 5,
) -> dict:
    """Additivity on product pairs, scaling ensemble, coefficient filter.

    ``passed`` requires the (0, 0, free, 0) mask, additivity of all four
    terms on every pair, and the k^2 law for I_w on every row.
    """
    scaling_grid = scaling_grid or Grid1D(-40.0, 40.0, 2048)
    additivity_grid = additivity_grid or Grid1D(-20.0, 20.0, 1024)

    small = verification_ensemble(additivity_grid, seed)
    names = list(small)
    combos = [(a, b) for i, a in enumerate(names) for b in names[i:]][:pairs]
    additivity = []
    for a, b in combos:
        res = additivity_check(small[a], small[b])
        additivity.append({"pair": [a, b], **res})

    dens = verification_ensemble(scaling_grid, seed)
    scaling = [scaling_check(p, float(k), label) for label, p in dens.items() for k in ks]
    coeffs = coefficient_filter(scaling)

    informative = [r for r in scaling if abs(r["k"] - 1.0) > 1e-12]
    w_rows = [r["terms"]["I_w"] for r in informative]
    max_w = max(r["law_residual"] for r in w_rows)
    max_add = max(t["residual"] for row in additivity for t in row["terms"].values())
    mask = coeffs.mask()
    passed = (
        mask == (0.0, 0.0, "free", 0.0)
        and all(row["passed"] for row in additivity)
        and all(r["law_holds"] and r["k2_compatible"] for r in w_rows)
    )
    fluct = {}
    for label, p in dens.items():
        dn, prod = fluctuation_from_theorem(p, C)
        fluct[label] = {"delta_N": dn, "fisher_length_times_delta_N": prod}
    return {
        "verdict": coeffs.verdict(),
        "mask": list(mask),
        "coefficients": coeffs.to_dict(),
        "passed": bool(passed),
        "seed": int(seed),
        "k": [float(k) for k in ks],
        "C": float(C),
        "sqrt_C": float(np.sqrt(C)),
        "max_w_law_residual": max_w,
        "max_additivity_residual": max_add,
        "densities": list(dens),
        "additivity": additivity,
        "scaling": scaling,
        "fluctuation": fluct,
    }
