"""Canonical test states and the wavefunction <-> (p, s) field conversion.

State specs use a compact ``kind:key=val,key=val`` syntax. Superpositions
list their Gaussian components separated by ``;``::

    gaussian:x0=0,sigma=1
    chirped_gaussian:sigma=1,chirp=0.3
    superposition:x0=-4,weight=1;x0=4,phase=1.57
    truncated_gaussian:sigma=1,a=-1,b=1
    file:path=psi.csv

Wave parameters (``k0``, ``chirp``) are wavenumbers, so a state's samples do
not depend on the value of hbar; the classical momentum is hbar*k0.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    GridTooSmall,
    InvalidArgument,
    InvalidDensity,
    NodePresent,
    NotNormalized,
    StateSpecParse,
)
from .grid import ComplexField, Grid1D, RealField, boundary_leakage

P_FLOOR_REL = 1e-13
LEAKAGE_TOL = 1e-10
NORM_TOL = 1e-8

_GAUSS_KEYS = {"x0": 0.0, "sigma": 1.0}
KIND_DEFAULTS: dict[str, dict[str, float]] = {
    "gaussian": dict(_GAUSS_KEYS),
    "boosted_gaussian": {**_GAUSS_KEYS, "k0": 0.0},
    "chirped_gaussian": {**_GAUSS_KEYS, "k0": 0.0, "chirp": 0.0},
    "truncated_gaussian": {**_GAUSS_KEYS, "a": -1.0, "b": 1.0, "width": 1.0},
}
COMPONENT_DEFAULTS = {**_GAUSS_KEYS, "k0": 0.0, "chirp": 0.0, "weight": 1.0, "phase": 0.0}
KINDS = (*KIND_DEFAULTS, "superposition", "file")


@dataclass(frozen=True)
class StateSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise StateSpecParse(f"unknown state kind {self.kind!r}")
        if self.kind == "file":
            if "path" not in self.params:
                raise StateSpecParse("file state needs path=...")
            return
        if self.kind == "superposition":
            comps = self.params.get("components", [])
            if not comps:
                raise StateSpecParse("superposition needs at least one component")
            full = []
            for c in comps:
                _check_keys(c, COMPONENT_DEFAULTS)
                full.append({**COMPONENT_DEFAULTS, **{k: float(v) for k, v in c.items()}})
            for c in full:
                if not c["sigma"] > 0:
                    raise StateSpecParse("sigma must be positive")
            object.__setattr__(self, "params", {"components": full})
            return
        defaults = KIND_DEFAULTS[self.kind]
        _check_keys(self.params, defaults)
        params = {**defaults, **{k: float(v) for k, v in self.params.items()}}
        if not params["sigma"] > 0:
            raise StateSpecParse("sigma must be positive")
        if self.kind == "truncated_gaussian" and not (params["a"] < params["b"] and params["width"] > 0):
            raise StateSpecParse("truncation needs a < b and width > 0")
        object.__setattr__(self, "params", params)

    def to_string(self) -> str:
        if self.kind == "file":
            return f"file:path={self.params['path']}"
        if self.kind == "superposition":
            parts = [",".join(f"{k}={v!r}" for k, v in c.items()) for c in self.params["components"]]
            return "superposition:" + ";".join(parts)
        return self.kind + ":" + ",".join(f"{k}={v!r}" for k, v in self.params.items())


def _check_keys(params: dict, allowed: dict):
    bad = set(params) - set(allowed)
    if bad:
        raise StateSpecParse(f"unknown parameter(s) {sorted(bad)}; allowed {sorted(allowed)}")


def _parse_pairs(text: str) -> dict:
    out = {}
    text = text.strip()
    if not text:
        return out
    for item in text.split(","):
        if "=" not in item:
            raise StateSpecParse(f"expected key=value, got {item!r}")
        key, val = (t.strip() for t in item.split("=", 1))
        if not key or key in out:
            raise StateSpecParse(f"empty or repeated key in {text!r}")
        out[key] = val
    return out


def parse_state_spec(text: str) -> StateSpec:
    if ":" in text:
        kind, rest = text.split(":", 1)
    else:
        kind, rest = text, ""
    kind = kind.strip()
    if kind not in KINDS:
        raise StateSpecParse(f"unknown state kind {kind!r}")
    if kind == "file":
        return StateSpec(kind, _parse_pairs(rest))
    try:
        if kind == "superposition":
            comps = [{k: float(v) for k, v in _parse_pairs(c).items()} for c in rest.split(";") if c.strip()]
            return StateSpec(kind, {"components": comps})
        return StateSpec(kind, {k: float(v) for k, v in _parse_pairs(rest).items()})
    except ValueError as exc:
        raise StateSpecParse(f"non-numeric parameter in {text!r}: {exc}") from None


def gaussian_amplitude(x, x0=0.0, sigma=1.0, k0=0.0, chirp=0.0) -> np.ndarray:
    """Normalized exp(-(x-x0)^2/(4 sigma^2) + i k0 x + i chirp (x-x0)^2 / 2)."""
    d = x - x0
    amp = (2 * np.pi * sigma**2) ** -0.25
    return amp * np.exp(-(d**2) / (4 * sigma**2) + 1j * (k0 * x + 0.5 * chirp * d**2))


def _truncation_window(x, a, b, width):
    return 0.5 * (np.tanh((x - a) / width) - np.tanh((x - b) / width))


def _normalize(grid: Grid1D, psi: np.ndarray) -> np.ndarray:
    norm = grid.integrate(np.abs(psi) ** 2)
    if not norm > 0:
        raise InvalidArgument("state has zero norm on this grid")
    return psi / np.sqrt(norm)


def read_state_file(path: str | Path, grid: Grid1D) -> np.ndarray:
    """Rows ``j,re,im`` (header optional); must cover grid indices 0..n-1 exactly."""
    rows = {}
    with open(path, newline="") as fh:
        for rec in csv.reader(fh):
            if not rec or rec[0].strip().startswith("#"):
                continue
            try:
                j, re, im = int(rec[0]), float(rec[1]), float(rec[2])
            except (ValueError, IndexError):
                if not rows:
                    continue  # header line
                raise StateSpecParse(f"bad row in {path}: {rec}") from None
            rows[j] = complex(re, im)
    if sorted(rows) != list(range(grid.n)):
        raise InvalidArgument(f"{path} does not match the grid (need indices 0..{grid.n - 1})")
    return np.array([rows[j] for j in range(grid.n)])


def write_state_file(path: str | Path, psi: ComplexField):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["j", "re", "im"])
        for j, z in enumerate(psi.values):
            w.writerow([j, format(z.real, ".17g"), format(z.imag, ".17g")])


def make_state(spec: StateSpec | str, grid: Grid1D, hbar: float = 1.0) -> ComplexField:
    """Normalized samples of the requested state on ``grid``."""
    if isinstance(spec, str):
        spec = parse_state_spec(spec)
    if not hbar > 0:
        raise InvalidArgument("hbar must be positive")
    x = grid.x
    p = spec.params
    if spec.kind in ("gaussian", "boosted_gaussian", "chirped_gaussian"):
        psi = gaussian_amplitude(x, p["x0"], p["sigma"], p.get("k0", 0.0), p.get("chirp", 0.0))
    elif spec.kind == "superposition":
        psi = np.zeros(grid.n, complex)
        for c in p["components"]:
            g = gaussian_amplitude(x, c["x0"], c["sigma"], c["k0"], c["chirp"])
            psi += c["weight"] * np.exp(1j * c["phase"]) * g
    elif spec.kind == "truncated_gaussian":
        if not (grid.x_min < p["a"] and p["b"] < grid.x_max):
            raise InvalidArgument("truncation interval must lie inside the grid")
        win = _truncation_window(x, p["a"], p["b"], p["width"] * grid.dx)
        psi = (win * gaussian_amplitude(x, p["x0"], p["sigma"]).real).astype(complex)
    else:
        psi = read_state_file(p["path"], grid)
    psi = _normalize(grid, psi)
    field_ = ComplexField(grid, psi, {"spec": spec.to_string()})
    if spec.kind != "truncated_gaussian":
        leak = boundary_leakage(field_)
        if leak > LEAKAGE_TOL:
            raise GridTooSmall(f"state leaks to the box edge (relative density {leak:.3g})")
    return field_


# -- Madelung picture ----------------------------------------------------------


def support_mask(p: np.ndarray, rel: float = P_FLOOR_REL) -> np.ndarray:
    return p > rel * np.max(p)


def find_nodes(p: np.ndarray, rel: float = P_FLOOR_REL) -> np.ndarray:
    """Indices of interior points at or below the floor.

    The support span runs from the first to the last sample above the floor;
    samples below the floor inside that span are nodes. Decaying tails outside
    the span are not.
    """
    above = np.flatnonzero(support_mask(p, rel))
    if above.size == 0:
        return np.arange(p.size)
    lo, hi = above[0], above[-1]
    inner = np.arange(lo, hi + 1)
    return inner[p[lo : hi + 1] <= rel * np.max(p)]


@dataclass(frozen=True, eq=False)
class MadelungState:
    """Hydrodynamic pair (p, s) at time t; psi = sqrt(p) exp(i s / hbar)."""

    p: RealField
    s: RealField
    t: float = 0.0

    def __post_init__(self):
        if self.p.grid != self.s.grid:
            raise InvalidArgument("p and s live on different grids")
        if np.any(self.p.values < 0):
            raise InvalidDensity("negative density")
        norm = self.p.grid.integrate(self.p.values)
        if abs(norm - 1.0) > NORM_TOL:
            raise NotNormalized(f"density integrates to {norm!r}")

    @property
    def grid(self) -> Grid1D:
        return self.p.grid

    def anchored(self) -> "MadelungState":
        s = self.s.values - self.s.values[self.grid.n // 2]
        return MadelungState(self.p, RealField(self.grid, s), self.t)


def wavefunction_to_fields(psi: ComplexField, hbar: float = 1.0, t: float = 0.0) -> MadelungState:
    if not hbar > 0:
        raise InvalidArgument("hbar must be positive")
    p = psi.density
    nodes = find_nodes(p)
    if nodes.size:
        raise NodePresent(f"{nodes.size} node(s), first at x={psi.grid.x[nodes[0]]:.6g}")
    # np.unwrap works left to right, correcting jumps larger than pi
    phase = np.unwrap(np.angle(psi.values))
    s = hbar * (phase - phase[psi.grid.n // 2])
    return MadelungState(RealField(psi.grid, p), RealField(psi.grid, s), t)


def fields_to_wavefunction(m: MadelungState, hbar: float = 1.0) -> ComplexField:
    if not hbar > 0:
        raise InvalidArgument("hbar must be positive")
    p = m.p.values
    if np.any(p < 0):
        raise InvalidDensity("negative density")
    return ComplexField(m.grid, np.sqrt(p) * np.exp(1j * m.s.values / hbar))


# -- seeded random family ----------------------------------------------------

def random_mixture_spec(rng: np.random.Generator, n_min: int = 3, n_max: int = 7) -> StateSpec:
    ncomp = int(rng.integers(n_min, n_max + 1))
    comps = []
    for _ in range(ncomp):
        comps.append(
            {
                "x0": rng.uniform(-6, 6),
                "sigma": rng.uniform(0.7, 1.5),
                "k0": rng.uniform(-2, 2),
                "chirp": rng.uniform(-0.3, 0.3),
                "weight": rng.uniform(0.5, 1.5),
                "phase": rng.uniform(0, 2 * np.pi),
            }
        )
    return StateSpec("superposition", {"components": comps})


def random_mixture_family(seed: int, count: int, grid: Grid1D, max_tries: int = 10_000) -> list[StateSpec]:
    """``count`` seeded Gaussian mixtures whose densities are node-free.

    Widely separated components leave gaps where the density drops below the
    node floor; such draws are discarded and redrawn from the same stream.
    """
    rng = np.random.default_rng(seed)
    out: list[StateSpec] = []
    for _ in range(max_tries):
        if len(out) == count:
            break
        spec = random_mixture_spec(rng)
        if find_nodes(make_state(spec, grid).density).size == 0:
            out.append(spec)
    if len(out) < count:
        raise InvalidArgument("could not draw enough node-free mixtures")
    return out
