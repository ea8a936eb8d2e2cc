import numpy as np
import pytest

from conftest import gauss_density
from exact_uncertainty.dynamics import (
    PotentialSpec,
    SolverConfig,
    classical_lagrangian,
    cross_validate,
    evolve_madelung,
    evolve_schrodinger,
    fluctuation_kinetic_term,
    functional_derivative_check,
    madelung_cfl_limit,
    madelung_terms,
    modified_lagrangian,
    parse_potential_spec,
    quantum_potential,
    random_density_perturbation,
    stochastic_velocities,
    trace_distance,
)
from exact_uncertainty.errors import (
    InvalidArgument,
    InvalidPerturbation,
    NodeFormed,
    NodePresent,
    UnstableStep,
)
from exact_uncertainty.grid import Grid1D, RealField
from exact_uncertainty.states import MadelungState, make_state, support_mask, wavefunction_to_fields
from exact_uncertainty.theorem import dilate
from exact_uncertainty.uncertainty import position_moments

T = 2 * np.pi
GROUND = "gaussian:sigma=0.7071067811865476"


def _const(grid, value):
    return RealField(grid, np.full(grid.n, float(value)))


def _l2(grid, a, b):
    return float(np.sqrt(np.sum((a - b) ** 2) * grid.dx))


# -- potentials --------------------------------------------------------------


def test_potential_specs(grid):
    v = parse_potential_spec("harmonic:omega=2").values(grid, mass=3.0)
    assert np.allclose(v, 0.5 * 3.0 * 4.0 * grid.x**2)
    well = parse_potential_spec("well:a=-5,b=5,height=10").values(grid)
    assert well[grid.n // 2] == pytest.approx(10 * (1 - np.tanh(10.0)), rel=1e-6) and well[0] == pytest.approx(10.0, rel=1e-6)
    sampled = PotentialSpec("sampled", {"values": np.ones(grid.n)})
    assert np.all(sampled.values(grid) == 1.0)
    with pytest.raises(InvalidArgument):
        PotentialSpec("sampled", {"values": np.ones(3)}).values(grid)
    with pytest.raises(InvalidArgument):
        parse_potential_spec("harmonic:omega=abc")
    with pytest.raises(InvalidArgument):
        parse_potential_spec("lattice")


# -- Lagrangians and Q -------------------------------------------------------------


def test_classical_lagrangian(grid):
    ground = wavefunction_to_fields(make_state(GROUND, grid))
    assert classical_lagrangian(ground, _const(grid, -0.5), "harmonic") == pytest.approx(-0.25, abs=1e-10)
    free = wavefunction_to_fields(make_state("gaussian", grid))
    assert classical_lagrangian(free, _const(grid, 0.0), "free") == 0.0
    boosted = wavefunction_to_fields(make_state("boosted_gaussian:k0=5", grid))
    assert classical_lagrangian(boosted, _const(grid, 0.0), "free") == pytest.approx(12.5, abs=1e-9)
    with pytest.raises(InvalidArgument):
        classical_lagrangian(free, _const(Grid1D(-20.0, 20.0, 512), 0.0), "free")


def test_fluctuation_kinetic_term(grid):
    unit = RealField(grid, gauss_density(grid.x))
    assert fluctuation_kinetic_term(unit, 0.25) == pytest.approx(0.125, abs=1e-10)
    ground = RealField(grid, make_state(GROUND, grid).density)
    assert fluctuation_kinetic_term(ground, 0.25) == pytest.approx(0.25, abs=1e-10)
    assert fluctuation_kinetic_term(dilate(unit, 2.0), 0.25) == pytest.approx(4 * 0.125, rel=1e-9)
    with pytest.raises(InvalidArgument):
        fluctuation_kinetic_term(unit, 0.0)


def test_modified_lagrangian(grid):
    ground = wavefunction_to_fields(make_state(GROUND, grid))
    assert abs(modified_lagrangian(ground, _const(grid, -0.5), "harmonic", C=0.25)) < 1e-8
    free = wavefunction_to_fields(make_state("gaussian", grid))
    assert modified_lagrangian(free, _const(grid, 0.0), "free", C=0.25) == pytest.approx(0.125, abs=1e-10)
    boosted = wavefunction_to_fields(make_state("chirped_gaussian:chirp=0.2,k0=1", grid))
    ds = _const(grid, 0.3)
    assert modified_lagrangian(boosted, ds, "harmonic", C=0.0) == classical_lagrangian(boosted, ds, "harmonic")


def test_quantum_potential(grid):
    unit = RealField(grid, gauss_density(grid.x))
    q = quantum_potential(unit).values
    assert q[grid.n // 2] == pytest.approx(0.25, abs=1e-10)
    inner = np.abs(grid.x) < 4
    assert np.max(np.abs(q - (0.25 - grid.x**2 / 8))[inner]) < 1e-9
    root = np.sqrt(2.0)
    for sign in (-1, 1):
        i = np.searchsorted(grid.x, sign * root)
        assert q[i - 1] * q[i] <= 0
    # x -> x/k stretches Q by k^2
    k = 2.0
    qk = quantum_potential(dilate(unit, k)).values
    mid = np.abs(grid.x) < 1.5
    assert np.max(np.abs(qk[mid] - k**2 * (0.25 - (k * grid.x[mid]) ** 2 / 8))) < 1e-8
    with pytest.raises(NodePresent):
        quantum_potential(RealField(grid, make_state("superposition:x0=-3;x0=3,phase=3.141592653589793", grid).density))


def _bump_pair(grid, p):
    x = grid.x
    d = np.exp(-((x - 0.7) ** 2) / 0.1) - np.exp(-((x + 0.7) ** 2) / 0.1)
    d += 0.3 * (np.exp(-((x - 1.5) ** 2) / 0.2) - np.exp(-((x + 0.4) ** 2) / 0.2))
    d -= p * grid.integrate(d)
    return RealField(grid, d)


def test_functional_derivative_bump(grid):
    p = RealField(grid, gauss_density(grid.x))
    res = functional_derivative_check(p, _bump_pair(grid, p.values), 0.25)
    assert res.passed, res
    zero = functional_derivative_check(p, _const(grid, 0.0), 0.25)
    assert zero.lhs == 0.0 and zero.rhs == 0.0


def test_functional_derivative_random(grid):
    rng = np.random.default_rng(2024)
    p = RealField(grid, make_state("chirped_gaussian:x0=1,sigma=1.3", grid).density)
    for _ in range(10):
        res = functional_derivative_check(p, random_density_perturbation(p, rng), 0.25)
        assert res.passed, res


def test_functional_derivative_preconditions(grid):
    p = RealField(grid, gauss_density(grid.x))
    with pytest.raises(InvalidPerturbation):
        functional_derivative_check(p, RealField(grid, gauss_density(grid.x, 1.0)), 0.25)
    d = _bump_pair(grid, p.values)
    with pytest.raises(InvalidPerturbation):
        functional_derivative_check(p, d, 0.25, eps=1.0)


# -- stochastic velocities ------------------------------------------------------------


def test_stochastic_velocities(grid):
    m = wavefunction_to_fields(make_state("chirped_gaussian:chirp=0.3", grid))
    u, v, stats = stochastic_velocities(m)
    assert stats.uv == pytest.approx(-0.15, abs=1e-8)
    assert stats.identity_residual <= 1e-9
    _, _, b = stochastic_velocities(wavefunction_to_fields(make_state("boosted_gaussian:k0=5", grid)))
    assert abs(b.uv) < 1e-10
    _, _, g = stochastic_velocities(wavefunction_to_fields(make_state("gaussian", grid)))
    assert g.m2_vv == pytest.approx(0.25, abs=1e-10) and g.delta_n2 == pytest.approx(0.25, abs=1e-10)
    sup = support_mask(m.p.values)
    assert np.max(np.abs(u.values[sup] - 0.3 * grid.x[sup])) < 1e-8


# -- Schrodinger solver ---------------------------------------------------------------


def test_coherent_recurrence(grid):
    psi = make_state("gaussian:x0=2,sigma=0.7071067811865476", grid)
    tr = evolve_schrodinger(psi, "harmonic", SolverConfig(T / 8192, 8192))
    d = tr.densities()
    assert _l2(grid, d[-1], d[0]) < 1e-6
    assert tr.norm_drift() <= 1e-9
    assert tr.times[-1] == pytest.approx(T)


def test_free_spreading(grid):
    tr = evolve_schrodinger(make_state("gaussian", grid), "free", SolverConfig(1e-3, 1000, store_every=100))
    for t, d in zip(tr.times, tr.densities()):
        var = position_moments(RealField(grid, d))[1]
        assert abs(var - (1 + t**2 / 4)) < 1e-8


def test_ehrenfest(grid):
    tr = evolve_schrodinger(make_state("boosted_gaussian:k0=1.5,x0=-3", grid), "free", SolverConfig(1e-3, 2000, store_every=200))
    for t, d in zip(tr.times, tr.densities()):
        assert position_moments(RealField(grid, d))[0] == pytest.approx(-3 + 1.5 * t, abs=1e-9)


def test_norm_per_step(grid):
    tr = evolve_schrodinger(make_state("chirped_gaussian:chirp=0.2,k0=1", grid), "harmonic", SolverConfig(1e-3, 100, store_every=1))
    assert np.max(np.abs(np.diff(tr.norm))) <= 1e-12


def test_galilean_shift(grid):
    cells = 32
    k0 = cells * grid.dx  # one time unit moves the packet by whole cells
    cfg = SolverConfig(1e-3, 1000)
    a = evolve_schrodinger(make_state("gaussian:x0=-2", grid), "free", cfg).densities()[-1]
    b = evolve_schrodinger(make_state(f"boosted_gaussian:x0=-2,k0={k0!r}", grid), "free", cfg).densities()[-1]
    assert np.max(np.abs(np.roll(a, cells) - b)) <= 1e-8


def test_schrodinger_leakage():
    g = Grid1D(-10.0, 10.0, 256)
    tr_cfg = SolverConfig(1e-2, 500)
    from exact_uncertainty.errors import GridTooSmall

    with pytest.raises(GridTooSmall) as info:
        evolve_schrodinger(make_state("boosted_gaussian:k0=4", g), "free", tr_cfg)
    trace = info.value.trace
    assert trace is not None and trace.error["error"] == "GridTooSmall" and trace.times


def test_trace_exports(tmp_path, grid):
    tr = evolve_schrodinger(make_state("gaussian", grid), "free", SolverConfig(1e-2, 20, store_every=10))
    tr.to_csv(tmp_path / "trace.csv")
    lines = (tmp_path / "trace.csv").read_text().splitlines()
    assert lines[0] == "t,norm,energy,dX,deltaX,dP_nc,product" and len(lines) == 4
    tr.dump_fields(tmp_path / "fields")
    assert len(list((tmp_path / "fields").glob("*.csv"))) == 3
    assert all(abs(r[-1] - 0.5) < 1e-9 for r in tr.rows())


# -- Madelung solver ------------------------------------------------------------------


def test_madelung_stationary(grid):
    m0 = wavefunction_to_fields(make_state(GROUND, grid))
    tr = evolve_madelung(m0, "harmonic", SolverConfig(T / 8192, 8192, store_every=512), 0.25)
    d = tr.densities()
    assert np.max(np.abs(d - d[0])) < 1e-6
    assert tr.norm_drift() <= 1e-7
    assert tr.energy_drift() <= 1e-5


def test_madelung_classical_characteristics(grid):
    a = -0.3  # converging chirp; caustic at t = 1/0.3
    m0 = wavefunction_to_fields(make_state(f"chirped_gaussian:chirp={a}", grid))
    tr = evolve_madelung(m0, "free", SolverConfig(1e-3, 2000, store_every=200), 0.0)
    for t, d in zip(tr.times, tr.densities()):
        f = 1 + a * t  # x(t) = x0 (1 + a t)
        exact = gauss_density(grid.x / f) / f
        assert _l2(grid, d, exact) < 1e-4


def test_madelung_terms_match_hamilton_jacobi(grid):
    m = wavefunction_to_fields(make_state("chirped_gaussian:chirp=0.3,x0=0.5", grid))
    t = madelung_terms(m, "harmonic")
    # the two routes to Q differ by round-off/p, which grows into the tails
    sup = t["support"] & (np.abs(grid.x) < 4)
    rhs = -(t["convective"] + t["V"] + t["Q"])
    assert np.max(np.abs(t["s_t"][sup] - rhs[sup])) < 1e-8
    assert np.max(np.abs(t["p_t"][sup] + t["flux_divergence"][sup])) < 1e-10


def test_madelung_guards(grid):
    m0 = wavefunction_to_fields(make_state("gaussian", grid))
    limit = madelung_cfl_limit(grid, 1.0, 1.0)
    with pytest.raises(UnstableStep):
        evolve_madelung(m0, "free", SolverConfig(2 * limit, 10), 0.25)
    with pytest.raises(InvalidArgument):
        evolve_madelung(m0, "free", SolverConfig(limit, 10), -1.0)
    nodal = MadelungState(
        RealField(grid, make_state("superposition:x0=-3;x0=3,phase=3.141592653589793", grid).density),
        _const(grid, 0.0),
    )
    with pytest.raises(NodePresent):
        evolve_madelung(nodal, "free", SolverConfig(limit, 10), 0.25)


def test_madelung_node_formation(grid):
    m0 = wavefunction_to_fields(make_state("superposition:x0=-4,k0=2;x0=4,k0=-2", grid))
    with pytest.raises(NodeFormed) as info:
        evolve_madelung(m0, "free", SolverConfig(8e-4, 4000, store_every=100), 0.25)
    err = info.value
    assert err.t > 0 and err.trace.times and err.trace.error["error"] == "NodeFormed"
    assert err.trace.times[-1] <= err.t


# -- cross-validation ---------------------------------------------------------------------


def test_cross_validate_small():
    g = Grid1D(-10.0, 10.0, 256)
    psi = make_state("gaussian:x0=2,sigma=0.7071067811865476", g)
    cv = cross_validate(psi, "harmonic", SolverConfig(T / 2048, 2048, store_every=64), 0.25, self_convergence=True)
    assert cv.l2_max < 1e-4
    assert cv.phase_gradient_max < 1e-4
    assert cv.discrepancy_order >= 1.9
    assert cv.schrodinger_order >= 1.9 and cv.madelung_order >= 1.9
    tr = cv.traces["madelung"]
    assert trace_distance(tr, tr) == 0.0


def test_cross_validate_needs_positive_c(grid):
    with pytest.raises(InvalidArgument):
        cross_validate(make_state("gaussian", grid), "free", SolverConfig(1e-3, 10), 0.0)
