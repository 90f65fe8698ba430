import numpy as np
import pytest

from emergence_lab.errors import BlowUpError, ConfigurationError, GridError
from emergence_lab.potentials import Gravity, Harmonic, HarmonicSpring, LennardJonesTruncated, Polynomial, Quartic
from emergence_lab.qsim import (
    Grid,
    PacketSpec,
    QuantumParams,
    WaveFunction2P,
    build_hamiltonian_terms,
    check_boundary,
    expectations,
    factorization_experiment,
    gap_sweep,
    gaussian_product,
    harmonic_ground_energy,
    harmonic_widths,
    propagate,
    purity,
    reduce_cm,
    split_operator_step,
    two_hump_state,
)

FREE = Polynomial([[0.0]], domain=1e3)
SPRING0 = HarmonicSpring(1.0, 0.0)


def params(**kw):
    base = dict(dt=1e-3, n_steps=100, n_points=(128, 128), extent=(16.0, 16.0), record_stride=10)
    base.update(kw)
    return QuantumParams(**base)


@pytest.mark.parametrize("kw", [dict(n_points=(100, 128)), dict(n_points=(4, 128)), dict(dt=0.0),
                                dict(extent=(16.0, -1.0)), dict(n_points=(128,)), dict(hbar=0.0)])
def test_params_validation(kw):
    with pytest.raises(ConfigurationError):
        params(**kw)


def test_grid_layout():
    g = Grid.from_params(params(n_points=(64, 32), extent=(8.0, 4.0)))
    assert g.X.size == 64 and g.xi.size == 32
    assert g.dX == 0.125 and g.dxi == 0.125
    assert g.X[32] == 0.0
    assert np.max(np.abs(g.kX)) == pytest.approx(np.pi / g.dX)


# ---- Hamiltonian terms


def test_harmonic_potential_separates():
    t = build_hamiltonian_terms(Harmonic(1.3), None, params())
    v = t.potential
    cross = v - v[:, :1] - v[:1, :] + v[0, 0]
    assert np.max(np.abs(cross)) < 1e-12 * np.abs(v).max()
    X, xi = np.meshgrid(t.grid.X, t.grid.xi, indexing="ij")
    np.testing.assert_allclose(v, 1.3**2 * (X**2 + xi**2 / 4), rtol=1e-13, atol=1e-13)


def test_gravity_potential():
    t = build_hamiltonian_terms(Gravity(0.4), SPRING0, params())
    X, xi = np.meshgrid(t.grid.X, t.grid.xi, indexing="ij")
    np.testing.assert_allclose(t.potential, 2 * 0.4 * X + 0.5 * xi**2, atol=1e-13)


def test_quartic_potential_binomial():
    lam = 0.07
    t = build_hamiltonian_terms(Quartic(0.0, lam), None, params())
    X, xi = np.meshgrid(t.grid.X, t.grid.xi, indexing="ij")
    expected = 2 * lam * X**4 + 3 * lam * X**2 * xi**2 + lam * xi**4 / 8
    np.testing.assert_allclose(t.potential, expected, rtol=1e-12)


def test_kinetic_masses():
    t = build_hamiltonian_terms(FREE, None, params(mass=2.0))
    g = t.grid
    assert t.kinetic[3, 0] == pytest.approx(g.kX[3] ** 2 / (2 * 4.0))
    assert t.kinetic[0, 5] == pytest.approx(g.kxi[5] ** 2 / (2 * 1.0))


def test_singular_pair_is_grid_error():
    with pytest.raises(GridError) as info:
        build_hamiltonian_terms(Harmonic(1.0), LennardJonesTruncated(1.0, 1.0, 2.5), params())
    assert info.value.axis == "xi"


# ---- propagation


def test_step_unitary_and_nan_guard():
    t = build_hamiltonian_terms(Quartic(1.0, 0.05), SPRING0, params())
    psi = gaussian_product(t.grid, 1.0, 0.5, 0.3, 0.0, 0.6)
    out = split_operator_step(psi, t, 1e-3)
    assert abs(out.norm() - 1.0) < 1e-12
    bad = psi.copy()
    bad.amplitudes[3, 3] = np.nan
    with pytest.raises(BlowUpError):
        split_operator_step(bad, t, 1e-3)


def test_norm_after_many_steps():
    prm = params(n_points=(64, 64), extent=(16.0, 24.0), n_steps=10_000, record_stride=1000)
    res = factorization_experiment(Harmonic(1.0), prm, packet=PacketSpec(1.0, 0.0, 0.6, 0.7))
    assert res.norm_drift() < 1e-9


def test_free_spreading():
    sigma0, m = 0.5, 1.0
    prm = params(dt=1e-2, n_steps=200, n_points=(256, 64), extent=(64.0, 16.0), record_stride=20)
    t = build_hamiltonian_terms(FREE, None, prm)
    res = propagate(gaussian_product(t.grid, 0.0, sigma0, 0.0, 0.0, 0.5), t, check=False)
    M = 2 * m
    expected = sigma0**2 + (res.times / (2 * M * sigma0)) ** 2
    np.testing.assert_allclose(res.var_X, expected, rtol=1e-8)


def test_boosted_momentum():
    k = 1.7
    t = build_hamiltonian_terms(FREE, None, params())
    e = expectations(gaussian_product(t.grid, 0.0, 0.8, k, 0.0, 0.6), t)
    assert e.mean_P == pytest.approx(k, rel=1e-10)
    e0 = expectations(gaussian_product(t.grid, 0.0, 0.8), t)
    assert abs(e0.mean_X) < 1e-14 and abs(e0.mean_P) < 1e-14


def test_harmonic_coherent_state():
    w, x0 = 1.0, 2.0
    sx, sxi = harmonic_widths(w, 1.0)
    prm = params(n_steps=3000, extent=(16.0, 16.0), record_stride=50)
    res = factorization_experiment(Harmonic(w), prm, SPRING0, PacketSpec(x0, 0.0, sx, sxi))
    assert np.max(np.abs(res.mean_X - x0 * np.cos(w * res.times))) < 1e-3 * x0
    # the Strang map breathes the width at O(dt^2)
    assert np.max(np.abs(res.var_X - sx**2)) < 1e-6


def test_harmonic_ground_state_energy():
    w, k = 1.0, 1.0
    sx, sxi = harmonic_widths(w, k)
    prm = params(n_steps=1000, record_stride=100)
    res = factorization_experiment(Harmonic(w), prm, HarmonicSpring(k, 0.0), PacketSpec(0.0, 0.0, sx, sxi))
    assert res.energy[0] == pytest.approx(harmonic_ground_energy(w, k), rel=1e-10)
    assert res.energy_drift() < 1e-8


def test_energy_conserved_small_dt():
    prm = params(dt=2e-4, n_steps=2500, extent=(16.0, 24.0), record_stride=250)
    res = factorization_experiment(Quartic(1.0, 0.02), prm, packet=PacketSpec(2.0, 0.0, 0.5, 0.7598))
    assert res.energy_drift() < 1e-8


def test_dt_convergence():
    def final_x(dt):
        prm = params(dt=dt, n_steps=int(round(0.5 / dt)), extent=(16.0, 24.0), record_stride=int(round(0.5 / dt)))
        return factorization_experiment(Quartic(1.0, 0.02), prm, packet=PacketSpec(2.0, 0.0, 0.5, 0.7598)).mean_X[-1]

    assert abs(final_x(1e-3) - final_x(5e-4)) < 1e-6


def test_grid_refinement():
    def run(n):
        prm = params(n_points=(n, n), extent=(16.0, 24.0), n_steps=500, record_stride=500)
        return factorization_experiment(Quartic(1.0, 0.02), prm, packet=PacketSpec(2.0, 0.0, 0.5, 0.7598))

    a, b = run(128), run(256)
    for name in ("mean_X", "var_X", "energy", "purity"):
        x, y = getattr(a, name)[-1], getattr(b, name)[-1]
        assert abs(x - y) < 1e-6 * abs(y)


# ---- reduced state


def test_product_state_purity():
    g = Grid.from_params(params())
    psi = gaussian_product(g, 1.0, 0.7, 0.4, 0.0, 0.5, 0.2)
    assert abs(purity(psi) - 1.0) < 1e-10
    assert abs(reduce_cm(psi).purity() - 1.0) < 1e-10


def test_two_hump_purity():
    g = Grid.from_params(params())
    psi = two_hump_state(g, 6.0, 0.5)
    assert purity(psi) == pytest.approx(0.5, abs=1e-10)
    ev = reduce_cm(psi).eigenvalues()
    np.testing.assert_allclose(np.sort(ev)[-2:], [0.5, 0.5], atol=1e-10)


def test_random_state_reduced_density():
    g = Grid.from_params(params(n_points=(32, 32)))
    r = np.random.default_rng(0)
    psi = WaveFunction2P(r.normal(size=(32, 32)) + 1j * r.normal(size=(32, 32)), g).normalized()
    rho = reduce_cm(psi)
    assert abs(rho.trace() - 1.0) < 1e-10
    np.testing.assert_allclose(rho.rho, rho.rho.conj().T, atol=1e-14)
    assert rho.eigenvalues().min() >= -1e-12
    assert purity(psi) == pytest.approx(rho.purity(), rel=1e-10)
    assert purity(psi) < 1.0


def test_boundary_guard_names_axis():
    g = Grid.from_params(params(extent=(4.0, 16.0)))
    with pytest.raises(GridError) as info:
        check_boundary(gaussian_product(g, 0.0, 1.0, 0.0, 0.0, 0.5), 1e-10)
    assert info.value.axis == "X"
    g = Grid.from_params(params(extent=(16.0, 4.0)))
    with pytest.raises(GridError) as info:
        check_boundary(gaussian_product(g, 0.0, 0.5, 0.0, 0.0, 1.0), 1e-10)
    assert info.value.axis == "xi"


# ---- experiments


@pytest.mark.parametrize("external,extent,packet", [
    (Harmonic(1.0), (16.0, 24.0), PacketSpec(2.0, 0.0, 0.5, 0.7598)),
    (Gravity(0.1), (64.0, 24.0), PacketSpec(0.0, 1.0, 2.0, 0.7598)),
])
def test_linear_and_harmonic_stay_pure(external, extent, packet):
    prm = params(n_points=(128, 128), extent=extent, n_steps=2000, record_stride=100)
    res = factorization_experiment(external, prm, packet=packet)
    assert 1.0 - res.min_purity() < 1e-6


def test_quartic_entangles():
    prm = params(extent=(16.0, 24.0), n_steps=1000, record_stride=10)
    res = factorization_experiment(Quartic(1.0, 0.02), prm, packet=PacketSpec(2.0, 0.0, 0.5, 0.7598))
    assert res.purity[1] < res.purity[0]
    assert np.all(np.diff(res.purity[:10]) < 0)
    assert res.time_below(0.999) is not None


def test_ehrenfest_residuals():
    prm = params(extent=(16.0, 24.0), n_steps=1000, record_stride=100)
    res = factorization_experiment(Quartic(1.0, 0.02), prm, packet=PacketSpec(2.0, 0.3, 0.5, 0.7598))
    assert np.max(np.abs(res.residual1)) < 1e-6
    assert np.max(np.abs(res.residual2)) < 1e-4
    # recorded <P> agrees with the per-step series
    np.testing.assert_allclose(res.mean_P, res.step_P[::100], atol=1e-9)


def test_gap_shrinks_with_width():
    prm = params(n_points=(256, 256), extent=(24.0, 24.0))
    gaps = gap_sweep(Quartic(1.0, 0.02), prm, [0.4, 0.5, 0.6, 0.7], 0.25, packet=PacketSpec(2.0, 0.0, 0.5, 0.7598))
    assert np.all(np.diff(gaps) > 0)
    assert gaps[0] > 0


def test_gap_is_zero_for_point_like_linear():
    # for a linear potential the gap vanishes identically
    prm = params(extent=(64.0, 24.0), n_steps=100, record_stride=50)
    res = factorization_experiment(Gravity(0.1), prm, packet=PacketSpec(0.0, 1.0, 2.0, 0.7598))
    assert np.max(np.abs(res.gap)) < 1e-12
