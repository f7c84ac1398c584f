import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from pkslab.errors import CFLError, DomainError
from pkslab.particle import (
    ParticleConfiguration,
    SimParams,
    default_eps,
    drift,
    drift_reference,
    empirical_density,
    pair_energy,
    sample_initial,
    simulate,
    simulate_ensemble,
    stable_dt,
    step_em,
)
from pkslab.potentials import PotentialSpec
from pkslab.torus import GridDensity

LOG = PotentialSpec(lam=1.0, sigma=1.0)


def test_single_particle_has_no_drift():
    assert np.array_equal(drift(np.array([[0.3]]), LOG, 0.01), np.zeros((1, 1)))


def test_two_particles_attract():
    x = np.array([[0.4], [0.6]])
    v = drift(x, LOG, 0.01)
    assert np.allclose(v[:, 0], [2.5, -2.5], rtol=1e-13)


@given(
    st.integers(1, 40),
    st.sampled_from([1, 2]),
    st.floats(1e-3, 0.2),
    st.sampled_from([0, 1]),
    st.integers(0, 2**31),
)
def test_compiled_drift_matches_dense_reference(n, d, eps, with_modes, seed):
    modes = (((1,) * d, 0.2), ((2,) + (0,) * (d - 1), -0.1)) if with_modes else ()
    spec = PotentialSpec(lam=1.2, sigma=1.0, d=d, correction_modes=modes, eta=0.2)
    x = np.random.default_rng(seed).random((n, d))
    a = drift(x, spec, eps)
    b = drift_reference(x, spec, eps)
    assert np.allclose(a, b, atol=1e-12, rtol=1e-11)
    # pair forces are odd, so the total momentum vanishes
    assert np.all(np.abs(a.sum(axis=0)) < 1e-12 * max(1, n))


def test_large_regularisation_uses_general_path(rng):
    x = rng.random((30, 2))
    spec = PotentialSpec(lam=1.0, sigma=1.0, d=2)
    for eps in (0.3, 0.45):
        assert np.allclose(drift(x, spec, eps), drift_reference(x, spec, eps), atol=1e-12)


def test_no_dynamics_without_noise_or_forces(rng):
    x = ParticleConfiguration(rng.random((50, 2)))
    spec = PotentialSpec(lam=0.0, sigma=0.0, d=2)
    out = step_em(x, SimParams(0.1, 1.0, 0.0), spec, step=0)
    assert np.array_equal(out.positions, x.positions)


def test_increment_variance():
    n, dt, sigma = 100_000, 1e-3, 0.7
    x0 = np.full((n, 1), 0.5)
    spec = PotentialSpec(lam=0.0, sigma=sigma)
    x1 = step_em(x0, SimParams(dt, dt, sigma, seed=3), spec, step=0).positions
    inc = x1[:, 0] - 0.5
    var = inc.var(ddof=1)
    se = var * np.sqrt(2.0 / (n - 1))
    assert abs(var - 2 * sigma * dt) < 3 * se


def test_heat_flow_relaxes_to_uniform():
    spec = PotentialSpec(lam=0.0, sigma=1.0)
    x0 = np.full((10_000, 1), 0.5)
    tr = simulate(x0, SimParams(0.01, 1.0, 1.0, seed=11), spec)
    assert stats.kstest(tr.final().positions[:, 0], "uniform").pvalue > 1e-3


def test_deterministic_and_thread_independent(rng):
    rho = GridDensity(1 + 0.5 * np.cos(2 * np.pi * (np.arange(64) + 0.5) / 64))
    spec = PotentialSpec(lam=0.5, sigma=1.0)
    params = SimParams(1e-3, 0.02, 1.0, seed=9, output_times=(0.0, 0.01, 0.02))
    a = simulate_ensemble(rho, params, spec, 6, threads=1, n=50)
    b = simulate_ensemble(rho, params, spec, 6, threads=4, n=50)
    c = simulate_ensemble(rho, params, spec, 6, threads=3, n=50)
    for ta, tb, tc in zip(a, b, c):
        for xa, xb, xc in zip(ta.snapshots, tb.snapshots, tc.snapshots):
            assert xa.tobytes() == xb.tobytes() == xc.tobytes()
    # replicas are distinct streams
    assert not np.array_equal(a[0].snapshots[-1], a[1].snapshots[-1])


def test_single_replica_matches_simulate(rng):
    x = rng.random((20, 1))
    spec = PotentialSpec(lam=0.5, sigma=1.0)
    params = SimParams(1e-3, 0.01, 1.0, seed=4)
    ens = simulate_ensemble(x, params, spec, 1)
    one = simulate(x, params, spec)
    assert np.array_equal(ens[0].snapshots[-1], one.snapshots[-1])


def test_initial_pair_energy_of_shared_init(rng):
    x = rng.random((40, 2))
    spec = PotentialSpec(lam=0.5, sigma=1.0, d=2)
    eps = 0.02
    params = SimParams(1e-4, 1e-3, 1.0, seed=1, eps=eps, output_times=(0.0, 1e-3))
    ens = simulate_ensemble(x, params, spec, 5)
    e0 = [pair_energy(tr.snapshots[0], spec, eps) for tr in ens]
    assert np.allclose(e0, pair_energy(x, spec, eps), rtol=0, atol=0)


def test_output_times_are_rounded_and_recorded(rng):
    params = SimParams(0.01, 0.1, 1.0, output_times=(0.035, 0.1))
    tr = simulate(rng.random((5, 1)), params, PotentialSpec(lam=0.0, sigma=1.0))
    assert np.allclose(tr.times, [0.03, 0.1])
    assert tr.metadata["rounded_times"] == [(0.035, 0.03)]


def test_stability_rule_is_enforced(rng):
    spec = PotentialSpec(lam=1.0, sigma=1.0)
    n, eps = 10, 0.01
    bad = SimParams(10 * stable_dt(n, eps, 1.0), 1.0, 1.0, eps=eps)
    with pytest.raises(CFLError):
        simulate(rng.random((n, 1)), bad, spec)
    assert default_eps(100, 1) == pytest.approx(1e-3)
    assert stable_dt(100, default_eps(100, 1, 0.01, 1.0), 1.0) >= 0.01 * (1 - 1e-12)


def test_gradient_flow_energy_decreases(rng):
    spec = PotentialSpec(lam=1.0, sigma=0.0)
    n, eps, dt = 30, 0.05, 1e-3
    x = ParticleConfiguration(rng.random((n, 1)))
    params = SimParams(dt, 1.0, 0.0, eps=eps)
    energies = [pair_energy(x, spec, eps) / n**2]
    for k in range(200):
        x = step_em(x, params, spec, k, eps=eps)
        energies.append(pair_energy(x, spec, eps) / n**2)
    lip = 1.0 / eps**2
    assert np.all(np.diff(energies) <= lip * dt**2)
    assert energies[-1] < energies[0]


def test_empirical_density():
    one_cell = empirical_density(np.full((7, 2), 0.1), 4)
    assert one_cell.values[0, 0] == 16 and one_cell.values.sum() == 16
    grid = (np.arange(4) + 0.5) / 4
    per_cell = np.stack(np.meshgrid(grid, grid, indexing="ij"), -1).reshape(-1, 2)
    assert np.allclose(empirical_density(per_cell, 4).values, 1.0)
    rnd = empirical_density(np.random.default_rng(0).random((333, 2)), 8)
    assert abs(rnd.mass() - 1) < 1e-15
    with pytest.raises(DomainError):
        empirical_density(per_cell, 0)


def test_configuration_validation():
    with pytest.raises(DomainError):
        ParticleConfiguration(np.array([[1.0]]))
    with pytest.raises(DomainError):
        SimParams(0.0, 1.0, 1.0)
    with pytest.raises(DomainError):
        simulate_ensemble(np.zeros((1, 1)), SimParams(0.1, 0.1, 1.0), LOG, 0)


def test_initial_sampling_is_reproducible():
    rho = GridDensity.uniform(8, 2)
    a = sample_initial(rho, 100, seed=5, replica=2).positions
    b = sample_initial(rho, 100, seed=5, replica=2).positions
    c = sample_initial(rho, 100, seed=5, replica=3).positions
    assert np.array_equal(a, b) and not np.array_equal(a, c)
