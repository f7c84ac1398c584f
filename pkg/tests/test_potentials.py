import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pkslab.errors import DomainError, SingularityError
from pkslab.potentials import (
    PairPotential,
    PotentialSpec,
    chi,
    eval_gradV,
    eval_V,
    kernel_on_grid,
    log_radius,
    log_radius_prime,
    regularize,
    split_short_long,
    verify_assumptions,
    zero_mean,
)

MODES = (((1,), 0.3), ((2,), -0.1))
MODES2 = (((1, 0), 0.2), ((1, 1), -0.15), ((0, 2), 0.05))

points1 = arrays(float, (40, 1), elements=st.floats(-0.5, 0.5))
points2 = arrays(float, (40, 2), elements=st.floats(-0.5, 0.5))


def test_pure_log_region():
    spec = PotentialSpec(lam=1.0, sigma=1.0)
    assert eval_V(np.array([0.1]), spec) == pytest.approx(math.log(0.1), abs=1e-14)
    assert eval_V(np.array([-0.1]), spec) == pytest.approx(-2.302585092994046, abs=1e-12)
    spec2 = PotentialSpec(lam=1.0, sigma=1.0, d=2)
    assert eval_V(np.array([0.06, 0.08]), spec2) == pytest.approx(math.log(0.1), abs=1e-14)
    assert eval_gradV(np.array([0.1]), spec)[0] == pytest.approx(10.0, rel=1e-14)


def test_lambda_zero_is_correction_only(rng):
    spec = PotentialSpec(lam=0.0, sigma=1.0, correction_modes=MODES, offset=0.2)
    x = rng.random((100, 1)) - 0.5
    expect = 0.2 + 0.3 * np.cos(2 * np.pi * x[:, 0]) - 0.1 * np.cos(4 * np.pi * x[:, 0])
    assert np.allclose(eval_V(x, spec), expect, atol=1e-14)


def test_origin_is_singular():
    spec = PotentialSpec(lam=1.0, sigma=1.0)
    with pytest.raises(SingularityError):
        eval_V(np.zeros(1), spec)
    with pytest.raises(SingularityError):
        eval_gradV(np.zeros((2, 1)), spec)


@given(points2)
def test_even_periodic_and_odd_gradient(x):
    x = x[np.linalg.norm(x, axis=1) > 1e-6]
    spec = PotentialSpec(lam=1.3, sigma=1.0, d=2, correction_modes=MODES2)
    pot = PairPotential(spec)
    assert np.allclose(pot(x), pot(-x), atol=1e-12)
    assert np.allclose(pot(x), pot(x + np.array([1.0, -2.0])), atol=1e-9)
    assert np.allclose(pot.grad(-x), -pot.grad(x), atol=1e-10)


def test_gradient_matches_finite_differences(rng):
    for d, modes in ((1, MODES), (2, MODES2)):
        spec = PotentialSpec(lam=0.8, sigma=1.0, d=d, correction_modes=modes)
        pot = PairPotential(spec)
        x = rng.random((100, d)) - 0.5
        x = x[np.linalg.norm(x, axis=1) > 0.02]
        g = pot.grad(x)
        h = 1e-6
        fd = np.stack([(pot(x + h * e) - pot(x - h * e)) / (2 * h) for e in np.eye(d)], axis=-1)
        rel = np.linalg.norm(g - fd, axis=1) / np.maximum(np.linalg.norm(g, axis=1), 1.0)
        assert rel.max() < 1e-5


def test_periodised_log_is_c1_across_the_blend():
    for s0 in (0.25, 0.5):
        left, right = log_radius(s0 - 1e-9), log_radius(s0 + 1e-9)
        assert abs(left - right) < 1e-8
        assert abs(log_radius_prime(s0 - 1e-9) - log_radius_prime(s0 + 1e-9)) < 1e-6
    s = np.linspace(1e-3, 0.7, 2000)
    assert np.all(s * log_radius_prime(s) <= 1 + 1e-15)
    assert np.all(np.diff(log_radius(s)) >= 0)


def test_chi_bump():
    assert np.array_equal(chi([0.0, 0.5, 1.0, 2.0]), [1.0, 1.0, 0.0, 0.0])
    assert chi(0.75) == pytest.approx(0.5)


@pytest.mark.parametrize("d", [1, 2])
def test_split_regions_and_reconstruction(rng, d):
    spec = PotentialSpec(lam=1.5, sigma=1.0, d=d, eta=0.2, correction_modes=MODES if d == 1 else MODES2)
    sp = split_short_long(spec)
    full = PairPotential(spec)
    x = rng.random((1000, d)) - 0.5
    s = np.linalg.norm(x, axis=1)
    assert np.allclose(spec.lam * sp.v0(x) + sp.w(x), full(x), atol=1e-12)
    assert np.allclose(sp.short(x), spec.lam * sp.v0(x), atol=1e-12)
    inner, outer = s <= 0.1, s >= 0.2
    assert np.all(sp.w(x[inner]) == 0) and np.allclose(sp.short(x[inner]), full(x[inner]))
    assert np.all(sp.short(x[outer]) == 0) and np.allclose(sp.w(x[outer]), full(x[outer]))
    g = spec.lam * sp.v0.grad(x) + sp.w.grad(x)
    assert np.allclose(g, full.grad(x), atol=1e-10)


def test_regularisation(rng):
    spec = PotentialSpec(lam=1.0, sigma=1.0, correction_modes=MODES)
    eps = 0.05
    reg = regularize(spec, eps)
    full = PairPotential(spec)
    x = rng.random((500, 1)) - 0.5
    far = np.abs(x[:, 0]) >= eps
    assert np.allclose(reg(x[far]), full(x[far]), atol=1e-14)
    assert reg(np.zeros(1)) == pytest.approx(math.log(eps) + 0.3 - 0.1)
    assert np.all(reg(x) >= full(x) - 1e-14)
    assert np.all(regularize(spec, 0.1)(x) >= reg(x) - 1e-14)
    lip = 1.0 / eps + 2 * np.pi * (0.3 + 2 * 0.1)
    assert np.max(np.abs(reg.grad(x))) <= lip
    assert np.isfinite(reg.grad(np.zeros((1, 1)))).all()
    for bad in (0.0, -1.0):
        with pytest.raises(DomainError):
            regularize(spec, bad)


def test_regularised_values_converge_as_eps_shrinks(rng):
    spec = PotentialSpec(lam=1.0, sigma=1.0)
    x = rng.random((200, 1)) - 0.5
    gaps = [np.max(np.abs(regularize(spec, e)(x) - PairPotential(spec)(x))) for e in (1e-1, 1e-2, 1e-3, 1e-5)]
    assert gaps == sorted(gaps, reverse=True)
    assert gaps[-1] == 0.0 or gaps[-1] < 1e-3


def test_verify_assumptions():
    rep = verify_assumptions(PotentialSpec(lam=1.0, sigma=1.0), 20000)
    assert 0.99 < rep.gradient_constant <= 1.0 + 1e-12
    assert np.isfinite(rep.lower_constant) and rep.subcritical and not rep.violations
    crit = verify_assumptions(PotentialSpec(lam=2.0, sigma=1.0), 10)
    assert not crit.subcritical and crit.violations
    a = verify_assumptions(PotentialSpec(lam=1.0, sigma=1.0, d=2), 40000, seed=1)
    b = verify_assumptions(PotentialSpec(lam=1.0, sigma=1.0, d=2), 80000, seed=2)
    assert np.isfinite(a.lp_norm) and abs(a.lp_norm - b.lp_norm) < 4 * math.hypot(a.lp_stderr, b.lp_stderr)
    with pytest.raises(DomainError):
        verify_assumptions(PotentialSpec(lam=1.0, sigma=1.0), 0)


def test_spec_round_trip_and_validation():
    spec = PotentialSpec(lam=0.7, sigma=0.5, d=2, eta=0.3, correction_modes=MODES2, offset=0.1)
    assert PotentialSpec.from_dict(spec.to_dict()) == spec
    assert spec.critical_lambda == 2.0 and spec.subcritical
    with pytest.raises(DomainError):
        PotentialSpec(lam=-1.0, sigma=1.0)
    with pytest.raises(DomainError):
        PotentialSpec(lam=1.0, sigma=-1.0)
    with pytest.raises(DomainError):
        PotentialSpec(lam=1.0, sigma=1.0, eta=0.7)


def test_zero_mean_normalisation(rng):
    for d in (1, 2):
        spec = zero_mean(PotentialSpec(lam=1.0, sigma=1.0, d=d), eps=0.01)
        x = rng.random((400_000, d)) - 0.5
        vals = regularize(spec, 0.01)(x)
        assert abs(vals.mean()) < 5 * vals.std() / math.sqrt(x.shape[0])
        grid = zero_mean(PotentialSpec(lam=1.0, sigma=1.0, d=d), m=32)
        assert abs(kernel_on_grid(regularize(grid, 1 / 32), 32, d).mean()) < 1e-13


def test_cell_averaged_kernel_table():
    m = 16
    tab = kernel_on_grid(lambda x: np.cos(2 * np.pi * x[..., 0]), m, 1, mode="cell")
    h = 1 / m
    expect = np.cos(2 * np.pi * np.arange(m) * h) * np.sin(np.pi * h) / (np.pi * h)
    assert np.allclose(tab, expect, atol=1e-13)
    # the singular cell average of log|x| over [-h/2, h/2] is log(h/2) - 1
    logtab = kernel_on_grid(PairPotential(PotentialSpec(lam=1.0, sigma=1.0), eps=1e-12), m, 1, mode="cell")
    assert logtab[0] == pytest.approx(math.log(h / 2) - 1, abs=1e-9)


def test_cell_averaged_log_in_two_dimensions():
    h = 1 / 16
    tab = kernel_on_grid(PairPotential(PotentialSpec(lam=1.0, sigma=1.0, d=2), eps=1e-12), 16, 2, mode="cell")
    a = h / 2
    # closed form of the mean of log|x| over the square [-a, a]^2
    assert tab[0, 0] == pytest.approx(math.log(a) + 0.5 * math.log(2) + math.pi / 4 - 1.5, abs=1e-10)
