import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pkslab.errors import DomainError
from pkslab.torus import (
    GridDensity,
    HypercubePartition,
    cell_index,
    lm_apply,
    periodic_displacement,
    torus_distance,
    wrap,
)

coords = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def test_wrap_examples():
    assert np.allclose(wrap([0.3, 0.7]), [0.3, 0.7])
    assert np.allclose(wrap([1.25, -0.25]), [0.25, 0.75])
    assert np.array_equal(wrap([3.0]), [0.0])
    assert wrap([-1e-18])[0] == 0.0


def test_wrap_rejects_nonfinite():
    with pytest.raises(DomainError):
        wrap([np.nan])
    with pytest.raises(DomainError):
        wrap([0.1, np.inf])


@given(arrays(float, (5, 2), elements=coords))
def test_wrap_range_and_idempotent(x):
    w = wrap(x)
    assert np.all((w >= 0) & (w < 1))
    assert np.array_equal(wrap(w), w)


def test_displacement_examples():
    assert np.allclose(periodic_displacement([0.1], [0.9]), [0.2])
    assert np.array_equal(periodic_displacement([0.4, 0.2], [0.4, 0.2]), [0.0, 0.0])
    # tie broken towards +1/2 on both axes
    assert np.array_equal(periodic_displacement([0.75, 0.0], [0.25, 0.5]), [0.5, 0.5])


@given(arrays(float, (3,), elements=st.floats(0, 1, exclude_max=True)), arrays(float, (3,), elements=st.floats(0, 1, exclude_max=True)))
def test_displacement_properties(x, y):
    v = periodic_displacement(x, y)
    assert np.all(np.abs(v) <= 0.5)
    assert np.allclose(np.minimum(np.abs(wrap(y + v) - wrap(x)), 1 - np.abs(wrap(y + v) - wrap(x))), 0, atol=1e-12)
    # brute force over the 3^d image shifts
    shifts = np.array(np.meshgrid(*[[-1, 0, 1]] * 3, indexing="ij")).reshape(3, -1).T
    best = np.min(np.linalg.norm(x - y + shifts, axis=1))
    assert np.isclose(torus_distance(x, y), best, atol=1e-12)
    if np.all(np.abs(v) < 0.5 - 1e-12):
        assert np.allclose(periodic_displacement(y, x), -v)


def test_displacement_dimension_mismatch():
    with pytest.raises(DomainError):
        periodic_displacement([0.1, 0.2], [0.1])


def test_cell_index_examples():
    assert cell_index(np.array([0.0]), 4) == 0
    assert cell_index(np.array([0.99]), 4) == 3
    assert cell_index(np.array([0.3, 0.6]), 2) == 2


@given(arrays(float, (20, 2), elements=st.floats(0, 1, exclude_max=True)), st.integers(1, 7))
def test_cell_index_floor_arithmetic(x, M):
    k = cell_index(x, M)
    assert np.array_equal(k, np.floor(x[:, 0] * M) + M * np.floor(x[:, 1] * M))


def test_lm_apply_examples():
    u = GridDensity.uniform(16, 2)
    assert np.allclose(lm_apply(u, 4).values, 1.0)
    single = lm_apply(np.array([[0.3]]), 4)
    assert np.allclose(single.values, [0, 4, 0, 0])
    with pytest.raises(DomainError):
        lm_apply(u, 0)


def test_lm_apply_lipschitz_rate():
    f = GridDensity.from_function(lambda x: 1 + 0.5 * np.sin(2 * np.pi * x[..., 0]), 1024, 1)
    grad = 0.5 * 2 * np.pi
    consts = []
    for M in (8, 16, 32):
        err = np.max(np.abs(f.values - np.repeat(lm_apply(f, M).values, 1024 // M)))
        consts.append(err * M / grad)
    # the error is C |f'| / M with C bounded (and in fact ~ 1/2)
    assert max(consts) < 0.6
    assert max(consts) / min(consts) < 1.1


@given(arrays(float, (30, 2), elements=st.floats(0, 1, exclude_max=True)), st.sampled_from([1, 2, 4, 8]))
def test_lm_projection_mass_and_consistency(x, M):
    g = lm_apply(x, M)
    assert abs(g.mass() - 1) < 1e-12
    assert np.array_equal(lm_apply(g, M).values, g.values)
    part = HypercubePartition.from_positions(x, M)
    assert part.n == 30 and part.cell_volume == M**-2.0
    assert np.allclose(g.evaluate(x, "constant"), M**2 / 30 * part.counts[cell_index(x, M)])


def test_grid_density_validation():
    with pytest.raises(DomainError):
        GridDensity(np.full(8, 2.0))
    with pytest.raises(DomainError):
        GridDensity(np.ones((4, 8)))
    with pytest.raises(DomainError):
        GridDensity(np.array([2.0, -0.5, 0.5, 1.0]))


def test_sampling_matches_cells(rng):
    g = GridDensity(np.array([0.4, 1.6, 1.0, 1.0]))
    x = g.sample(200_000, rng)
    frac = np.bincount(cell_index(x, 4), minlength=4) / 200_000
    assert np.allclose(frac, g.values / 4, atol=4e-3)


def test_linear_interpolation_exact_for_affine_periodic_pieces():
    g = GridDensity(1 + 0.5 * np.cos(2 * np.pi * (np.arange(64) + 0.5) / 64))
    centres = (np.arange(64) + 0.5) / 64
    assert np.allclose(g.evaluate(centres[:, None]), g.values)
    assert np.isclose(g.evaluate(np.array([[0.0]]))[0], 0.5 * (g.values[0] + g.values[-1]))
