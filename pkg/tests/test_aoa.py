import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import exact_set, room
from mstatic.aoa import (GridSearchConfig, IllConditionedFixError, VmfObservation, aoa_fix_or_fallback,
                         aoa_ml_fix, observations_from, vmf_loglik)
from mstatic.geometry import unit_from
from mstatic.sim import sample_vmf_direction

BOUNDS = ((0, 0, 0), (10, 8, 3))


def test_vmf_loglik_examples():
    rx = np.zeros(3)
    cand = np.array([3.0, 4.0, 0.0])
    u = unit_from(rx, cand)
    assert vmf_loglik(VmfObservation(rx, u, 7.0), cand) == pytest.approx(7.0)
    assert vmf_loglik(VmfObservation(rx, -u, 7.0), cand) == pytest.approx(-7.0)
    assert vmf_loglik(VmfObservation(rx, u, 0.0), (9, -1, 2)) == 0.0


def test_observation_validation():
    with pytest.raises(ValueError):
        VmfObservation((0, 0, 0), (1, 1, 0), 1.0)
    with pytest.raises(ValueError):
        VmfObservation((0, 0, 0), (1, 0, 0), -1.0)
    with pytest.raises(ValueError):
        GridSearchConfig(BOUNDS, resolution_m=0)


def test_two_bearing_intersection_planar():
    target = np.array([5.0, 3.0, 1.5])
    obs = [VmfObservation(p, unit_from(p, target), 1.0) for p in [(0, 0, 1.5), (10, 0, 1.5)]]
    fix = aoa_ml_fix(obs, GridSearchConfig(((0, 0, 0), (10, 6, 3)), 0.25, planar_height_m=1.5))
    assert np.linalg.norm(fix - target) <= 0.25


def test_twelve_round_robin_bearings(scenario4):
    target = np.array([4.3, 3.1, 1.2])
    fix = aoa_ml_fix(observations_from(exact_set(scenario4, target), scenario4), GridSearchConfig(BOUNDS))
    assert np.linalg.norm(fix - target) <= 0.25


def test_noisy_bearings_median_error():
    s = room(4)
    rng = np.random.default_rng(0)
    errors = []
    for _ in range(100):
        target = rng.uniform((2, 2, 1), (8, 6, 1))
        obs = []
        for g in s.gnbs:
            for _k in range(3):
                u = sample_vmf_direction(unit_from(g.position, target), 200, rng)
                obs.append(VmfObservation(g.position, u, 200))
        fix = aoa_ml_fix(obs, GridSearchConfig(BOUNDS, planar_height_m=1.0))
        errors.append(np.linalg.norm(fix - target))
    assert np.median(errors) < 0.5


def test_grid_fix_matches_dense_oracle_basin():
    s = room(4)
    rng = np.random.default_rng(5)
    target = np.array([6.2, 4.4, 1.0])
    obs = [VmfObservation(g.position, sample_vmf_direction(unit_from(g.position, target), 200, rng), 200)
           for g in s.gnbs for _ in range(3)]
    fix = aoa_ml_fix(obs, GridSearchConfig(BOUNDS, planar_height_m=1.0))
    # brute force at 1 cm over the whole floor
    xs, ys = np.arange(0, 10.005, 0.01), np.arange(0, 8.005, 0.01)
    xx, yy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([xx.ravel(), yy.ravel(), np.ones(xx.size)], 1)
    score = np.zeros(len(pts))
    for o in obs:
        d = pts - o.rx_position
        score += o.kappa * (d @ o.aoa_unit) / np.linalg.norm(d, axis=1)
    best = pts[np.argmax(score)]
    assert np.linalg.norm(fix - best) <= 0.25 / 4 * np.sqrt(2)


def test_parallel_bearings_raise_with_fallback():
    obs = [VmfObservation((0, 1, 1), (1, 0, 0), 5.0), VmfObservation((0, 2, 1), (1, 0, 0), 5.0)]
    with pytest.raises(IllConditionedFixError) as exc:
        aoa_ml_fix(obs, GridSearchConfig(((0, 0, 0), (10, 4, 2))))
    fb = exc.value.fallback
    assert np.all(np.isfinite(fb)) and 0 <= fb[0] <= 10
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        pos, bad = aoa_fix_or_fallback(obs, GridSearchConfig(((0, 0, 0), (10, 4, 2))))
    assert bad and len(w) == 1
    np.testing.assert_array_equal(pos, fb)


def test_single_informative_bearing_is_ill_conditioned():
    obs = [VmfObservation((0, 1, 1), (1, 0, 0), 5.0), VmfObservation((5, 0, 1), (0, 1, 0), 0.0)]
    with pytest.raises(IllConditionedFixError):
        aoa_ml_fix(obs, GridSearchConfig(((0, 0, 0), (10, 4, 2))))


def _noisy_obs(seed, n=6):
    rng = np.random.default_rng(seed)
    target = rng.uniform((1, 1, 0.5), (9, 7, 2.5))
    rxs = rng.uniform((0, 0, 0), (10, 8, 3), size=(n, 3))
    return [VmfObservation(r, sample_vmf_direction(unit_from(r, target), 50, rng), rng.uniform(1, 100))
            for r in rxs]


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 1000), st.floats(0.01, 100))
def test_kappa_scaling_invariance(seed, c):
    obs = _noisy_obs(seed)
    grid = GridSearchConfig(BOUNDS, 0.5, planar_height_m=1.0)
    a = aoa_ml_fix(obs, grid)
    b = aoa_ml_fix([VmfObservation(o.rx_position, o.aoa_unit, o.kappa * c) for o in obs], grid)
    np.testing.assert_array_equal(a, b)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 1000))
def test_zero_kappa_observation_is_ignored(seed):
    obs = _noisy_obs(seed)
    grid = GridSearchConfig(BOUNDS, 0.5, planar_height_m=1.0)
    extra = VmfObservation((3, 3, 3), (0, 0, -1), 0.0)
    np.testing.assert_array_equal(aoa_ml_fix(obs, grid), aoa_ml_fix(obs + [extra], grid))


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000), st.integers(-8, 8), st.integers(-8, 8), st.integers(-8, 8))
def test_translation_equivariance(seed, i, j, k):
    # shifts on a multiple of the grid step keep the lattice aligned
    shift = 0.5 * np.array([i, j, k], float)
    obs = _noisy_obs(seed)
    grid = GridSearchConfig(BOUNDS, 0.5)
    moved = [VmfObservation(o.rx_position + shift, o.aoa_unit, o.kappa) for o in obs]
    grid2 = GridSearchConfig((np.add(BOUNDS[0], shift), np.add(BOUNDS[1], shift)), 0.5)
    np.testing.assert_allclose(aoa_ml_fix(moved, grid2), aoa_ml_fix(obs, grid) + shift, atol=1e-9)

