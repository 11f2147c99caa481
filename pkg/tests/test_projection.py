import itertools

import numpy as np
import pytest

from core.projection import project_box_simplex, project_simplex


def _brute_force_box_simplex(v, lower, upper, total):
    """枚举每个坐标处于下界、上界或自由三种状态，取可行解中距离最小者"""
    best, best_distance = None, np.inf
    for states in itertools.product((lower, upper, None), repeat=v.size):
        fixed = np.array([s if s is not None else 0.0 for s in states])
        free = np.array([s is None for s in states])
        if free.any():
            theta = (v[free].sum() + fixed[~free].sum() - total) / free.sum()
            x = np.where(free, v - theta, fixed)
        else:
            x = fixed
        if abs(x.sum() - total) > 1e-9 or np.any(x < lower - 1e-12) or np.any(x > upper + 1e-12):
            continue
        distance = float(np.sum((x - v) ** 2))
        if distance < best_distance:
            best, best_distance = x, distance
    return best


class TestSimplex:
    def test_already_feasible(self):
        assert np.allclose(project_simplex([0.2, 0.3, 0.5]), [0.2, 0.3, 0.5])

    def test_clips_negative(self):
        assert np.allclose(project_simplex([1.0, -1.0]), [1.0, 0.0])

    def test_shift(self):
        assert np.allclose(project_simplex([0.6, 0.6]), [0.5, 0.5])

    def test_single_entry(self):
        assert list(project_simplex([3.0], z=2.0)) == [2.0]

    def test_scaled(self, rng):
        x = project_simplex(rng.normal(size=6), z=4.0)
        assert x.sum() == pytest.approx(4.0)
        assert x.min() >= 0.0


class TestBoxSimplex:
    def test_example(self):
        x = project_box_simplex(np.array([58.0, 1.5, 0.5]), 1.0, 59.0, 60.0)
        assert np.allclose(x, [57.75, 1.25, 1.0])

    def test_matches_active_set_enumeration(self):
        v = np.array([58.0, 1.5, 0.5])
        assert np.allclose(project_box_simplex(v, 1.0, 59.0, 60.0), _brute_force_box_simplex(v, 1.0, 59.0, 60.0))

    def test_random_against_enumeration(self, rng):
        for _ in range(50):
            v = rng.uniform(-10.0, 70.0, size=4)
            expected = _brute_force_box_simplex(v, 0.5, 59.5, 60.0)
            assert np.allclose(project_box_simplex(v, 0.5, 59.5, 60.0), expected, atol=1e-8)

    def test_interior_point_unchanged(self):
        v = np.array([20.0, 25.0, 15.0])
        assert np.allclose(project_box_simplex(v, 1.0, 59.0, 60.0), v)

    def test_incompatible_box(self):
        with pytest.raises(ValueError):
            project_box_simplex(np.array([1.0, 1.0]), 40.0, 50.0, 60.0)
