import itertools

import numpy as np
import pytest

from mvbsde.errors import CountMismatch, DimensionMismatch, NonUniformWeights, TooLarge
from mvbsde.measures import (
    EmpiricalMeasure,
    second_moment_norm,
    wasserstein2_1d,
    wasserstein2_exact,
    wasserstein2_upper,
)


def brute_force_w2(a, b):
    """Minimum over all permutations; the oracle for tiny equal-weight clouds."""
    a, b = np.asarray(a, float).reshape(len(a), -1), np.asarray(b, float).reshape(len(b), -1)
    best = min(np.sum((a - b[list(p)]) ** 2) for p in itertools.permutations(range(len(b))))
    return np.sqrt(best / len(a))


def test_second_moment_examples():
    assert second_moment_norm(EmpiricalMeasure.dirac([0.0])) == 0.0
    assert second_moment_norm(EmpiricalMeasure([3.0, -3.0])) == pytest.approx(3.0)
    assert second_moment_norm(EmpiricalMeasure([[1.0, 0.0], [0.0, 1.0]])) == pytest.approx(1.0)


def test_w2_1d_examples():
    assert wasserstein2_1d(EmpiricalMeasure.dirac([0.0]), EmpiricalMeasure.dirac([3.0])) == pytest.approx(3.0)
    mu, nu = EmpiricalMeasure([0.0, 2.0]), EmpiricalMeasure([1.0, 3.0])
    assert brute_force_w2([0, 2], [1, 3]) == pytest.approx(1.0)
    assert wasserstein2_1d(mu, nu) == pytest.approx(1.0)
    assert wasserstein2_1d(mu, mu) == 0.0


def test_w2_1d_weighted_matches_replication():
    mu = EmpiricalMeasure([0.0, 1.0, 5.0], [0.5, 0.25, 0.25])
    nu = EmpiricalMeasure([2.0, -1.0], [0.75, 0.25])
    rep_mu = EmpiricalMeasure([0.0, 0.0, 1.0, 5.0])
    rep_nu = EmpiricalMeasure([2.0, 2.0, 2.0, -1.0])
    assert wasserstein2_1d(mu, nu) == pytest.approx(brute_force_w2(rep_mu.points, rep_nu.points), abs=1e-12)


def test_exact_examples():
    a = EmpiricalMeasure([[0.0, 0.0], [1.0, 1.0]])
    b = EmpiricalMeasure([[1.0, 1.0], [0.0, 0.0]])
    assert wasserstein2_exact(a, b) == 0.0
    c = EmpiricalMeasure([[0.0, 0.0], [0.0, 0.0]])
    d = EmpiricalMeasure([[3.0, 4.0], [3.0, 4.0]])
    assert wasserstein2_exact(c, d) == pytest.approx(5.0)


def test_exact_matches_brute_force_2d():
    rng = np.random.default_rng(0)
    for _ in range(30):
        n = rng.integers(2, 6)
        a, b = rng.normal(size=(n, 2)), rng.normal(size=(n, 2))
        assert wasserstein2_exact(EmpiricalMeasure(a), EmpiricalMeasure(b)) == pytest.approx(brute_force_w2(a, b), abs=1e-12)


def test_upper_examples():
    a = EmpiricalMeasure([0.0, 2.0])
    assert wasserstein2_upper(a, a) == 0.0
    b = EmpiricalMeasure([1.0, 3.0])
    assert wasserstein2_upper(a, b) == pytest.approx(wasserstein2_1d(a, b))


def test_metric_axioms_random():
    rng = np.random.default_rng(1)
    for _ in range(200):
        n = int(rng.integers(1, 8))
        a, b, c = (EmpiricalMeasure(rng.normal(size=n) * 3) for _ in range(3))
        ab, ba = wasserstein2_1d(a, b), wasserstein2_1d(b, a)
        assert abs(ab - ba) <= 1e-12
        assert wasserstein2_1d(a, c) <= ab + wasserstein2_1d(b, c) + 1e-10
        if not np.allclose(np.sort(a.points[:, 0]), np.sort(b.points[:, 0])):
            assert ab > 0


def test_distance_to_dirac_bounded_by_norm():
    rng = np.random.default_rng(2)
    delta = EmpiricalMeasure.dirac([0.0])
    for n in (1, 3, 10):
        mu = EmpiricalMeasure(rng.normal(size=n))
        assert wasserstein2_1d(mu, delta) <= second_moment_norm(mu) + 1e-12
    single = EmpiricalMeasure([2.5])
    assert wasserstein2_1d(single, delta) == pytest.approx(second_moment_norm(single))


def test_errors():
    one, two = EmpiricalMeasure([0.0]), EmpiricalMeasure([[0.0, 1.0]])
    with pytest.raises(DimensionMismatch):
        wasserstein2_1d(one, two)
    with pytest.raises(TooLarge):
        wasserstein2_exact(EmpiricalMeasure(np.zeros(65)), EmpiricalMeasure(np.zeros(65)))
    with pytest.raises(NonUniformWeights):
        wasserstein2_exact(EmpiricalMeasure([0.0, 1.0], [0.3, 0.7]), EmpiricalMeasure([0.0, 1.0]))
    with pytest.raises(CountMismatch):
        wasserstein2_upper(EmpiricalMeasure([0.0, 1.0]), EmpiricalMeasure([0.0]))


def test_weights_must_sum_to_one():
    with pytest.raises(ValueError):
        EmpiricalMeasure([0.0, 1.0], [0.5, 0.6])


def test_csv_round_trip(tmp_path):
    mu = EmpiricalMeasure([[0.1, 2.0], [-1.0, 3.5]], [0.25, 0.75])
    path = tmp_path / "mu.csv"
    mu.to_csv(path)
    back = EmpiricalMeasure.from_csv(path)
    np.testing.assert_array_equal(back.points, mu.points)
    np.testing.assert_array_equal(back.weights, mu.weights)
    assert path.read_text().splitlines()[0] == "x0,x1,weight"


def test_joint_layout_row_major():
    x = np.array([[1.0], [2.0]])
    y = np.array([[3.0], [4.0]])
    z = np.arange(4.0).reshape(2, 1, 2)
    theta = EmpiricalMeasure.joint(x, y, z)
    np.testing.assert_array_equal(theta.points[0], [1.0, 3.0, 0.0, 1.0])
    np.testing.assert_array_equal(theta.z_part(), z)
    np.testing.assert_array_equal(theta.y_part(), y)
