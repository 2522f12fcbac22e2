import numpy as np
from scipy import stats

from mvbsde import rng
from mvbsde._parallel import chunk_slices, map_chunks


def test_draws_depend_only_on_the_counter():
    full = rng.normals(3, "w", 7, np.arange(1000), 2)
    picked = rng.normals(3, "w", 7, np.array([999, 5, 0]), 2)
    assert np.array_equal(picked, full[[999, 5, 0]])


def test_streams_steps_and_seeds_differ():
    base = rng.uniforms(1, "a", 0, np.arange(64), 1)
    for other in (rng.uniforms(2, "a", 0, np.arange(64), 1), rng.uniforms(1, "b", 0, np.arange(64), 1),
                  rng.uniforms(1, "a", 1, np.arange(64), 1)):
        assert not np.any(base == other)


def test_uniforms_open_interval_and_normal_law():
    u = rng.uniforms(0, "u", 0, np.arange(200_000), 1)[:, 0]
    assert u.min() > 0.0 and u.max() < 1.0
    z = rng.normals(0, "z", 0, np.arange(200_000), 1)[:, 0]
    # a KS test at this size catches a wrong transform or a biased mixer
    assert stats.kstest(z, "norm").pvalue > 1e-3
    assert abs(np.corrcoef(z[:-1], z[1:])[0, 1]) < 0.01


def test_large_seeds_are_accepted():
    a = rng.normals(2**63 - 1, "w", 0, np.arange(4), 1)
    assert np.all(np.isfinite(a))


def test_chunks_cover_range_independent_of_threads():
    slices = chunk_slices(20_000)
    assert slices[0].start == 0 and slices[-1].stop == 20_000
    assert all(a.stop == b.start for a, b in zip(slices, slices[1:]))
    data = rng.normals(0, "s", 0, np.arange(20_000), 1)[:, 0]
    one = map_chunks(lambda s: data[s].sum(), 20_000, threads=1)
    many = map_chunks(lambda s: data[s].sum(), 20_000, threads=4)
    assert one == many
