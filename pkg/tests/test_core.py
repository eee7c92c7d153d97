import numpy as np
import pytest

from sdelab.core import SamplePath, SeedSpec, TimeGrid, brownian_path, derive_stream, stream_generators


def test_time_grid_basics():
    grid = TimeGrid(0.0, 1.0, 4)
    assert grid.dt == pytest.approx(0.25)
    np.testing.assert_allclose(grid.times(), [0.0, 0.25, 0.5, 0.75, 1.0])


def test_time_grid_rejects_bad_arguments():
    with pytest.raises(ValueError):
        TimeGrid(1.0, 1.0, 10)
    with pytest.raises(ValueError):
        TimeGrid(0.0, 1.0, 0)


def test_seed_spec_validation():
    SeedSpec(0, 0)
    with pytest.raises(ValueError):
        SeedSpec(-1)
    with pytest.raises(ValueError):
        SeedSpec(2**64)
    with pytest.raises(ValueError):
        SeedSpec(3, -2)


def test_derive_stream_is_a_pure_function():
    a = derive_stream(SeedSpec(123, 7)).standard_normal(16)
    b = derive_stream(SeedSpec(123, 7)).standard_normal(16)
    np.testing.assert_array_equal(a, b)


def test_distinct_streams_differ():
    a = derive_stream(SeedSpec(123, 0)).standard_normal(16)
    b = derive_stream(SeedSpec(123, 1)).standard_normal(16)
    c = derive_stream(SeedSpec(124, 0)).standard_normal(16)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_stream_generators_match_derive_stream():
    gens = stream_generators(99, 5, 3)
    for offset, gen in enumerate(gens):
        expected = derive_stream(SeedSpec(99, 5 + offset)).standard_normal(8)
        np.testing.assert_array_equal(gen.standard_normal(8), expected)


def test_brownian_path_shape_and_start():
    grid = TimeGrid(0.0, 2.0, 50)
    path = brownian_path(grid, derive_stream(SeedSpec(7)))
    assert path.states.shape == (51,)
    assert path.states[0] == 0.0
    assert path.dim == 1


def test_brownian_path_increment_moments():
    grid = TimeGrid(0.0, 1.0, 1000)
    paths = np.stack(
        [brownian_path(grid, g).states for g in stream_generators(2024, 0, 200)]
    )
    incs = np.diff(paths, axis=1)
    assert abs(incs.mean()) < 3.0 * np.sqrt(grid.dt / incs.size)
    assert incs.var() == pytest.approx(grid.dt, rel=0.05)


def test_sample_path_validation():
    grid = TimeGrid(0.0, 1.0, 3)
    SamplePath(grid, np.zeros(4))
    SamplePath(grid, np.zeros((4, 2)))
    with pytest.raises(ValueError):
        SamplePath(grid, np.zeros(5))
    with pytest.raises(ValueError):
        SamplePath(grid, np.zeros((4, 3)))
    with pytest.raises(ValueError):
        SamplePath(grid, np.array([0.0, np.nan, 0.0, 0.0]))
    with pytest.raises(ValueError):
        SamplePath(grid, np.zeros(4), aux=np.zeros(3))
