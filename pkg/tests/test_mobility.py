import math

import numpy as np
import pytest
from scipy import stats

from src.services.geometry import TorusGeometry, torus_distances
from src.services.mobility import (
    build_shape,
    generate_homes,
    home_cell_counts,
    normalization_constant,
    sample_positions,
    unnormalized_density,
)


@pytest.mark.parametrize("delta", [0.0, 1.0, 2.5, 6.0])
def test_density_inside_unit_distance(delta) -> None:
    assert unnormalized_density(0.5, delta) == 1.0


def test_density_power_law() -> None:
    assert unnormalized_density(10.0, 2.0) == pytest.approx(0.01)
    assert unnormalized_density(100.0, 0.0) == 1.0


def test_density_rejects_negative_distance() -> None:
    with pytest.raises(ValueError):
        unnormalized_density(-1.0, 1.0)


def test_uniform_normalization_is_area() -> None:
    g = TorusGeometry.from_area(1024)
    assert normalization_constant(0.0, g) == pytest.approx(1024.0, rel=1e-6)


def test_steep_normalization_approaches_disc_limit() -> None:
    g = TorusGeometry.from_area(1e6)
    limit = 2.0 * math.pi * (0.5 + 1.0 / 4.0)
    assert normalization_constant(6.0, g) == pytest.approx(limit, rel=0.02)


def test_uniform_radial_cdf() -> None:
    g = TorusGeometry.from_area(1024)
    shape = build_shape(0.0, g)
    for rho in (0.5, 3.0, 10.0, 16.0):
        assert shape.radial_cdf(rho) == pytest.approx(math.pi * rho * rho / 1024.0, rel=1e-3)


def test_radial_cdf_monotone_and_complete() -> None:
    shape = build_shape(2.0, TorusGeometry.from_area(4096))
    assert np.all(np.diff(shape.quantiles) >= 0)
    assert shape.quantiles[0] == 0.0
    assert shape.quantiles[-1] == 1.0
    assert shape.distances[-1] == pytest.approx(shape.geometry.max_distance)


def test_steep_shape_mass_within_unit_distance() -> None:
    shape = build_shape(6.0, TorusGeometry.from_area(1e6))
    assert shape.radial_cdf(1.0) == pytest.approx(math.pi / shape.G, rel=1e-6)
    assert shape.radial_cdf(1.0) == pytest.approx(0.667, abs=0.01)


def test_shape_resolution_floor() -> None:
    with pytest.raises(ValueError):
        build_shape(1.0, TorusGeometry.from_area(256), resolution=512)


def test_sampled_positions_follow_shape(rng) -> None:
    g = TorusGeometry.from_area(1e6)
    shape = build_shape(6.0, g)
    homes = np.full((20_000, 2), 500.0)
    positions = sample_positions(homes, shape, rng)
    assert np.all((positions >= 0) & (positions < g.side))
    within = np.mean(torus_distances(positions, homes, g.side) <= 1.0)
    assert within == pytest.approx(math.pi / shape.G, abs=0.015)


def test_uniform_positions_cover_torus(rng) -> None:
    g = TorusGeometry.from_area(256)
    shape = build_shape(0.0, g)
    homes = np.zeros((40_000, 2))
    positions = sample_positions(homes, shape, rng)
    counts, _, _ = np.histogram2d(positions[:, 0], positions[:, 1], bins=4, range=[[0, 16], [0, 16]])
    np.testing.assert_allclose(counts / len(homes), 1.0 / 16.0, atol=0.01)


def test_generate_homes(rng) -> None:
    homes = generate_homes(2, rng)
    assert len(homes) == 2
    assert all(homes.geometry.contains(homes[i]) for i in range(2))


def test_generate_homes_is_seeded() -> None:
    a = generate_homes(100, np.random.default_rng(7)).points
    b = generate_homes(100, np.random.default_rng(7)).points
    np.testing.assert_array_equal(a, b)


def test_generate_homes_needs_two_nodes(rng) -> None:
    with pytest.raises(ValueError):
        generate_homes(1, rng)


def test_home_cell_counts(rng) -> None:
    homes = generate_homes(256, rng)
    counts = home_cell_counts(homes, 16.0)
    assert len(counts) == 16
    assert counts.sum() == 256


GROWTH_SIZES = [2 ** e for e in range(10, 21, 2)]


@pytest.mark.slow
@pytest.mark.parametrize("delta", [0.0, 0.5, 1.0, 1.5])
def test_normalization_grows_as_power_of_n(delta) -> None:
    G = [normalization_constant(delta, TorusGeometry.from_area(n)) for n in GROWTH_SIZES]
    slope, _ = np.polyfit(np.log(GROWTH_SIZES), np.log(G), 1)
    assert slope == pytest.approx((2.0 - delta) / 2.0, abs=0.05)


@pytest.mark.slow
def test_normalization_logarithmic_at_two() -> None:
    ratios = np.array([normalization_constant(2.0, TorusGeometry.from_area(n)) / math.log(n) for n in GROWTH_SIZES])
    assert np.all((ratios > 2.5) & (ratios < 4.0))
    assert ratios.max() / ratios.min() < 1.2


@pytest.mark.slow
def test_normalization_converges_for_steep_decay() -> None:
    near = normalization_constant(3.0, TorusGeometry.from_area(2 ** 18))
    far = normalization_constant(3.0, TorusGeometry.from_area(2 ** 20))
    assert abs(far - near) / far < 0.02


@pytest.mark.slow
@pytest.mark.parametrize("delta", [0.0, 1.0, 2.0, 3.0, 6.0])
def test_sampled_distances_match_radial_cdf(delta) -> None:
    shape = build_shape(delta, TorusGeometry.from_area(4096))
    homes = np.zeros((1_000_000, 2))
    positions = sample_positions(homes, shape, np.random.default_rng(11))
    distances = torus_distances(positions, homes, shape.geometry.side)
    assert stats.kstest(distances, shape.radial_cdf).statistic < 0.005


def wrapped_offsets(positions: np.ndarray, homes: np.ndarray, side: float) -> np.ndarray:
    return np.mod(positions - homes + side / 2.0, side) - side / 2.0


@pytest.mark.slow
def test_directions_are_uniform() -> None:
    shape = build_shape(2.0, TorusGeometry.from_area(4096))
    side = shape.geometry.side
    homes = np.full((100_000, 2), side / 2.0)
    offsets = wrapped_offsets(sample_positions(homes, shape, np.random.default_rng(12)), homes, side)
    inside = np.hypot(offsets[:, 0], offsets[:, 1]) < side / 4.0
    angles = np.mod(np.arctan2(offsets[inside, 1], offsets[inside, 0]), 2.0 * math.pi) / (2.0 * math.pi)
    assert stats.kstest(angles, "uniform").pvalue > 0.01


@pytest.mark.slow
def test_positions_reshuffle_every_slot() -> None:
    shape = build_shape(1.0, TorusGeometry.from_area(1024))
    side = shape.geometry.side
    rng = np.random.default_rng(13)
    homes = generate_homes(1024, rng).points[:100]
    trace = np.stack([wrapped_offsets(sample_positions(homes, shape, rng), homes, side) for _ in range(1000)])
    for axis in (0, 1):
        series = trace[:, :, axis]
        r = np.corrcoef(series[:-1].ravel(), series[1:].ravel())[0, 1]
        assert abs(r) < 0.01
