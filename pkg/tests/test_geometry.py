import itertools
import math

import numpy as np
import pytest

from src.services.geometry import (
    TorusGeometry,
    TorusPoint,
    cell_index,
    cells_per_axis,
    in_annulus,
    torus_distance,
    torus_distances,
    wrap,
)


def test_distance_identity(torus10) -> None:
    p = TorusPoint(3, 7)
    assert torus_distance(p, p, torus10) == 0.0


def test_distance_wraps_around(torus10) -> None:
    assert torus_distance(TorusPoint(1, 1), TorusPoint(9, 1), torus10) == pytest.approx(2.0)


def test_distance_matches_brute_force_over_images(rng) -> None:
    side = 7.5
    a = rng.random((10_000, 2)) * side
    b = rng.random((10_000, 2)) * side
    shifts = np.array(list(itertools.product((-side, 0.0, side), repeat=2)))
    brute = np.min(np.linalg.norm(a[:, None, :] - (b[:, None, :] + shifts[None, :, :]), axis=-1), axis=1)
    np.testing.assert_allclose(torus_distances(a, b, side), brute, rtol=1e-12, atol=1e-12)


def test_distance_is_a_bounded_metric(rng) -> None:
    g = TorusGeometry(side=12.0)
    points = [TorusPoint(*xy) for xy in rng.random((30, 2)) * g.side]
    for p, q, r in itertools.islice(itertools.permutations(points, 3), 500):
        d_pq = torus_distance(p, q, g)
        assert d_pq == pytest.approx(torus_distance(q, p, g))
        assert d_pq <= g.max_distance + 1e-12
        assert d_pq <= torus_distance(p, r, g) + torus_distance(r, q, g) + 1e-12


def test_distance_rejects_non_canonical(torus10) -> None:
    with pytest.raises(ValueError):
        torus_distance(TorusPoint(10, 0), TorusPoint(0, 0), torus10)


@pytest.mark.parametrize(
    "raw, expected",
    [((-1, 11), (9, 1)), ((0, 0), (0, 0)), ((10, 10), (0, 0))],
)
def test_wrap(raw, expected, torus10) -> None:
    p = wrap(*raw, torus10)
    assert (p.x, p.y) == pytest.approx(expected)
    assert wrap(p.x, p.y, torus10) == p


def test_wrap_rejects_non_finite(torus10) -> None:
    with pytest.raises(ValueError):
        wrap(math.nan, 0.0, torus10)


def test_annulus_is_strict(torus10) -> None:
    center = TorusPoint(0, 0)
    assert in_annulus(center, 1.0, 2.0, TorusPoint(1.5, 0), torus10)
    assert not in_annulus(center, 1.0, 2.0, TorusPoint(1, 0), torus10)
    assert in_annulus(center, 0.5, 1.5, TorusPoint(9, 0), torus10)


def test_annulus_rejects_inverted_radii(torus10) -> None:
    with pytest.raises(ValueError):
        in_annulus(TorusPoint(0, 0), 2.0, 1.0, TorusPoint(1, 0), torus10)


def test_cell_index() -> None:
    g = TorusGeometry(side=16.0)
    assert cell_index(TorusPoint(5, 13), 4.0, g) == (1, 3)
    assert cell_index(TorusPoint(0, 0), 4.0, g) == (0, 0)


def test_cell_index_fits_grid_to_side(torus10) -> None:
    assert cells_per_axis(3.0, torus10) == 3
    assert cell_index(TorusPoint(9.9, 0), 3.0, torus10) == (2, 0)


def test_cell_side_out_of_range(torus10) -> None:
    with pytest.raises(ValueError):
        cell_index(TorusPoint(1, 1), 11.0, torus10)
