import math
import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import pandas as pd
from scipy import integrate

from src.services.geometry import (
    TorusGeometry,
    TorusPoint,
    cells_per_axis,
    flat_cell_ids,
    wrap_array,
)
from src.utils.constants import (
    GAUSS_LEGENDRE_NODES,
    MIN_SHAPE_RESOLUTION,
    QUAD_LIMIT,
    QUAD_REL_TOL,
)

logger = logging.getLogger(__name__)

HALF_PI = math.pi / 2.0


@dataclass(frozen=True, eq=False)
class MobilityShape:
    """
    Power-law spatial density around a home-point, tabulated for sampling.

    quantiles[j] is P(d <= distances[j]) where d is the torus distance
    between a node and its home-point.
    """
    delta: float
    geometry: TorusGeometry
    G: float
    quantiles: np.ndarray = field(repr=False)
    distances: np.ndarray = field(repr=False)

    def radial_cdf(self, rho):
        return np.interp(rho, self.distances, self.quantiles)

    def inverse_cdf(self, q):
        return np.interp(q, self.quantiles, self.distances)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"quantile": self.quantiles, "distance": self.distances})


@dataclass(frozen=True, eq=False)
class HomePoints:
    """Home-points of all n nodes as an (n, 2) array of canonical coordinates."""
    points: np.ndarray = field(repr=False)
    geometry: TorusGeometry

    def __len__(self) -> int:
        return len(self.points)

    def __getitem__(self, node: int) -> TorusPoint:
        x, y = self.points[node]
        return TorusPoint(float(x), float(y))


def unnormalized_density(d: float, delta: float) -> float:
    """s(d) = min(1, d^-delta)."""
    if d < 0:
        raise ValueError(f"Distance must be non-negative, got {d}")
    if d <= 1.0:
        return 1.0
    return min(1.0, d ** (-delta))


def _density_array(rho: np.ndarray, delta: float) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    out = np.ones_like(rho)
    far = rho > 1.0
    out[far] = rho[far] ** (-delta)
    return out


def _inner_mass_density(rho, delta: float):
    # circle fully inside the fundamental square
    return _density_array(rho, delta) * 2.0 * math.pi * rho


def _outer_mass_density(u, delta: float, half_side: float):
    # rho = h / cos(u); the torus circle keeps 4 arcs of angle pi/2 - 2u
    cos_u = np.cos(u)
    rho = half_side / cos_u
    jacobian = half_side * np.sin(u) / (cos_u * cos_u)
    return _density_array(rho, delta) * 4.0 * rho * (HALF_PI - 2.0 * u) * jacobian


def _segments(half_side: float) -> list[tuple[str, float, float]]:
    """
    Integration segments split at every kink of s(rho) * L(rho).

    "rho" segments integrate over distance inside the inscribed disc, "u"
    segments over u = acos(h / rho) where circles clip the square.
    """
    segments = []
    if half_side > 1.0:
        segments.append(("rho", 0.0, 1.0))
        segments.append(("rho", 1.0, half_side))
        segments.append(("u", 0.0, math.pi / 4.0))
        return segments

    segments.append(("rho", 0.0, half_side))
    if half_side * math.sqrt(2.0) > 1.0:
        u_kink = math.acos(half_side)
        segments.append(("u", 0.0, u_kink))
        segments.append(("u", u_kink, math.pi / 4.0))
    else:
        segments.append(("u", 0.0, math.pi / 4.0))
    return segments


def _segment_integrand(kind: str, delta: float, half_side: float):
    if kind == "rho":
        return lambda rho: unnormalized_density(rho, delta) * 2.0 * math.pi * rho

    def outer(u: float) -> float:
        cos_u = math.cos(u)
        rho = half_side / cos_u
        jacobian = half_side * math.sin(u) / (cos_u * cos_u)
        return unnormalized_density(rho, delta) * 4.0 * rho * (HALF_PI - 2.0 * u) * jacobian

    return outer


def normalization_constant(delta: float, g: TorusGeometry) -> float:
    """
    G: integral of s(torus distance to the origin) over the whole torus.

    Reduced to a radial integral with the exact arc length of the torus
    circle of radius rho, split at rho = 1 and rho = side / 2.

    Args:
        delta: Decay exponent
        g: Torus geometry

    Returns:
        Normalization constant (area units)
    """
    if delta < 0:
        raise ValueError(f"Decay exponent must be non-negative, got {delta}")

    half_side = g.side / 2.0
    total = 0.0
    error = 0.0
    for kind, a, b in _segments(half_side):
        value, abserr = integrate.quad(
            _segment_integrand(kind, delta, half_side),
            a,
            b,
            epsabs=1e-12,
            epsrel=QUAD_REL_TOL * 1e-3,
            limit=QUAD_LIMIT,
        )
        total += value
        error += abserr

    if total <= 0 or error > QUAD_REL_TOL * total:
        raise RuntimeError(
            f"Normalization quadrature did not converge for delta={delta}, side={g.side}: "
            f"estimate {total}, error {error}"
        )
    return total


def _segment_grid(kind: str, a: float, b: float, points: int) -> np.ndarray:
    if kind == "rho" and a >= 1.0:
        return np.geomspace(a, b, points)
    return np.linspace(a, b, points)


def _interval_masses(kind: str, grid: np.ndarray, delta: float, half_side: float) -> np.ndarray:
    nodes, weights = np.polynomial.legendre.leggauss(GAUSS_LEGENDRE_NODES)
    left = grid[:-1, None]
    right = grid[1:, None]
    half_width = (right - left) / 2.0
    x = half_width * nodes[None, :] + (right + left) / 2.0
    if kind == "rho":
        values = _inner_mass_density(x, delta)
    else:
        values = _outer_mass_density(x, delta, half_side)
    return (half_width[:, 0]) * (values @ weights)


@lru_cache(maxsize=64)
def build_shape(delta: float, g: TorusGeometry, resolution: int = 4096) -> MobilityShape:
    """
    Compute G and a tabulated radial CDF for the given decay exponent.

    Radial mass at distance rho is s(rho) times the arc measure of the torus
    circle of radius rho. Shapes are immutable and cached per
    (delta, geometry, resolution).

    Args:
        delta: Decay exponent
        g: Torus geometry
        resolution: Number of table intervals (>= 1024)

    Returns:
        MobilityShape shared by every caller with the same arguments
    """
    if resolution < MIN_SHAPE_RESOLUTION:
        raise ValueError(f"Shape resolution must be at least {MIN_SHAPE_RESOLUTION}, got {resolution}")

    G = normalization_constant(delta, g)
    half_side = g.side / 2.0
    segments = _segments(half_side)

    # inner disc gets half the table, the clipped corners the rest
    kinds = [kind for kind, _, _ in segments]

    distances = [np.zeros(1)]
    masses = []
    for kind, a, b in segments:
        share = 0.5 / kinds.count(kind)
        points = max(8, int(resolution * share)) + 1
        grid = _segment_grid(kind, a, b, points)
        masses.append(_interval_masses(kind, grid, delta, half_side))
        rho_grid = grid if kind == "rho" else half_side / np.cos(grid)
        distances.append(rho_grid[1:])

    mass = np.concatenate(masses)
    cumulative = np.concatenate([[0.0], np.cumsum(mass)])
    rho = np.concatenate(distances)

    total = cumulative[-1]
    if abs(total - G) > QUAD_REL_TOL * G:
        raise RuntimeError(
            f"Radial CDF table disagrees with quadrature for delta={delta}: {total} vs {G}"
        )

    quantiles = cumulative / total
    quantiles[-1] = 1.0
    rho[-1] = g.max_distance
    quantiles.setflags(write=False)
    rho.setflags(write=False)

    logger.debug(f"Built mobility shape delta={delta} side={g.side:.3f} G={G:.6g} ({len(rho)} points)")
    return MobilityShape(delta=delta, geometry=g, G=G, quantiles=quantiles, distances=rho)


def sample_offsets(shape: MobilityShape, count: int, rng: np.random.Generator) -> np.ndarray:
    """Displacements from the home-point, uniform on the torus circle of the drawn radius."""
    half_side = shape.geometry.side / 2.0
    rho = shape.inverse_cdf(rng.random(count))
    spread = rng.random(count)
    quadrant = rng.integers(0, 4, size=count)

    clipped = rho > half_side
    theta = 2.0 * math.pi * spread
    if np.any(clipped):
        a = np.arccos(np.minimum(half_side / rho[clipped], 1.0))
        theta[clipped] = quadrant[clipped] * HALF_PI + a + spread[clipped] * (HALF_PI - 2.0 * a)

    return np.stack([rho * np.cos(theta), rho * np.sin(theta)], axis=-1)


def sample_positions(homes: np.ndarray, shape: MobilityShape, rng: np.random.Generator) -> np.ndarray:
    offsets = sample_offsets(shape, len(homes), rng)
    return wrap_array(homes + offsets, shape.geometry.side)


def sample_position(home: TorusPoint, shape: MobilityShape, rng: np.random.Generator) -> TorusPoint:
    """Draw one position with density phi around the given home-point."""
    if not shape.geometry.contains(home):
        raise ValueError(f"Home ({home.x}, {home.y}) is not canonical for side {shape.geometry.side}")
    x, y = sample_positions(home.as_array()[None, :], shape, rng)[0]
    return TorusPoint(float(x), float(y))


def generate_homes(n: int, rng: np.random.Generator) -> HomePoints:
    """
    Draw n home-points uniformly over the torus of area n.

    Args:
        n: Number of nodes (>= 2)
        rng: Random stream

    Returns:
        HomePoints with canonical coordinates
    """
    if n < 2:
        raise ValueError(f"Need at least 2 nodes, got {n}")
    g = TorusGeometry.from_area(n)
    points = wrap_array(rng.random((n, 2)) * g.side, g.side)
    points.setflags(write=False)
    return HomePoints(points=points, geometry=g)


def home_cell_counts(homes: HomePoints, cell_area: float) -> np.ndarray:
    """Home-points per cell of the exact-fit tessellation with roughly the given cell area."""
    g = homes.geometry
    k = cells_per_axis(math.sqrt(cell_area), g)
    ids = flat_cell_ids(homes.points, k, g.side)
    return np.bincount(ids, minlength=k * k)
