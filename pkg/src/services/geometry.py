import math
import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TorusGeometry:
    """Square torus of side sqrt(n); canonical coordinates lie in [0, side)."""
    side: float

    def __post_init__(self):
        if not (math.isfinite(self.side) and self.side > 0):
            raise ValueError(f"Torus side must be positive and finite, got {self.side}")

    @classmethod
    def from_area(cls, n: float) -> "TorusGeometry":
        if n <= 0:
            raise ValueError(f"Torus area must be positive, got {n}")
        return cls(side=math.sqrt(n))

    @property
    def area(self) -> float:
        return self.side * self.side

    @property
    def max_distance(self) -> float:
        """Largest possible wrap-around distance (half the diagonal)."""
        return self.side * math.sqrt(2.0) / 2.0

    def contains(self, p: "TorusPoint") -> bool:
        return 0.0 <= p.x < self.side and 0.0 <= p.y < self.side


@dataclass(frozen=True)
class TorusPoint:
    x: float
    y: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)


def _check_canonical(p: TorusPoint, g: TorusGeometry, name: str):
    if not g.contains(p):
        raise ValueError(f"{name}=({p.x}, {p.y}) is not canonical for torus side {g.side}")


def _axis_gap(a: float, b: float, side: float) -> float:
    gap = abs(a - b)
    return min(gap, side - gap)


def _wrap_coordinate(value: float, side: float) -> float:
    wrapped = value % side
    # float modulo of tiny negatives can land exactly on side
    if wrapped >= side:
        wrapped = 0.0
    return wrapped


def torus_distance(p: TorusPoint, q: TorusPoint, g: TorusGeometry) -> float:
    """
    Wrap-around Euclidean distance between two canonical points.

    Args:
        p: First point
        q: Second point
        g: Torus geometry

    Returns:
        Minimum distance over all periodic images, at most g.max_distance
    """
    _check_canonical(p, g, "p")
    _check_canonical(q, g, "q")
    return math.hypot(_axis_gap(p.x, q.x, g.side), _axis_gap(p.y, q.y, g.side))


def wrap(x: float, y: float, g: TorusGeometry) -> TorusPoint:
    """Reduce raw coordinates onto the torus."""
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValueError(f"Cannot wrap non-finite point ({x}, {y})")
    return TorusPoint(_wrap_coordinate(x, g.side), _wrap_coordinate(y, g.side))


def in_annulus(
    center: TorusPoint,
    r_in: float,
    r_out: float,
    p: TorusPoint,
    g: TorusGeometry,
) -> bool:
    """True iff r_in < d(center, p) < r_out, both inequalities strict."""
    if r_in < 0:
        raise ValueError(f"Inner radius must be non-negative, got {r_in}")
    if r_in >= r_out:
        raise ValueError(f"Inner radius {r_in} must be below outer radius {r_out}")
    d = torus_distance(center, p, g)
    return r_in < d < r_out


def cells_per_axis(cell_side: float, g: TorusGeometry) -> int:
    """
    Number of grid cells per axis for a requested cell side.

    The grid is fitted so it divides the torus exactly: k = max(1, round(side / cell_side)),
    rounding halves up.
    """
    if not (0 < cell_side <= g.side):
        raise ValueError(f"Cell side {cell_side} out of range (0, {g.side}]")
    return max(1, math.floor(g.side / cell_side + 0.5))


def cell_index(p: TorusPoint, cell_side: float, g: TorusGeometry) -> tuple[int, int]:
    """
    Grid cell containing p, on the exact-fit grid for the requested cell side.

    Args:
        p: Canonical point
        cell_side: Requested cell side length
        g: Torus geometry

    Returns:
        (column, row) cell coordinates
    """
    _check_canonical(p, g, "p")
    k = cells_per_axis(cell_side, g)
    effective = g.side / k
    cx = min(int(p.x // effective), k - 1)
    cy = min(int(p.y // effective), k - 1)
    return cx, cy


# Vectorized forms used by the engine and the Monte Carlo estimators.
# Points are float arrays with a trailing axis of length 2.

def wrap_array(points: np.ndarray, side: float) -> np.ndarray:
    wrapped = np.mod(points, side)
    wrapped[wrapped >= side] = 0.0
    return wrapped


def torus_gaps(a: np.ndarray, b: np.ndarray, side: float) -> np.ndarray:
    gap = np.abs(a - b)
    return np.minimum(gap, side - gap)


def torus_distances(a: np.ndarray, b: np.ndarray, side: float) -> np.ndarray:
    gaps = torus_gaps(a, b, side)
    return np.hypot(gaps[..., 0], gaps[..., 1])


def cell_indices(points: np.ndarray, k: int, side: float) -> np.ndarray:
    """Integer (column, row) cell coordinates on a k x k grid."""
    effective = side / k
    idx = np.floor(points / effective).astype(np.int64)
    return np.clip(idx, 0, k - 1)


def flat_cell_ids(points: np.ndarray, k: int, side: float) -> np.ndarray:
    idx = cell_indices(points, k, side)
    return idx[..., 1] * k + idx[..., 0]
