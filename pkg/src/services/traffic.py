import math
import logging
from dataclasses import dataclass

import numpy as np

from src.services.geometry import torus_distances
from src.services.mobility import HomePoints
from src.utils.constants import DEFAULT_C_FAR, TRAFFIC_RETRY_BUDGET, TRAFFIC_SWAP_ROUNDS

logger = logging.getLogger(__name__)

SWAP_TRIES = 32  # Random partners tried per bad source in a repair pass


@dataclass(frozen=True)
class FlowSpec:
    src: int
    dst: int
    lam: float


def _pair_ok(homes: np.ndarray, src: np.ndarray, dst: np.ndarray, threshold: float, side: float) -> np.ndarray:
    far = torus_distances(homes[src], homes[dst], side) >= threshold
    return far & (src != dst)


def generate_traffic(
    homes: HomePoints,
    rng: np.random.Generator,
    c_far: float = DEFAULT_C_FAR,
    lam: float = 0.0,
) -> list[FlowSpec]:
    """
    Permutation traffic: every node is source of one flow and destination of one flow.

    Draws a random permutation and repairs fixed points and near pairs by
    random swaps, redrawing from scratch a bounded number of times.

    Args:
        homes: Home-points
        rng: Random stream
        c_far: Minimum home-distance in units of sqrt(n)
        lam: Per-flow arrival probability stored on each FlowSpec

    Returns:
        Flows ordered by source id
    """
    n = len(homes)
    if n < 4:
        raise ValueError(f"Permutation traffic needs at least 4 nodes, got {n}")

    side = homes.geometry.side
    points = homes.points
    threshold = c_far * math.sqrt(n)
    sources = np.arange(n)

    for attempt in range(TRAFFIC_RETRY_BUDGET):
        perm = rng.permutation(n)
        for _ in range(TRAFFIC_SWAP_ROUNDS):
            ok = _pair_ok(points, sources, perm, threshold, side)
            bad = np.nonzero(~ok)[0]
            if len(bad) == 0:
                break
            for i in bad:
                partners = rng.integers(0, n, size=SWAP_TRIES)
                for j in partners:
                    if j == i:
                        continue
                    src = np.array([i, j])
                    dst = np.array([perm[j], perm[i]])
                    if np.all(_pair_ok(points, src, dst, threshold, side)):
                        perm[i], perm[j] = perm[j], perm[i]
                        break

        if np.all(_pair_ok(points, sources, perm, threshold, side)):
            if attempt:
                logger.debug(f"Traffic permutation found after {attempt + 1} attempts")
            return [FlowSpec(src=int(s), dst=int(d), lam=lam) for s, d in zip(sources, perm)]

    raise RuntimeError(
        f"No permutation with home-distance >= {threshold:.3f} found for n={n} "
        f"within {TRAFFIC_RETRY_BUDGET} attempts"
    )
