import math
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import pandas as pd
from numpy.random import SeedSequence, default_rng
from scipy import stats

from config import settings
from src.services.geometry import TorusGeometry, cell_indices, cells_per_axis, torus_distances, wrap_array
from src.services.mobility import build_shape, generate_homes, sample_positions
from src.services.routing import step_scale
from src.utils.constants import (
    MIN_MEETING_TRIALS,
    MIN_POPULATED_INSTANCES,
    MIN_POPULATED_SLOTS,
    MIN_SLOPE_POINTS,
    ORACLE_BATCH,
    STEP0_BAND_INNER,
    STEP0_BAND_OUTER,
    UNION_RING_INNER,
    UNION_RING_OUTER,
    WILSON_CONFIDENCE,
)

logger = logging.getLogger(__name__)

ESTIMATE_COLUMNS = ["estimate", "ci_lo", "ci_hi", "trials", "successes", "seed"]


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    stderr: float
    r2: float
    points: int


def slope_fit(xs, ys) -> SlopeFit:
    """
    Least-squares slope of log y against log x.

    Raises:
        ValueError: On non-positive data or fewer than 3 points
    """
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"xs and ys differ in length: {len(x)} vs {len(y)}")
    if len(x) < MIN_SLOPE_POINTS:
        raise ValueError(f"Slope fit needs at least {MIN_SLOPE_POINTS} points, got {len(x)}")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("Slope fit needs strictly positive xs and ys")
    log_x = np.log(x)
    log_y = np.log(y)
    if np.all(log_y == log_y[0]):
        return SlopeFit(slope=0.0, intercept=float(log_y[0]), stderr=0.0, r2=1.0, points=len(x))
    fit = stats.linregress(log_x, log_y)
    return SlopeFit(
        slope=float(fit.slope),
        intercept=float(fit.intercept),
        stderr=max(0.0, float(fit.stderr)),
        r2=float(fit.rvalue ** 2),
        points=len(x),
    )


def wilson_interval(successes: int, trials: int, confidence: float = WILSON_CONFIDENCE) -> tuple[float, float]:
    if trials <= 0:
        raise ValueError("Wilson interval needs at least one trial")
    if not (0 <= successes <= trials):
        raise ValueError(f"Successes {successes} outside [0, {trials}]")
    ci = stats.binomtest(int(successes), int(trials)).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


@dataclass(frozen=True)
class Estimate:
    """Bernoulli estimate with its Wilson interval."""
    estimate: float
    ci_lo: float
    ci_hi: float
    trials: int
    successes: int
    seed: int
    params: dict = field(default_factory=dict)

    @classmethod
    def from_counts(cls, successes: int, trials: int, seed: int, params: dict) -> "Estimate":
        lo, hi = wilson_interval(successes, trials)
        return cls(successes / trials, lo, hi, trials, successes, seed, params)

    def merge(self, other: "Estimate") -> "Estimate":
        """Pool two estimates of the same quantity by summing counts."""
        if other.params != self.params:
            raise ValueError(f"Cannot merge estimates for {self.params} and {other.params}")
        return Estimate.from_counts(
            self.successes + other.successes, self.trials + other.trials, self.seed, self.params,
        )

    def to_row(self) -> dict:
        row = dict(self.params)
        row.update({
            "estimate": self.estimate,
            "ci_lo": self.ci_lo,
            "ci_hi": self.ci_hi,
            "trials": self.trials,
            "successes": self.successes,
            "seed": self.seed,
        })
        return row


def to_frame(estimates: list[Estimate]) -> pd.DataFrame:
    """One row per estimate: parameters followed by estimate, ci_lo, ci_hi, trials, successes, seed."""
    rows = [e.to_row() for e in estimates]
    frame = pd.DataFrame(rows)
    params = [c for c in frame.columns if c not in ESTIMATE_COLUMNS]
    return frame[params + ESTIMATE_COLUMNS]


def _map_batches(fn: Callable, jobs: list[tuple], workers: int) -> list:
    """Run batch jobs in order; results are returned in job order whatever the worker count."""
    if workers <= 1 or len(jobs) <= 1 or not settings.use_process_pool:
        return [fn(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, *zip(*jobs)))


def _grid(n: int, A: float) -> tuple[TorusGeometry, int]:
    g = TorusGeometry.from_area(n)
    if not (0 < A <= n):
        raise ValueError(f"Squarelet area must lie in (0, n={n}], got {A}")
    return g, cells_per_axis(min(math.sqrt(A), g.side), g)


def _meeting_batch(delta: float, n: int, D: float, k: int, count: int, seed: SeedSequence) -> int:
    g = TorusGeometry.from_area(n)
    shape = build_shape(delta, g, settings.shape_resolution)
    rng = default_rng(seed)
    first = rng.random((count, 2)) * g.side
    angle = rng.random(count) * 2.0 * math.pi
    second = wrap_array(first + D * np.stack([np.cos(angle), np.sin(angle)], axis=-1), g.side)
    first = wrap_array(first, g.side)
    a = cell_indices(sample_positions(first, shape, rng), k, g.side)
    b = cell_indices(sample_positions(second, shape, rng), k, g.side)
    return int(np.all(a == b, axis=1).sum())


def estimate_meeting_probability(
    D: float,
    A: float,
    delta: float,
    n: int,
    trials: int = MIN_MEETING_TRIALS,
    seed: int = 0,
    workers: int = 1,
) -> Estimate:
    """
    Probability that two nodes whose homes are D apart share a squarelet of area A.

    The home pair is placed at a uniform location and orientation per trial;
    both positions are drawn from the mobility shape.

    Args:
        D: Home-point distance
        A: Squarelet area
        delta: Decay exponent
        n: Network size
        trials: Number of position pairs (>= 10^4)
        seed: Root seed; batches use spawned substreams
        workers: Process count for the batches

    Returns:
        Estimate with its 95% Wilson interval
    """
    if trials < MIN_MEETING_TRIALS:
        raise ValueError(f"Meeting estimate needs at least {MIN_MEETING_TRIALS} trials, got {trials}")
    if math.sqrt(A) >= D / 4.0:
        raise ValueError(f"Squarelet side {math.sqrt(A):.4f} must be below D/4 = {D / 4.0:.4f}")
    g, k = _grid(n, A)
    if D > g.side / 2.0:
        raise ValueError(f"Home distance {D} exceeds half the torus side {g.side / 2.0:.4f}")

    sizes = [ORACLE_BATCH] * (trials // ORACLE_BATCH)
    if trials % ORACLE_BATCH:
        sizes.append(trials % ORACLE_BATCH)
    seeds = SeedSequence(seed).spawn(len(sizes))
    counts = _map_batches(_meeting_batch, [(delta, n, D, k, size, s) for size, s in zip(sizes, seeds)], workers)

    params = {"kind": "meeting", "delta": delta, "n": n, "D": D, "A": A, "cell_area": (g.side / k) ** 2}
    estimate = Estimate.from_counts(sum(counts), trials, seed, params)
    logger.debug(f"Meeting probability D={D} A={A} delta={delta} n={n}: {estimate.estimate:.4g}")
    return estimate


def pair_band(i: int, Z0: float) -> tuple[float, float, bool]:
    """
    Home-distance band of pairs counted as eligible at step i.

    Returns:
        (lower, upper, upper_inclusive)
    """
    if i < 0:
        raise ValueError(f"Step must be non-negative, got {i}")
    if i == 0:
        return STEP0_BAND_INNER * Z0, STEP0_BAND_OUTER * Z0, False
    z_i = step_scale(i, Z0)
    return UNION_RING_INNER * z_i, UNION_RING_OUTER * z_i, True


def count_band_pairs(members: np.ndarray, homes: np.ndarray, band: tuple[float, float, bool], side: float) -> int:
    """Unordered pairs among members whose home-distance falls in the band."""
    if len(members) < 2:
        return 0
    h = homes[members]
    distances = torus_distances(h[:, None, :], h[None, :, :], side)
    lower, upper, inclusive = band
    inside = (distances >= lower) & ((distances <= upper) if inclusive else (distances < upper))
    return int(np.triu(inside, 1).sum())


def _census_batch(
    i: int,
    delta: float,
    n: int,
    Z0: float,
    k: int,
    cell: tuple[int, int],
    slots: int,
    seed: SeedSequence,
) -> np.ndarray:
    g = TorusGeometry.from_area(n)
    shape = build_shape(delta, g, settings.shape_resolution)
    rng = default_rng(seed)
    homes = generate_homes(n, rng).points
    band = pair_band(i, Z0)
    counts = np.zeros(slots, dtype=np.int64)
    for t in range(slots):
        positions = sample_positions(homes, shape, rng)
        idx = cell_indices(positions, k, g.side)
        members = np.nonzero((idx[:, 0] == cell[0]) & (idx[:, 1] == cell[1]))[0]
        counts[t] = count_band_pairs(members, homes, band, g.side)
    return counts


@dataclass(frozen=True)
class CellCensus:
    """Eligible-pair counts in the reference cell, one row per home-set instance."""
    counts: np.ndarray
    seed: int
    params: dict

    @property
    def trials(self) -> int:
        return int(self.counts.size)

    def populated(self) -> np.ndarray:
        return self.counts > 0


def cell_census(
    i: int,
    delta: float,
    n: int,
    Z0: float,
    A: float,
    instances: int = MIN_POPULATED_INSTANCES,
    slots: int = MIN_POPULATED_SLOTS,
    seed: int = 0,
    cell: tuple[int, int] = (0, 0),
    workers: int = 1,
) -> CellCensus:
    """
    Count eligible step-i pairs in one reference cell over fresh home-sets.

    Each instance draws its own home-points and then slots independent
    position snapshots.
    """
    if instances < MIN_POPULATED_INSTANCES or slots < MIN_POPULATED_SLOTS:
        raise ValueError(
            f"Census needs at least {MIN_POPULATED_INSTANCES} instances x {MIN_POPULATED_SLOTS} slots, "
            f"got {instances} x {slots}"
        )
    g, k = _grid(n, A)
    if not (0 <= cell[0] < k and 0 <= cell[1] < k):
        raise ValueError(f"Reference cell {cell} outside the {k}x{k} grid")
    seeds = SeedSequence(seed).spawn(instances)
    rows = _map_batches(_census_batch, [(i, delta, n, Z0, k, tuple(cell), slots, s) for s in seeds], workers)
    params = {
        "kind": "census", "step": i, "delta": delta, "n": n, "Z0": Z0, "A": A,
        "cell_area": (g.side / k) ** 2, "instances": instances, "slots": slots,
    }
    return CellCensus(counts=np.vstack(rows), seed=seed, params=params)


def estimate_populated_probability(
    i: int,
    delta: float,
    n: int,
    Z0: float,
    A: float,
    instances: int = MIN_POPULATED_INSTANCES,
    slots: int = MIN_POPULATED_SLOTS,
    seed: int = 0,
    cell: tuple[int, int] = (0, 0),
    workers: int = 1,
    census: Optional[CellCensus] = None,
) -> Estimate:
    """
    Fraction of slots in which the reference cell of area A holds an eligible step-i pair.

    Args:
        i: Step index
        delta: Decay exponent
        n: Network size
        Z0: Base distance
        A: Squarelet area
        instances: Home-set draws (>= 100)
        slots: Position snapshots per home-set (>= 100)
        seed: Root seed
        cell: Reference cell (column, row)
        workers: Process count
        census: Reuse an existing census instead of drawing one

    Returns:
        Estimate over instances x slots trials
    """
    if census is None:
        census = cell_census(i, delta, n, Z0, A, instances, slots, seed, cell, workers)
    populated = census.populated()
    params = dict(census.params, kind="populated")
    return Estimate.from_counts(int(populated.sum()), census.trials, census.seed, params)


def estimate_pbeta(census: CellCensus, trials: Optional[int] = None, seed: int = 0) -> Estimate:
    """
    Probability that a tagged eligible pair is the one selected in its cell
    when every node has a message waiting.

    Each trial takes a populated slot from the census, tags one of its pairs
    and draws the uniform selection, so the estimate is the mean of
    1 / (band pairs in the cell) over populated slots.

    Every unordered pair in the home-distance band counts as eligible: the
    transmitter is assumed to hold a head-of-line message whose destination
    ring contains the receiver. Head-of-line blocking of saturated queues is
    not modelled here; the engine measures it directly.

    Args:
        census: Eligible-pair counts per slot
        trials: Resample this many populated slots; default uses each once
        seed: Stream for tagging and selection

    Returns:
        Estimate of p_beta
    """
    counts = census.counts[census.counts > 0]
    if len(counts) == 0:
        raise ValueError("Census holds no populated slot; p_beta is undefined")
    rng = default_rng(seed)
    if trials is not None:
        if trials <= 0:
            raise ValueError(f"trials must be positive, got {trials}")
        counts = rng.choice(counts, size=trials, replace=True)
    # the tagged pair is pair 0; selection is uniform over the cell's pairs
    selected = rng.integers(0, counts)
    params = dict(census.params, kind="pbeta", selection="uniform_band_pairs")
    return Estimate.from_counts(int((selected == 0).sum()), len(counts), seed, params)
