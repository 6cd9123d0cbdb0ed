import math
import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Protocol

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.services.geometry import TorusGeometry, cell_indices, torus_distances
from src.services.mobility import HomePoints
from src.services.routing import Message, relay_ring, step_scale
from src.utils.constants import DEFAULT_MAX_RANGE_RATIO
from src.utils.errors import ProtocolViolationError

logger = logging.getLogger(__name__)


class AreaConstants(BaseModel):
    """Multiplicative constants for the squarelet-area formulas"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    c: float = Field(1.0, gt=0, description="Multiplier on every squarelet-area row")


@dataclass(frozen=True)
class StepParams:
    """
    Per-step scheduling parameters.

    A_i is the nominal squarelet area; the grid actually used has
    cells_per_axis cells of side cell_side, and R_i = sqrt(2) * cell_side so
    any two nodes sharing a cell are in range.
    """
    i: int
    Z_i: float
    A_i: float
    cells_per_axis: int
    cell_side: float
    R_i: float
    p_s: float


@dataclass(frozen=True)
class SlotPlan:
    step: int
    phase: int
    params: StepParams
    spacing: int


@dataclass(frozen=True)
class Transmission:
    tx: int
    rx: int
    msg: int
    cell: tuple[int, int]


@dataclass(frozen=True)
class CellContents:
    cell: tuple[int, int]
    members: np.ndarray


class QueueView(Protocol):
    """Read-only view of node queues used for pair selection."""

    backlog: np.ndarray  # (n, i_max + 1) queued messages per node and step

    def head(self, node: int, step: int) -> Optional[Message]: ...

    def head_for(self, node: int, dst: int) -> Optional[Message]: ...

    def destinations(self, node: int) -> Iterable[int]: ...


@dataclass(frozen=True)
class WorldSnapshot:
    positions: np.ndarray
    homes: HomePoints
    Z0: float
    queues: QueueView


def squarelet_area(i: int, delta: float, n: float, Z0: float, consts: AreaConstants = AreaConstants()) -> float:
    """
    Minimum squarelet area for step i that keeps a cell populated with an eligible pair.

    Args:
        i: Step index
        delta: Decay exponent (exactly 2 selects the logarithmic row)
        n: Network area / node count
        Z0: Base distance
        consts: Multiplicative constants

    Returns:
        Area clamped to [1, n]
    """
    z_i = step_scale(i, Z0)
    c = consts.c
    if delta <= 1:
        area = c * math.sqrt(n) / z_i
    elif delta < 2:
        area = c * n ** ((2.0 - delta) / 2.0) / z_i ** (2.0 - delta)
    elif delta == 2:
        area = c * math.log(n)
    else:
        area = c * z_i ** (delta - 2.0)
    return min(max(area, 1.0), float(n))


def i_max(n: float, Z0: float) -> int:
    """Largest routing step: floor(log2(sqrt(n)) - log2(Z0))."""
    if Z0 < 1:
        raise ValueError(f"Z0 must be at least 1, got {Z0}")
    if Z0 > math.sqrt(n):
        raise ValueError(f"Z0={Z0} exceeds sqrt(n)={math.sqrt(n):.4f}")
    # tolerance keeps exact powers of two from flooring one step short
    return max(0, math.floor(0.5 * math.log2(n) - math.log2(Z0) + 1e-9))


def slot_distribution(areas: list[float]) -> list[float]:
    """Step probabilities proportional to squarelet area."""
    if not areas:
        raise ValueError("Slot distribution needs at least one area")
    if any(a <= 0 for a in areas):
        raise ValueError(f"All squarelet areas must be positive, got {areas}")
    total = math.fsum(areas)
    return [a / total for a in areas]


def phase_spacing(guard: float) -> int:
    """Cell spacing s between simultaneously active cells."""
    if guard < 0:
        raise ValueError(f"Guard factor must be non-negative, got {guard}")
    return math.ceil(1.0 + math.sqrt(2.0) + (1.0 + guard) * math.sqrt(2.0))


def phase_count(guard: float) -> int:
    """Number of phases M = s^2 in the round-robin cell activation."""
    s = phase_spacing(guard)
    return s * s


def fit_grid(A: float, spacing: int, g: TorusGeometry) -> int:
    """
    Cells per axis for nominal area A.

    When the grid is fine enough for the phase pattern, it is rounded to a
    multiple of the spacing so activation stays regular across the wrap-around.
    """
    k0 = max(1, math.floor(g.side / math.sqrt(A) + 0.5))
    if k0 >= spacing:
        return spacing * max(1, math.floor(k0 / spacing + 0.5))
    return k0


def build_step_params(
    n: int,
    delta: float,
    Z0: float,
    consts: AreaConstants = AreaConstants(),
    spacing: int = 4,
    max_range_ratio: float = DEFAULT_MAX_RANGE_RATIO,
) -> list[StepParams]:
    """
    Step parameters for steps 0..i_max.

    Raises:
        ValueError: If some step's fitted cell side exceeds max_range_ratio * Z_i
    """
    g = TorusGeometry.from_area(n)
    top = i_max(n, Z0)
    areas = [squarelet_area(i, delta, n, Z0, consts) for i in range(top + 1)]
    probabilities = slot_distribution(areas)

    params = []
    for i, (area, p_s) in enumerate(zip(areas, probabilities)):
        z_i = step_scale(i, Z0)
        k = fit_grid(area, spacing, g)
        cell_side = g.side / k
        # the fitted grid can be coarser than the nominal area
        if cell_side > max_range_ratio * z_i:
            raise ValueError(
                f"Step {i}: cell side {cell_side:.3f} (nominal {math.sqrt(area):.3f}, {k} cells per axis) "
                f"exceeds {max_range_ratio} * Z_{i} = {max_range_ratio * z_i:.3f}; "
                f"transmission range would not be O(Z_i)"
            )
        params.append(StepParams(
            i=i,
            Z_i=z_i,
            A_i=area,
            cells_per_axis=k,
            cell_side=cell_side,
            R_i=math.sqrt(2.0) * cell_side,
            p_s=p_s,
        ))
    return params


class Scheduler:
    """
    Draws one SlotPlan per slot: step ~ p_s, then the next phase of that step.

    Phase counters are kept per step so each phase of a step is used once
    every M slots assigned to that step.
    """

    def __init__(self, params: list[StepParams], guard: float = 0.0, phases: Optional[int] = None):
        if not params:
            raise ValueError("Scheduler needs at least one step")
        self.params = params
        self.guard = guard
        if phases is None:
            self.spacing = phase_spacing(guard)
        else:
            self.spacing = math.isqrt(phases)
            if self.spacing * self.spacing != phases:
                raise ValueError(f"Phase count must be a perfect square, got {phases}")
        self.phases = self.spacing * self.spacing
        self.probabilities = np.array([p.p_s for p in params])
        self._counters = [0] * len(params)

    def draw(self, rng: np.random.Generator) -> SlotPlan:
        step = int(rng.choice(len(self.params), p=self.probabilities))
        phase = self._counters[step]
        self._counters[step] = (phase + 1) % self.phases
        return SlotPlan(step=step, phase=phase, params=self.params[step], spacing=self.spacing)


def active_cell_mask(cells: np.ndarray, phase: int, spacing: int) -> np.ndarray:
    """Nodes whose cell belongs to the given phase."""
    return (cells[:, 0] % spacing == phase % spacing) & (cells[:, 1] % spacing == phase // spacing)


def select_pair(
    cell: CellContents,
    step: int,
    world: WorldSnapshot,
    rng: np.random.Generator,
) -> Optional[Transmission]:
    """
    Pick one eligible (transmitter, receiver) pair in a cell, uniformly at random.

    Step 0: a holds a step-0 message for a co-resident d with home-distance
    below Z0. Step >= 1: b's home lies in the relay ring of a's head-of-line
    step message; a blocked head is never skipped.

    Returns:
        Transmission, or None when the cell has no eligible pair
    """
    members = cell.members
    queues = world.queues
    homes = world.homes.points
    side = world.homes.geometry.side
    holders = members[queues.backlog[members, step] > 0]
    if len(holders) == 0:
        return None

    pairs: list[tuple[int, int, int]] = []
    if step == 0:
        present = set(int(m) for m in members)
        for a in holders:
            a = int(a)
            for d in queues.destinations(a):
                if d not in present:
                    continue
                if torus_distances(homes[a], homes[d], side) < world.Z0:
                    msg = queues.head_for(a, d)
                    pairs.append((a, d, msg.id))
    else:
        member_homes = homes[members]
        for a in holders:
            a = int(a)
            msg = queues.head(a, step)
            ring = relay_ring(step, world.Z0)
            distances = torus_distances(member_homes, homes[msg.dst], side)
            mask = ring.mask(distances) & (members != a)
            for b in members[mask]:
                pairs.append((a, int(b), msg.id))

    if not pairs:
        return None
    tx, rx, msg_id = pairs[int(rng.integers(len(pairs)))]
    return Transmission(tx=tx, rx=rx, msg=msg_id, cell=cell.cell)


def protocol_violations(
    transmissions: list[Transmission],
    positions: np.ndarray,
    R: float,
    guard: float,
    side: float,
) -> list[tuple[int, int, float]]:
    """
    Exhaustive protocol-model check.

    Returns (tx, rx, distance) for every receiver out of range of its own
    transmitter or within (1 + guard) R of another active transmitter.
    """
    if not transmissions:
        return []
    tx = np.array([t.tx for t in transmissions])
    rx = np.array([t.rx for t in transmissions])
    # distances[k, j]: transmitter k to receiver j
    distances = torus_distances(positions[tx][:, None, :], positions[rx][None, :, :], side)
    violations = []
    own = np.diagonal(distances)
    for j in np.nonzero(own > R * (1.0 + 1e-12))[0]:
        violations.append((int(tx[j]), int(rx[j]), float(own[j])))
    np.fill_diagonal(distances, np.inf)
    for k, j in zip(*np.nonzero(distances < (1.0 + guard) * R)):
        violations.append((int(tx[k]), int(rx[j]), float(distances[k, j])))
    return violations


def enabled_transmissions(
    world: WorldSnapshot,
    plan: SlotPlan,
    rng: np.random.Generator,
    guard: float = 0.0,
    verify: bool = False,
) -> list[Transmission]:
    """
    At most one transmission per active cell of the slot's phase.

    Args:
        world: Positions, homes and queues at the start of the slot
        plan: Step, phase and grid of this slot
        rng: Random stream for pair selection
        guard: Protocol-model guard factor
        verify: Run the exhaustive protocol-model check

    Returns:
        Transmissions in ascending cell order
    """
    n = len(world.positions)
    if n == 0:
        return []

    k = plan.params.cells_per_axis
    side = world.homes.geometry.side
    cells = cell_indices(world.positions, k, side)
    active = np.nonzero(active_cell_mask(cells, plan.phase, plan.spacing))[0]
    if len(active) == 0:
        return []

    flat = cells[active, 1] * k + cells[active, 0]
    order = np.argsort(flat, kind="stable")
    nodes = active[order]
    flat = flat[order]
    cell_ids, starts = np.unique(flat, return_index=True)
    bounds = list(starts[1:]) + [len(flat)]

    transmissions = []
    for cell_id, start, stop in zip(cell_ids, starts, bounds):
        cell = CellContents(cell=(int(cell_id % k), int(cell_id // k)), members=nodes[start:stop])
        tx = select_pair(cell, plan.step, world, rng)
        if tx is not None:
            transmissions.append(tx)

    if verify:
        violations = protocol_violations(transmissions, world.positions, plan.params.R_i, guard, side)
        if violations:
            raise ProtocolViolationError(
                f"{len(violations)} protocol-model violations at step {plan.step}, phase {plan.phase}: "
                f"{violations[:5]}",
                violations,
            )
    return transmissions
