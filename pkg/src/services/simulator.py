import math
import re
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import stats

from config import settings
from src.services.analysis import classify_regime, throughput_bound, z0_constraint, z0_floor_label
from src.services.geometry import TorusPoint, torus_distances
from src.services.metrics import MetricsReport
from src.services.mobility import build_shape, generate_homes, sample_positions
from src.services.routing import Message, advance, compute_steps, relay_ring
from src.services.scheduling import (
    AreaConstants,
    Scheduler,
    WorldSnapshot,
    build_step_params,
    enabled_transmissions,
    i_max,
    phase_spacing,
)
from src.services.traffic import FlowSpec, generate_traffic
from src.utils.constants import (
    DEFAULT_C_FAR,
    DEFAULT_GUARD,
    DEFAULT_MAX_RANGE_RATIO,
    DEFAULT_WARMUP_FRACTION,
    RING_OCCUPANCY_CHUNK,
    STABILITY_MIN_GROWTH,
    STABILITY_P_VALUE,
)
from src.utils.errors import ConsistencyError

logger = logging.getLogger(__name__)

_POWER_SPEC = re.compile(r"^\s*n\s*\^\s*\(?\s*([0-9.]+)\s*(?:/\s*([0-9.]+))?\s*\)?\s*$")


def resolve_z0(spec: Union[float, str], delta: float, n: int, z0_constant: float = 1.0) -> float:
    """
    Turn a Z0 setting into a length.

    Accepts a number, "auto" (z0_constant times the smallest admissible Z0)
    or a power of n such as "n^0.3" or "n^(1/6)".
    """
    if isinstance(spec, (int, float)):
        return float(spec)
    text = spec.strip().lower()
    if text == "auto":
        return z0_constant * z0_constraint(delta, n)
    match = _POWER_SPEC.match(text)
    if match:
        exponent = float(match.group(1))
        if match.group(2):
            exponent /= float(match.group(2))
        return float(n) ** exponent
    try:
        return float(text)
    except ValueError:
        raise ValueError(f"Unrecognized z0 value '{spec}': use a number, 'auto' or 'n^x'")


class SimConfig(BaseModel):
    """Parameters of one simulation run"""
    model_config = ConfigDict(extra="forbid", populate_by_name=True, frozen=True)

    n: int = Field(..., ge=4, description="Number of nodes (torus area)")
    delta: float = Field(..., ge=0, description="Mobility decay exponent")
    z0: Union[float, str] = Field("auto", description="Base distance: number, 'auto' or 'n^x'")
    z0_constant: float = Field(1.0, gt=0, description="Multiplier applied by z0='auto'")
    z0_floor_constant: float = Field(1.0, gt=0, description="Z0 must be at least this times the admissible floor")
    lam: Optional[float] = Field(None, alias="lambda", ge=0, le=1, description="Per-flow arrival probability per slot")
    load_fraction: Optional[float] = Field(None, ge=0, le=2, description="Offered load as a fraction of the throughput bound")
    throughput_constant: float = Field(1.0, gt=0, description="Fitted constant on the per-node throughput bound")
    slots: int = Field(..., gt=0, description="Horizon T including warmup")
    warmup: Optional[int] = Field(None, ge=0, description="Slots excluded from metrics; default 10% of slots")
    seed: int = Field(0, ge=0)
    guard: float = Field(DEFAULT_GUARD, ge=0)
    phases: Optional[int] = Field(None, ge=1, description="Override for the phase count M (perfect square)")
    constants: AreaConstants = AreaConstants()
    c_far: float = Field(DEFAULT_C_FAR, gt=0, lt=0.7)
    max_range_ratio: float = Field(DEFAULT_MAX_RANGE_RATIO, gt=0)
    queue_cap: Optional[int] = Field(None, gt=0)
    trace_events: bool = False

    @model_validator(mode="after")
    def check_consistency(self) -> "SimConfig":
        if (self.lam is None) == (self.load_fraction is None):
            raise ValueError("Set exactly one of 'lambda' and 'load_fraction'")

        if self.warmup is not None and self.warmup >= self.slots:
            raise ValueError(f"warmup ({self.warmup}) must be below slots ({self.slots})")

        if self.phases is not None and math.isqrt(self.phases) ** 2 != self.phases:
            raise ValueError(f"phases must be a perfect square, got {self.phases}")

        z0 = resolve_z0(self.z0, self.delta, self.n, self.z0_constant)
        floor = z0_constraint(self.delta, self.n)
        if z0 < self.z0_floor_constant * floor * (1.0 - 1e-9):
            raise ValueError(
                f"Z0={z0:.4f} violates the admissible floor for delta={self.delta} "
                f"(regime {classify_regime(self.delta).value}): "
                f"Z0 must be at least {self.z0_floor_constant:g} * {z0_floor_label(self.delta)} "
                f"= {self.z0_floor_constant * floor:.4f} at n={self.n}"
            )
        if z0 < 1 or z0 > math.sqrt(self.n):
            raise ValueError(f"Z0={z0:.4f} must lie in [1, sqrt(n)={math.sqrt(self.n):.4f}]")
        if i_max(self.n, z0) == 0 and z0 < math.sqrt(self.n / 2.0):
            raise ValueError(
                f"Z0={z0:.4f} leaves a single routing step while home-distances reach "
                f"{math.sqrt(self.n / 2.0):.4f}; far messages could never be delivered"
            )

        # surfaces range violations at load time
        build_step_params(self.n, self.delta, z0, self.constants, self.spacing, self.max_range_ratio)
        return self

    @property
    def Z0(self) -> float:
        return resolve_z0(self.z0, self.delta, self.n, self.z0_constant)

    @property
    def spacing(self) -> int:
        if self.phases is not None:
            return math.isqrt(self.phases)
        return phase_spacing(self.guard)

    @property
    def warmup_slots(self) -> int:
        if self.warmup is not None:
            return self.warmup
        return int(self.slots * DEFAULT_WARMUP_FRACTION)

    @property
    def arrival_rate(self) -> float:
        """Per-flow arrival probability per slot."""
        if self.lam is not None:
            return self.lam
        per_node = throughput_bound(self.delta, self.n, self.Z0, constant=self.constants.c).value / self.n
        return min(1.0, self.load_fraction * self.throughput_constant * per_node)

    def describe(self) -> dict:
        data = self.model_dump(by_alias=True, mode="json")
        data["Z0"] = self.Z0
        data["arrival_rate"] = self.arrival_rate
        return data


@dataclass
class NodeState:
    """
    Queues of one node: one FIFO per step >= 1 and one FIFO per destination
    for step-0 messages. Positions live in the engine's array.
    """
    id: int
    home: TorusPoint
    step_queues: dict[int, deque] = field(default_factory=dict)
    dest_queues: dict[int, deque] = field(default_factory=dict)

    def queue_for(self, msg: Message) -> deque:
        if msg.step == 0:
            return self.dest_queues.setdefault(msg.dst, deque())
        return self.step_queues[msg.step]


@dataclass(frozen=True)
class SlotEvent:
    slot: int
    step: int
    phase: int
    tx: int
    rx: int
    msg: int
    delivered: bool


class Simulator:
    """
    Slot-by-slot engine for one run.

    Each slot: positions are redrawn, Bernoulli arrivals are enqueued, a
    step and phase are drawn, and the enabled transmissions are executed.
    """

    def __init__(
        self,
        config: SimConfig,
        verify: Optional[bool] = None,
        queue_cap: Optional[int] = None,
        service_sample_cap: Optional[int] = None,
        trace_cap: Optional[int] = None,
        resolution: Optional[int] = None,
    ):
        self.config = config
        self.verify = settings.verify_invariants if verify is None else verify
        self.queue_cap = queue_cap or config.queue_cap or settings.queue_cap
        self.service_sample_cap = service_sample_cap or settings.service_sample_cap
        self.trace_cap = trace_cap or settings.trace_cap

        seq = np.random.SeedSequence(config.seed)
        homes_ss, traffic_ss, mobility_ss, arrival_ss, schedule_ss = seq.spawn(5)
        self.rng_mobility = np.random.default_rng(mobility_ss)
        self.rng_arrivals = np.random.default_rng(arrival_ss)
        self.rng_schedule = np.random.default_rng(schedule_ss)

        n = config.n
        self.n = n
        self.Z0 = config.Z0
        self.lam = config.arrival_rate
        self.homes = generate_homes(n, np.random.default_rng(homes_ss))
        self.side = self.homes.geometry.side
        self.shape = build_shape(config.delta, self.homes.geometry, resolution or settings.shape_resolution)
        self.flows: list[FlowSpec] = generate_traffic(
            self.homes, np.random.default_rng(traffic_ss), c_far=config.c_far, lam=self.lam,
        )
        self.flow_dst = np.array([f.dst for f in self.flows], dtype=np.int64)

        self.i_max = i_max(n, self.Z0)
        self.params = build_step_params(
            n, config.delta, self.Z0, config.constants, config.spacing, config.max_range_ratio,
        )
        self.scheduler = Scheduler(self.params, guard=config.guard, phases=config.phases)

        home_distances = torus_distances(self.homes.points, self.homes.points[self.flow_dst], self.side)
        # sources beyond 2^i_max Z0 (torus corners) start at the top step
        self.flow_steps = np.minimum(compute_steps(home_distances, self.Z0), self.i_max)

        self.nodes = [
            NodeState(
                id=i,
                home=self.homes[i],
                step_queues={step: deque() for step in range(1, self.i_max + 1)},
            )
            for i in range(n)
        ]
        self.backlog = np.zeros((n, self.i_max + 1), dtype=np.int64)
        self.positions = sample_positions(self.homes.points, self.shape, self.rng_mobility)

        self.slot = 0
        self._next_id = 0
        self.total_injected = 0
        self.total_delivered = 0
        self.events: list[SlotEvent] = []
        self.delivered_messages: list[Message] = []
        self.keep_delivered = False
        self.ring_occupancy = self._ring_occupancy()
        self._reset_metrics()

        logger.info(
            f"Simulator ready: n={n} delta={config.delta} Z0={self.Z0:.4f} i_max={self.i_max} "
            f"lambda={self.lam:.6g} M={self.scheduler.phases}"
        )

    # queue view used by pair selection

    def head(self, node: int, step: int) -> Optional[Message]:
        queue = self.nodes[node].step_queues.get(step)
        return queue[0] if queue else None

    def head_for(self, node: int, dst: int) -> Optional[Message]:
        queue = self.nodes[node].dest_queues.get(dst)
        return queue[0] if queue else None

    def destinations(self, node: int) -> Iterable[int]:
        return list(self.nodes[node].dest_queues.keys())

    def _ring_occupancy(self) -> np.ndarray:
        """Home-points inside each destination's relay ring, per step (columns 1..i_max)."""
        occupancy = np.zeros((self.n, self.i_max + 1), dtype=np.int64)
        if self.i_max == 0:
            return occupancy
        points = self.homes.points
        rings = [relay_ring(step, self.Z0) for step in range(1, self.i_max + 1)]
        for start in range(0, self.n, RING_OCCUPANCY_CHUNK):
            block = points[start:start + RING_OCCUPANCY_CHUNK]
            distances = torus_distances(block[:, None, :], points[None, :, :], self.side)
            for step, ring in enumerate(rings, start=1):
                occupancy[start:start + len(block), step] = ring.mask(distances).sum(axis=1)
        empty = int((occupancy[:, 1:] == 0).sum())
        if empty:
            logger.warning(f"{empty} destination relay rings hold no home-point; messages routed through them will wait")
        return occupancy

    def _reset_metrics(self):
        n = self.n
        self.m_delivered = np.zeros(n, dtype=np.int64)
        self.m_delay_sum = np.zeros(n, dtype=np.int64)
        self.m_service = {step: [] for step in range(self.i_max + 1)}
        self.m_backlog_trace = []
        self.m_max_queue_trace = []
        self.m_node_max = np.zeros(n, dtype=np.int64)
        self.m_node_sum = np.zeros(n, dtype=np.float64)
        self.m_hops: dict[int, int] = {}
        self.m_step_slots = {step: 0 for step in range(self.i_max + 1)}
        self.m_step_tx = {step: 0 for step in range(self.i_max + 1)}
        self.m_max_step = 0
        self.m_slots = 0
        self.unstable = False

    def _enqueue(self, node: int, msg: Message, slot: int):
        queue = self.nodes[node].queue_for(msg)
        if not queue:
            msg.hol_slot = max(slot, msg.entry_slot)
        queue.append(msg)
        self.backlog[node, msg.step] += 1
        if msg.step > self.m_max_step:
            self.m_max_step = msg.step

    def _dequeue(self, node: int, step: int, msg_id: int, dst: int, slot: int) -> Message:
        state = self.nodes[node]
        queue = state.dest_queues[dst] if step == 0 else state.step_queues[step]
        msg = queue.popleft()
        if msg.id != msg_id or msg.step != step:
            raise ConsistencyError(
                f"Slot {slot}: node {node} head is message {msg.id} at step {msg.step}, "
                f"scheduled {msg_id} at step {step}"
            )
        if queue:
            queue[0].hol_slot = max(slot + 1, queue[0].entry_slot)
        elif step == 0:
            del state.dest_queues[dst]
        self.backlog[node, step] -= 1
        return msg

    def inject(self, src: int, dst: Optional[int] = None) -> Message:
        """Create a message at src for its flow destination (or dst) in the current slot."""
        if dst is None:
            dst = int(self.flow_dst[src])
            step = int(self.flow_steps[src])
        else:
            d = torus_distances(self.homes.points[src], self.homes.points[dst], self.side)
            step = int(min(compute_steps(np.array([d]), self.Z0)[0], self.i_max))
        msg = Message(
            id=self._next_id,
            src=src,
            dst=dst,
            step=step,
            created_slot=self.slot,
            holder=src,
            initial_step=step,
            entry_slot=self.slot,
        )
        self._next_id += 1
        self.total_injected += 1
        self._enqueue(src, msg, self.slot)
        return msg

    def _arrivals(self):
        draws = self.rng_arrivals.random(self.n)
        if self.lam <= 0:
            return
        for src in np.nonzero(draws < self.lam)[0]:
            self.inject(int(src))

    def _deliver(self, msg: Message, measured: bool):
        self.total_delivered += 1
        if self.verify:
            self._check_delivered(msg)
        if self.keep_delivered:
            self.delivered_messages.append(msg)
        if measured:
            self.m_delivered[msg.src] += 1
            self.m_delay_sum[msg.src] += msg.delay
            self.m_hops[msg.hops] = self.m_hops.get(msg.hops, 0) + 1

    def _check_delivered(self, msg: Message):
        steps = [record[0] for record in msg.history]
        if steps != list(range(msg.initial_step, -1, -1)):
            raise ConsistencyError(f"Message {msg.id} visited steps {steps}, expected {msg.initial_step}..0")
        if msg.hops != msg.initial_step + 1:
            raise ConsistencyError(f"Message {msg.id} used {msg.hops} hops from step {msg.initial_step}")
        sojourn = sum(exit_slot - entry + 1 for _, entry, exit_slot in msg.history)
        if sojourn != msg.delay:
            raise ConsistencyError(f"Message {msg.id}: per-step sojourns sum to {sojourn}, delay is {msg.delay}")

    def _check_state(self):
        in_flight = int(self.backlog.sum())
        if self.total_injected != in_flight + self.total_delivered:
            raise ConsistencyError(
                f"Slot {self.slot}: injected {self.total_injected} != in flight {in_flight} "
                f"+ delivered {self.total_delivered}"
            )
        seen = set()
        for state in self.nodes:
            queues = list(state.step_queues.items()) + [(0, q) for q in state.dest_queues.values()]
            for step, queue in queues:
                for msg in queue:
                    if msg.id in seen:
                        raise ConsistencyError(f"Message {msg.id} held twice")
                    if msg.step != step or msg.holder != state.id:
                        raise ConsistencyError(
                            f"Message {msg.id} (step {msg.step}, holder {msg.holder}) "
                            f"queued at node {state.id} step {step}"
                        )
                    seen.add(msg.id)
        if len(seen) != in_flight:
            raise ConsistencyError(f"Backlog counts {in_flight} messages, queues hold {len(seen)}")

    def step_slot(self) -> list[SlotEvent]:
        """
        Advance the network by one slot.

        Returns:
            Transmissions executed in this slot
        """
        t = self.slot
        measured = t >= self.config.warmup_slots

        self.positions = sample_positions(self.homes.points, self.shape, self.rng_mobility)
        self._arrivals()

        plan = self.scheduler.draw(self.rng_schedule)
        world = WorldSnapshot(positions=self.positions, homes=self.homes, Z0=self.Z0, queues=self)
        transmissions = enabled_transmissions(
            world, plan, self.rng_schedule, guard=self.config.guard, verify=self.verify,
        )

        events = []
        for tx in transmissions:
            dst = tx.rx if plan.step == 0 else -1
            msg = self._dequeue(tx.tx, plan.step, tx.msg, dst, t)
            if measured and len(self.m_service[plan.step]) < self.service_sample_cap:
                self.m_service[plan.step].append(t - msg.hol_slot + 1)
            moved = advance(msg, tx.rx, self.homes, self.Z0, t)
            if moved.delivered:
                self._deliver(moved, measured)
            else:
                self._enqueue(tx.rx, moved, t + 1)
            event = SlotEvent(t, plan.step, plan.phase, tx.tx, tx.rx, tx.msg, moved.delivered)
            events.append(event)
            if self.config.trace_events and len(self.events) < self.trace_cap:
                self.events.append(event)

        if measured:
            queue_totals = self.backlog.sum(axis=1)
            self.m_slots += 1
            self.m_step_slots[plan.step] += 1
            self.m_step_tx[plan.step] += len(transmissions)
            self.m_backlog_trace.append(int(queue_totals.sum()))
            top = int(queue_totals.max()) if self.n else 0
            self.m_max_queue_trace.append(top)
            np.maximum(self.m_node_max, queue_totals, out=self.m_node_max)
            self.m_node_sum += queue_totals
            if top > self.queue_cap and not self.unstable:
                self.unstable = True
                logger.warning(f"Slot {t}: queue length {top} exceeds cap {self.queue_cap}; run flagged unstable")

        if self.verify:
            self._check_state()

        self.slot += 1
        return events

    def run(self) -> MetricsReport:
        """Execute warmup plus measured slots and report the measured window."""
        while self.slot < self.config.slots:
            self.step_slot()
        return self.report()

    def report(self) -> MetricsReport:
        slots = self.m_slots
        occupancy = {}
        for step in range(1, self.i_max + 1):
            column = self.ring_occupancy[:, step]
            occupancy[step] = {
                "min": int(column.min()),
                "mean": float(column.mean()),
                "empty_fraction": float((column == 0).mean()),
            }
        return MetricsReport(
            n=self.n,
            measured_slots=slots,
            flow_src=np.arange(self.n, dtype=np.int64),
            flow_dst=self.flow_dst.copy(),
            delivered=self.m_delivered.copy(),
            delay_sum=self.m_delay_sum.copy(),
            service_samples={step: list(samples) for step, samples in self.m_service.items()},
            backlog_trace=np.array(self.m_backlog_trace, dtype=np.int64),
            max_queue_trace=np.array(self.m_max_queue_trace, dtype=np.int64),
            node_max_queue=self.m_node_max.copy(),
            node_mean_queue=self.m_node_sum / slots if slots else np.zeros(self.n),
            ring_occupancy=occupancy,
            hop_histogram=dict(sorted(self.m_hops.items())),
            step_slots=dict(self.m_step_slots),
            step_transmissions=dict(self.m_step_tx),
            injected=self.total_injected,
            in_flight=int(self.backlog.sum()),
            max_step_observed=self.m_max_step,
            unstable=self.unstable,
            params=self.config.describe(),
        )


def run(config: SimConfig, **kwargs) -> MetricsReport:
    """
    Run one simulation.

    Args:
        config: Run parameters
        **kwargs: Engine overrides (verify, queue_cap, trace_cap, ...)

    Returns:
        MetricsReport over the measured window
    """
    return Simulator(config, **kwargs).run()


@dataclass(frozen=True)
class StabilityVerdict:
    fraction: float
    lam: float
    stable: bool
    slope: float
    p_value: float
    growth_per_node: float


def classify_trace(trace: np.ndarray, n: int, min_growth: float = STABILITY_MIN_GROWTH) -> tuple[bool, float, float, float]:
    """
    Stable unless the second half of the backlog trace grows linearly.

    Returns:
        (stable, slope, p_value, growth per node over the fitted window)
    """
    half = trace[len(trace) // 2:]
    if len(half) < 3 or np.all(half == half[0]):
        return True, 0.0, 1.0, 0.0
    fit = stats.linregress(np.arange(len(half), dtype=float), half.astype(float))
    growth = fit.slope * len(half) / n
    unstable = fit.slope > 0 and fit.pvalue < STABILITY_P_VALUE and growth > min_growth
    return not unstable, float(fit.slope), float(fit.pvalue), float(growth)


def stability_probe(
    config: SimConfig,
    load_fractions: list[float],
    min_growth: float = STABILITY_MIN_GROWTH,
    **kwargs,
) -> list[StabilityVerdict]:
    """
    Classify each offered load as stable or unstable on the same seed.

    Each fraction f runs with lambda = f times the per-node throughput bound
    (scaled by config.throughput_constant).
    """
    verdicts = []
    for fraction in load_fractions:
        if not (0 <= fraction <= 2):
            raise ValueError(f"Load fraction must lie in [0, 2], got {fraction}")
        trial = config.model_copy(update={"lam": None, "load_fraction": fraction})
        lam = trial.arrival_rate
        if fraction == 0:
            verdicts.append(StabilityVerdict(fraction, 0.0, True, 0.0, 1.0, 0.0))
            continue
        report = run(trial, **kwargs)
        stable, slope, p_value, growth = classify_trace(report.backlog_trace, config.n, min_growth)
        if report.unstable:
            stable = False
        logger.info(f"Stability check f={fraction}: lambda={lam:.6g} stable={stable} slope={slope:.4g}")
        verdicts.append(StabilityVerdict(fraction, lam, stable, slope, p_value, growth))
    return verdicts
