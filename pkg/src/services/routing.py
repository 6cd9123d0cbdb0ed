import math
import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from src.services.geometry import TorusPoint, torus_distance
from src.services.mobility import HomePoints
from src.utils.constants import RING_GAMMA, UNION_RING_INNER, UNION_RING_OUTER

logger = logging.getLogger(__name__)


@dataclass(slots=True)
class Message:
    """
    A single-copy message moving through the bisection steps.

    history holds one (step, entry_slot, exit_slot) record per transmission,
    in order; the message becomes eligible at entry_slot and leaves its
    queue at exit_slot.
    """
    id: int
    src: int
    dst: int
    step: int
    created_slot: int
    holder: int
    initial_step: int
    hops: int = 0
    delivered_slot: Optional[int] = None
    entry_slot: int = 0
    hol_slot: Optional[int] = None
    history: tuple = field(default_factory=tuple)

    @property
    def delivered(self) -> bool:
        return self.delivered_slot is not None

    @property
    def delay(self) -> Optional[int]:
        """Slots from source departure to delivery, both slots counted."""
        if self.delivered_slot is None:
            return None
        return self.delivered_slot - self.created_slot + 1


@dataclass(frozen=True)
class RelayRing:
    """Annulus of home-distances around center; strict unless inclusive."""
    inner: float
    outer: float
    center: Optional[TorusPoint] = None
    inclusive: bool = False

    def __post_init__(self):
        if not (0 < self.inner < self.outer):
            raise ValueError(f"Ring bounds must satisfy 0 < inner < outer, got ({self.inner}, {self.outer})")

    def contains_distance(self, d: float) -> bool:
        if self.inclusive:
            return self.inner <= d <= self.outer
        return self.inner < d < self.outer

    def mask(self, distances: np.ndarray) -> np.ndarray:
        if self.inclusive:
            return (distances >= self.inner) & (distances <= self.outer)
        return (distances > self.inner) & (distances < self.outer)


def step_scale(i: int, Z0: float) -> float:
    """Z_i = 2^i Z0."""
    return math.ldexp(Z0, i)


def compute_step(dH: float, Z0: float) -> int:
    """
    Routing step for a home-distance dH.

    Returns 0 when dH <= Z0, otherwise the i >= 1 with 2^(i-1) Z0 < dH <= 2^i Z0.
    A distance exactly on 2^i Z0 belongs to step i.
    """
    if dH < 0 or Z0 <= 0:
        raise ValueError(f"Need dH >= 0 and Z0 > 0, got dH={dH}, Z0={Z0}")
    ratio = dH / Z0
    if ratio <= 1.0:
        return 0
    i = max(1, math.ceil(math.log2(ratio)))
    while math.ldexp(1.0, i) < ratio:
        i += 1
    while i > 1 and math.ldexp(1.0, i - 1) >= ratio:
        i -= 1
    return i


def compute_steps(dH: np.ndarray, Z0: float) -> np.ndarray:
    """Vectorized compute_step."""
    ratio = np.asarray(dH, dtype=float) / Z0
    steps = np.zeros(ratio.shape, dtype=np.int64)
    far = ratio > 1.0
    if np.any(far):
        r = ratio[far]
        i = np.maximum(1, np.ceil(np.log2(r)).astype(np.int64))
        i = i + (np.exp2(i) < r)
        i = i - ((i > 1) & (np.exp2(i - 1) >= r))
        steps[far] = i
    return steps


def relay_ring(i_star: int, Z0: float, H_d: Optional[TorusPoint] = None) -> RelayRing:
    """
    Home-distance band around the destination's home-point for the next relay.

    Args:
        i_star: Current step (>= 1)
        Z0: Base distance
        H_d: Destination home-point

    Returns:
        RelayRing (2^(i-2) Z0, (3/4) 2^(i-1) Z0), strict on both sides
    """
    if i_star < 1:
        raise ValueError(f"Relay ring needs step >= 1, got {i_star} (step 0 targets the destination)")
    return RelayRing(
        inner=math.ldexp(Z0, i_star - 2),
        outer=RING_GAMMA * math.ldexp(Z0, i_star - 1),
        center=H_d,
    )


def union_tx_ring(i: int, Z0: float, center: Optional[TorusPoint] = None) -> RelayRing:
    """Band [Z_i/8, 11 Z_i/8] around a transmitter containing every relay ring it may use at step i."""
    if i < 1:
        raise ValueError(f"Union ring needs step >= 1, got {i}")
    z_i = step_scale(i, Z0)
    return RelayRing(
        inner=UNION_RING_INNER * z_i,
        outer=UNION_RING_OUTER * z_i,
        center=center,
        inclusive=True,
    )


def is_eligible_relay(b: int, msg: Message, homes: HomePoints, Z0: float) -> bool:
    """
    Whether node b may receive msg in its current step.

    Step >= 1: b's home-point lies strictly inside the relay ring around the
    destination's home-point. Step 0: b is the destination.
    """
    if msg.step < 0:
        raise ValueError(f"Message {msg.id} has negative step {msg.step}")
    if msg.step == 0:
        return b == msg.dst
    ring = relay_ring(msg.step, Z0, homes[msg.dst])
    d = torus_distance(homes[b], ring.center, homes.geometry)
    return ring.contains_distance(d)


def advance(msg: Message, relay_or_dst: int, homes: HomePoints, Z0: float, slot: int) -> Message:
    """
    Forward msg one hop during the given slot.

    Args:
        msg: Message being transmitted
        relay_or_dst: Receiving node
        homes: Home-points of all nodes
        Z0: Base distance
        slot: Current slot index

    Returns:
        Updated copy of the message: one step lower, or delivered at step 0
    """
    if msg.delivered:
        raise ValueError(f"Message {msg.id} already delivered at slot {msg.delivered_slot}")
    if not is_eligible_relay(relay_or_dst, msg, homes, Z0):
        raise ValueError(f"Node {relay_or_dst} is not an eligible receiver for message {msg.id} at step {msg.step}")

    record = msg.history + ((msg.step, msg.entry_slot, slot),)
    if msg.step == 0:
        return replace(
            msg,
            holder=relay_or_dst,
            hops=msg.hops + 1,
            delivered_slot=slot,
            hol_slot=None,
            history=record,
        )

    return replace(
        msg,
        holder=relay_or_dst,
        step=msg.step - 1,
        hops=msg.hops + 1,
        entry_slot=slot + 1,
        hol_slot=None,
        history=record,
    )
