import numpy as np
import pytest

from src.services.geometry import TorusGeometry
from src.services.mobility import HomePoints
from src.services.routing import (
    Message,
    advance,
    compute_step,
    compute_steps,
    is_eligible_relay,
    relay_ring,
    union_tx_ring,
)

Z0 = 2.0


@pytest.fixture
def homes() -> HomePoints:
    # node 0: source, node 1: relay 5 from the destination, node 2: destination,
    # node 3: relay 1.2 from the destination
    points = np.array([[40.0, 10.0], [15.0, 10.0], [10.0, 10.0], [11.2, 10.0]])
    return HomePoints(points=points, geometry=TorusGeometry(side=64.0))


def message(step: int, dst: int = 2) -> Message:
    return Message(id=1, src=0, dst=dst, step=step, created_slot=0, holder=0, initial_step=step)


@pytest.mark.parametrize(
    "dH, expected",
    [(5 * Z0, 3), (Z0, 0), (1.5 * Z0, 1), (0.0, 0), (2 * Z0, 1), (4 * Z0, 2), (4.0001 * Z0, 3)],
)
def test_compute_step(dH, expected) -> None:
    assert compute_step(dH, Z0) == expected


def test_compute_steps_matches_scalar(rng) -> None:
    distances = np.concatenate([rng.random(2000) * 100.0, Z0 * 2.0 ** np.arange(8)])
    expected = [compute_step(float(d), Z0) for d in distances]
    np.testing.assert_array_equal(compute_steps(distances, Z0), expected)


def test_compute_step_rejects_bad_input() -> None:
    with pytest.raises(ValueError):
        compute_step(-1.0, Z0)
    with pytest.raises(ValueError):
        compute_step(1.0, 0.0)


@pytest.mark.parametrize(
    "step, bounds",
    [(3, (2 * Z0, 3 * Z0)), (1, (Z0 / 2, 3 * Z0 / 4)), (2, (Z0, 1.5 * Z0))],
)
def test_relay_ring(step, bounds) -> None:
    ring = relay_ring(step, Z0)
    assert (ring.inner, ring.outer) == pytest.approx(bounds)


def test_relay_ring_is_strict() -> None:
    ring = relay_ring(3, Z0)
    assert ring.contains_distance(2.5 * Z0)
    assert not ring.contains_distance(3.5 * Z0)
    assert not ring.contains_distance(2 * Z0)
    assert not ring.contains_distance(3 * Z0)


def test_relay_ring_needs_positive_step() -> None:
    with pytest.raises(ValueError):
        relay_ring(0, Z0)


def test_union_ring() -> None:
    ring = union_tx_ring(1, 8.0)
    assert (ring.inner, ring.outer) == pytest.approx((2.0, 22.0))
    ring = union_tx_ring(3, 1.0)
    assert (ring.inner, ring.outer) == pytest.approx((1.0, 11.0))
    assert ring.contains_distance(11.0)


def test_ring_lowers_step_by_one() -> None:
    for step in range(1, 8):
        ring = relay_ring(step, Z0)
        inside = np.linspace(ring.inner, ring.outer, 102)[1:-1]
        assert set(compute_steps(inside, Z0)) == {step - 1}


def test_eligible_relay(homes) -> None:
    assert is_eligible_relay(1, message(3), homes, Z0)
    assert not is_eligible_relay(3, message(3), homes, Z0)
    assert is_eligible_relay(2, message(0), homes, Z0)
    assert not is_eligible_relay(1, message(0), homes, Z0)


def test_advance_moves_one_step_down(homes) -> None:
    moved = advance(message(3), 1, homes, Z0, slot=4)
    assert moved.step == 2
    assert moved.holder == 1
    assert moved.hops == 1
    assert moved.entry_slot == 5
    assert not moved.delivered
    assert compute_step(5.0, Z0) == moved.step


def test_advance_from_step_one_reaches_step_zero(homes) -> None:
    moved = advance(message(1), 3, homes, Z0, slot=0)
    assert moved.step == 0
    assert compute_step(1.2, Z0) == 0


def test_advance_delivers_at_step_zero(homes) -> None:
    msg = message(0)
    delivered = advance(msg, 2, homes, Z0, slot=9)
    assert delivered.delivered_slot == 9
    assert delivered.hops == delivered.initial_step + 1
    assert delivered.delay == 10
    assert delivered.history == ((0, 0, 9),)


def test_advance_rejects_ineligible_receiver(homes) -> None:
    with pytest.raises(ValueError):
        advance(message(3), 3, homes, Z0, slot=0)


def test_advance_rejects_delivered_message(homes) -> None:
    delivered = advance(message(0), 2, homes, Z0, slot=1)
    with pytest.raises(ValueError):
        advance(delivered, 2, homes, Z0, slot=2)
