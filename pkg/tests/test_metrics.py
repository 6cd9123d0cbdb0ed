import numpy as np
import pytest

from src.services.metrics import MetricsReport


def report(delivered, delay_sum, slots: int = 10_000, **kwargs) -> MetricsReport:
    flows = len(delivered)
    fields = dict(
        n=flows,
        measured_slots=slots,
        flow_src=np.arange(flows),
        flow_dst=np.roll(np.arange(flows), 1),
        delivered=np.array(delivered, dtype=np.int64),
        delay_sum=np.array(delay_sum, dtype=np.int64),
        service_samples={0: [1, 2, 3]},
        backlog_trace=np.array([3, 4, 5]),
        max_queue_trace=np.array([1, 2, 2]),
        node_max_queue=np.full(flows, 2),
        node_mean_queue=np.full(flows, 1.0),
        ring_occupancy={},
        hop_histogram={2: int(sum(delivered))},
        step_slots={0: slots},
        step_transmissions={0: 10},
    )
    fields.update(kwargs)
    return MetricsReport(**fields)


def test_throughput_per_flow() -> None:
    assert report([500], [2500]).throughput == pytest.approx(0.05)


def test_mean_delay() -> None:
    assert report([500], [2500]).mean_delay == pytest.approx(5.0)


def test_no_deliveries() -> None:
    empty = report([0, 0], [0, 0])
    assert empty.throughput == 0.0
    assert empty.mean_delay is None
    assert empty.summary()["mean_delay"] is None


def test_mean_service_time() -> None:
    r = report([1], [1])
    assert r.mean_service_time(0) == pytest.approx(2.0)
    assert r.mean_service_time(3) is None


def test_merge_adds_counters() -> None:
    a = report([10, 0], [50, 0], slots=100)
    b = report([0, 30], [0, 60], slots=300, node_max_queue=np.array([1, 7]), unstable=True)
    merged = a.merge(b)
    assert merged.measured_slots == 400
    np.testing.assert_array_equal(merged.delivered, [10, 30])
    assert merged.mean_delay == pytest.approx(110 / 40)
    np.testing.assert_array_equal(merged.node_max_queue, [2, 7])
    assert merged.service_samples[0] == [1, 2, 3, 1, 2, 3]
    assert merged.hop_histogram == {2: 40}
    assert merged.unstable
    assert merged.runs == 2


def test_merge_is_associative() -> None:
    a, b, c = report([1, 2], [3, 4], slots=10), report([5, 6], [7, 8], slots=20), report([9, 1], [2, 3], slots=30)
    left = a.merge(b).merge(c)
    right = a.merge(b.merge(c))
    assert left.summary() == right.summary()
    np.testing.assert_allclose(left.node_mean_queue, right.node_mean_queue)


def test_merge_rejects_other_network_size() -> None:
    with pytest.raises(ValueError):
        report([1, 2], [1, 2]).merge(report([1], [1]))


def test_frame_has_one_row_per_flow() -> None:
    frame = report([4, 0], [8, 0], slots=100).to_frame()
    assert list(frame["flow"]) == [0, 1]
    assert frame.loc[0, "mean_delay"] == pytest.approx(2.0)
    assert np.isnan(frame.loc[1, "mean_delay"])
    assert frame.loc[0, "throughput"] == pytest.approx(0.04)
