import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)


@dataclass
class MetricsReport:
    """
    Measurements over the measured window of one run (or a merge of runs).

    Arrays indexed by flow use the source node id; flows and nodes coincide
    under permutation traffic.
    """
    n: int
    measured_slots: int
    flow_src: np.ndarray
    flow_dst: np.ndarray
    delivered: np.ndarray
    delay_sum: np.ndarray
    service_samples: dict[int, list[int]]
    backlog_trace: np.ndarray
    max_queue_trace: np.ndarray
    node_max_queue: np.ndarray
    node_mean_queue: np.ndarray
    ring_occupancy: dict[int, dict[str, float]]
    hop_histogram: dict[int, int]
    step_slots: dict[int, int]
    step_transmissions: dict[int, int]
    injected: int = 0
    in_flight: int = 0
    max_step_observed: int = 0
    unstable: bool = False
    runs: int = 1
    params: dict = field(default_factory=dict)

    @property
    def total_delivered(self) -> int:
        return int(self.delivered.sum())

    @property
    def throughput(self) -> float:
        """Delivered messages per flow per measured slot."""
        if self.measured_slots == 0:
            return 0.0
        return self.total_delivered / (len(self.delivered) * self.measured_slots)

    @property
    def mean_delay(self) -> Optional[float]:
        """Mean delay in slots; None when nothing was delivered."""
        total = self.total_delivered
        if total == 0:
            return None
        return float(self.delay_sum.sum()) / total

    def mean_service_time(self, step: int) -> Optional[float]:
        samples = self.service_samples.get(step) or []
        if not samples:
            return None
        return float(np.mean(samples))

    def merge(self, other: "MetricsReport") -> "MetricsReport":
        """
        Combine two reports of the same network size.

        Counters add, per-flow arrays add elementwise, samples and traces
        concatenate, maxima take the maximum. Associative.
        """
        if other.n != self.n or len(other.delivered) != len(self.delivered):
            raise ValueError(f"Cannot merge reports for n={self.n} and n={other.n}")

        def add_counts(a: dict, b: dict) -> dict:
            keys = sorted(set(a) | set(b))
            return {k: a.get(k, 0) + b.get(k, 0) for k in keys}

        samples = {
            step: list(self.service_samples.get(step, [])) + list(other.service_samples.get(step, []))
            for step in sorted(set(self.service_samples) | set(other.service_samples))
        }
        slots = self.measured_slots + other.measured_slots
        mean_queue = (
            (self.node_mean_queue * self.measured_slots + other.node_mean_queue * other.measured_slots) / slots
            if slots else self.node_mean_queue
        )
        return MetricsReport(
            n=self.n,
            measured_slots=slots,
            flow_src=self.flow_src,
            flow_dst=self.flow_dst,
            delivered=self.delivered + other.delivered,
            delay_sum=self.delay_sum + other.delay_sum,
            service_samples=samples,
            backlog_trace=np.concatenate([self.backlog_trace, other.backlog_trace]),
            max_queue_trace=np.concatenate([self.max_queue_trace, other.max_queue_trace]),
            node_max_queue=np.maximum(self.node_max_queue, other.node_max_queue),
            node_mean_queue=mean_queue,
            ring_occupancy=self.ring_occupancy,
            hop_histogram=add_counts(self.hop_histogram, other.hop_histogram),
            step_slots=add_counts(self.step_slots, other.step_slots),
            step_transmissions=add_counts(self.step_transmissions, other.step_transmissions),
            injected=self.injected + other.injected,
            in_flight=self.in_flight + other.in_flight,
            max_step_observed=max(self.max_step_observed, other.max_step_observed),
            unstable=self.unstable or other.unstable,
            runs=self.runs + other.runs,
            params=self.params,
        )

    def summary(self) -> dict:
        return {
            "n": self.n,
            "measured_slots": self.measured_slots,
            "delivered": self.total_delivered,
            "throughput": self.throughput,
            "mean_delay": self.mean_delay,
            "injected": self.injected,
            "in_flight": self.in_flight,
            "max_step_observed": self.max_step_observed,
            "max_queue": int(self.node_max_queue.max()) if len(self.node_max_queue) else 0,
            "unstable": self.unstable,
            "runs": self.runs,
        }

    def to_dict(self) -> dict:
        """JSON-ready structure; keys are strings so the output sorts deterministically."""
        return {
            "params": self.params,
            "summary": self.summary(),
            "flows": {
                "src": self.flow_src.tolist(),
                "dst": self.flow_dst.tolist(),
                "delivered": self.delivered.tolist(),
                "delay_sum": self.delay_sum.tolist(),
            },
            "service_time": {
                str(step): {
                    "count": len(samples),
                    "mean": float(np.mean(samples)) if samples else None,
                    "histogram": {str(k): int(v) for k, v in zip(*np.unique(samples, return_counts=True))}
                    if samples else {},
                }
                for step, samples in self.service_samples.items()
            },
            "queues": {
                "node_max": self.node_max_queue.tolist(),
                "node_mean": [round(float(v), 12) for v in self.node_mean_queue],
                "backlog_trace_last": int(self.backlog_trace[-1]) if len(self.backlog_trace) else 0,
            },
            "ring_occupancy": {str(k): v for k, v in self.ring_occupancy.items()},
            "hop_histogram": {str(k): v for k, v in self.hop_histogram.items()},
            "step_slots": {str(k): v for k, v in self.step_slots.items()},
            "step_transmissions": {str(k): v for k, v in self.step_transmissions.items()},
        }

    def to_frame(self) -> pd.DataFrame:
        """One row per flow."""
        slots = max(self.measured_slots, 1)
        delivered = self.delivered
        with np.errstate(invalid="ignore", divide="ignore"):
            mean_delay = np.where(delivered > 0, self.delay_sum / np.maximum(delivered, 1), np.nan)
        return pd.DataFrame({
            "flow": np.arange(len(delivered)),
            "src": self.flow_src,
            "dst": self.flow_dst,
            "delivered": delivered,
            "delay_sum": self.delay_sum,
            "mean_delay": mean_delay,
            "throughput": delivered / slots,
            "max_queue": self.node_max_queue[self.flow_src],
            "mean_queue": self.node_mean_queue[self.flow_src],
        })
