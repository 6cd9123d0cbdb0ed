import math

import numpy as np
import pytest

from src.services import analysis
from src.services.analysis import (
    KingmanBound,
    Order,
    Regime,
    classify_regime,
    delay_bound,
    hybrid_last_step,
    kingman_delay,
    pair_meeting_probability,
    power_exponent,
    proposition1_limits,
    service_probabilities,
    slow_mobility_summary,
    slow_preference_interval,
    throughput_bound,
    tradeoff_curve,
    z0_constraint,
    z0_floor_exponent,
    z0_floor_label,
)

N = 2 ** 20


@pytest.mark.parametrize(
    "delta, expected",
    [(0.0, Regime.DELTA_LE_1), (1.0, Regime.DELTA_LE_1), (1.5, Regime.DELTA_IN_1_2),
     (2.0, Regime.DELTA_EQ_2), (2.5, Regime.DELTA_IN_2_3), (3.0, Regime.DELTA_GE_3)],
)
def test_classify_regime(delta, expected) -> None:
    assert classify_regime(delta) is expected


def test_classify_regime_variants() -> None:
    assert classify_regime(1.9999999) is Regime.DELTA_IN_1_2
    assert classify_regime(4.0, scheme=analysis.ALTERNATIVE) is Regime.ALTERNATIVE_STATIC
    assert classify_regime(0.5, mobility="slow") is Regime.SLOW_DEGENERATE
    with pytest.raises(ValueError):
        classify_regime(-0.1)


def test_order_algebra() -> None:
    product = Order(0.5) * Order(0.2, 1.0)
    assert (product.n_exp, product.log_exp) == pytest.approx((0.7, 1.0))
    assert (Order(1.0, kind="upper") ** -1).kind == "lower"
    assert (Order(1.0) * Order(0.5, kind="lower")).kind == "lower"
    with pytest.raises(ValueError):
        Order(1.0, kind="upper") * Order(1.0, kind="lower")
    assert Order(1.0, 1.0).evaluate(math.e ** 2) == pytest.approx(2.0 * math.e ** 2)


def test_z0_constraint() -> None:
    assert z0_constraint(0.5, 2 ** 18) == pytest.approx(8.0)
    assert z0_constraint(1.5, N) == pytest.approx(N ** 0.1)
    assert z0_constraint(2.0, math.exp(16)) == pytest.approx(4.0)
    assert z0_floor_exponent(1.5) == pytest.approx(0.1)
    assert z0_floor_exponent(2.5) is None


def test_z0_floor_labels() -> None:
    assert z0_floor_label(0.5) == "n^(1/6)"
    assert z0_floor_label(1.5) == "n^(0.1)"
    assert z0_floor_label(3.0) == "sqrt(log n)"


def test_z0_constraint_rejects_small_network() -> None:
    with pytest.raises(ValueError):
        z0_constraint(1.0, 2)


def test_throughput_orders() -> None:
    assert throughput_bound(1.5, N, N ** 0.3, beta=0.3).order.n_exp == pytest.approx(0.9)
    assert throughput_bound(3.0, N, 4.0).order.n_exp == pytest.approx(0.5)
    assert throughput_bound(0.0, 2 ** 18, 8.0, beta=1 / 6).order.n_exp == pytest.approx(2 / 3)


def test_throughput_log_rows() -> None:
    floor = math.sqrt(math.log(N))
    at_floor = throughput_bound(2.0, N, floor).order
    assert (at_floor.n_exp, at_floor.log_exp) == pytest.approx((1.0, -2.0))
    at_half = throughput_bound(2.0, N, math.sqrt(N)).order
    assert (at_half.n_exp, at_half.log_exp) == pytest.approx((1.0, -1.0))


def test_throughput_value_sums_areas() -> None:
    # areas 4, 2, 1 at n=64, Z0=2
    assert throughput_bound(0.0, 64, 2.0).value == pytest.approx(64 / 7)


def test_delay_orders() -> None:
    assert delay_bound(1.5, N, N ** 0.1, beta=0.1).order.n_exp == pytest.approx(0.4)
    assert delay_bound(0.0, 2 ** 18, 8.0, beta=1 / 6).order.n_exp == pytest.approx(2 / 3)
    steep = delay_bound(3.0, N, math.sqrt(math.log(N))).order
    assert (steep.n_exp, steep.log_exp) == pytest.approx((0.5, 1.0))
    assert steep.kind == "upper"


def test_delay_value_sums_service_times() -> None:
    steps = range(analysis.i_max(N, 8.0) + 1)
    expected = math.fsum(1.0 / service_probabilities(i, 1.5, N, 8.0).p_T for i in steps)
    assert delay_bound(1.5, N, 8.0).value == pytest.approx(expected)


def test_service_probabilities_match_delay_order() -> None:
    probs = service_probabilities(0, 0.0, 2 ** 18, 8.0, beta=1 / 6)
    assert probs.p_T_order.n_exp == pytest.approx(-2 / 3)
    assert probs.p_T == pytest.approx(probs.p_s * probs.p_alpha * probs.p_beta)
    assert 0 < probs.p_T <= 1


def test_service_probabilities_step_range() -> None:
    with pytest.raises(ValueError):
        service_probabilities(99, 1.0, N, 8.0)


def test_kingman_delay() -> None:
    assert kingman_delay(KingmanBound(0.0, 0.0, 0.3, 10.0)) == pytest.approx(10.0)
    assert kingman_delay(KingmanBound(1.0, 99.0, 0.5, 10.0)) == pytest.approx(10.0)
    assert kingman_delay(KingmanBound(1.0, 99.0, 0.999, 10.0)) == pytest.approx(5000.0)


def test_kingman_rejects_unstable_queue() -> None:
    with pytest.raises(ValueError):
        KingmanBound(1.0, 1.0, 1.0, 10.0)


def test_proposition1_limits() -> None:
    A0 = 16.0
    limits = proposition1_limits(Z=10.0, R=math.sqrt(2 * A0), meet_prob=1e-3, n=4096)
    assert limits.throughput_cap == pytest.approx(4096 / (2 * A0))
    assert limits.delay_floor == pytest.approx(1000.0)
    with pytest.raises(ValueError):
        proposition1_limits(Z=10.0, R=1.0, meet_prob=0.0, n=4096)


@pytest.mark.parametrize(
    "delta, expected",
    [(0.5, -1.0), (1.0, -1.0), (1.5, -0.6), (2.0, 0.0), (2.5, -0.5), (3.0, -1.0), (4.0, -1.0)],
)
def test_power_exponent(delta, expected) -> None:
    assert power_exponent(delta) == pytest.approx(expected)


def test_tradeoff_curve() -> None:
    corner = tradeoff_curve(0.5, 0.5)
    assert (corner.throughput_exponent, corner.delay_exponent) == pytest.approx((0.0, 1.0))
    law = tradeoff_curve(1.5, 0.1)
    assert (law.throughput_exponent, law.delay_exponent) == pytest.approx((-0.2, 0.4))
    assert law.power_exponent == pytest.approx(power_exponent(1.5))
    assert tradeoff_curve(2.5).power_exponent == pytest.approx(-0.5)


def test_tradeoff_power_is_flat_in_beta_for_uniform_mobility() -> None:
    powers = [tradeoff_curve(0.5, beta).power_exponent for beta in np.linspace(1 / 6, 0.5, 5)]
    assert powers == pytest.approx([-1.0] * 5)


def test_tradeoff_rejects_beta_outside_range() -> None:
    with pytest.raises(ValueError, match="floor"):
        tradeoff_curve(0.5, 0.1)
    with pytest.raises(ValueError):
        tradeoff_curve(1.5, 0.6)


def test_alternative_scheme_above_three() -> None:
    assert analysis.bisection_power(4.0) == pytest.approx(-2.0)
    assert analysis.prefers_alternative(4.0)
    assert not analysis.prefers_alternative(3.0)
    assert analysis.fast_scaling_law(4.0).scheme == analysis.ALTERNATIVE
    assert analysis.fast_scaling_law(4.0).power_exponent == pytest.approx(-1.0)


def test_meeting_probability_scaling() -> None:
    near = pair_meeting_probability(8.0, 1.0, 3.0, 1e4)
    far = pair_meeting_probability(16.0, 1.0, 3.0, 1e4)
    assert far.value / near.value == pytest.approx(2.0 ** -3)
    assert pair_meeting_probability(8.0, 2.0, 0.5, 1024).value == pytest.approx(2.0 / 1024)


def test_meeting_probability_premise() -> None:
    with pytest.raises(ValueError):
        pair_meeting_probability(4.0, 1.0, 1.0, 1024)


def test_slow_preference_interval() -> None:
    low, high = slow_preference_interval()
    assert low == pytest.approx(1.6)
    assert high == pytest.approx(2.5)


def test_slow_mobility_summary() -> None:
    at_two = slow_mobility_summary(2.0)
    assert at_two.preferred_scheme == analysis.BISECTION
    assert at_two.slow_power == pytest.approx(0.0)
    assert not at_two.hybrid_gain
    steep = slow_mobility_summary(3.0)
    assert steep.preferred_scheme == analysis.DEGENERATE
    assert steep.slow_power == pytest.approx(-0.5)


def test_hybrid_last_step_brings_no_gain() -> None:
    n, Z0, A0 = 2.0 ** 20, 8.0, 16.0
    base = hybrid_last_step(1.5, n, Z0, A0, A0)
    wide = hybrid_last_step(1.5, n, Z0, A0, 4 * A0)
    assert wide["p_alpha_beta"] == pytest.approx(base["p_alpha_beta"])
    assert wide["expected_transmissions"] == pytest.approx(n / A0)


def test_hybrid_last_step_rejects_bad_input() -> None:
    with pytest.raises(ValueError):
        hybrid_last_step(1.0, 1024, 4.0, 8.0, 4.0)
    with pytest.raises(ValueError):
        hybrid_last_step(2.5, 1024, 4.0, 8.0, 16.0)


def test_fast_power_curve() -> None:
    frame = analysis.fast_power_curve([1.0, 1.5, 2.0, 2.5, 3.0, 4.0])
    assert list(frame.columns) == analysis.CURVE_COLUMNS
    assert list(frame["power_exp"]) == pytest.approx([-1.0, -0.6, 0.0, -0.5, -1.0, -1.0])
    assert frame["scheme"].iloc[-1] == analysis.ALTERNATIVE
    assert np.isnan(frame["beta"].iloc[2])


def test_tradeoff_lines_include_references() -> None:
    frame = analysis.tradeoff_lines([0.5, 2.0], np.linspace(0.0, 0.5, 11))
    refs = frame[frame["scheme"].str.startswith("reference")]
    assert len(refs) == 22
    curve = frame[(frame["delta"] == 0.5)]
    assert curve["beta"].min() >= 1 / 6
    assert list(curve["power_exp"]) == pytest.approx([-1.0] * len(curve))


def test_slow_power_curve() -> None:
    frame = analysis.slow_power_curve([1.0, 2.0, 3.0])
    assert list(frame["power_exp"]) == pytest.approx([-0.5, 0.0, -0.5])
    assert list(frame["scheme"]) == [analysis.DEGENERATE, analysis.BISECTION, analysis.DEGENERATE]
