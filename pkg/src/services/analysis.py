import math
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
import pandas as pd
from scipy import optimize

from src.services.scheduling import AreaConstants, i_max, squarelet_area

logger = logging.getLogger(__name__)

BISECTION = "bisection"
ALTERNATIVE = "alternative_static"
DEGENERATE = "slow_degenerate"

# Preference interval endpoints are searched inside these brackets
_SLOW_LOW_BRACKET = (1.0 + 1e-9, 2.0 - 1e-9)
_SLOW_HIGH_BRACKET = (2.0 + 1e-9, 3.0)


class Regime(str, Enum):
    DELTA_LE_1 = "delta_le_1"
    DELTA_IN_1_2 = "delta_in_1_2"
    DELTA_EQ_2 = "delta_eq_2"
    DELTA_IN_2_3 = "delta_in_2_3"
    DELTA_GE_3 = "delta_ge_3"
    ALTERNATIVE_STATIC = "alternative_static"
    SLOW_DEGENERATE = "slow_degenerate"


def classify_regime(delta: float, scheme: str = BISECTION, mobility: str = "fast") -> Regime:
    """Regime label; delta == 2 only on exact equality."""
    if delta < 0:
        raise ValueError(f"Decay exponent must be non-negative, got {delta}")
    if mobility == "slow":
        return Regime.SLOW_DEGENERATE
    if scheme == ALTERNATIVE:
        return Regime.ALTERNATIVE_STATIC
    if delta <= 1:
        return Regime.DELTA_LE_1
    if delta < 2:
        return Regime.DELTA_IN_1_2
    if delta == 2:
        return Regime.DELTA_EQ_2
    if delta < 3:
        return Regime.DELTA_IN_2_3
    return Regime.DELTA_GE_3


def _combine_kinds(a: str, b: str) -> str:
    if a == "theta":
        return b
    if b == "theta" or a == b:
        return a
    raise ValueError(f"Cannot combine an {a} bound with a {b} bound")


_FLIP = {"theta": "theta", "upper": "lower", "lower": "upper"}


@dataclass(frozen=True)
class Order:
    """
    Growth order n^a (log n)^b (log log n)^c.

    kind is "theta" for two-sided orders, "upper" for O(.) and "lower" for
    Omega(.) rows.
    """
    n_exp: float
    log_exp: float = 0.0
    loglog_exp: float = 0.0
    kind: str = "theta"

    def __mul__(self, other: "Order") -> "Order":
        return Order(
            self.n_exp + other.n_exp,
            self.log_exp + other.log_exp,
            self.loglog_exp + other.loglog_exp,
            _combine_kinds(self.kind, other.kind),
        )

    def __truediv__(self, other: "Order") -> "Order":
        return self * other.inverse()

    def __pow__(self, k: float) -> "Order":
        kind = self.kind if k >= 0 else _FLIP[self.kind]
        return Order(self.n_exp * k, self.log_exp * k, self.loglog_exp * k, kind)

    def inverse(self) -> "Order":
        return self ** -1

    def as_kind(self, kind: str) -> "Order":
        return Order(self.n_exp, self.log_exp, self.loglog_exp, kind)

    def evaluate(self, n: float, constant: float = 1.0) -> float:
        log_n = math.log(n)
        value = constant * n ** self.n_exp
        if self.log_exp:
            value *= log_n ** self.log_exp
        if self.loglog_exp:
            value *= math.log(log_n) ** self.loglog_exp
        return value


@dataclass(frozen=True)
class Bound:
    """Numeric value with unit constants plus its order in n."""
    value: float
    order: Order


@dataclass(frozen=True)
class ScalingLaw:
    throughput_exponent: float
    delay_exponent: float
    throughput_log: float = 0.0
    delay_log: float = 0.0
    scheme: str = BISECTION

    @property
    def power_exponent(self) -> float:
        return self.throughput_exponent - self.delay_exponent

    @property
    def power_log(self) -> float:
        return self.throughput_log - self.delay_log


@dataclass(frozen=True)
class KingmanBound:
    sigma2_a: float
    sigma2_D: float
    rho: float
    D_S: float

    def __post_init__(self):
        if self.sigma2_a < 0 or self.sigma2_D < 0:
            raise ValueError(f"Variances must be non-negative, got {self.sigma2_a}, {self.sigma2_D}")
        if self.D_S <= 0:
            raise ValueError(f"Mean service time must be positive, got {self.D_S}")
        if not (0 <= self.rho < 1):
            raise ValueError(f"Queue load must lie in [0, 1) for a stable queue, got {self.rho}")


@dataclass(frozen=True)
class ServiceProbabilities:
    p_s: float
    p_alpha: float
    p_beta: float
    p_T: float
    p_s_order: Order
    p_alpha_order: Order
    p_beta_order: Order
    p_T_order: Order


@dataclass(frozen=True)
class Proposition1Limits:
    throughput_cap: float
    delay_floor: float
    distance: float


@dataclass(frozen=True)
class MeetingProbability:
    value: float
    n_exponent: float
    d_exponent: float
    log_d_exponent: float = 0.0
    log_n_exponent: float = 0.0


@dataclass(frozen=True)
class SlowMobilitySummary:
    delta: float
    degenerate: ScalingLaw
    bisection_power: float
    slow_power: float
    preferred_scheme: str
    preference_interval: tuple[float, float]
    hybrid_gain: bool


def _safe_log(x: float) -> float:
    return math.log(max(x, math.e))


def _exponent(x: float, n: float) -> float:
    return math.log(x) / math.log(n)


def z0_constraint(delta: float, n: float) -> float:
    """
    Smallest admissible Z0 (unit constant).

    n^(1/6) for delta < 1, n^((2-delta)/(8-2 delta)) for 1 <= delta < 2,
    sqrt(log n) for delta >= 2.
    """
    if delta < 0:
        raise ValueError(f"Decay exponent must be non-negative, got {delta}")
    if n < 4:
        raise ValueError(f"Need n >= 4, got {n}")
    if delta < 1:
        return n ** (1.0 / 6.0)
    if delta < 2:
        return n ** ((2.0 - delta) / (8.0 - 2.0 * delta))
    return math.sqrt(math.log(n))


def z0_floor_exponent(delta: float) -> Optional[float]:
    """Exponent beta of the Z0 floor, None when the floor is sqrt(log n)."""
    if delta < 1:
        return 1.0 / 6.0
    if delta < 2:
        return (2.0 - delta) / (8.0 - 2.0 * delta)
    return None


def z0_floor_label(delta: float) -> str:
    beta = z0_floor_exponent(delta)
    if beta is None:
        return "sqrt(log n)"
    if delta < 1:
        return "n^(1/6)"
    return f"n^({beta:.6g})"


def _z0_order(delta: float, n: float, Z0: float, beta: Optional[float]) -> Order:
    if beta is not None:
        return Order(beta)
    if delta >= 2 and Z0 <= z0_constraint(2.0, n) * (1.0 + 1e-9):
        return Order(0.0, 0.5)
    return Order(_exponent(Z0, n))


def _areas(delta: float, n: float, Z0: float, constant: float) -> list[float]:
    consts = AreaConstants(c=constant)
    return [squarelet_area(i, delta, n, Z0, consts) for i in range(i_max(n, Z0) + 1)]


def throughput_bound(delta: float, n: float, Z0: float, beta: Optional[float] = None, constant: float = 1.0) -> Bound:
    """
    Aggregate throughput bound n / sum_i A_i.

    Args:
        delta: Decay exponent
        n: Network size
        Z0: Base distance
        beta: Exponent with Z0 = n^beta; by default derived from Z0, and
            Z0 at the sqrt(log n) floor is treated as logarithmic
        constant: Squarelet-area multiplier

    Returns:
        Bound with value and order of the aggregate throughput
    """
    value = n / math.fsum(_areas(delta, n, Z0, constant))
    z0 = _z0_order(delta, n, Z0, beta)
    if delta <= 1:
        order = Order(0.5) * z0
    elif delta < 2:
        order = Order(delta / 2.0) * z0 ** (2.0 - delta)
    elif delta == 2:
        at_half = z0.log_exp == 0 and abs(z0.n_exp - 0.5) < 1e-9
        order = Order(1.0, -1.0) if at_half else Order(1.0, -2.0)
    else:
        order = Order(2.0 - delta / 2.0)
    return Bound(value=value, order=order)


def _area_order(delta: float, z_i: Order) -> Order:
    if delta <= 1:
        return Order(0.5) / z_i
    if delta < 2:
        return Order((2.0 - delta) / 2.0) / z_i ** (2.0 - delta)
    if delta == 2:
        return Order(0.0, 1.0)
    return z_i ** (delta - 2.0)


def _area_sum_order(delta: float, z0: Order) -> Order:
    if delta < 2:
        return _area_order(delta, z0)
    if delta == 2:
        # i_max + 1 steps of area log n; a single step when Z0 ~ sqrt(n)
        single = z0.log_exp == 0 and abs(z0.n_exp - 0.5) < 1e-9
        return Order(0.0, 1.0) if single else Order(0.0, 2.0)
    return Order((delta - 2.0) / 2.0)


def service_probabilities(i: int, delta: float, n: float, Z0: float, beta: Optional[float] = None, constant: float = 1.0) -> ServiceProbabilities:
    """
    Per-slot probabilities that a head-of-line message at step i is forwarded.

    p_s: the slot is assigned to step i. p_alpha: an eligible receiver shares
    the transmitter's squarelet. p_beta: the transmitter's pair is the one
    selected in that squarelet. p_T = p_s * p_alpha * p_beta.

    Args:
        i: Step index (0..i_max)
        delta: Decay exponent
        n: Network size
        Z0: Base distance
        beta: Exponent with Z0 = n^beta (see throughput_bound)
        constant: Squarelet-area multiplier

    Returns:
        ServiceProbabilities with unit-constant values and their orders
    """
    areas = _areas(delta, n, Z0, constant)
    if not (0 <= i < len(areas)):
        raise ValueError(f"Step {i} outside 0..{len(areas) - 1}")
    A = areas[i]
    z_i = math.ldexp(Z0, i)
    gamma = z_i * z_i if i >= 1 else 1.0

    p_s = A / math.fsum(areas)
    if delta <= 1:
        p_alpha = A * gamma / n
    elif delta < 2:
        p_alpha = A * z_i ** (2.0 * (1.0 - delta)) * gamma / n ** (2.0 - delta)
    elif delta == 2:
        p_alpha = A * gamma / (z_i * z_i) * _safe_log(z_i) / math.log(n) ** 2
    else:
        p_alpha = A * gamma * z_i ** (-delta)
    p_alpha = min(1.0, p_alpha)

    if delta < 2:
        p_beta = 1.0
    elif delta == 2:
        p_beta = min(1.0, math.log(n) / (A * _safe_log(A)))
    else:
        p_beta = min(1.0, 1.0 / A)

    z0 = _z0_order(delta, n, Z0, beta)
    # Z_i = 2^i Z0 has the order of Z0 at any fixed step
    zi = z0
    gamma_order = zi ** 2 if i >= 1 else Order(0.0)
    area_order = _area_order(delta, zi)
    p_s_order = area_order / _area_sum_order(delta, z0)
    if delta <= 1:
        alpha_order = area_order * gamma_order / Order(1.0)
    elif delta < 2:
        alpha_order = area_order * zi ** (2.0 * (1.0 - delta)) * gamma_order / Order(2.0 - delta)
    elif delta == 2:
        log_zi = Order(0.0, 0.0, 1.0) if zi.log_exp else Order(0.0, 1.0)
        alpha_order = area_order * gamma_order / zi ** 2 * log_zi / Order(0.0, 2.0)
    else:
        alpha_order = area_order * gamma_order * zi ** (-delta)

    if delta < 2:
        beta_order = Order(0.0)
    elif delta == 2:
        beta_order = (Order(0.0, 1.0) / area_order / Order(0.0, 0.0, 1.0)).as_kind("lower")
    else:
        beta_order = area_order.inverse().as_kind("lower")

    return ServiceProbabilities(
        p_s=p_s,
        p_alpha=p_alpha,
        p_beta=p_beta,
        p_T=p_s * p_alpha * p_beta,
        p_s_order=p_s_order,
        p_alpha_order=alpha_order,
        p_beta_order=beta_order,
        p_T_order=p_s_order * alpha_order * beta_order,
    )


def delay_bound(delta: float, n: float, Z0: float, beta: Optional[float] = None, constant: float = 1.0) -> Bound:
    """
    Source-to-destination service delay D_S = sum_i 1 / p_T,i.

    The order follows the regime rows: Z0 n^(1/2); Z0^delta n^(1 - delta/2);
    O(Z0^2 log^3 n loglog n / log Z0) at delta = 2; O(n^(delta/2 - 1) Z0^2).
    """
    steps = len(_areas(delta, n, Z0, constant))
    value = math.fsum(
        1.0 / service_probabilities(i, delta, n, Z0, beta, constant).p_T for i in range(steps)
    )
    z0 = _z0_order(delta, n, Z0, beta)
    if delta <= 1:
        order = z0 * Order(0.5)
    elif delta < 2:
        order = z0 ** delta * Order(1.0 - delta / 2.0)
    elif delta == 2:
        # log Z0 is beta log n, or (1/2) loglog n at the logarithmic floor
        log_z0 = Order(0.0, 0.0, 1.0) if z0.log_exp else Order(0.0, 1.0)
        order = (z0 ** 2 * Order(0.0, 3.0, 1.0) / log_z0).as_kind("upper")
    else:
        order = (Order(delta / 2.0 - 1.0) * z0 ** 2).as_kind("upper")
    return Bound(value=value, order=order)


def kingman_delay(b: KingmanBound) -> float:
    """D_S * max(1, (sigma2_a + sigma2_D) / (2 D_S^2 (1 - rho)))."""
    if b.rho >= 1:
        raise ValueError(f"Queue load {b.rho} >= 1: queue is unstable")
    return b.D_S * max(1.0, (b.sigma2_a + b.sigma2_D) / (2.0 * b.D_S * b.D_S * (1.0 - b.rho)))


def proposition1_limits(Z: float, R: float, meet_prob: float, n: float) -> Proposition1Limits:
    """
    Optimality limits for any non-replicating scheme delivering over
    home-distance Z with range R: throughput O(n / R^2), delay Omega(1 / Pr{meet}).
    """
    if R <= 0:
        raise ValueError(f"Transmission range must be positive, got {R}")
    if not (0 < meet_prob <= 1):
        raise ValueError(f"Meeting probability must lie in (0, 1], got {meet_prob}")
    return Proposition1Limits(throughput_cap=n / (R * R), delay_floor=1.0 / meet_prob, distance=Z)


def power_exponent(delta: float) -> float:
    """Best exponent of n in lambda / D under fast mobility."""
    if delta < 0:
        raise ValueError(f"Decay exponent must be non-negative, got {delta}")
    if delta == 2:
        return 0.0
    if 1 < delta < 2:
        return -3.0 * (2.0 - delta) / (4.0 - delta)
    if 2 < delta < 3:
        return 2.0 - delta
    return -1.0


def bisection_power(delta: float) -> float:
    """Power exponent of the bisection scheme alone (no alternative scheme above delta = 3)."""
    if delta > 2:
        return 2.0 - delta
    return power_exponent(delta)


def _beta_range(delta: float) -> tuple[float, float]:
    floor = z0_floor_exponent(delta)
    return (floor if floor is not None else 0.0), 0.5


def tradeoff_curve(delta: float, beta: Optional[float] = None) -> ScalingLaw:
    """
    Throughput and delay exponents for Z0 = n^beta.

    delta <= 1: (beta - 1/2, beta + 1/2). 1 < delta < 2:
    (delta/2 - 1 + beta (2 - delta), 1 - delta (1/2 - beta)). delta >= 2 has
    no trade-off and returns the point at Z0 = sqrt(log n); beta is ignored.
    """
    if delta < 0:
        raise ValueError(f"Decay exponent must be non-negative, got {delta}")
    if delta == 2:
        return ScalingLaw(0.0, 0.0, throughput_log=-2.0, delay_log=4.0)
    if delta > 2:
        return ScalingLaw(1.0 - delta / 2.0, delta / 2.0 - 1.0, delay_log=1.0)

    low, high = _beta_range(delta)
    if beta is None:
        beta = low
    if beta < low - 1e-12:
        raise ValueError(f"beta={beta} below the floor {low:.6g} for delta={delta} (Z0 >= {z0_floor_label(delta)})")
    if beta > high + 1e-12:
        raise ValueError(f"beta={beta} above 1/2: Z0 cannot exceed sqrt(n)")

    if delta <= 1:
        return ScalingLaw(beta - 0.5, beta + 0.5)
    return ScalingLaw(delta / 2.0 - 1.0 + beta * (2.0 - delta), 1.0 - delta * (0.5 - beta))


def alternative_scheme_law() -> ScalingLaw:
    """Static-like scheme for delta > 2: lambda = 1/sqrt(n log n), D = sqrt(n / log n)."""
    return ScalingLaw(-0.5, 0.5, throughput_log=-0.5, delay_log=-0.5, scheme=ALTERNATIVE)


def prefers_alternative(delta: float) -> bool:
    return delta > 3


def fast_scaling_law(delta: float) -> ScalingLaw:
    """Best law under fast mobility: bisection at its smallest Z0, or the alternative scheme above delta = 3."""
    if prefers_alternative(delta):
        return alternative_scheme_law()
    return tradeoff_curve(delta)


def slow_power(delta: float) -> float:
    """Slow mobility: the better of bisection and the degenerate single-step point (power -1/2)."""
    return max(bisection_power(delta), degenerate_law().power_exponent)


def degenerate_law() -> ScalingLaw:
    return ScalingLaw(-0.5, 0.0, throughput_log=-0.5, scheme=DEGENERATE)


def slow_preference_interval() -> tuple[float, float]:
    """Range of delta where bisection beats the degenerate point under slow mobility."""
    target = degenerate_law().power_exponent
    low = optimize.brentq(lambda d: bisection_power(d) - target, *_SLOW_LOW_BRACKET, xtol=1e-12)
    high = optimize.brentq(lambda d: bisection_power(d) - target, *_SLOW_HIGH_BRACKET, xtol=1e-12)
    return low, high


def hybrid_last_step(delta: float, n: float, Z0: float, A0: float, B0: float) -> dict:
    """
    Last step delivered over multi-hop paths inside squarelets of area B0 >= A0.

    Returns the expected simultaneous transmissions and p0_alpha * p0_beta;
    both are independent of B0.
    """
    if B0 < A0:
        raise ValueError(f"Hybrid squarelet B0={B0} must be at least A0={A0}")
    if delta <= 1:
        p_alpha = B0 / n
    elif delta <= 2:
        p_alpha = B0 * Z0 ** (2.0 * (1.0 - delta)) / n ** (2.0 - delta)
    else:
        raise ValueError("Hybrid last-step analysis covers delta <= 2")
    p_beta = A0 / B0
    return {
        "expected_transmissions": (n / B0) * (B0 / A0),
        "p_alpha": p_alpha,
        "p_beta": p_beta,
        "p_alpha_beta": p_alpha * p_beta,
    }


def slow_mobility_summary(delta: float) -> SlowMobilitySummary:
    """
    Slow-mobility comparison for one delta.

    The hybrid multi-hop last step brings no gain, so the choice is between
    bisection and the degenerate single-step point.
    """
    if delta < 0:
        raise ValueError(f"Decay exponent must be non-negative, got {delta}")
    interval = slow_preference_interval()
    bisection = bisection_power(delta)
    preferred = BISECTION if interval[0] < delta < interval[1] else DEGENERATE
    return SlowMobilitySummary(
        delta=delta,
        degenerate=degenerate_law(),
        bisection_power=bisection,
        slow_power=slow_power(delta),
        preferred_scheme=preferred,
        preference_interval=interval,
        hybrid_gain=False,
    )


def pair_meeting_probability(D: float, A: float, delta: float, n: float) -> MeetingProbability:
    """
    Probability that two nodes with home-distance D share a squarelet of area A.

    Requires sqrt(A) < D / 4.
    """
    if A <= 0 or D <= 0:
        raise ValueError(f"Need positive D and A, got D={D}, A={A}")
    if math.sqrt(A) >= D / 4.0:
        raise ValueError(f"Squarelet side {math.sqrt(A):.4f} must be below D/4 = {D / 4.0:.4f}")
    if delta <= 1:
        return MeetingProbability(A / n, n_exponent=-1.0, d_exponent=0.0)
    if delta < 2:
        value = A * D ** (2.0 * (1.0 - delta)) / n ** (2.0 - delta)
        return MeetingProbability(value, n_exponent=-(2.0 - delta), d_exponent=2.0 * (1.0 - delta))
    if delta == 2:
        value = A * _safe_log(D) / (D * D * math.log(n) ** 2)
        return MeetingProbability(value, n_exponent=0.0, d_exponent=-2.0, log_d_exponent=1.0, log_n_exponent=-2.0)
    return MeetingProbability(A * D ** (-delta), n_exponent=0.0, d_exponent=-delta)


CURVE_COLUMNS = ["delta", "beta", "lambda_exp", "delay_exp", "power_exp", "scheme"]


def _row(delta: float, beta: float, law: ScalingLaw, power: Optional[float] = None, scheme: Optional[str] = None) -> dict:
    return {
        "delta": delta,
        "beta": beta,
        "lambda_exp": law.throughput_exponent,
        "delay_exp": law.delay_exponent,
        "power_exp": law.power_exponent if power is None else power,
        "scheme": scheme or law.scheme,
    }


def fast_power_curve(delta_grid) -> pd.DataFrame:
    """Best fast-mobility power per delta."""
    rows = []
    for delta in delta_grid:
        delta = float(delta)
        beta = z0_floor_exponent(delta)
        law = fast_scaling_law(delta)
        rows.append(_row(delta, np.nan if beta is None else beta, law, power_exponent(delta)))
    return pd.DataFrame(rows, columns=CURVE_COLUMNS)


def tradeoff_lines(delta_grid, beta_grid) -> pd.DataFrame:
    """
    Throughput/delay exponent lines per delta over the admissible beta values,
    plus the reference lines D = n lambda and D = n lambda^2.
    """
    rows = []
    for delta in delta_grid:
        delta = float(delta)
        if delta >= 2:
            rows.append(_row(delta, np.nan, tradeoff_curve(delta)))
            continue
        low, high = _beta_range(delta)
        for beta in beta_grid:
            beta = float(beta)
            if low - 1e-12 <= beta <= high + 1e-12:
                rows.append(_row(delta, beta, tradeoff_curve(delta, beta)))

    for lam_exp in np.linspace(-1.0, 0.0, 11):
        rows.append(_row(np.nan, np.nan, ScalingLaw(float(lam_exp), 1.0 + float(lam_exp)), scheme="reference_d_eq_n_lambda"))
        rows.append(_row(np.nan, np.nan, ScalingLaw(float(lam_exp), 1.0 + 2.0 * float(lam_exp)), scheme="reference_d_eq_n_lambda2"))
    return pd.DataFrame(rows, columns=CURVE_COLUMNS)


def slow_power_curve(delta_grid) -> pd.DataFrame:
    """Slow-mobility power per delta: bisection inside the preference interval, degenerate point elsewhere."""
    low, high = slow_preference_interval()
    rows = []
    for delta in delta_grid:
        delta = float(delta)
        if low < delta < high:
            law = tradeoff_curve(delta)
            beta = z0_floor_exponent(delta)
            rows.append(_row(delta, np.nan if beta is None else beta, law, slow_power(delta)))
        else:
            rows.append(_row(delta, np.nan, degenerate_law(), slow_power(delta)))
    return pd.DataFrame(rows, columns=CURVE_COLUMNS)
