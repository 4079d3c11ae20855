"""Thermal-discomfort and operational-cost KPIs and the weighted step reward.

Discomfort is measured in Kelvin-hours, cost in EUR per square metre of
floor area. Both integrals use the rectangle rule on the post-step value at
control-step resolution.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class ComfortBand:
    lower: float = 294.15
    upper: float = 297.15

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError(f"comfort band needs lower < upper, got {self.lower}, {self.upper}")

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lower + self.upper)


@dataclass(frozen=True)
class RewardWeights:
    w_discomfort: float = 1.0
    w_cost: float = 100.0

    def __post_init__(self):
        if self.w_discomfort < 0 or self.w_cost < 0:
            raise ValueError("reward weights must be non-negative")


def slack(zone_temp: float, band: ComfortBand) -> float:
    return max(0.0, band.lower - zone_temp) + max(0.0, zone_temp - band.upper)


def discomfort_increment(zone_temp: float, band: ComfortBand, dt_hours: float) -> float:
    return slack(zone_temp, band) * dt_hours


def cost_increment(electric_power_kw: float, price: float, floor_area_m2: float, dt_hours: float) -> float:
    return price * electric_power_kw * dt_hours / floor_area_m2


def reward_of_step(zone_temp: float, electric_power_kw: float, price: float, weights: RewardWeights,
                   band: ComfortBand, floor_area_m2: float, dt_hours: float) -> float:
    """Negative weighted sum of this step's discomfort and cost.

    ``zone_temp`` is the temperature the action left the zone at.
    """
    d = discomfort_increment(zone_temp, band, dt_hours)
    c = cost_increment(electric_power_kw, price, floor_area_m2, dt_hours)
    return -(weights.w_discomfort * d + weights.w_cost * c)


@dataclass(frozen=True)
class KpiLedger:
    discomfort_kh: float = 0.0
    cost_eur_m2: float = 0.0
    steps: int = 0

    def add_step(self, discomfort: float, cost: float) -> "KpiLedger":
        return KpiLedger(self.discomfort_kh + discomfort, self.cost_eur_m2 + cost, self.steps + 1)

    def total_reward(self, weights: RewardWeights) -> float:
        return -(weights.w_discomfort * self.discomfort_kh + weights.w_cost * self.cost_eur_m2)


def ledger_merge(a: KpiLedger, b: KpiLedger) -> KpiLedger:
    return KpiLedger(a.discomfort_kh + b.discomfort_kh, a.cost_eur_m2 + b.cost_eur_m2, a.steps + b.steps)
