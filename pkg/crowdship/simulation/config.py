# Copyright (C) 2025-2026, crowdship-sim contributors.

# This program is licensed under the Apache License 2.0.
# See LICENSE or go to <https://opensource.org/licenses/Apache-2.0> for full license details.

from dataclasses import dataclass, fields, replace
from enum import Enum

from ..logger import logger
from ..utils.geo import Location, validate_location
from ..utils.ingest import SyntheticTraceConfig

__all__ = ["Strategy", "SimConfig", "SCENARIOS", "SCENARIO_FIELDS"]


class Strategy(str, Enum):
    """Transfer strategy of a run"""

    NOT = "NOT"
    S_BEST = "S_BEST"
    F_BEST = "F_BEST"


# tasks per hour, incident probability per minute
SCENARIOS: dict[int, dict[str, float]] = {
    1: {"tasks_per_hour": 50.0, "incident_probability": 0.05},
    2: {"tasks_per_hour": 50.0, "incident_probability": 0.10},
    3: {"tasks_per_hour": 100.0, "incident_probability": 0.05},
}
SCENARIO_FIELDS = frozenset(SCENARIOS[1])


@dataclass(frozen=True)
class SimConfig:
    """
    Parameters of a simulation run. Defaults are those of scenario 1.

    Args:
        center: Location: Center of the operating area
        radius: float: Radius of the operating area in meters
        reward: float: Reward of an on-time delivery in EUR
        deadline: float: Seconds between the creation of a task and its deadline
        penalty: float: Penalty of a late delivery in EUR
        cost_per_km: float: Detour cost in EUR per km
        waiting_cost_per_min: float: Handover waiting cost in EUR per minute
        default_speed: float: Speed of couriers on a task in m/s
        incident_speed: float: Speed after an incident in m/s
        error_bound: float: Bound of the couriers' arrival estimation error in seconds
        trigger_threshold: float: On-time probability below which a transfer is attempted
        tasks_per_hour: float: Poisson rate of new tasks
        incident_probability: float: Probability of an incident per minute of an engagement
        strategy: Strategy: Transfer strategy
        seed: int: Root seed of all random streams
        dt: float: Time step in seconds
        days: int: Simulated days
        couriers_per_day: int: Synthetic trips per day
        window_start_hour: int: First hour tasks are spawned in
        window_end_hour: int: Hour task spawning stops
        gps_interval: float: Seconds between two GPS events of a courier on a task
        sample_interval: float: Seconds between two training vectors of a delivery
        trigger_cooldown: float: Minimal seconds between two transfer attempts of a task
        stale_after: float: Age in seconds after which a situation vector is ignored
        max_drain: float: Seconds the simulation continues after the window to resolve engaged tasks
    """

    center: Location = (40.4168, -3.7038)
    radius: float = 1500.0
    reward: float = 7.0
    deadline: float = 1800.0
    penalty: float = 7.0
    cost_per_km: float = 3.0
    waiting_cost_per_min: float = 0.5
    default_speed: float = 5.0
    incident_speed: float = 0.3
    error_bound: float = 900.0
    trigger_threshold: float = 0.8
    tasks_per_hour: float = 50.0
    incident_probability: float = 0.05
    strategy: Strategy = Strategy.S_BEST
    seed: int = 42
    dt: float = 1.0
    days: int = 2
    couriers_per_day: int = 8500
    window_start_hour: int = 8
    window_end_hour: int = 20
    gps_interval: float = 60.0
    sample_interval: float = 60.0
    trigger_cooldown: float = 60.0
    stale_after: float = 600.0
    max_drain: float = 6 * 3600.0

    def __post_init__(self):
        validate_location(self.center)
        if self.radius <= 0:
            raise ValueError(f"The radius must be positive, got {self.radius}")
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name != "center" and isinstance(value, (int, float)) and not isinstance(value, bool) and value < 0:
                logger.error(f"Negative configuration value {f.name}={value}")
                raise ValueError(f"{f.name} must be non-negative, got {value}")
        if self.default_speed <= 0 or self.incident_speed <= 0:
            raise ValueError("Courier speeds must be positive")
        if self.dt <= 0:
            raise ValueError(f"The time step must be positive, got {self.dt}")
        if not 0.0 <= self.incident_probability <= 1.0:
            raise ValueError(f"incident_probability must be a probability, got {self.incident_probability}")
        if not 0.0 <= self.trigger_threshold <= 1.0:
            raise ValueError(f"trigger_threshold must be a probability, got {self.trigger_threshold}")
        if not 0 <= self.window_start_hour < self.window_end_hour <= 24:
            raise ValueError(f"Invalid time window {self.window_start_hour}-{self.window_end_hour}")
        if self.days < 1:
            raise ValueError(f"At least one day has to be simulated, got {self.days}")
        if not isinstance(self.strategy, Strategy):
            object.__setattr__(self, "strategy", Strategy(self.strategy))

    @classmethod
    def for_scenario(cls, scenario: int, **overrides) -> "SimConfig":
        """
        Preset of a numbered scenario with further overrides.

        Args:
            scenario: int: 1, 2 or 3
            **overrides: Values of other fields

        Returns:
            SimConfig: The configuration
        """
        if scenario not in SCENARIOS:
            raise ValueError(f"Unknown scenario {scenario}, expected one of {sorted(SCENARIOS)}")
        conflicting = SCENARIO_FIELDS & overrides.keys()
        if conflicting:
            raise ValueError(f"Scenario {scenario} fixes {sorted(conflicting)}, use the custom scenario instead")
        return cls(**SCENARIOS[scenario], **overrides)

    def with_strategy(self, strategy: Strategy) -> "SimConfig":
        return replace(self, strategy=strategy)

    def trace_config(self) -> SyntheticTraceConfig:
        """Parameters of the synthetic traces, confined to the operating area and the task window"""
        return SyntheticTraceConfig(
            center=self.center,
            radius=self.radius,
            first_hour=self.window_start_hour,
            last_hour=self.window_end_hour - 1,
        )
