from .config import SimConfig, Strategy, SCENARIOS
from .reporting import DelayTimeline, Ledger, SimulationResult, write_results
from .simulator import Simulator, WorldState

__all__ = [
    "SimConfig",
    "Strategy",
    "SCENARIOS",
    "DelayTimeline",
    "Ledger",
    "SimulationResult",
    "write_results",
    "Simulator",
    "WorldState",
]
