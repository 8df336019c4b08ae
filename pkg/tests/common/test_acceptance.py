"""Scenario-level runs over several seeds, enabled with --runslow."""

from functools import lru_cache

import numpy as np
import pytest

from crowdship.simulation.config import SimConfig, Strategy
from crowdship.simulation.simulator import Simulator

SEEDS = range(5)

pytestmark = pytest.mark.slow


@lru_cache(maxsize=None)
def _runs(scenario):
    return {
        (strategy, seed): Simulator(SimConfig.for_scenario(scenario, strategy=strategy, seed=seed)).run()
        for strategy in Strategy
        for seed in SEEDS
    }


def _mean_delay(scenario):
    runs = _runs(scenario)
    return {s: float(np.mean([runs[s, seed].final_delay_fraction for seed in SEEDS])) for s in Strategy}


def test_strategy_ordering():
    means = _mean_delay(1)
    assert means[Strategy.NOT] > means[Strategy.S_BEST] >= means[Strategy.F_BEST]
    assert means[Strategy.NOT] >= 2 * means[Strategy.S_BEST]


def test_incident_sensitivity():
    low, high = _mean_delay(1), _mean_delay(2)
    assert high[Strategy.NOT] >= 1.5 * low[Strategy.NOT]
    assert high[Strategy.NOT] > high[Strategy.S_BEST] >= high[Strategy.F_BEST]


def test_demand_scaling():
    base, busy = _mean_delay(1), _mean_delay(3)
    assert abs(busy[Strategy.NOT] - base[Strategy.NOT]) < 0.05
    assert busy[Strategy.F_BEST] <= base[Strategy.F_BEST]
    assert busy[Strategy.F_BEST] <= busy[Strategy.S_BEST] <= busy[Strategy.NOT]


@pytest.mark.parametrize("seed", SEEDS)
def test_forced_transfers_outnumber_negotiated_ones(seed):
    runs = _runs(1)
    forced, negotiated = runs[Strategy.F_BEST, seed].transfer_log, runs[Strategy.S_BEST, seed].transfer_log
    assert forced.succeeded > negotiated.succeeded


@pytest.mark.parametrize("seed", SEEDS)
def test_negotiated_transfers_have_mutual_consent(seed):
    log = _runs(1)[Strategy.S_BEST, seed].transfer_log
    assert log.succeeded > 0
    assert log.consent_violations() == []
    assert not any(s.forced for s in log.sessions)
