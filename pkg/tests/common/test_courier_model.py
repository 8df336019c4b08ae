import math

import numpy as np
import pytest

from crowdship.agents.courier_model import (
    BID_MARGIN,
    InvalidTransitionError,
    TaskState,
    accepts_task,
    candidate_bid,
    delivery_cost,
    deliverer_accepts_transfer,
    detour_distance,
    estimate_arrival,
    utility,
    waiting_cost,
)
from crowdship.utils.geo import destination_point

CENTER = (40.4168, -3.7038)


def east_of(origin, meters):
    return destination_point(origin, math.pi / 2 if meters >= 0 else -math.pi / 2, abs(meters))


def test_detour_coincident_route(make_courier, make_task):
    dest = east_of(CENTER, 1000.0)
    courier = make_courier(location=CENTER, destination=dest)
    task = make_task(origin=CENTER, destination=dest)
    assert detour_distance(courier, task, task.origin) == pytest.approx(0.0, abs=1e-6)
    assert delivery_cost(courier, task, task.origin) == pytest.approx(0.0, abs=1e-6)


def test_detour_loop(make_courier, make_task):
    # home 1000 m east, parcel from 250 m west back to the start: 500 m extra
    courier = make_courier(location=CENTER, destination=east_of(CENTER, 1000.0))
    task = make_task(origin=east_of(CENTER, -250.0), destination=CENTER)
    assert detour_distance(courier, task, task.origin) == pytest.approx(500.0, abs=0.01)


def test_detour_never_negative(make_courier, make_task, rng):
    for _ in range(200):
        points = [east_of(CENTER, float(x)) for x in rng.uniform(-2000, 2000, size=4)]
        courier = make_courier(location=points[0], destination=points[1])
        task = make_task(origin=points[2], destination=points[3])
        assert detour_distance(courier, task, task.origin) >= 0.0


@pytest.mark.parametrize("detour_km, cost", [(1.0, 3.0), (0.0, 0.0), (2.5, 7.5)])
def test_delivery_cost(make_courier, make_task, detour_km, cost):
    # parcel from home and back: the detour is the round trip to its destination
    courier = make_courier(location=CENTER, destination=CENTER)
    task = make_task(origin=CENTER, destination=east_of(CENTER, detour_km * 500.0))
    assert delivery_cost(courier, task, task.origin) == pytest.approx(cost, abs=1e-4)


def test_utility_branches(make_courier, make_task):
    courier = make_courier(location=CENTER, destination=CENTER)
    task = make_task(origin=CENTER, destination=east_of(CENTER, 500.0), deadline=1800.0)
    assert utility(courier, task, 1000.0, task.origin) == pytest.approx(4.0, abs=1e-4)
    assert utility(courier, task, 2000.0, task.origin) == pytest.approx(-10.0, abs=1e-4)
    # strictly before the deadline
    assert utility(courier, task, 1800.0, task.origin) == pytest.approx(-10.0, abs=1e-4)


def test_late_branch_never_exceeds_on_time(make_courier, make_task, rng):
    courier = make_courier()
    for reward, penalty, meters in rng.uniform(0, 20, size=(100, 3)):
        task = make_task(destination=east_of(CENTER, meters * 100.0), reward=reward, penalty=penalty)
        assert utility(courier, task, 1e6, task.origin) <= utility(courier, task, 0.0, task.origin)


def test_estimate_arrival(make_courier, make_task, rng):
    task = make_task(origin=east_of(CENTER, 1000.0), destination=east_of(CENTER, 3000.0))
    exact = estimate_arrival(make_courier(speed=5.0, error_bound=0.0), task, task.origin, rng, now=100.0)
    assert exact.true_arrival == pytest.approx(700.0, abs=1e-3)
    assert exact.estimate == exact.true_arrival

    noisy = make_courier(speed=5.0)
    for _ in range(100):
        estimate = estimate_arrival(noisy, task, task.origin, rng, now=100.0)
        assert abs(estimate.noise) <= 900.0
        assert 100.0 - 300.0 <= estimate.estimate <= 100.0 + 1500.0


def test_estimate_arrival_clamps_speed(make_courier, make_task, rng):
    task = make_task(origin=CENTER, destination=east_of(CENTER, 600.0))
    estimate = estimate_arrival(make_courier(speed=0.0, error_bound=0.0), task, task.origin, rng)
    assert estimate.true_arrival == pytest.approx(2000.0, abs=1e-2)


def test_estimate_noise_is_centered(make_courier, make_task):
    rng = np.random.default_rng(5)
    courier = make_courier()
    task = make_task()
    noise = np.array([estimate_arrival(courier, task, task.origin, rng).noise for _ in range(10_000)])
    assert abs(noise.mean()) <= 0.02 * 1800.0
    assert noise.min() >= -900.0 and noise.max() <= 900.0


def test_accepts_task(make_courier, make_task, rng):
    dest = east_of(CENTER, 1000.0)
    courier = make_courier(destination=dest, error_bound=0.0)
    assert accepts_task(courier, make_task(destination=dest, deadline=1e5), CENTER, rng)
    # 1333 m there and back at 3 EUR/km costs 8 EUR
    far = make_task(origin=CENTER, destination=east_of(CENTER, 4000.0 / 3.0), deadline=1e5)
    assert not accepts_task(make_courier(error_bound=0.0), far, CENTER, rng)
    assert not accepts_task(courier, make_task(destination=dest, deadline=10.0), CENTER, rng)


def test_accepts_task_monotone_in_reward(make_courier, make_task):
    courier = make_courier(destination=CENTER)
    for seed in range(50):
        decisions = [
            accepts_task(courier, make_task(reward=r, deadline=600.0), CENTER, np.random.default_rng(seed))
            for r in (2.0, 5.0, 7.0, 12.0)
        ]
        assert decisions == sorted(decisions)


def test_accepts_task_requires_idle_courier(make_courier, make_task, rng):
    with pytest.raises(ValueError):
        accepts_task(make_courier(assigned_task="p0"), make_task(), CENTER, rng)
    with pytest.raises(ValueError):
        candidate_bid(make_courier(assigned_task="p0"), make_task(), CENTER, rng)


@pytest.mark.parametrize("picked_up, delta, cost", [(True, 240.0, 2.0), (False, 240.0, 0.0), (True, 0.0, 0.0)])
def test_waiting_cost(make_courier, picked_up, delta, cost):
    courier = make_courier(assigned_task="p1" if picked_up else None, picked_up=picked_up)
    assert waiting_cost(courier, delta) == pytest.approx(cost)


def test_waiting_cost_rejects_negative_delta(make_courier):
    with pytest.raises(ValueError):
        waiting_cost(make_courier(), -1.0)


def test_candidate_bid(make_courier, make_task, rng):
    # parcel 500 m east and back to the candidate's home: surplus 7 - 3 = 4
    candidate = make_courier(destination=CENTER, error_bound=0.0)
    task = make_task(destination=east_of(CENTER, 500.0), deadline=1e5)
    assert candidate_bid(candidate, task, CENTER, rng) == pytest.approx(4.0 - BID_MARGIN, abs=1e-4)
    late = make_task(destination=east_of(CENTER, 500.0), deadline=1.0)
    assert candidate_bid(candidate, late, CENTER, rng) == 0.0


def test_accepted_bid_leaves_the_candidate_a_margin(make_courier, make_task, rng):
    candidate = make_courier(destination=CENTER, error_bound=0.0)
    task = make_task(destination=east_of(CENTER, 500.0), deadline=1e5)
    bid = candidate_bid(candidate, task, CENTER, rng)
    estimate = estimate_arrival(candidate, task, CENTER, rng)
    assert utility(candidate, task, estimate.estimate, CENTER) - bid == pytest.approx(BID_MARGIN)


def test_deliverer_accepts_transfer(make_courier, make_task, rng):
    holder = make_courier(assigned_task="p1", picked_up=True, destination=CENTER, error_bound=0.0, speed=0.3)
    task = make_task(destination=east_of(CENTER, 500.0), deadline=60.0, state=TaskState.PICKED_UP)
    # own estimate: late, -7 - 3; waiting 120 s costs 1
    assert deliverer_accepts_transfer(holder, task, 3.0, 120.0, rng)

    on_time = make_courier(assigned_task="p1", picked_up=True, destination=CENTER, error_bound=0.0)
    relaxed = make_task(destination=east_of(CENTER, 500.0), deadline=1e5, state=TaskState.PICKED_UP)
    # own estimate 7 - 3, bid 0.5 minus 2 EUR of waiting
    assert not deliverer_accepts_transfer(on_time, relaxed, 0.5, 240.0, rng)


@pytest.mark.parametrize(
    "on_time_probability, bid, accepted",
    [
        # own estimate: late, -7 - 3
        (None, 1.2, True),
        # 0.75 * (7 - 3) + 0.25 * (-7 - 3) = 0.5, the bid leaves 0.2 after 1 EUR of waiting
        (0.75, 1.2, False),
        (0.75, 1.6, True),
        (0.0, 1.2, True),
    ],
)
def test_deliverer_weighs_the_predicted_risk(make_courier, make_task, rng, on_time_probability, bid, accepted):
    holder = make_courier(assigned_task="p1", picked_up=True, destination=CENTER, error_bound=0.0, speed=0.3)
    task = make_task(destination=east_of(CENTER, 500.0), deadline=60.0, state=TaskState.PICKED_UP)
    decision = deliverer_accepts_transfer(holder, task, bid, 120.0, rng, on_time_probability=on_time_probability)
    assert decision == accepted


def test_deliverer_rejects_bad_probabilities(make_courier, make_task, rng):
    holder = make_courier(assigned_task="p1", picked_up=True)
    with pytest.raises(ValueError, match="out of range"):
        deliverer_accepts_transfer(holder, make_task(), 1.0, 0.0, rng, on_time_probability=1.5)


def test_deliverer_without_parcel_has_no_waiting_cost(make_courier, make_task, rng):
    # owns nothing yet: on-time utility 0 at zero detour with reward 0
    deliverer = make_courier(assigned_task="p1", destination=east_of(CENTER, 1000.0), error_bound=0.0)
    task = make_task(reward=0.0, deadline=1e5, state=TaskState.ASSIGNED)
    assert deliverer_accepts_transfer(deliverer, task, 0.01, 1e4, rng)


def test_deliverer_rejects_non_positive_bids(make_courier, make_task, rng):
    with pytest.raises(ValueError):
        deliverer_accepts_transfer(make_courier(assigned_task="p1"), make_task(), 0.0, 0.0, rng)


def test_task_lifecycle(make_task):
    task = make_task()
    task.transition(TaskState.ASSIGNED)
    task.courier_id = "c1"
    assert task.active
    task.reassign("c2")
    assert (task.courier_id, task.transfers) == ("c2", 1)
    task.transition(TaskState.PICKED_UP)
    task.transition(TaskState.DELIVERED_LATE)
    assert task.finished and not task.active
    with pytest.raises(InvalidTransitionError):
        task.transition(TaskState.ASSIGNED)
    with pytest.raises(InvalidTransitionError):
        task.reassign("c3")


def test_invalid_transitions(make_task):
    with pytest.raises(InvalidTransitionError):
        make_task().transition(TaskState.PICKED_UP)
    expired = make_task()
    expired.transition(TaskState.EXPIRED)
    with pytest.raises(InvalidTransitionError):
        expired.transition(TaskState.ASSIGNED)


def test_courier_state_validation(make_courier):
    with pytest.raises(ValueError):
        make_courier(speed=-1.0)
    with pytest.raises(ValueError):
        make_courier(picked_up=True)
