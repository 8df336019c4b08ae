import math
from dataclasses import replace
from unittest.mock import MagicMock, patch

import numpy as np
import pytest

from crowdship.agents.courier_model import DeliveryTask, TaskState
from crowdship.prediction.hoeffding_tree import FeatureVector
from crowdship.simulation.config import SimConfig, Strategy
from crowdship.simulation.reporting import RESULT_FILES, write_results
from crowdship.simulation.simulator import (
    Action,
    CourierAgent,
    Mode,
    Simulator,
    Waypoint,
    WorldState,
    assign_task,
    record_outcome,
    spawn_tasks,
    step,
    step_incidents,
    step_movement,
    step_strategy,
    transfer_task,
)
from crowdship.utils.geo import destination_point, distance
from crowdship.utils.rng import RandomStreams

CENTER = (40.4168, -3.7038)


def east_of(origin, meters):
    return destination_point(origin, math.pi / 2, meters)


def north_of(origin, meters):
    return destination_point(origin, 0.0, meters)


@pytest.fixture
def exact_config():
    """No estimation error, so couriers decide deterministically"""
    return SimConfig(error_bound=0.0, incident_probability=0.0)


def _world(config, *couriers):
    world = WorldState(config, [], RandomStreams(config.seed))
    for courier_id, location in couriers:
        world.add_courier(CourierAgent(courier_id, [0.0, 1e6], [location, location], config))
    return world


def _task(task_id="p1", origin=CENTER, destination=None, deadline=1800.0):
    return DeliveryTask(
        id=task_id,
        origin=origin,
        destination=east_of(CENTER, 1000.0) if destination is None else destination,
        deadline=deadline,
        reward=7.0,
        penalty=7.0,
    )


def _deliver(task, state):
    task.transition(TaskState.ASSIGNED)
    task.courier_id = "c1"
    task.transition(TaskState.PICKED_UP)
    task.transition(state)
    return task


def test_spawn_tasks():
    config = SimConfig(tasks_per_hour=3600.0, dt=60.0)
    rng = np.random.default_rng(1)
    tasks = spawn_tasks(config, rng, 500.0, first_index=7)
    assert [t.id for t in tasks] == [f"p{7 + k:06d}" for k in range(len(tasks))]
    for task in tasks:
        assert distance(task.origin, config.center) <= config.radius + 1e-6
        assert distance(task.destination, config.center) <= config.radius + 1e-6
        assert task.deadline == 500.0 + config.deadline
        assert task.state is TaskState.UNASSIGNED
    counts = [len(spawn_tasks(config, rng, 0.0)) for _ in range(100)]
    assert sum(counts) == pytest.approx(6000, rel=0.05)


def test_assign_task_nearest_first(exact_config, rng):
    world = _world(exact_config, ("far", north_of(CENTER, 300.0)), ("near", north_of(CENTER, 100.0)))
    first = world.add_task(_task("p1", destination=east_of(CENTER, 500.0)))
    assert assign_task(world, first, rng) == "near"
    assert first.state is TaskState.ASSIGNED and first.courier_id == "near"
    assert world.couriers["near"].mode is Mode.TASK
    assert [w.action for w in world.couriers["near"].waypoints] == [Action.PICKUP, Action.DROPOFF, Action.HOME]
    # one task at a time
    second = world.add_task(_task("p2", destination=east_of(CENTER, 500.0)))
    assert assign_task(world, second, rng) == "far"


def test_assign_task_skips_unwilling(exact_config, rng):
    world = _world(exact_config, ("far", north_of(CENTER, 300.0)), ("near", north_of(CENTER, 100.0)))
    task = world.add_task(_task(destination=east_of(CENTER, 500.0)))
    asked = []

    def decide(courier, *args, **kwargs):
        asked.append(courier.id)
        return courier.id != "near"

    with patch("crowdship.simulation.simulator.accepts_task", side_effect=decide):
        assert assign_task(world, task, rng) == "far"
    assert asked == ["near", "far"]


def test_assign_task_without_takers(exact_config, rng):
    assert assign_task(_world(exact_config), _task(), rng) is None
    # 5 km away, the detour alone costs more than the reward
    world = _world(exact_config, ("c1", north_of(CENTER, 5000.0)))
    task = world.add_task(_task())
    assert assign_task(world, task, rng) is None
    assert task.state is TaskState.UNASSIGNED


def test_assign_task_requires_unassigned(exact_config, rng):
    world = _world(exact_config, ("c1", CENTER))
    task = world.add_task(_task())
    assign_task(world, task, rng)
    with pytest.raises(ValueError):
        assign_task(world, task, rng)


def test_step_movement_partial_leg(exact_config):
    world = _world(exact_config, ("c1", CENTER))
    agent = world.couriers["c1"]
    target = east_of(CENTER, 100.0)
    agent.engage(0.0, [Waypoint(target, Action.HOME)], 5.0)
    world.engaged["c1"] = agent
    world.advance(10.0)
    step_movement(world, 10.0)
    assert distance(agent.state.location, target) == pytest.approx(50.0, abs=1e-3)
    world.advance(30.0)
    step_movement(world, 20.0)
    assert agent.parked and agent.mode is Mode.TRACE and agent.available
    assert "c1" not in world.engaged


def test_step_movement_carries_over(exact_config, rng):
    world = _world(exact_config, ("c1", CENTER))
    task = world.add_task(_task(origin=east_of(CENTER, 20.0), destination=east_of(CENTER, 60.0)))
    assert assign_task(world, task, rng) == "c1"
    agent = world.couriers["c1"]

    world.advance(10.0)
    step_movement(world, 10.0)
    assert task.state is TaskState.PICKED_UP and task.holder == "c1"
    assert distance(CENTER, agent.state.location) == pytest.approx(50.0, abs=1e-3)

    world.advance(20.0)
    step_movement(world, 10.0)
    assert task.state is TaskState.DELIVERED_ON_TIME
    assert task.completed_at == pytest.approx(12.0, abs=1e-6)
    assert distance(CENTER, agent.state.location) == pytest.approx(20.0, abs=1e-3)
    assert agent.state.assigned_task is None
    assert world.open_tasks == 0 and len(world.timeline) == 1

    world.advance(30.0)
    step_movement(world, 10.0)
    assert agent.parked and agent.state.location == CENTER


@pytest.mark.parametrize("clock, outcome", [(100.0, TaskState.DELIVERED_ON_TIME), (101.0, TaskState.DELIVERED_LATE)])
def test_delivery_at_the_deadline_is_late(exact_config, rng, clock, outcome):
    world = _world(exact_config, ("c1", CENTER))
    task = world.add_task(_task(destination=CENTER, deadline=100.0))
    world.advance(50.0)
    assign_task(world, task, rng)
    world.advance(clock)
    step_movement(world, 1.0)
    assert task.state is outcome
    assert task.completed_at == clock - 1.0


def test_step_movement_rejects_bad_step(exact_config):
    with pytest.raises(ValueError):
        step_movement(_world(exact_config), 0.0)


def _engaged_world(config, count):
    world = _world(config, *[(f"c{i}", CENTER) for i in range(count)])
    for agent in world.couriers.values():
        agent.engage(0.0, [Waypoint(east_of(CENTER, 1e4), Action.DROPOFF)], config.default_speed)
        agent.state.assigned_task = f"task-{agent.id}"
        world.engaged[agent.id] = agent
    return world


def test_incidents_slow_down_couriers():
    config = SimConfig(incident_probability=1.0)
    world = _engaged_world(config, 2)
    idle = world.couriers["c1"]
    idle.state.assigned_task = None
    world.advance(59.0)
    step_incidents(world, np.random.default_rng(0), 1.0)
    assert not world.couriers["c0"].state.incident_active
    world.advance(60.0)
    step_incidents(world, np.random.default_rng(0), 1.0)
    assert world.couriers["c0"].state.incident_active
    assert world.couriers["c0"].state.current_speed == config.incident_speed
    assert not idle.state.incident_active and idle.state.current_speed == config.default_speed


def _incident_free_share(engagements, seed):
    world = _engaged_world(SimConfig(incident_probability=0.05), 1)
    agent = world.couriers["c0"]
    world.advance(1800.0)
    rng = np.random.default_rng(seed)
    free = 0
    for _ in range(engagements):
        agent.engage(0.0, [], 5.0)
        step_incidents(world, rng, 1.0)
        free += not agent.state.incident_active
    return free / engagements


def test_incident_closed_form():
    assert 0.95**30 == pytest.approx(0.215, abs=1e-3)
    assert _incident_free_share(20_000, 4) == pytest.approx(0.95**30, abs=0.012)


@pytest.mark.slow
def test_incident_closed_form_monte_carlo():
    assert _incident_free_share(100_000, 5) == pytest.approx(0.215, abs=0.005)


def test_record_outcome(exact_config):
    world = _world(exact_config)
    on_time = world.add_task(_task("p1"))
    late = world.add_task(_task("p2"))
    world.buffer.add("p1", FeatureVector(500.0, 900.0, 4.0, 5.0))

    record_outcome(world, _deliver(on_time, TaskState.DELIVERED_ON_TIME))
    record_outcome(world, _deliver(late, TaskState.DELIVERED_LATE))
    assert world.timeline.fractions == [0.0, 0.5]
    assert (world.ledger.rewards, world.ledger.penalties) == (7.0, 7.0)
    assert world.metrics.total == 1 and world.tree.n_examples == 1
    assert world.open_tasks == 0 and len(world.buffer) == 0
    with pytest.raises(ValueError):
        record_outcome(world, world.add_task(_task("p3")))


def test_transfer_of_a_carried_parcel(exact_config, rng):
    world = _world(exact_config, ("d", CENTER), ("s", north_of(CENTER, 100.0)))
    task = world.add_task(_task())
    assert assign_task(world, task, rng) == "d"
    world.advance(1.0)
    step_movement(world, 1.0)
    assert task.holder == "d"

    deliverer, substitute = world.couriers["d"], world.couriers["s"]
    transfer_task(world, task, "s", 2.0)
    assert (task.courier_id, task.transfers, world.transfers) == ("s", 1, 1)
    assert world.ledger.bid_payments == 2.0
    assert deliverer.waiting_since == 1.0 and not deliverer.waypoints
    assert deliverer.state.assigned_task is None
    assert substitute.waypoints[0] == Waypoint(deliverer.state.location, Action.HANDOVER)
    assert not substitute.state.picked_up

    world.advance(31.0)
    step_movement(world, 30.0)
    waited = distance(north_of(CENTER, 100.0), deliverer.state.location) / 5.0
    assert task.holder == "s" and substitute.state.picked_up
    assert world.ledger.waiting_costs == pytest.approx(0.5 * waited / 60.0, rel=1e-6)
    assert deliverer.waiting_since is None
    assert [w.action for w in deliverer.waypoints] == [Action.HOME]


def test_transfer_before_pickup(exact_config, rng):
    world = _world(exact_config, ("d", CENTER), ("s", north_of(CENTER, 100.0)))
    task = world.add_task(_task(origin=east_of(CENTER, 50.0)))
    assign_task(world, task, rng)
    transfer_task(world, task, "s", None)
    assert [w.action for w in world.couriers["d"].waypoints] == [Action.HOME]
    assert world.couriers["s"].waypoints[0] == Waypoint(task.origin, Action.PICKUP)
    assert world.ledger.bid_payments == 0.0
    with pytest.raises(ValueError):
        transfer_task(world, task, "d", None)



def _strategy_world(strategy, make_vector, deadline=1800.0):
    config = SimConfig(error_bound=0.0, strategy=strategy)
    world = _world(config, ("d", CENTER), ("s", north_of(CENTER, 100.0)))
    task = world.add_task(_task())
    assign_task(world, task, np.random.default_rng(0))
    task.deadline = deadline
    # the slow deliverer looks late, the substitute on time
    world.tree = MagicMock()
    world.tree.predict_on_time.side_effect = lambda fv: 0.9 if fv.avg_speed_5min > 3.0 else 0.2
    world.registry.update(make_vector("s", timestamp=0.0, location=north_of(CENTER, 100.0), avg=5.0), speed=5.0)
    sv = make_vector("d", timestamp=0.0, avg=1.0)
    world.registry.update(sv)
    world.updates.append(("d", sv))
    world.advance(10.0)
    return world, task


def test_step_strategy_forced_transfer(make_vector):
    world, task = _strategy_world(Strategy.F_BEST, make_vector)
    step_strategy(world)
    assert task.courier_id == "s"
    assert world.transfer_log.succeeded == 1 and world.transfer_log.sessions[0].forced
    assert world.transfer_log.sessions[0].request.sigma_deliverer == 0.2
    assert world.updates == []


def test_no_transfer_before_the_substitute_collects_the_parcel(make_vector):
    world, task = _strategy_world(Strategy.F_BEST, make_vector)
    step_strategy(world)
    assert task.courier_id == "s"
    third = north_of(CENTER, 200.0)
    world.add_courier(CourierAgent("t", [0.0, 1e6], [third, third], world.config))
    world.registry.update(make_vector("t", timestamp=70.0, location=third, avg=5.0), speed=5.0)

    # the substitute looks late too, but is still on the way to the origin
    world.advance(80.0)
    slow = make_vector("s", timestamp=80.0, avg=1.0)
    world.registry.update(slow)
    world.updates.append(("s", slow))
    step_strategy(world)
    assert task.courier_id == "s" and world.transfer_log.attempted == 1

    task.transition(TaskState.PICKED_UP)
    task.holder = "s"
    world.couriers["s"].state.picked_up = True
    world.updates.append(("s", slow))
    step_strategy(world)
    assert task.courier_id == "t" and world.transfer_log.attempted == 2


def test_step_strategy_without_transfers(make_vector):
    world, task = _strategy_world(Strategy.NOT, make_vector)
    step_strategy(world)
    assert task.courier_id == "d"
    assert world.transfer_log.attempted == 0 and world.updates == []
    world.tree.predict_on_time.assert_not_called()


def test_step_strategy_after_the_deadline(make_vector):
    world, task = _strategy_world(Strategy.F_BEST, make_vector, deadline=5.0)
    step_strategy(world)
    assert task.courier_id == "d" and world.transfer_log.attempted == 0


def test_step_strategy_respects_the_cooldown(make_vector):
    world, task = _strategy_world(Strategy.S_BEST, make_vector)
    world.trigger_state.start(task.id, 0.0)
    world.trigger_state.finish(task.id)
    step_strategy(world)
    assert world.transfer_log.attempted == 0

def _run(config, out=None):
    simulator = Simulator(config)
    result = simulator.run()
    if out is not None:
        write_results(result, str(out))
    return simulator, result


def test_runs_are_deterministic(small_config, tmp_path):
    _run(small_config, tmp_path / "a")
    _run(small_config, tmp_path / "b")
    for name in RESULT_FILES.values():
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


@pytest.mark.parametrize("strategy", list(Strategy))
def test_run_accounts_for_every_task(small_config, strategy):
    simulator, result = _run(small_config.with_strategy(strategy))
    assert result.spawned > 0
    assert result.spawned == result.on_time + result.late + result.expired
    assert simulator.world.open_tasks == 0
    assert all(t.finished for t in simulator.world.tasks.values())
    assert 0.0 <= result.final_delay_fraction <= 1.0
    if strategy is Strategy.NOT:
        assert result.transfer_log.attempted == 0
        assert result.ledger.bid_payments == 0.0
    if strategy is Strategy.S_BEST:
        assert result.transfer_log.consent_violations() == []
    if strategy is Strategy.F_BEST:
        assert all(s.forced and not s.bids for s in result.transfer_log.sessions)


def test_strategies_share_tasks(small_config):
    worlds = [_run(small_config.with_strategy(s))[0].world for s in (Strategy.NOT, Strategy.F_BEST)]
    spawned = [[(t.id, t.origin, t.destination, t.created_at) for t in w.tasks.values()] for w in worlds]
    assert spawned[0] == spawned[1]


def _incident_until(engagement, horizon):
    at = engagement.incident_at
    return at if at is not None and at <= horizon else None


def test_strategies_share_incidents(small_config):
    runs = {s: _run(small_config.with_strategy(s))[0].world for s in (Strategy.NOT, Strategy.S_BEST)}
    assert runs[Strategy.S_BEST].transfers > 0
    base, other = runs[Strategy.NOT].engagements, runs[Strategy.S_BEST].engagements
    common = [key for key in base if key in other and base[key].start == other[key].start]
    assert len(common) > 10
    assert any(base[key].incident_at is not None for key in common)
    for key in common:
        # an engagement cut short by a transfer only shares the trials up to its end
        horizon = min(e.end if e.end is not None else math.inf for e in (base[key], other[key]))
        assert _incident_until(base[key], horizon) == _incident_until(other[key], horizon), key


def test_one_task_per_courier(small_config):
    simulator = Simulator(replace(small_config, strategy=Strategy.S_BEST))
    world = simulator.world
    start = small_config.window_start_hour * 3600.0
    for k in range(1, 3601):
        world.advance(start + k)
        step(world, spawn=True)
        if k % 30:
            continue
        holders = {}
        for agent in world.couriers.values():
            task_id = agent.state.assigned_task
            if task_id is None:
                continue
            assert task_id not in holders
            holders[task_id] = agent.id
            assert world.tasks[task_id].courier_id == agent.id
            assert world.tasks[task_id].active
        assert all(t.courier_id in world.couriers for t in world.tasks.values() if t.active)


def test_drain_limit(small_config):
    # tasks stay open long after the end of the window
    config = replace(small_config, default_speed=0.01, max_drain=60.0, window_end_hour=9)
    with pytest.raises(RuntimeError):
        Simulator(config).run()

