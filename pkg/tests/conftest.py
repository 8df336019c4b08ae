import numpy as np
import pytest

from crowdship.agents.courier_model import CourierState, DeliveryTask
from crowdship.monitoring.stream_monitor import SituationVector
from crowdship.simulation.config import SimConfig
from crowdship.utils.geo import destination_point
from crowdship.utils.ingest import SyntheticTraceConfig, synth_traces, write_traces

CENTER = (40.4168, -3.7038)


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow statistical tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def east_of(origin, meters):
    return destination_point(origin, np.pi / 2, meters)


@pytest.fixture
def center():
    return CENTER


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def make_task():
    def _make(origin=CENTER, destination=None, deadline=1800.0, **kwargs):
        return DeliveryTask(
            id=kwargs.pop("id", "p1"),
            origin=origin,
            destination=east_of(CENTER, 1000.0) if destination is None else destination,
            deadline=deadline,
            reward=kwargs.pop("reward", 7.0),
            penalty=kwargs.pop("penalty", 7.0),
            **kwargs,
        )

    return _make


@pytest.fixture
def make_courier():
    def _make(courier_id="c1", location=CENTER, destination=None, speed=5.0, **kwargs):
        return CourierState(
            id=courier_id,
            location=location,
            destination=location if destination is None else destination,
            current_speed=speed,
            **kwargs,
        )

    return _make


@pytest.fixture
def make_vector():
    def _make(courier_id="c1", timestamp=0.0, location=CENTER, avg=4.0, top=5.0, stops=0, speed=4.0):
        return SituationVector(courier_id, timestamp, location, avg, top, stops, speed)

    return _make


@pytest.fixture
def small_config():
    """A short single day with few couriers and frequent tasks"""
    return SimConfig(
        days=1,
        couriers_per_day=400,
        window_start_hour=8,
        window_end_hour=10,
        tasks_per_hour=60.0,
    )


@pytest.fixture(scope="session")
def mock_trace_file(tmpdir_factory):
    trips = synth_traces(25, SyntheticTraceConfig(), np.random.default_rng(7))
    fn = tmpdir_factory.mktemp("data").join("traces.csv")
    write_traces(trips, str(fn))
    return str(fn)
