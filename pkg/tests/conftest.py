import numpy as np
import pytest

from teampursuit.road_network import build_grid
from teampursuit.traffic_sim import SimConfig, SimState, VehicleRole


@pytest.fixture(scope="session")
def net3():
    return build_grid(3, 3, 200.0)


@pytest.fixture(scope="session")
def net2():
    return build_grid(2, 2, 100.0)


def lane_between(net, start, heading):
    """Lane id starting at world point ``start`` with heading index ``heading``."""
    for lane in net.lanes:
        if np.allclose(lane.start, start) and lane.heading == heading:
            return lane.index
    raise LookupError((start, heading))


def make_state(placements, clock=0):
    """Hand-placed scene: ``placements`` is a list of (role, lane, offset[, speed])."""
    n = len(placements)
    role = np.array([p[0] for p in placements], dtype=np.int64)
    lane = np.array([p[1] for p in placements], dtype=np.int64)
    off = np.array([p[2] for p in placements], dtype=np.float64)
    speed = np.array([p[3] if len(p) > 3 else 0.0 for p in placements], dtype=np.float64)
    nb = int(np.sum(role == VehicleRole.BACKGROUND))
    return SimState(clock=clock, role=role, lane=lane, offset=off, speed=speed,
                    pending=np.full(n, -1, dtype=np.int64), active=np.ones(n, dtype=bool),
                    routes=np.zeros((nb, 4), dtype=np.int64), route_pos=np.zeros(nb, dtype=np.int64),
                    rng=np.random.default_rng(0))


def config_for(state, **kw):
    return SimConfig(num_pursuers=int(np.sum(state.role == VehicleRole.PURSUER)),
                     num_evaders=int(np.sum(state.role == VehicleRole.EVADER)),
                     num_background=int(np.sum(state.role == VehicleRole.BACKGROUND)), **kw)


_criteria = []


@pytest.fixture
def criterion():
    """Record ``(number, ok, detail)`` for the end-of-run acceptance summary."""
    def record(number, ok, detail=""):
        _criteria.append((number, bool(ok), detail))
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _criteria:
        terminalreporter.section("acceptance criteria")
        for number, ok, detail in sorted(_criteria, key=lambda c: c[0]):
            terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
