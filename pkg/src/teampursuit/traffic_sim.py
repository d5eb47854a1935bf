"""Grid traffic simulator with lights, bounded-acceleration following and capture.

Vehicles ``0..N-1`` are pursuers, ``N..N+M-1`` evaders, the rest background
traffic.  State is held in flat numpy arrays; :func:`step` returns a fresh
:class:`SimState` and never mutates its input.
"""

from dataclasses import dataclass, field, fields, replace
from enum import IntEnum
from typing import Optional

import numpy as np

from .road_network import DEAD_END, RoadNetwork, TurnAction


class VehicleRole(IntEnum):
    PURSUER = 0
    EVADER = 1
    BACKGROUND = 2


class SceneError(RuntimeError):
    pass


class DecisionError(ValueError):
    """Decisions passed to :func:`step` do not match the vehicles that need them."""


@dataclass(frozen=True)
class SimConfig:
    num_pursuers: int = 4
    num_evaders: int = 2
    num_background: int = 50
    capture_radius: float = 5.0
    v_max: float = 20.0
    ac_max: float = 0.5
    de_max: float = -4.5
    max_steps: int = 500
    dt: float = 1.0
    light_green: float = 30.0
    light_red: float = 30.0
    headway: float = 10.0
    decision_zone: float = 10.0
    route_length: int = 4
    rng_seed: int = 0

    def validate(self):
        problems = []
        if self.num_pursuers < 1:
            problems.append("num_pursuers must be >= 1")
        if self.num_evaders < 1:
            problems.append("num_evaders must be >= 1")
        if self.num_background < 0:
            problems.append("num_background must be >= 0")
        if not self.capture_radius > 0:
            problems.append("capture_radius must be > 0")
        if not self.ac_max > 0:
            problems.append("ac_max must be > 0")
        if not self.de_max < 0:
            problems.append("de_max must be < 0")
        if not self.v_max > 0:
            problems.append("v_max must be > 0")
        if self.max_steps <= 0:
            problems.append("max_steps must be > 0")
        if not self.dt > 0:
            problems.append("dt must be > 0")
        if self.light_green <= 0 or self.light_red <= 0:
            problems.append("light phases must be positive")
        if self.headway < 0 or self.decision_zone <= 0:
            problems.append("headway must be >= 0 and decision_zone > 0")
        if self.route_length < 1:
            problems.append("route_length must be >= 1")
        if problems:
            raise ValueError("; ".join(problems))
        return self

    @property
    def num_vehicles(self):
        return self.num_pursuers + self.num_evaders + self.num_background


@dataclass(frozen=True)
class VehicleState:
    id: int
    role: VehicleRole
    lane: int
    offset: float
    speed: float
    pending_turn: Optional[TurnAction]
    active: bool


@dataclass(frozen=True)
class CaptureEvent:
    evader: int
    pursuer: int
    step: int
    distance: float


@dataclass
class SimState:
    clock: int
    role: np.ndarray
    lane: np.ndarray
    offset: np.ndarray
    speed: np.ndarray
    pending: np.ndarray  # TurnAction value or -1
    active: np.ndarray
    routes: np.ndarray  # background turn cycles, shape (B, route_length)
    route_pos: np.ndarray
    captures: tuple = ()
    rng: np.random.Generator = field(default=None, repr=False, compare=False)

    def copy(self):
        return replace(
            self,
            lane=self.lane.copy(), offset=self.offset.copy(), speed=self.speed.copy(),
            pending=self.pending.copy(), active=self.active.copy(),
            route_pos=self.route_pos.copy(),
        )

    def vehicle(self, vid):
        p = int(self.pending[vid])
        return VehicleState(
            id=vid, role=VehicleRole(int(self.role[vid])), lane=int(self.lane[vid]),
            offset=float(self.offset[vid]), speed=float(self.speed[vid]),
            pending_turn=None if p < 0 else TurnAction(p), active=bool(self.active[vid]),
        )

    def same_as(self, other):
        """Exact equality of every array and scalar field."""
        for f in fields(self):
            if f.name == "rng":
                continue
            a, b = getattr(self, f.name), getattr(other, f.name)
            if isinstance(a, np.ndarray):
                if a.dtype != b.dtype or a.shape != b.shape or a.tobytes() != b.tobytes():
                    return False
            elif a != b:
                return False
        return True

    def ids(self, role):
        return np.flatnonzero(self.role == role)


def light_is_green(cfg, clock, axis):
    """Two-phase synchronized program: north-south green first, then east-west."""
    t = (clock * cfg.dt) % (cfg.light_green + cfg.light_red)
    ns_green = t < cfg.light_green
    return ns_green if axis == 1 else not ns_green


def braking_distance(v, cfg):
    """Distance covered while braking at ``de_max`` from speed ``v`` to rest."""
    b = -cfg.de_max * cfg.dt
    v = np.asarray(v, dtype=np.float64)
    n = np.floor(v / b)
    return cfg.dt * (n * v - b * n * (n + 1) / 2.0)


def safe_speed(gap, cfg):
    """Largest speed ``v`` such that moving one step at ``v`` and braking
    afterwards keeps the vehicle within ``gap``."""
    gap = np.maximum(np.asarray(gap, dtype=np.float64), 0.0)
    b = -cfg.de_max * cfg.dt
    # step+brake distance is piecewise linear in v with kinks at multiples of b;
    # solve inside each band, bands past v_max mean the gap does not bind
    best = np.full_like(gap, np.inf)
    for n in range(int(np.ceil(cfg.v_max / b)) + 1):
        v = (gap / cfg.dt + b * n * (n + 1) / 2.0) / (n + 1)
        ok = (v >= n * b) & (v < (n + 1) * b)
        best = np.where(ok, v, best)
    return best


def positions(net, state, ids=None):
    lane = state.lane if ids is None else state.lane[ids]
    off = state.offset if ids is None else state.offset[ids]
    return net.lane_starts[lane] + off[:, None] * net.lane_dirs[lane]


def distance(net, state, a, b):
    pa = net.position(int(state.lane[a]), float(state.offset[a]))
    pb = net.position(int(state.lane[b]), float(state.offset[b]))
    return float(np.hypot(*(pa - pb)))


def needs_decision(net, state, vid, cfg=None):
    decision_zone = 10.0 if cfg is None else cfg.decision_zone
    if not state.active[vid] or state.role[vid] == VehicleRole.BACKGROUND:
        return False
    if state.pending[vid] >= 0:
        return False
    return bool(state.offset[vid] >= net.lane_length - decision_zone)


def deciding_vehicles(net, cfg, state):
    zone = net.lane_length - cfg.decision_zone
    mask = (state.active & (state.role != VehicleRole.BACKGROUND)
            & (state.pending < 0) & (state.offset >= zone))
    return [int(v) for v in np.flatnonzero(mask)]


def _fallback_turn(net, lane, turn):
    if turn >= 0 and net.successors[lane, turn] >= 0:
        return turn
    return int(net.available_turns(lane)[0])


def _spawn(net, cfg, rng):
    total = cfg.num_vehicles
    lanes = np.zeros(total, dtype=np.int64)
    offs = np.zeros(total, dtype=np.float64)
    span = net.lane_length - cfg.decision_zone
    pursuit = cfg.num_pursuers + cfg.num_evaders
    min_sep = max(cfg.headway, 1.0)
    for vid in range(total):
        for _ in range(1000):
            lane = int(rng.integers(net.num_lanes))
            off = float(rng.uniform(0.0, span))
            same = lanes[:vid] == lane
            if np.any(np.abs(offs[:vid][same] - off) < min_sep):
                continue
            if 0 < vid < pursuit:
                p = net.position(lane, off)
                prev = net.lane_starts[lanes[:vid]] + offs[:vid, None] * net.lane_dirs[lanes[:vid]]
                # keep pursuers and evaders well outside capture range at t=0
                if np.any(np.hypot(*(prev - p).T) < 4 * cfg.capture_radius):
                    continue
            lanes[vid], offs[vid] = lane, off
            break
        else:
            raise SceneError(f"could not place vehicle {vid} after 1000 attempts")
    return lanes, offs


def reset(net: RoadNetwork, cfg: SimConfig, seed=None):
    cfg.validate()
    rng = np.random.default_rng(cfg.rng_seed if seed is None else seed)
    lanes, offs = _spawn(net, cfg, rng)
    role = np.array(
        [VehicleRole.PURSUER] * cfg.num_pursuers + [VehicleRole.EVADER] * cfg.num_evaders
        + [VehicleRole.BACKGROUND] * cfg.num_background, dtype=np.int64)
    routes = rng.integers(0, 3, size=(cfg.num_background, cfg.route_length)).astype(np.int64)
    total = cfg.num_vehicles
    return SimState(
        clock=0, role=role, lane=lanes, offset=offs,
        speed=np.zeros(total), pending=np.full(total, -1, dtype=np.int64),
        active=np.ones(total, dtype=bool), routes=routes,
        route_pos=np.zeros(cfg.num_background, dtype=np.int64), captures=(), rng=rng,
    )


def _leader_gaps(state):
    """Gap to the nearest active vehicle ahead on the same lane (inf if none)."""
    same = (state.lane[:, None] == state.lane[None, :]) & state.active[None, :]
    ahead = state.offset[None, :] - state.offset[:, None]
    ahead = np.where(same & (ahead > 0), ahead, np.inf)
    return ahead.min(axis=1)


def step(net, cfg, state, decisions):
    """Advance the world by one tick.

    ``decisions`` maps vehicle id to a :class:`TurnAction` and must cover
    exactly the vehicles for which :func:`needs_decision` holds.
    """
    need = set(deciding_vehicles(net, cfg, state))
    given = set(int(k) for k in decisions)
    if need != given:
        missing, extra = sorted(need - given), sorted(given - need)
        raise DecisionError(f"decision mismatch: missing={missing} unexpected={extra}")

    s = state.copy()
    for vid, turn in decisions.items():
        s.pending[vid] = _fallback_turn(net, int(s.lane[vid]), int(turn))

    # background vehicles latch the next turn of their cyclic route
    zone = net.lane_length - cfg.decision_zone
    first_bg = cfg.num_pursuers + cfg.num_evaders
    for k in range(cfg.num_background):
        vid = first_bg + k
        if s.active[vid] and s.pending[vid] < 0 and s.offset[vid] >= zone:
            turn = int(s.routes[k, s.route_pos[k] % s.routes.shape[1]])
            s.pending[vid] = _fallback_turn(net, int(s.lane[vid]), turn)
            s.route_pos[k] += 1

    dt = cfg.dt
    v = s.speed
    wanted = np.minimum(v + cfg.ac_max * dt, cfg.v_max)

    # following: treat the leader as an obstacle ``headway`` behind its position
    lead_gap = _leader_gaps(s) - cfg.headway
    wanted = np.where(np.isfinite(lead_gap), np.minimum(wanted, safe_speed(lead_gap, cfg)), wanted)

    # stop line: crossing needs a latched turn and a green approach
    green = np.where(net.lane_end[s.lane] == DEAD_END, True,
                     np.where(net.lane_axis[s.lane] == 1, light_is_green(cfg, s.clock, 1),
                              light_is_green(cfg, s.clock, 0)))
    gap = net.lane_length - s.offset
    may_cross = green & (s.pending >= 0)
    crossing = may_cross & (wanted * dt >= gap)
    wanted = np.where(crossing, wanted, np.minimum(wanted, safe_speed(gap, cfg)))

    new_v = np.clip(np.maximum(wanted, v + cfg.de_max * dt), 0.0, cfg.v_max)
    new_v = np.where(s.active, new_v, 0.0)
    crossing &= s.active & (new_v * dt >= gap)

    new_off = s.offset + new_v * dt
    for vid in np.flatnonzero(crossing):
        lane = int(s.lane[vid])
        turn = _fallback_turn(net, lane, int(s.pending[vid]))
        s.lane[vid] = net.successors[lane, turn]
        new_off[vid] -= net.lane_length
        s.pending[vid] = -1
    s.offset = np.where(s.active, np.clip(new_off, 0.0, net.lane_length), s.offset)
    s.speed = new_v
    s.clock = state.clock + 1

    events = []
    pursuers = np.flatnonzero((s.role == VehicleRole.PURSUER) & s.active)
    evaders = np.flatnonzero((s.role == VehicleRole.EVADER) & s.active)
    if len(pursuers) and len(evaders):
        pp = positions(net, s, pursuers)
        ep = positions(net, s, evaders)
        d = np.hypot(ep[:, None, 0] - pp[None, :, 0], ep[:, None, 1] - pp[None, :, 1])
        for i, m in enumerate(evaders):
            j = int(np.argmin(d[i]))
            if d[i, j] < cfg.capture_radius:
                events.append(CaptureEvent(int(m), int(pursuers[j]), s.clock, float(d[i, j])))
                s.active[m] = False
                s.speed[m] = 0.0
                s.pending[m] = -1
    if events:
        s.captures = state.captures + tuple((e.evader, e.step) for e in events)

    done = (not np.any(s.active & (s.role == VehicleRole.EVADER))) or s.clock >= cfg.max_steps
    return s, events, bool(done)


def trajectory_lines(state):
    """One ``step id role lane offset speed`` record per vehicle."""
    out = []
    for vid in range(len(state.role)):
        if not state.active[vid] and state.role[vid] != VehicleRole.EVADER:
            continue
        out.append(f"{state.clock} {vid} {VehicleRole(int(state.role[vid])).name.lower()} "
                   f"{int(state.lane[vid])} {state.offset[vid]:.6f} {state.speed[vid]:.6f}")
    return out
