"""Partial observations for both teams.

Evaders see pursuer counts in six cells: both halves of their own lane and of
the straight-ahead lane, plus the near half of the left and right successor
lanes.  Pursuers use the same field geometry to decide which evaders they can
see, and describe every vehicle by a Loc record (lane one-hots plus the
distance from the lane start).
"""

from collections import deque
from dataclasses import dataclass

import numpy as np

from .road_network import TurnAction
from .traffic_sim import VehicleRole

NUM_CELLS = 6


@dataclass(frozen=True)
class EvaderObservation:
    cell_counts: tuple

    def as_key(self):
        return tuple(int(c) for c in self.cell_counts)


@dataclass(frozen=True)
class LocRecord:
    """Lane, successor lanes (-1 when the turn does not exist) and offset in meters."""

    lane: int
    straight: int
    left: int
    right: int
    dis: float

    def vector(self, net):
        L = net.num_lanes
        v = np.zeros(4 * L + 1)
        for k, lane in enumerate((self.lane, self.straight, self.left, self.right)):
            if lane >= 0:
                v[k * L + lane] = 1.0
        v[4 * L] = self.dis / net.lane_length
        return v


EMPTY_LOC = LocRecord(-1, -1, -1, -1, 0.0)


def loc_record(net, state, vid):
    lane = int(state.lane[vid])
    s = net.successors[lane]
    return LocRecord(lane, int(s[TurnAction.STRAIGHT]), int(s[TurnAction.LEFT]),
                     int(s[TurnAction.RIGHT]), float(state.offset[vid]))


def _field_cells(net, lane):
    """(lane, lo, hi, cell index) regions making up the visual field of a vehicle on ``lane``."""
    half = net.lane_length / 2.0
    full = net.lane_length
    succ = net.successors[lane]
    cells = [(lane, 0.0, half, 0), (lane, half, full, 1)]
    if succ[TurnAction.STRAIGHT] >= 0:
        cells += [(int(succ[TurnAction.STRAIGHT]), 0.0, half, 2),
                  (int(succ[TurnAction.STRAIGHT]), half, full, 3)]
    if succ[TurnAction.RIGHT] >= 0:
        cells.append((int(succ[TurnAction.RIGHT]), 0.0, half, 4))
    if succ[TurnAction.LEFT] >= 0:
        cells.append((int(succ[TurnAction.LEFT]), 0.0, half, 5))
    return cells


def _cell_of(net, lane, offset, cells):
    for c_lane, lo, hi, idx in cells:
        if lane == c_lane and lo <= offset and (offset < hi or (hi == net.lane_length and offset <= hi)):
            return idx
    return -1


def evader_observe(net, state, evader_id):
    counts = [0] * NUM_CELLS
    if not state.active[evader_id]:
        return EvaderObservation(tuple(counts))
    cells = _field_cells(net, int(state.lane[evader_id]))
    for p in np.flatnonzero((state.role == VehicleRole.PURSUER) & state.active):
        idx = _cell_of(net, int(state.lane[p]), float(state.offset[p]), cells)
        if idx >= 0:
            counts[idx] += 1
    return EvaderObservation(tuple(counts))


def joint_evader_key(net, state):
    """Concatenated cell counts of all evaders in id order; captured evaders give zeros."""
    key = []
    for m in np.flatnonzero(state.role == VehicleRole.EVADER):
        key.extend(evader_observe(net, state, int(m)).cell_counts)
    return tuple(key)


def visible_evaders(net, state, pursuer_id):
    cells = _field_cells(net, int(state.lane[pursuer_id]))
    seen = []
    for m in np.flatnonzero((state.role == VehicleRole.EVADER) & state.active):
        if _cell_of(net, int(state.lane[m]), float(state.offset[m]), cells) >= 0:
            seen.append(int(m))
    return seen


def pursuer_observe(net, state, pursuer_id):
    own = loc_record(net, state, pursuer_id)
    return own, [(m, loc_record(net, state, m)) for m in visible_evaders(net, state, pursuer_id)]


@dataclass(frozen=True, eq=False)
class JointPursuerObservation:
    """Compact joint observation.

    ``lanes`` holds one row ``[lane, straight, left, right]`` per slot
    (pursuers first, then one slot per evader, -1 for absent) and ``dis`` the
    offsets in meters.  :meth:`vector` expands it to ``[Loc_N, Loc_M, adj]``
    of width ``(4L+1)(N+M) + L^2``; unseen evader slots are all zero.
    """

    lanes: np.ndarray
    dis: np.ndarray
    num_pursuers: int
    mask: tuple
    mv_total: int
    include_adj: bool = True

    @property
    def pursuer_locs(self):
        return tuple(self._loc(k) for k in range(self.num_pursuers))

    @property
    def evader_locs(self):
        return tuple(self._loc(k) for k in range(self.num_pursuers, len(self.dis)))

    def _loc(self, k):
        return LocRecord(*(int(x) for x in self.lanes[k]), float(self.dis[k]))

    def width(self, net):
        return (4 * net.num_lanes + 1) * len(self.dis) + net.num_lanes ** 2

    def vector(self, net):
        return stack_observations(net, [self])[0]

    def ego(self, index):
        """Same observation with pursuer ``index`` moved to the first slot."""
        order = [index] + [k for k in range(len(self.dis)) if k != index]
        return JointPursuerObservation(self.lanes[order], self.dis[order], self.num_pursuers,
                                       self.mask, self.mv_total, self.include_adj)

    def same_as(self, other):
        return (self.lanes.tobytes() == other.lanes.tobytes()
                and self.dis.tobytes() == other.dis.tobytes()
                and (self.num_pursuers, self.mask, self.mv_total, self.include_adj)
                == (other.num_pursuers, other.mask, other.mv_total, other.include_adj))


def joint_observe(net, state, include_adj=True):
    pursuers = np.flatnonzero(state.role == VehicleRole.PURSUER)
    evaders = np.flatnonzero(state.role == VehicleRole.EVADER)
    seen = set()
    mv_total = 0
    for p in pursuers:
        v = visible_evaders(net, state, int(p))
        mv_total += len(v)
        seen.update(v)
    mask = tuple(int(int(m) in seen) for m in evaders)
    slots = np.concatenate([pursuers, evaders])
    lanes = np.concatenate([state.lane[slots][:, None], net.successors[state.lane[slots]]], axis=1)
    dis = state.offset[slots].copy()
    hidden = np.concatenate([np.zeros(len(pursuers), dtype=bool), np.array(mask, dtype=bool) == 0])
    lanes[hidden] = -1
    dis[hidden] = 0.0
    lanes.setflags(write=False)
    dis.setflags(write=False)
    return JointPursuerObservation(lanes, dis, len(pursuers), mask, mv_total, include_adj)


def stack_observations(net, observations):
    """Dense ``(len(observations), width)`` matrix."""
    if not observations:
        raise ValueError("no observations to stack")
    L = net.num_lanes
    rec = 4 * L + 1
    lanes = np.stack([o.lanes for o in observations])  # (n, S, 4)
    dis = np.stack([o.dis for o in observations])
    n, n_slots = dis.shape
    out = np.zeros((n, rec * n_slots + L * L))
    slot_base = (np.arange(n_slots) * rec)[None, :, None] + (np.arange(4) * L)[None, None, :]
    rows = np.broadcast_to(np.arange(n)[:, None, None], lanes.shape)
    hit = lanes >= 0
    out[rows[hit], (slot_base + lanes)[hit]] = 1.0
    out[:, np.arange(n_slots) * rec + 4 * L] = dis / net.lane_length
    with_adj = np.array([o.include_adj for o in observations])
    if with_adj.any():
        out[with_adj, rec * n_slots:] = net.adj
    return out


def stack_windows(net, windows):
    """Rows of ``h`` concatenated observations, oldest first."""
    h = len(windows[0])
    flat = stack_observations(net, [o for w in windows for o in w])
    return flat.reshape(len(windows), h * flat.shape[1])


class ObservationPool:
    """Ring of the last ``h`` joint observations, oldest first."""

    def __init__(self, h):
        if h < 1:
            raise ValueError("history length must be >= 1")
        self.h = h
        self._items = deque(maxlen=h)

    def push(self, obs):
        self._items.append(obs)
        return self

    def __len__(self):
        return len(self._items)

    def window(self):
        """Exactly ``h`` entries; the oldest is repeated while the pool fills up."""
        if not self._items:
            raise ValueError("empty observation pool")
        items = list(self._items)
        return tuple([items[0]] * (self.h - len(items)) + items)

    def window_vector(self, net):
        return stack_windows(net, [self.window()])[0]


def pool_push(pool, obs):
    return pool.push(obs)


def pool_window(pool, net):
    return pool.window_vector(net)
