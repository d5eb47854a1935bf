"""DQN side of the pursuing team: states, Q-network pair, replay, rewards."""

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import nn_core
from .observation import stack_observations, visible_evaders
from .road_network import TurnAction
from .traffic_sim import VehicleRole, distance

NUM_ACTIONS = 3
DQN_HIDDEN = (64, 64)
DQN_MAGIC = b"DQN1"


@dataclass(frozen=True)
class RewardConfig:
    distance_weight: float = 2.0  # lambda
    step_reward: float = -0.2  # realized per-step term
    capture_reward: float = 10.0
    nearest_only: bool = False


@dataclass(frozen=True, eq=False)
class PursuerState:
    """``[op, pi_e]`` for one pursuer.

    ``op`` is ego-ordered (the deciding pursuer's Loc record first).
    ``window`` is the history the strategy vector was encoded from, or None
    for the zero strategy used before the first encode.
    """

    op: object
    pi_e: np.ndarray
    window: Optional[tuple] = None

    def assembled(self, net):
        return np.concatenate([self.op.vector(net), self.pi_e])


def assemble_batch(net, states, pi):
    """Stack ``[op, pi_e]`` rows, with ``pi`` supplied separately (B x d_pi)."""
    return np.concatenate([stack_observations(net, [s.op for s in states]), pi], axis=1)


@dataclass
class Transition:
    s: PursuerState
    a: int
    r: float
    s_next: PursuerState
    terminal: bool
    steps: int = 1  # simulation steps between s and s_next


class ReplayBuffer:
    def __init__(self, capacity=10000):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.items = []
        self._next = 0

    def push(self, t):
        if len(self.items) < self.capacity:
            self.items.append(t)
        else:
            self.items[self._next] = t
        self._next = (self._next + 1) % self.capacity

    def __len__(self):
        return len(self.items)

    def sample(self, batch_size, rng):
        """Uniform batch without replacement, or None while the buffer is underfull."""
        if len(self.items) < batch_size:
            return None
        idx = rng.choice(len(self.items), size=batch_size, replace=False)
        return [self.items[i] for i in idx]


def buffer_push(buffer, t):
    buffer.push(t)
    return buffer


def sample_batch(buffer, batch_size, rng):
    return buffer.sample(batch_size, rng)


class DqnParams:
    def __init__(self, online, target=None, sync_period=200, steps_since_sync=0):
        self.online = online
        self.target = online.copy() if target is None else target
        self.sync_period = sync_period
        self.steps_since_sync = steps_since_sync

    @classmethod
    def init(cls, state_width, rng, hidden=DQN_HIDDEN, sync_period=200):
        return cls(nn_core.MlpParams.init([state_width, *hidden, NUM_ACTIONS], rng),
                   sync_period=sync_period)


def q_values(p, s_assembled):
    return nn_core.forward(p.online, s_assembled)[0]


def greedy(q, allowed):
    allowed = sorted(int(a) for a in allowed)
    return TurnAction(max(allowed, key=lambda a: (q[a], -a)))


def select_action(p, s_assembled, epsilon, allowed, rng):
    """Epsilon-greedy over the turns that exist for the pursuer's lane."""
    allowed = sorted(int(a) for a in allowed)
    if epsilon > 0 and rng.random() < epsilon:
        return TurnAction(allowed[int(rng.integers(len(allowed)))])
    return greedy(q_values(p, s_assembled), allowed)


def q_target(p, t_next_assembled, r, gamma, terminal, steps=1):
    if terminal:
        return float(r)
    q = nn_core.forward(p.target, t_next_assembled)[0]
    return float(r + gamma ** steps * q.max())


def target_sync(p):
    p.steps_since_sync += 1
    if p.steps_since_sync >= p.sync_period:
        p.target.copy_from(p.online)
        p.steps_since_sync = 0
    return p


def reward_components(net, prev, now, pursuer_id, events, cfg=RewardConfig()):
    """``(distance, time, task)`` parts of one pursuer's reward for a step."""
    seen = [m for m in visible_evaders(net, now, pursuer_id) if prev.active[m]]
    deltas = [distance(net, now, pursuer_id, m) - distance(net, prev, pursuer_id, m) for m in seen]
    if cfg.nearest_only and deltas:
        near = int(np.argmin([distance(net, now, pursuer_id, m) for m in seen]))
        deltas = [deltas[near]]
    r_dis = -cfg.distance_weight * float(sum(deltas))
    r_task = cfg.capture_reward if events else 0.0
    return r_dis, cfg.step_reward, r_task


def compute_reward(net, prev, now, pursuer_id, events, cfg=RewardConfig()):
    r_dis, r_time, r_task = reward_components(net, prev, now, pursuer_id, events, cfg)
    return r_dis + r_time + r_task


def pursuer_ids(state):
    return [int(v) for v in np.flatnonzero(state.role == VehicleRole.PURSUER)]


def save_dqn(p):
    on, tg = nn_core.save(p.online), nn_core.save(p.target)
    return (DQN_MAGIC + struct.pack("<QQ", p.sync_period, p.steps_since_sync) + on + tg)


def load_dqn(data):
    data = bytes(data)
    if data[:4] != DQN_MAGIC:
        raise nn_core.CheckpointError("bad DQN magic tag")
    try:
        sync_period, since = struct.unpack_from("<QQ", data, 4)
    except struct.error as exc:
        raise nn_core.CheckpointError("truncated DQN header") from exc
    online, pos = nn_core._load_prefix(data, 20)
    target, pos = nn_core._load_prefix(data, pos)
    if pos != len(data):
        raise nn_core.CheckpointError("trailing bytes after DQN checkpoint")
    if online.sizes != target.sizes or online.out_width != NUM_ACTIONS:
        raise nn_core.CheckpointError("online/target networks do not match")
    return DqnParams(online, target, int(sync_period), int(since))
