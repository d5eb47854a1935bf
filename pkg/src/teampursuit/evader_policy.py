"""Tabular Q-learning for the evading team.

Every evader keeps its own table, but all tables are keyed by the joint
observation (the concatenated cell counts of the whole team), so each
evader's choice depends on what its teammates see as well.
"""

from dataclasses import dataclass

import numpy as np

from .observation import joint_evader_key
from .road_network import TurnAction
from .traffic_sim import SimConfig, VehicleRole, deciding_vehicles, positions, reset, step

ACTIONS = tuple(TurnAction)


class QTableError(ValueError):
    pass


class QTable:
    """Sparse ``(joint key, action) -> value`` map; missing entries read as 0."""

    def __init__(self, entries=None):
        self.entries = dict(entries or {})

    def get(self, key, action):
        return self.entries.get((tuple(key), int(action)), 0.0)

    def set(self, key, action, value):
        self.entries[(tuple(key), int(action))] = float(value)

    def values(self, key):
        key = tuple(key)
        return np.array([self.entries.get((key, a), 0.0) for a in range(len(ACTIONS))])

    def __len__(self):
        return len(self.entries)

    def __eq__(self, other):
        return isinstance(other, QTable) and self.entries == other.entries

    def copy(self):
        return QTable(self.entries)


@dataclass(frozen=True)
class EvaderTrainConfig:
    alpha: float = 0.1
    gamma: float = 0.95
    epsilon: float = 0.1
    epsilon_final: float = 0.01
    episodes: int = 500
    capture_penalty: float = 10.0
    distance_weight: float = 2.0
    seed: int = 0

    def validate(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must be in (0, 1]")
        if not 0 <= self.gamma <= 1:
            raise ValueError("gamma must be in [0, 1]")
        for eps in (self.epsilon, self.epsilon_final):
            if not 0 <= eps <= 1:
                raise ValueError("epsilon must be in [0, 1]")
        if self.episodes < 0:
            raise ValueError("episodes must be >= 0")
        return self


def q_update(tbl, key, a, r, next_key, cfg, terminal=False):
    old = tbl.get(key, a)
    future = 0.0 if terminal else cfg.gamma * tbl.values(next_key).max()
    tbl.set(key, a, old + cfg.alpha * (r + future - old))
    return tbl


def select_action(tbl, key, epsilon, rng, allowed=ACTIONS):
    """Epsilon-greedy over ``allowed`` turns; ties go to the lowest action index."""
    allowed = sorted(int(a) for a in allowed)
    if epsilon > 0 and rng.random() < epsilon:
        return TurnAction(allowed[int(rng.integers(len(allowed)))])
    q = tbl.values(key)
    return TurnAction(max(allowed, key=lambda a: (q[a], -a)))


def _nearest_pursuer_distance(net, state):
    pursuers = np.flatnonzero((state.role == VehicleRole.PURSUER) & state.active)
    evaders = np.flatnonzero(state.role == VehicleRole.EVADER)
    pp = positions(net, state, pursuers)
    ep = positions(net, state, evaders)
    d = np.hypot(ep[:, None, 0] - pp[None, :, 0], ep[:, None, 1] - pp[None, :, 1])
    return d.min(axis=1)


def evader_rewards(net, prev, now, events, cfg):
    """Per-evader reward: weighted growth of the gap to the nearest pursuer,
    minus a penalty on capture.  Evaders already captured before this step get 0."""
    d0 = _nearest_pursuer_distance(net, prev)
    d1 = _nearest_pursuer_distance(net, now)
    evaders = np.flatnonzero(now.role == VehicleRole.EVADER)
    r = cfg.distance_weight * (d1 - d0)
    captured = {e.evader for e in events}
    out = {}
    for i, m in enumerate(evaders):
        m = int(m)
        if not prev.active[m]:
            continue
        out[m] = -cfg.capture_penalty if m in captured else float(r[i])
    return out


def random_pursuer_decisions(net, state, ids, rng):
    return {v: TurnAction(int(rng.choice(net.available_turns(int(state.lane[v]))))) for v in ids}


def run_episode(net, sim_cfg, tables, seed, evader_epsilon, rng, train_cfg=None):
    """Roll out one episode with random pursuers and table-driven evaders.

    With ``train_cfg`` set, tables are updated in place at every evader
    decision (reward summed between decisions).  Returns the episode's final
    clock and, per evader, the step it was captured (or None).
    """
    state = reset(net, sim_cfg, seed=seed)
    first_evader = sim_cfg.num_pursuers
    pending = {}  # evader -> (key, action, accumulated reward)
    captured_at = {first_evader + k: None for k in range(sim_cfg.num_evaders)}
    done = False
    while not done:
        decide = deciding_vehicles(net, sim_cfg, state)
        p_ids = [v for v in decide if state.role[v] == VehicleRole.PURSUER]
        e_ids = [v for v in decide if state.role[v] == VehicleRole.EVADER]
        decisions = random_pursuer_decisions(net, state, p_ids, rng)
        if e_ids:
            key = joint_evader_key(net, state)
            for m in e_ids:
                tbl = tables[m - first_evader]
                if train_cfg is not None and m in pending:
                    k0, a0, r0 = pending.pop(m)
                    q_update(tbl, k0, a0, r0, key, train_cfg)
                a = select_action(tbl, key, evader_epsilon, rng,
                                  net.available_turns(int(state.lane[m])))
                decisions[m] = a
                if train_cfg is not None:
                    pending[m] = (key, a, 0.0)
        nxt, events, done = step(net, sim_cfg, state, decisions)
        for e in events:
            captured_at[e.evader] = e.step
        if train_cfg is not None:
            rewards = evader_rewards(net, state, nxt, events, train_cfg)
            caught = {e.evader for e in events}
            for m, r in rewards.items():
                if m in pending:
                    k0, a0, r0 = pending[m]
                    pending[m] = (k0, a0, r0 + r)
                if m in caught and m in pending:
                    k0, a0, r0 = pending.pop(m)
                    q_update(tables[m - first_evader], k0, a0, r0, k0, train_cfg, terminal=True)
        state = nxt
    if train_cfg is not None and pending:
        # time limit is not a terminal state: bootstrap from the last joint key
        key = joint_evader_key(net, state)
        for m, (k0, a0, r0) in pending.items():
            q_update(tables[m - first_evader], k0, a0, r0, key, train_cfg)
    return state.clock, captured_at


def pretrain(net, cfg_sim: SimConfig, cfg_train: EvaderTrainConfig, progress=None):
    """Train one table per evader against uniformly random pursuers."""
    cfg_train.validate()
    tables = [QTable() for _ in range(cfg_sim.num_evaders)]
    rng = np.random.default_rng(cfg_train.seed)
    seeds = np.random.SeedSequence(cfg_train.seed).generate_state(max(cfg_train.episodes, 1))
    n = cfg_train.episodes
    log = []
    for ep in range(n):
        frac = ep / max(n - 1, 1)
        eps = cfg_train.epsilon + (cfg_train.epsilon_final - cfg_train.epsilon) * frac
        clock, captured_at = run_episode(net, cfg_sim, tables, int(seeds[ep]), eps, rng, cfg_train)
        log.append((ep, clock, sum(v is not None for v in captured_at.values()), eps))
        if progress is not None:
            progress(ep, clock)
    return tables, log


def evasion_durations(net, cfg_sim, tables, seeds, epsilon=0.0, rng_seed=0):
    """Mean evader survival time (steps until capture, or the clock at episode end)."""
    rng = np.random.default_rng(rng_seed)
    out = []
    for seed in seeds:
        clock, captured_at = run_episode(net, cfg_sim, tables, int(seed), epsilon, rng)
        out.append(np.mean([clock if c is None else c for c in captured_at.values()]))
    return np.array(out)


def save_qtables(tables):
    """Text dump; ``#table m`` headers, then ``key-integers|action|value`` lines."""
    lines = []
    for m, tbl in enumerate(tables):
        lines.append(f"#table {m}")
        for (key, a), value in sorted(tbl.entries.items()):
            lines.append(f"{','.join(str(k) for k in key)}|{a}|{value!r}")
    return "\n".join(lines) + ("\n" if lines else "")


def load_qtables(text):
    tables = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#table"):
            tables.append(QTable())
            continue
        if not tables:
            raise QTableError(f"line {lineno}: entry before any #table header")
        parts = line.split("|")
        if len(parts) != 3:
            raise QTableError(f"line {lineno}: expected key|action|value")
        try:
            key = tuple(int(k) for k in parts[0].split(",")) if parts[0] else ()
            action = int(parts[1])
            value = float(parts[2])
        except ValueError as exc:
            raise QTableError(f"line {lineno}: {exc}") from exc
        if action not in range(len(ACTIONS)):
            raise QTableError(f"line {lineno}: action {action} out of range")
        entries = tables[-1].entries
        if (key, action) in entries:
            raise QTableError(f"line {lineno}: duplicate entry for {key}|{action}")
        entries[(key, action)] = value
    return tables
