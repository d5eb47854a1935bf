"""A fixed 5-state, 3-action deterministic MDP and its value-iteration Q*."""

import numpy as np

from teampursuit.evader_policy import EvaderTrainConfig, QTable, q_update

# NEXT[s][a], REWARD[s][a]; state 4 is absorbing-terminal
NEXT = np.array([[1, 2, 0], [3, 0, 2], [4, 1, 3], [4, 2, 0], [4, 4, 4]])
REWARD = np.array([[0.0, 1.0, -0.5], [2.0, 0.0, -1.0], [5.0, 0.5, 0.0], [10.0, -2.0, 1.0], [0.0, 0.0, 0.0]])
TERMINAL = 4
GAMMA = 0.9


def value_iteration(tol=1e-13):
    q = np.zeros((5, 3))
    while True:
        v = q.max(axis=1)
        v[TERMINAL] = 0.0
        new = REWARD + GAMMA * v[NEXT]
        new[TERMINAL] = 0.0
        if np.max(np.abs(new - q)) < tol:
            return new
        q = new


def learn(updates=100_000, alpha=0.5, seed=0):
    """Q-learning with uniformly random (state, action) sampling."""
    cfg = EvaderTrainConfig(alpha=alpha, gamma=GAMMA)
    tbl = QTable()
    rng = np.random.default_rng(seed)
    pairs = rng.integers(0, 4 * 3, size=updates)
    for k in pairs:
        s, a = divmod(int(k), 3)
        nxt = int(NEXT[s, a])
        q_update(tbl, (s,), a, float(REWARD[s, a]), (nxt,), cfg, terminal=nxt == TERMINAL)
    return np.array([[tbl.get((s,), a) for a in range(3)] for s in range(5)])
