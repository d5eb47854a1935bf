"""Training loop for the pursuing team and greedy evaluation.

Pursuers only act when they approach an intersection.  By default a
transition spans two consecutive decisions of the same pursuer: its reward is
the discounted sum of the per-step rewards in between and the bootstrap uses
``gamma ** steps``.  ``transitions="step"`` records one transition per pursuer
per simulation step instead, replaying the latched turn.
"""

import csv
from concurrent.futures import ProcessPoolExecutor
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn_core
from .evader_policy import load_qtables, save_qtables, select_action as evader_action
from .loss_core import BatchLossReport, Critic, mi_contrastive, td_loss, td_targets, united_loss
from .observation import (ObservationPool, joint_evader_key, joint_observe,
                          stack_observations, stack_windows)
from .opponent_model import STRATEGY_WIDTH, EncoderParams, encode, init_strategy
from .pursuer_agent import (DQN_HIDDEN, DqnParams, PursuerState, ReplayBuffer, RewardConfig,
                            Transition, assemble_batch, compute_reward, load_dqn, save_dqn,
                            select_action, target_sync)
from .traffic_sim import VehicleRole, deciding_vehicles, reset, step, trajectory_lines

METRICS_HEADER = ["episode", "undiscounted", "discounted", "completion_step", "captures",
                  "l1", "mi", "total_loss"]
CRITIC_MAGIC = b"CRT1"


@dataclass(frozen=True)
class TrainConfig:
    episodes: int = 2000
    batch_size: int = 32
    lr: float = 1e-3
    gamma: float = 0.95
    epsilon: float = 0.05
    h: int = 3
    pool_capacity: int = 16
    sync_period: int = 200
    mi_weight: float = 1.0
    buffer_capacity: int = 10000
    seed: int = 0
    no_adj: bool = False
    transitions: str = "decision"
    nearest_only: bool = False
    d_pi: int = STRATEGY_WIDTH
    encoder_hidden: tuple = (128, 128, 128)
    dqn_hidden: tuple = DQN_HIDDEN

    def validate(self):
        problems = []
        for name in ("episodes", "batch_size", "h", "sync_period", "buffer_capacity", "d_pi"):
            if getattr(self, name) < (0 if name == "episodes" else 1):
                problems.append(f"{name} must be positive")
        if self.h > self.pool_capacity:
            problems.append("h exceeds the history pool capacity")
        if not self.lr > 0:
            problems.append("lr must be > 0")
        if not 0 <= self.gamma <= 1:
            problems.append("gamma must be in [0, 1]")
        if not 0 <= self.epsilon <= 1:
            problems.append("epsilon must be in [0, 1]")
        if self.mi_weight < 0:
            problems.append("mi_weight must be >= 0")
        if self.transitions not in ("decision", "step"):
            problems.append("transitions must be 'decision' or 'step'")
        if self.batch_size > self.buffer_capacity:
            problems.append("batch_size exceeds buffer_capacity")
        if self.batch_size < 2 and self.mi_weight > 0:
            problems.append("the contrastive MI term needs batch_size >= 2")
        if problems:
            raise ValueError("; ".join(problems))
        return self


@dataclass
class EpisodeMetrics:
    episode: int
    undiscounted: float
    discounted: float
    completion_step: int
    captures: int
    capture_times: dict = field(default_factory=dict)
    l1: float = math.nan
    mi: float = math.nan
    total_loss: float = math.nan

    def row(self):
        return [str(self.episode), repr(self.undiscounted), repr(self.discounted),
                str(self.completion_step), str(self.captures),
                repr(self.l1), repr(self.mi), repr(self.total_loss)]


class Learner:
    """Encoder, Q-network pair and critic, updated with the united loss."""

    def __init__(self, net, obs_width, cfg, rng):
        self.net = net
        self.cfg = cfg
        self.obs_width = obs_width
        self.encoder = EncoderParams.init(obs_width, cfg.h, rng, cfg.d_pi, cfg.encoder_hidden)
        self.dqn = DqnParams.init(obs_width + cfg.d_pi, rng, cfg.dqn_hidden, cfg.sync_period)
        self.critic = Critic.init(obs_width, cfg.d_pi, rng)
        self.opt_dqn = nn_core.AdamState.for_params(self.dqn.online)
        self.opt_enc = nn_core.AdamState.for_params(self.encoder.mlp)
        self.opt_op = nn_core.AdamState.for_params(self.critic.op_proj)
        self.opt_pi = nn_core.AdamState.for_params(self.critic.pi_proj)
        self.updates = 0

    @property
    def pi_slice(self):
        return slice(self.obs_width, self.obs_width + self.cfg.d_pi)

    def strategy(self, window):
        if window is None:
            return init_strategy(self.cfg.d_pi)
        return encode(self.encoder, stack_windows(self.net, [window])[0])[0]

    def _encode_batch(self, states):
        rows = [i for i, s in enumerate(states) if s.window is not None]
        pi = np.zeros((len(states), self.cfg.d_pi))
        tape = None
        if rows:
            out, tape = encode(self.encoder, stack_windows(self.net, [states[i].window for i in rows]))
            pi[rows] = out
        return pi, rows, tape

    def _td_inputs(self, batch):
        s = [t.s for t in batch]
        pi, rows, tape = self._encode_batch(s)
        pi_next, _, _ = self._encode_batch([t.s_next for t in batch])
        S = assemble_batch(self.net, s, pi)
        S_next = assemble_batch(self.net, [t.s_next for t in batch], pi_next)
        disc = np.array([0.0 if t.terminal else self.cfg.gamma ** t.steps for t in batch])
        y = td_targets(self.dqn, S_next, np.array([t.r for t in batch]), disc)
        actions = np.array([t.a for t in batch])
        return S, actions, y, pi, rows, tape

    def update(self, batch):
        S, actions, y, pi, rows, tape = self._td_inputs(batch)
        td = td_loss(self.dqn, S, actions, y, input_cols=self.pi_slice)
        w = self.cfg.mi_weight
        mi = None
        if w != 0.0 and len(rows) >= 2:
            op_now = stack_observations(self.net, [batch[i].s.window[-1] for i in rows])
            mi = mi_contrastive(op_now, pi[rows], self.critic)
        report, d_pi, critic_grads = united_loss(td, mi, w, mi_rows=np.arange(len(rows)))
        if rows:
            enc_grads, _ = nn_core.backward(self.encoder.mlp, tape, d_pi[rows], input_grad=False)
        nn_core.adam_step(self.dqn.online, self.opt_dqn, td.grads, self.cfg.lr)
        if rows:
            nn_core.adam_step(self.encoder.mlp, self.opt_enc, enc_grads, self.cfg.lr)
        if critic_grads is not None:
            nn_core.adam_step(self.critic.op_proj, self.opt_op, critic_grads[0], self.cfg.lr)
            nn_core.adam_step(self.critic.pi_proj, self.opt_pi, critic_grads[1], self.cfg.lr)
        target_sync(self.dqn)
        self.updates += 1
        return report


class PlainDqnLearner(Learner):
    """Reference learner: TD loss only, no critic and no MI machinery at all."""

    def update(self, batch):
        S, actions, y, pi, rows, tape = self._td_inputs(batch)
        td = td_loss(self.dqn, S, actions, y, input_cols=self.pi_slice)
        nn_core.adam_step(self.dqn.online, self.opt_dqn, td.grads, self.cfg.lr)
        if rows:
            g, _ = nn_core.backward(self.encoder.mlp, tape, td.d_input[rows], input_grad=False)
            nn_core.adam_step(self.encoder.mlp, self.opt_enc, g, self.cfg.lr)
        target_sync(self.dqn)
        self.updates += 1
        return BatchLossReport(td.l1, 0.0, td.l1)


def _rng_streams(seed):
    init, explore, replay, episodes = np.random.SeedSequence(seed).spawn(4)
    return (np.random.default_rng(init), np.random.default_rng(explore),
            np.random.default_rng(replay), episodes)


def episode_seeds(seq, n):
    return [int(s) for s in seq.generate_state(max(n, 1), dtype=np.uint32)[:n]]


def run_episode(net, sim_cfg, learner, tables, seed, epsilon, rng, buffer=None, replay_rng=None,
                trace=None, trajectory=None):
    """One episode; learns when ``buffer`` is given, otherwise a pure rollout.

    ``trace`` (a list) receives ``("transition", step, pursuer, transition)``
    and ``("window", step, window)`` records for instrumented checks;
    ``trajectory`` (a list) receives per-vehicle text lines for every step.
    """
    cfg = learner.cfg
    reward_cfg = RewardConfig(nearest_only=cfg.nearest_only)
    include_adj = not cfg.no_adj
    state = reset(net, sim_cfg, seed=seed)
    if trajectory is not None:
        trajectory.extend(trajectory_lines(state))
    pursuers = [int(v) for v in np.flatnonzero(state.role == VehicleRole.PURSUER)]
    slot = {p: k for k, p in enumerate(pursuers)}
    first_evader = sim_cfg.num_pursuers
    op = joint_observe(net, state, include_adj)
    pool = ObservationPool(cfg.h).push(op)
    window = None
    pi = init_strategy(cfg.d_pi)
    pending = {}  # pursuer -> [state, action, discounted reward, steps]
    undisc = np.zeros(len(pursuers))
    disc = np.zeros(len(pursuers))
    reports = []
    captured_at = {}
    done = False
    per_step = cfg.transitions == "step"
    latched = {}

    def store(t, n):
        if buffer is not None:
            buffer.push(t)
        if trace is not None:
            trace.append(("transition", state.clock, n, t))

    while not done:
        decide = deciding_vehicles(net, sim_cfg, state)
        p_ids = [v for v in decide if state.role[v] == VehicleRole.PURSUER]
        e_ids = [v for v in decide if state.role[v] == VehicleRole.EVADER]
        decisions = {}
        if e_ids:
            key = joint_evader_key(net, state)
            for m in e_ids:
                decisions[m] = evader_action(tables[m - first_evader], key, 0.0, rng,
                                             net.available_turns(int(state.lane[m])))
        stored = False
        acting = pursuers if per_step else p_ids
        for n in acting:
            s_n = PursuerState(op.ego(slot[n]), pi, window)
            if n in pending:
                s0, a0, r0, k0 = pending.pop(n)
                store(Transition(s0, a0, r0, s_n, False, k0), n)
                stored = True
            if n in p_ids:
                a = select_action(learner.dqn, s_n.assembled(net), epsilon,
                                  net.available_turns(int(state.lane[n])), rng)
                decisions[n] = a
                latched[n] = int(a)
            elif n not in latched:
                latched[n] = 0
            pending[n] = [s_n, int(decisions.get(n, latched[n])), 0.0, 0]

        if buffer is not None and stored:
            batch = buffer.sample(cfg.batch_size, replay_rng)
            if batch is not None:
                reports.append(learner.update(batch))

        nxt, events, done = step(net, sim_cfg, state, decisions)
        for e in events:
            captured_at[e.evader] = e.step
        for k, n in enumerate(pursuers):
            r = compute_reward(net, state, nxt, n, events, reward_cfg)
            undisc[k] += r
            disc[k] += cfg.gamma ** state.clock * r
            if n in pending:
                pending[n][2] += cfg.gamma ** pending[n][3] * r
                pending[n][3] += 1
        state = nxt
        if trajectory is not None:
            trajectory.extend(trajectory_lines(state))
        op = joint_observe(net, state, include_adj)
        pool.push(op)
        window = pool.window()
        if trace is not None:
            trace.append(("window", state.clock, window))
        upcoming = pursuers if per_step else [
            v for v in deciding_vehicles(net, sim_cfg, state) if state.role[v] == VehicleRole.PURSUER]
        if done or upcoming:
            pi = learner.strategy(window)

    terminal = not np.any(state.active & (state.role == VehicleRole.EVADER))
    stored = False
    for n in pursuers:
        if n in pending:
            s0, a0, r0, k0 = pending.pop(n)
            store(Transition(s0, a0, r0, PursuerState(op.ego(slot[n]), pi, window), terminal, k0), n)
            stored = True
    if buffer is not None and stored:
        batch = buffer.sample(cfg.batch_size, replay_rng)
        if batch is not None:
            reports.append(learner.update(batch))

    metrics = EpisodeMetrics(
        episode=-1, undiscounted=float(undisc.mean()), discounted=float(disc.mean()),
        completion_step=int(state.clock), captures=len(captured_at), capture_times=captured_at)
    if reports:
        metrics.l1 = float(np.mean([r.l1 for r in reports]))
        metrics.mi = float(np.mean([r.mi for r in reports]))
        metrics.total_loss = float(np.mean([r.total for r in reports]))
    return metrics


def train(net, sim_cfg, train_cfg, tables, learner_cls=Learner, progress=None):
    """Train the pursuing team against frozen evader tables.

    Returns ``(learner, metrics)`` with one :class:`EpisodeMetrics` per episode.
    """
    train_cfg.validate()
    sim_cfg.validate()
    if len(tables) != sim_cfg.num_evaders:
        raise ValueError(f"{len(tables)} evader tables for {sim_cfg.num_evaders} evaders")
    init_rng, explore_rng, replay_rng, ep_seq = _rng_streams(train_cfg.seed)
    probe = joint_observe(net, reset(net, sim_cfg, seed=0))
    learner = learner_cls(net, probe.width(net), train_cfg, init_rng)
    buffer = ReplayBuffer(train_cfg.buffer_capacity)
    metrics = []
    for ep, seed in enumerate(episode_seeds(ep_seq, train_cfg.episodes)):
        m = run_episode(net, sim_cfg, learner, tables, seed, train_cfg.epsilon, explore_rng,
                        buffer, replay_rng)
        m.episode = ep
        metrics.append(m)
        if progress is not None:
            progress(m)
    return learner, metrics


def _greedy_rollout(args):
    net, sim_cfg, learner, tables, seed = args
    return run_episode(net, sim_cfg, learner, tables, seed, 0.0, np.random.default_rng(0))


def evaluate(net, sim_cfg, learner, tables, n_episodes, seeds=None, workers=1):
    """Greedy rollouts; returns a summary dict.

    Greedy rollouts draw no random numbers after the scene reset, so running
    them on ``workers`` processes gives the same summary as a serial run.
    """
    if n_episodes <= 0:
        raise ValueError("evaluation needs at least one episode")
    if seeds is None:
        seeds = list(range(n_episodes))
    seeds = list(seeds)[:n_episodes]
    if len(seeds) < n_episodes:
        raise ValueError("fewer seeds than evaluation episodes")
    jobs = [(net, sim_cfg, learner, tables, int(s)) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(_greedy_rollout, jobs))
    else:
        runs = [_greedy_rollout(j) for j in jobs]
    return summarize(runs, sim_cfg.num_evaders)


def summarize(runs, num_evaders):
    und = np.array([r.undiscounted for r in runs])
    steps = np.array([r.completion_step for r in runs])
    return {
        "episodes": len(runs),
        "mean_undiscounted": float(und.mean()),
        "best_undiscounted": float(und.max()),
        "mean_completion_step": float(steps.mean()),
        "best_completion_step": int(steps.min()),
        "capture_rate": float(np.mean([r.captures / num_evaders for r in runs])),
    }


def write_metrics_csv(path_or_file, metrics):
    own = isinstance(path_or_file, (str, Path))
    f = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for m in metrics:
            w.writerow(m.row())
    finally:
        if own:
            f.close()


def metrics_csv_text(metrics):
    buf = io.StringIO()
    write_metrics_csv(buf, metrics)
    return buf.getvalue()


def read_metrics_csv(path):
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0] != METRICS_HEADER:
        raise ValueError(f"{path}: missing or unexpected header")
    out = []
    for k, row in enumerate(rows[1:], 2):
        if len(row) != len(METRICS_HEADER):
            raise ValueError(f"{path}:{k}: expected {len(METRICS_HEADER)} fields")
        try:
            out.append({h: float(v) for h, v in zip(METRICS_HEADER, row)})
        except ValueError as exc:
            raise ValueError(f"{path}:{k}: {exc}") from exc
    return out


def save_critic(critic):
    a, b = nn_core.save(critic.op_proj), nn_core.save(critic.pi_proj)
    return CRITIC_MAGIC + a + b


def load_critic(data):
    data = bytes(data)
    if data[:4] != CRITIC_MAGIC:
        raise nn_core.CheckpointError("bad critic magic tag")
    op_proj, pos = nn_core._load_prefix(data, 4)
    pi_proj, pos = nn_core._load_prefix(data, pos)
    if pos != len(data):
        raise nn_core.CheckpointError("trailing bytes after critic")
    return Critic(op_proj, pi_proj)


def config_text(values):
    return "".join(f"{k}={v}\n" for k, v in values.items())


def save_run(run_dir, learner, tables, config_values):
    run = Path(run_dir)
    run.mkdir(parents=True, exist_ok=True)
    (run / "encoder.bin").write_bytes(nn_core.save(learner.encoder.mlp))
    (run / "dqn.bin").write_bytes(save_dqn(learner.dqn))
    (run / "critic.bin").write_bytes(save_critic(learner.critic))
    (run / "qtables.txt").write_text(save_qtables(tables))
    (run / "config.txt").write_text(config_text(config_values))


def load_run(run_dir, net, train_cfg):
    """Rebuild a learner (and the evader tables) from a checkpoint directory."""
    run = Path(run_dir)
    enc = nn_core.load((run / "encoder.bin").read_bytes())
    dqn = load_dqn((run / "dqn.bin").read_bytes())
    critic = load_critic((run / "critic.bin").read_bytes())
    tables = load_qtables((run / "qtables.txt").read_text())
    if enc.in_width % train_cfg.h:
        raise nn_core.CheckpointError("encoder input width is not a multiple of h")
    obs_width = enc.in_width // train_cfg.h
    if dqn.online.in_width != obs_width + enc.out_width:
        raise nn_core.CheckpointError("DQN input width does not match encoder output")
    learner = Learner.__new__(Learner)
    learner.net = net
    learner.cfg = train_cfg
    learner.obs_width = obs_width
    learner.encoder = EncoderParams(enc, train_cfg.h)
    learner.dqn = dqn
    learner.critic = critic
    learner.updates = 0
    return learner, tables
