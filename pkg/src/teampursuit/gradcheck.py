"""Finite-difference checks of every analytic gradient path.

Each suite draws random tiny instances, picks a handful of coordinates and
compares the analytic derivative with a central difference.  The reported
number is the worst relative error seen.
"""

from dataclasses import dataclass

import numpy as np

from . import nn_core
from .loss_core import Critic, mi_contrastive, td_loss, united_loss
from .pursuer_agent import DqnParams

STEP = 1e-5
FLOOR = 1e-5  # relative errors of near-zero derivatives are measured against this
TOLERANCES = {"nn_core": 1e-4, "td_loss": 1e-4, "mi_contrastive": 1e-4, "united_loss": 1e-3}


@dataclass
class SuiteResult:
    name: str
    instances: int
    checked: int
    max_rel_error: float
    tolerance: float

    @property
    def passed(self):
        return bool(self.max_rel_error < self.tolerance)


def _coords(rng, arr, k):
    flat = rng.choice(arr.size, size=min(k, arr.size), replace=False)
    return [np.unravel_index(int(i), arr.shape) for i in flat]


def _check(f, arrays_and_grads, rng, per_array):
    worst, n = 0.0, 0
    for arr, grad in arrays_and_grads:
        for idx in _coords(rng, arr, per_array):
            num = nn_core.central_difference(f, arr, idx, STEP)
            worst = max(worst, nn_core.relative_error(grad[idx], num, FLOOR))
            n += 1
    return worst, n


def _mlp_pairs(p, grads):
    out = []
    for (dW, db), W, b in zip(nn_core.dense_grads(p, grads), p.weights, p.biases):
        out += [(W, dW), (b, db)]
    return out


def check_mlp(rng, per_array=4):
    """Gradient of ``sum(G * f(x))`` for a random MLP, dense or column-sparse input."""
    sparse = rng.random() < 0.5
    width = 300 if sparse else int(rng.integers(2, 7))
    sizes = [width] + [int(n) for n in rng.integers(2, 6, size=int(rng.integers(1, 3)))] + [int(rng.integers(1, 4))]
    p = nn_core.MlpParams.init(sizes, rng)
    for b in p.biases:
        b[:] = rng.normal(0, 0.3, size=b.shape)
    x = rng.normal(size=(int(rng.integers(1, 5)), width))
    if sparse:
        x[:, rng.random(width) < 0.9] = 0.0
    G = rng.normal(size=(x.shape[0], sizes[-1]))

    def f():
        return float(np.sum(G * nn_core.forward(p, x)[0]))

    y, tape = nn_core.forward(p, x)
    grads, gx = nn_core.backward(p, tape, G)
    pairs = _mlp_pairs(p, grads)
    if sparse:
        live = np.flatnonzero(np.any(x != 0, axis=0))
        # weights on all-zero input columns must get exactly zero gradient
        dead = np.setdiff1d(np.arange(width), live)
        if np.any(pairs[0][1][:, dead]):
            return np.inf, 1
    pairs.append((x, gx))
    return _check(f, pairs, rng, per_array)


def _tiny_dqn(rng, width):
    p = DqnParams.init(width, rng, hidden=(5, 4))
    p.target = nn_core.MlpParams.init(p.online.sizes, rng)
    return p


def check_td(rng, per_array=4):
    op_w, d_pi, B = int(rng.integers(2, 6)), int(rng.integers(1, 4)), int(rng.integers(1, 6))
    dqn = _tiny_dqn(rng, op_w + d_pi)
    S = rng.normal(size=(B, op_w + d_pi))
    a = rng.integers(0, 3, size=B)
    y = rng.normal(size=B)
    pi_cols = slice(op_w, op_w + d_pi)

    def f():
        return td_loss(dqn, S, a, y).l1

    td = td_loss(dqn, S, a, y, input_cols=pi_cols)
    d_full = np.zeros_like(S)
    d_full[:, pi_cols] = td.d_input
    pairs = _mlp_pairs(dqn.online, td.grads)
    worst, n = _check(f, pairs, rng, per_array)
    # the strategy slice only
    for r, c in [(int(rng.integers(B)), op_w + int(rng.integers(d_pi))) for _ in range(per_array)]:
        num = nn_core.central_difference(f, S, (r, c), STEP)
        worst = max(worst, nn_core.relative_error(d_full[r, c], num, FLOOR))
        n += 1
    return worst, n


def check_mi(rng, per_array=4):
    B, op_w, d_pi = int(rng.integers(2, 6)), int(rng.integers(2, 6)), int(rng.integers(1, 4))
    critic = Critic(nn_core.MlpParams.init([op_w, 5, 3], rng), nn_core.MlpParams.init([d_pi, 5, 3], rng))
    op = rng.normal(size=(B, op_w))
    pi = rng.normal(size=(B, d_pi))

    def f():
        return mi_contrastive(op, pi, critic).mi

    mi = mi_contrastive(op, pi, critic)
    pairs = (_mlp_pairs(critic.op_proj, mi.grads_op) + _mlp_pairs(critic.pi_proj, mi.grads_pi)
             + [(pi, mi.d_pi)])
    return _check(f, pairs, rng, per_array)


def check_united(rng, per_array=4, weight=1.0):
    """``total`` as a function of encoder and critic weights, through the whole pipeline."""
    B, op_w, d_pi, win_w = int(rng.integers(2, 6)), 4, 3, 6
    enc = nn_core.MlpParams.init([win_w, 5, d_pi], rng)
    dqn = _tiny_dqn(rng, op_w + d_pi)
    critic = Critic(nn_core.MlpParams.init([op_w, 5, 3], rng), nn_core.MlpParams.init([d_pi, 5, 3], rng))
    windows = rng.normal(size=(B, win_w))
    op = rng.normal(size=(B, op_w))
    a = rng.integers(0, 3, size=B)
    y = rng.normal(size=B)
    pi_cols = slice(op_w, op_w + d_pi)

    def pieces():
        pi, tape = nn_core.forward(enc, windows)
        S = np.concatenate([op, pi], axis=1)
        td = td_loss(dqn, S, a, y, input_cols=pi_cols)
        mi = mi_contrastive(op, pi, critic)
        report, d_pi_all, cg = united_loss(td, mi, weight)
        return report, d_pi_all, cg, tape, td

    def f():
        return pieces()[0].total

    report, d_pi_all, cg, tape, td = pieces()
    enc_grads, _ = nn_core.backward(enc, tape, d_pi_all, input_grad=False)
    pairs = _mlp_pairs(enc, enc_grads) + _mlp_pairs(dqn.online, td.grads)
    pairs += _mlp_pairs(critic.op_proj, cg[0]) + _mlp_pairs(critic.pi_proj, cg[1])
    return _check(f, pairs, rng, per_array)


SUITES = {"nn_core": check_mlp, "td_loss": check_td, "mi_contrastive": check_mi,
          "united_loss": check_united}


def run_all(instances=20, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for name, fn in SUITES.items():
        worst, n = 0.0, 0
        for _ in range(instances):
            w, k = fn(rng)
            worst, n = max(worst, w), n + k
        out.append(SuiteResult(name, instances, n, worst, TOLERANCES[name]))
    return out


def format_report(results):
    lines = []
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{status} {r.name:15s} instances={r.instances} coords={r.checked} "
                     f"max_rel_error={r.max_rel_error:.3e} tol={r.tolerance:.0e}")
    return "\n".join(lines)
