"""TD loss, mutual-information terms and the united objective ``L1 - I``.

The MI between joint observations and strategy vectors is trained through a
contrastive (InfoNCE) lower bound on the minibatch: matched ``(op_i, pi_i)``
pairs are positives, every ``(op_i, pi_j)`` with ``j != i`` a negative.  The
plug-in estimator :func:`mi_binned` works on discrete samples and is only used
to check things, never to train.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, softmax

from . import nn_core

CRITIC_HIDDEN = 64
CRITIC_OUT = 32


@dataclass
class TdParts:
    l1: float
    grads: list  # online network
    d_input: np.ndarray  # gradient w.r.t. the requested input columns, per row
    q_sa: np.ndarray
    y: np.ndarray


@dataclass
class MiParts:
    mi: float
    grads_op: list
    grads_pi: list
    d_pi: np.ndarray
    scores: np.ndarray


@dataclass
class BatchLossReport:
    l1: float
    mi: float
    total: float
    grad_norms: dict = field(default_factory=dict)


class Critic:
    """Two projection heads, one for observations and one for strategy vectors."""

    def __init__(self, op_proj, pi_proj):
        self.op_proj = op_proj
        self.pi_proj = pi_proj

    @classmethod
    def init(cls, op_width, d_pi, rng, hidden=CRITIC_HIDDEN, out=CRITIC_OUT):
        return cls(nn_core.MlpParams.init([op_width, hidden, out], rng),
                   nn_core.MlpParams.init([d_pi, hidden, out], rng))


def td_targets(dqn, next_states, rewards, discounts):
    """``r + discount * max_a Q_target(s', a)``; ``discount`` is 0 for terminal rows."""
    q_next = nn_core.forward(dqn.target, next_states)[0]
    return np.asarray(rewards) + np.asarray(discounts) * q_next.max(axis=1)


def td_loss(dqn, states, actions, y, input_cols=True):
    """Mean squared TD error with ``y`` held constant.

    ``input_cols`` picks which input columns get a gradient back (e.g. the
    strategy-vector slice feeding the encoder).
    """
    states = np.atleast_2d(states)
    B = states.shape[0]
    if B == 0:
        raise ValueError("empty batch")
    q, tape = nn_core.forward(dqn.online, states)
    rows = np.arange(B)
    actions = np.asarray(actions, dtype=np.int64)
    diff = q[rows, actions] - y
    l1 = float(np.mean(diff ** 2))
    g = np.zeros_like(q)
    g[rows, actions] = 2.0 * diff / B
    grads, d_in = nn_core.backward(dqn.online, tape, g, input_grad=input_cols)
    return TdParts(l1, grads, d_in, q[rows, actions], np.asarray(y))


def mi_contrastive(op, pi, critic):
    """InfoNCE estimate ``mean_i [f_ii - log(1/B sum_j exp f_ij)]`` and its gradients.

    ``f_ij`` is the dot product of the projected ``op_i`` and ``pi_j``.
    The estimate can never exceed ``log B``.
    """
    op = np.atleast_2d(op)
    pi = np.atleast_2d(pi)
    B = op.shape[0]
    if B < 2 or pi.shape[0] != B:
        raise ValueError("contrastive MI needs matched batches of at least 2 pairs")
    g, tape_g = nn_core.forward(critic.op_proj, op)
    h, tape_h = nn_core.forward(critic.pi_proj, pi)
    F = g @ h.T
    lse = logsumexp(F, axis=1)
    mi = float(np.mean(np.diag(F) - lse) + np.log(B))
    dF = (np.eye(B) - softmax(F, axis=1)) / B
    grads_op, _ = nn_core.backward(critic.op_proj, tape_g, dF @ h, input_grad=False)
    grads_pi, d_pi = nn_core.backward(critic.pi_proj, tape_h, dF.T @ g)
    return MiParts(mi, grads_op, grads_pi, d_pi, F)


def mi_from_joint(p):
    """Exact MI (nats) of a joint probability table."""
    p = np.asarray(p, dtype=np.float64)
    p = p / p.sum()
    px = p.sum(axis=1, keepdims=True)
    py = p.sum(axis=0, keepdims=True)
    nz = p > 0
    return float(np.sum(p[nz] * np.log(p[nz] / (px @ py)[nz])))


def mi_binned(x, y, bins=None):
    """Plug-in MI (nats) from samples.

    Without ``bins`` the values are treated as discrete symbols; with
    ``bins`` they are first cut into that many equal-width bins.
    """
    x = np.asarray(x)
    y = np.asarray(y)
    if len(x) == 0 or len(x) != len(y):
        raise ValueError("need at least one matched (x, y) sample")
    if bins is not None:
        x = np.digitize(x, np.histogram_bin_edges(x, bins)[1:-1])
        y = np.digitize(y, np.histogram_bin_edges(y, bins)[1:-1])
    _, xi = np.unique(x, return_inverse=True, axis=0 if x.ndim > 1 else None)
    _, yi = np.unique(y, return_inverse=True, axis=0 if y.ndim > 1 else None)
    xi, yi = xi.ravel(), yi.ravel()
    counts = np.zeros((xi.max() + 1, yi.max() + 1))
    np.add.at(counts, (xi, yi), 1.0)
    return mi_from_joint(counts)


def _norm(grads):
    return float(np.sqrt(sum(np.sum(g.W ** 2) + np.sum(g.b ** 2) for g in grads)))


def united_loss(td, mi, weight=1.0, mi_rows=None):
    """Combine the TD and MI parts into ``total = l1 - weight * mi``.

    Returns the report and the gradient with respect to the strategy vectors
    of the batch (rows of ``td.d_input``); MI gradients land on ``mi_rows``.
    Critic gradients, scaled for descent on ``total``, come back as a pair.
    """
    d_pi = np.array(td.d_input, copy=True)
    critic_grads = None
    mi_value = 0.0
    if mi is not None and weight != 0.0:
        rows = np.arange(len(d_pi)) if mi_rows is None else np.asarray(mi_rows)
        d_pi[rows] -= weight * mi.d_pi
        critic_grads = (nn_core.scale_grads(mi.grads_op, -weight),
                        nn_core.scale_grads(mi.grads_pi, -weight))
        mi_value = mi.mi
    total = td.l1 - weight * mi_value
    norms = {"dqn": _norm(td.grads)}
    if critic_grads is not None:
        norms["critic"] = _norm(critic_grads[0]) + _norm(critic_grads[1])
    report = BatchLossReport(td.l1, mi_value, total, norms)
    return report, d_pi, critic_grads
