"""Encoder from a short history of joint pursuer observations to a strategy vector.

One encoder is shared by the whole pursuing team and models the evading team
jointly.  Its output is concatenated to every pursuer's DQN state.
"""

import numpy as np

from . import nn_core

STRATEGY_WIDTH = 64
HIDDEN = (128, 128, 128)


class EncoderParams:
    def __init__(self, mlp, h):
        self.mlp = mlp
        self.h = h

    @classmethod
    def init(cls, obs_width, h, rng, d_pi=STRATEGY_WIDTH, hidden=HIDDEN):
        return cls(nn_core.MlpParams.init([h * obs_width, *hidden, d_pi], rng), h)

    @property
    def in_width(self):
        return self.mlp.in_width

    @property
    def d_pi(self):
        return self.mlp.out_width


def encode(enc, window):
    """Strategy model for one window vector, or a batch of them (rows)."""
    window = np.asarray(window, dtype=np.float64)
    if window.shape[-1] != enc.in_width:
        raise ValueError(f"window width {window.shape[-1]} != encoder input {enc.in_width}")
    return nn_core.forward(enc.mlp, window)


def init_strategy(d_pi=STRATEGY_WIDTH):
    return np.zeros(d_pi)
