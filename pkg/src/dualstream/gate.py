"""Voice gate: audio-only speech confidence plus the score-correction rule.

The gate is a pure post-processor.  A small temporal network (two 1-d
convolutions, one bidirectional tanh recurrence, a linear head and a
sigmoid squash) maps the pooled audio frames of a scene to a per-frame
speech confidence p_hat in (0, 1).  At evaluation time each positive main
score s is rescaled by

    alpha = min(p_hat / (t_veto + eps), 1)   if p_hat < t_veto, else 1
    s_final = s * ((1 - gamma) + gamma * alpha)   if s > t_main, else s

so frames with weak audio evidence have their confident predictions
downgraded while everything else passes through unchanged.  The multiplier
is bounded in [1 - gamma, 1]: gating can shrink a positive score but never
flip its sign.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError
from .tensor import (Parameter, Tensor, add, concat, gelu, getitem,
                     init_uniform, linear, matmul, pad_axis, reshape,
                     sigmoid, tanh)

# keeps voice_confidence strictly inside (0, 1) even when the trained head
# saturates the float64 sigmoid
_SQUASH_MARGIN = 1e-9


@dataclass(frozen=True)
class GateParams:
    """Thresholds and blend weight for the score-correction rule."""

    t_main: float = 0.0
    t_veto: float = 0.06
    gamma: float = 0.8
    eps: float = 1e-6

    def __post_init__(self):
        if not (0.0 < self.t_veto < 1.0):
            raise ContractError(f"t_veto must lie in (0, 1), got {self.t_veto}")
        if not (0.0 <= self.gamma <= 1.0):
            raise ContractError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.eps <= 0.0:
            raise ContractError(f"eps must be > 0, got {self.eps}")


def gate_scale(p_hat: float, gp: GateParams) -> float:
    """Scaling factor alpha in (0, 1]; equals 1 whenever p_hat >= t_veto."""
    if p_hat >= gp.t_veto:
        return 1.0
    return min(p_hat / (gp.t_veto + gp.eps), 1.0)


def gate_apply(s: float, p_hat: float, gp: GateParams) -> float:
    """Reconciled score: scores above t_main are blended toward (1-gamma)*s."""
    if s <= gp.t_main:
        return s
    alpha = gate_scale(p_hat, gp)
    return s * ((1.0 - gp.gamma) + gp.gamma * alpha)


def gate_batch(scores: np.ndarray, p_hat: np.ndarray, gp: GateParams) -> np.ndarray:
    """Vectorized gate over [S, T] scores with one shared p_hat per frame."""
    scores = np.asarray(scores, dtype=np.float64)
    p_hat = np.asarray(p_hat, dtype=np.float64)
    if scores.ndim != 2 or p_hat.ndim != 1 or scores.shape[1] != p_hat.shape[0]:
        raise DimensionError(
            f"gate_batch: scores {scores.shape} incompatible with "
            f"p_hat {p_hat.shape}")
    alpha = np.where(p_hat < gp.t_veto,
                     np.minimum(p_hat / (gp.t_veto + gp.eps), 1.0), 1.0)
    multiplier = (1.0 - gp.gamma) + gp.gamma * alpha
    return np.where(scores > gp.t_main, scores * multiplier, scores)


class ConfidenceNet:
    """Conv-conv-biRNN-linear speech detector over pooled audio frames."""

    def __init__(self, in_dim, conv_hidden, rnn_hidden, rng, name="gate"):
        self.in_dim = in_dim
        self.conv_hidden = conv_hidden
        self.rnn_hidden = rnn_hidden

        def conv(tag, cin, cout, k=3):
            w = Parameter(init_uniform(rng, k * cin, (k, cin, cout)),
                          f"{name}.{tag}_w")
            b = Parameter(np.zeros(cout), f"{name}.{tag}_b")
            return w, b

        def rnn(tag, cin, h):
            wx = Parameter(init_uniform(rng, cin, (cin, h)), f"{name}.{tag}_wx")
            wh = Parameter(init_uniform(rng, h, (h, h)), f"{name}.{tag}_wh")
            b = Parameter(np.zeros(h), f"{name}.{tag}_b")
            return wx, wh, b

        self.c1_w, self.c1_b = conv("conv1", in_dim, conv_hidden)
        self.c2_w, self.c2_b = conv("conv2", conv_hidden, conv_hidden)
        self.fwd = rnn("rnn_fwd", conv_hidden, rnn_hidden)
        self.bwd = rnn("rnn_bwd", conv_hidden, rnn_hidden)
        self.out_w = Parameter(init_uniform(rng, 2 * rnn_hidden,
                                            (2 * rnn_hidden, 1)), f"{name}.out_w")
        self.out_b = Parameter(np.zeros(1), f"{name}.out_b")

    def parameters(self):
        return [self.c1_w, self.c1_b, self.c2_w, self.c2_b,
                *self.fwd, *self.bwd, self.out_w, self.out_b]

    def _conv(self, x, w, b):
        # same-padded 1-d convolution as a sum of shifted matmuls
        k = w.shape[0]
        t = x.shape[0]
        xp = pad_axis(x, 0, k // 2, k - 1 - k // 2)
        out = None
        for j in range(k):
            term = matmul(getitem(xp, (slice(j, j + t),)), getitem(w, (j,)))
            out = term if out is None else add(out, term)
        return add(out, b)

    def _recur(self, x, weights, reverse):
        wx, wh, b = weights
        t = x.shape[0]
        h = Tensor(np.zeros((1, self.rnn_hidden)))
        states = [None] * t
        order = range(t - 1, -1, -1) if reverse else range(t)
        for i in order:
            step = add(add(matmul(getitem(x, (slice(i, i + 1),)), wx),
                           matmul(h, wh)), b)
            h = tanh(step)
            states[i] = h
        return concat(states, axis=0)

    def logits(self, frames) -> Tensor:
        """Per-frame speech logits, shape [T]; used for training."""
        x = frames if isinstance(frames, Tensor) else Tensor(frames)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise DimensionError(
                f"confidence net expects [T, {self.in_dim}], got {x.shape}")
        x = gelu(self._conv(x, self.c1_w, self.c1_b))
        x = gelu(self._conv(x, self.c2_w, self.c2_b))
        both = concat([self._recur(x, self.fwd, reverse=False),
                       self._recur(x, self.bwd, reverse=True)], axis=1)
        return reshape(linear(both, self.out_w, self.out_b), (x.shape[0],))


def voice_confidence(frames, net: ConfidenceNet) -> Tensor:
    """Frame-level speech confidence in the open interval (0, 1)."""
    p = sigmoid(net.logits(frames))
    return add(p * (1.0 - 2.0 * _SQUASH_MARGIN), _SQUASH_MARGIN)
