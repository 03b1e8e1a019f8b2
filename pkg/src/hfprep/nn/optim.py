"""AdamW with named parameter groups and a plateau-halving schedule."""
from dataclasses import dataclass, field

import numpy as np


@dataclass
class ParamGroup:
    names: list
    lr: float
    weight_decay: float = 0.01
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8


@dataclass
class OptimizerState:
    groups: list
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def make_optimizer(groups):
    return OptimizerState(list(groups))


def adamw_step(params, grads, state):
    """Update ``params`` in place (decoupled weight decay)."""
    state.step += 1
    t = state.step
    for g in state.groups:
        b1, b2 = g.betas
        c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
        for name in g.names:
            p, grad = params[name], grads[name]
            if p.shape != grad.shape:
                raise ValueError(f"{name}: grad shape {grad.shape} != param shape {p.shape}")
            m = state.m.get(name)
            if m is None:
                m = state.m[name] = np.zeros_like(p)
                state.v[name] = np.zeros_like(p)
            v = state.v[name]
            m *= b1
            m += (1 - b1) * grad
            v *= b2
            v += (1 - b2) * grad * grad
            if g.weight_decay:
                p *= 1 - g.lr * g.weight_decay
            p -= (g.lr * (m / c1) / (np.sqrt(v / c2) + g.eps)).astype(p.dtype)
    return params, state


class PlateauHalver:
    """Halve every group's lr when the epoch loss sets no new best for
    ``patience`` consecutive epochs."""

    def __init__(self, state, patience=5, factor=0.5):
        self.state = state
        self.patience = patience
        self.factor = factor
        self.best = float("inf")
        self.bad_epochs = 0

    def epoch_end(self, loss):
        """Returns True when the rates were just reduced."""
        if loss < self.best:
            self.best = loss
            self.bad_epochs = 0
            return False
        self.bad_epochs += 1
        if self.bad_epochs >= self.patience:
            for g in self.state.groups:
                g.lr *= self.factor
            self.bad_epochs = 0
            return True
        return False
