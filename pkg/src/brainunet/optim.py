"""Functional Adam with bias correction.

Parameters, gradients and moments are dicts of named arrays (numpy or
torch).  The step is pure: it returns fresh parameter and state dicts, which
keeps optimizer behavior directly testable and leaves in-place mutation
decisions to the training loop.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch


@dataclass
class AdamState:
    """First/second moment estimates plus the shared step counter."""

    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def _zeros_like(x):
    if isinstance(x, torch.Tensor):
        return torch.zeros_like(x.detach())
    return np.zeros_like(x)


def _all_finite(x):
    if isinstance(x, torch.Tensor):
        return bool(torch.isfinite(x).all())
    return bool(np.all(np.isfinite(x)))


def init_adam_state(params: dict) -> AdamState:
    return AdamState(step=0,
                     m={k: _zeros_like(p) for k, p in params.items()},
                     v={k: _zeros_like(p) for k, p in params.items()})


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One Adam update over every named parameter.

    Returns (new_params, new_state); inputs are not modified.  Raises
    ValueError naming the parameter if its gradient contains NaN/Inf.
    """
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if set(params) != set(grads):
        missing = set(params) ^ set(grads)
        raise ValueError(f"params and grads disagree on names: {sorted(missing)}")
    step = state.step + 1
    bias1 = 1 - beta1 ** step
    bias2 = 1 - beta2 ** step
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if not _all_finite(g):
            raise ValueError(f"non-finite gradient for parameter {name!r}")
        if isinstance(g, torch.Tensor):
            g = g.detach()
        if isinstance(p, torch.Tensor):
            p = p.detach()
        m = beta1 * state.m[name] + (1 - beta1) * g
        v = beta2 * state.v[name] + (1 - beta2) * g * g
        m_hat = m / bias1
        v_hat = v / bias2
        new_params[name] = p - lr * m_hat / (v_hat ** 0.5 + eps)
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamState(step=step, m=new_m, v=new_v)
