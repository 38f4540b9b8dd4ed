from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import NonFiniteError, ShapeError, Tensor


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, Tensor], grads: dict[str, Tensor], state: AdamState
) -> tuple[dict[str, Tensor], AdamState]:
    """Bias-corrected Adam update.

    Returns new parameter tensors (inputs are never mutated) and the advanced
    state.  Parameters without a gradient entry are passed through unchanged,
    but their moments still see a zero gradient so every accumulator advances
    in lock-step with ``state.step``.
    """
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ShapeError(f"gradient for {name!r} has shape {g.shape}, parameter has {params[name].shape}")
        if not np.all(np.isfinite(g.data)):
            raise NonFiniteError(f"non-finite gradient for parameter {name!r}")

    step = state.step + 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**step
    corr2 = 1.0 - b2**step
    new_params: dict[str, Tensor] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    for name in sorted(params):
        p = params[name]
        g = grads[name].data if name in grads else np.zeros_like(p.data)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        mhat = m / corr1
        vhat = v / corr2
        upd = state.lr * mhat / (np.sqrt(vhat) + state.eps)
        new_params[name] = Tensor._wrap((p.data - upd).astype(p.dtype), requires_grad=p.requires_grad)
        new_params[name].name = name
        new_m[name] = m.astype(p.dtype)
        new_v[name] = v.astype(p.dtype)
    new_state = AdamState(state.lr, b1, b2, state.eps, step, new_m, new_v)
    return new_params, new_state
