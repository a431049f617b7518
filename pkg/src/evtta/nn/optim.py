"""Adam restricted to a named parameter subset."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import Model


@dataclass
class AdamState:
    lr: float
    subset: str = "all"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_model(cls, model: Model, subset: str = "all", lr: float = 1e-3, **kw) -> "AdamState":
        params = model.named_parameters(subset)
        return cls(lr=lr, subset=subset,
                   m={k: np.zeros_like(p.value) for k, p in params.items()},
                   v={k: np.zeros_like(p.value) for k, p in params.items()}, **kw)


def adam_step(model: Model, grads: dict[str, np.ndarray], state: AdamState, subset: str | None = None) -> Model:
    """One bias-corrected Adam update of the parameters in ``subset``.

    Parameters outside the subset are not touched, whatever ``grads`` holds.
    """
    subset = subset or state.subset
    params = model.named_parameters(subset)
    if subset != state.subset or set(params) != set(state.m):
        raise ValueError(f"optimizer state covers {state.subset!r} ({len(state.m)} tensors) "
                         f"but step requested subset {subset!r} ({len(params)} tensors)")
    state.step += 1
    b1, b2, t = state.beta1, state.beta2, state.step
    for name, p in params.items():
        g = grads[name]
        m = state.m[name] = b1 * state.m[name] + (1 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        p.value -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return model
