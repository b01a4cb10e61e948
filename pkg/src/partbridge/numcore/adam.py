"""Adam optimizer with bias correction."""

from __future__ import annotations

import numpy as np

from .tensor import NonFiniteError, ShapeError, Tensor


class AdamState:
    """Per-parameter moments plus a strictly increasing step counter."""

    def __init__(self, params: list[Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]


def adam_step(params: list[Tensor], grads: list[np.ndarray], state: AdamState) -> list[Tensor]:
    """One bias-corrected Adam update, in place on the parameter data."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("adam_step", (len(params),), (len(grads),), (len(state.m),))
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.data.shape:
            raise ShapeError("adam_step", g.shape, p.data.shape)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = (state.lr / c1) * m / (np.sqrt(v / c2) + state.eps)
        if not np.all(np.isfinite(update)):
            raise NonFiniteError("adam_step produced a non-finite update")
        p.data = p.data - update.astype(p.data.dtype)
    return params


class Adam:
    """Convenience wrapper: consumes .grad of the managed parameters."""

    def __init__(self, named_params: list[tuple[str, Tensor]], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = [p for _, p in named_params]
        self.names = [n for n, _ in named_params]
        self.state = AdamState(self.params, lr, beta1, beta2, eps)

    def step(self) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        adam_step(self.params, grads, self.state)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        out = [("adam.step", np.array([float(self.state.step)], dtype=np.float32))]
        for name, m, v in zip(self.names, self.state.m, self.state.v):
            out.append((f"adam.m.{name}", m))
            out.append((f"adam.v.{name}", v))
        return out

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        self.state.step = int(arrays["adam.step"][0])
        for i, name in enumerate(self.names):
            self.state.m[i] = arrays[f"adam.m.{name}"].astype(self.state.m[i].dtype)
            self.state.v[i] = arrays[f"adam.v.{name}"].astype(self.state.v[i].dtype)
