"""Central finite-difference gradient oracle shared by the test suite.

Independent of the tape: it perturbs raw numpy inputs and re-runs the
forward function, so it can validate any scalar-valued computation built
from numcore primitives.
"""

from __future__ import annotations

import numpy as np

from partbridge import numcore as nc


def fd_grad(fn, arrays: list[np.ndarray], h: float = 1e-5) -> list[np.ndarray]:
    """Central finite differences of fn(arrays) -> float, in float64."""
    grads = []
    for k, a in enumerate(arrays):
        g = np.zeros_like(a, dtype=np.float64)
        flat = a.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = fn(arrays)
            flat[i] = orig - h
            fm = fn(arrays)
            flat[i] = orig
            gf[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def analytic_grad(build_loss, arrays: list[np.ndarray]) -> tuple[float, list[np.ndarray]]:
    """Run build_loss on grad-leaf tensors and return (loss, grads)."""
    leaves = [nc.Tensor(a, requires_grad=True, dtype=np.float64) for a in arrays]
    with nc.Tape() as tape:
        loss = build_loss(leaves)
        tape.backward(loss)
    grads = [lf.grad if lf.grad is not None else np.zeros_like(lf.data) for lf in leaves]
    return loss.item(), grads


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-8)
    return float(np.abs(a - b).max(initial=0.0) / denom)


def check_gradients(build_loss, arrays: list[np.ndarray], tol: float = 1e-3, h: float = 1e-5) -> float:
    """Assert analytic vs central-FD gradients agree; returns worst rel error."""
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]

    def scalar_fn(arrs):
        leaves = [nc.Tensor(a, dtype=np.float64) for a in arrs]
        return build_loss(leaves).item()

    _, an = analytic_grad(build_loss, arrays)
    fd = fd_grad(scalar_fn, arrays, h=h)
    worst = max(rel_err(a, f) for a, f in zip(an, fd))
    assert worst < tol, f"gradient mismatch: rel err {worst:.3e} >= {tol}"
    return worst
