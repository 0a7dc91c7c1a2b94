"""Gradient verification against central finite differences."""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .tensor import Tape, Tensor, backward

FD_STEP = 1e-5


def finite_difference_grad(
    loss_fn: Callable[[], Tensor], param: Tensor, step: float = FD_STEP
) -> np.ndarray:
    """Central-difference gradient of ``loss_fn()`` w.r.t. every entry of ``param``.

    ``loss_fn`` must rebuild the scalar loss from current parameter values;
    it is called with the parameter perturbed in place, outside any tape.
    """
    flat = param.data.reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        f_plus = float(loss_fn().data)
        flat[i] = orig - step
        f_minus = float(loss_fn().data)
        flat[i] = orig
        grad[i] = (f_plus - f_minus) / (2.0 * step)
    return grad.reshape(param.data.shape)


def check_gradients(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    step: float = FD_STEP,
) -> dict[str, float]:
    """Compare tape gradients of ``loss_fn`` against finite differences.

    Returns one relative error per parameter:
    ``max|g_tape - g_fd| / max(|g_tape|_inf, |g_fd|_inf)``, falling back to
    the absolute difference when both gradients are essentially zero.
    """
    for p in params.values():
        p.zero_grad()
    with Tape():
        loss = loss_fn()
    backward(loss)
    tape_grads = {}
    for name, p in params.items():
        if p.grad is None:
            tape_grads[name] = np.zeros_like(p.data)
        else:
            tape_grads[name] = p.grad.copy()
        p.zero_grad()

    errors = {}
    for name, p in params.items():
        fd = finite_difference_grad(loss_fn, p, step=step)
        tg = tape_grads[name]
        diff = float(np.max(np.abs(tg - fd))) if tg.size else 0.0
        norm = max(float(np.max(np.abs(tg))) if tg.size else 0.0,
                   float(np.max(np.abs(fd))) if fd.size else 0.0)
        errors[name] = diff / norm if norm > 1e-8 else diff
    return errors
