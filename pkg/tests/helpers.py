"""Shared test utilities: central-difference gradient checking."""

import numpy as np

from csifeedback import autodiff as ad


def rel_err(a, b, floor=1e-8):
    return abs(a - b) / max(abs(a), abs(b), floor)


def grad_check(build_loss, tensors, h=1e-5, indices=None):
    """Worst relative error between tape gradients and central differences.

    build_loss must be deterministic and reread tensor data on every call.
    `indices` optionally restricts the check to (tensor, flat_index) pairs.
    """
    with ad.Tape() as tape:
        loss = build_loss()
    ad.backward(tape, loss, params=tensors)
    grads = [np.array(t.grad) for t in tensors]

    if indices is None:
        indices = [(ti, i) for ti, t in enumerate(tensors)
                   for i in range(t.data.size)]
    worst = 0.0
    for ti, i in indices:
        t = tensors[ti]
        orig = t.data.flat[i]
        t.data.flat[i] = orig + h
        lp = build_loss().item()
        t.data.flat[i] = orig - h
        lm = build_loss().item()
        t.data.flat[i] = orig
        fd = (lp - lm) / (2.0 * h)
        worst = max(worst, rel_err(fd, grads[ti].flat[i]))
    return worst
