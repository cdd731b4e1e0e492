"""Central finite-difference gradient checking against autograd."""

import numpy as np
import torch


def analytic_gradients(loss_fn, params):
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    return [p.grad.clone() if p.grad is not None else None for p in params]


def finite_difference(loss_fn, param, index, h=1e-4):
    with torch.no_grad():
        original = param.view(-1)[index].item()
        param.view(-1)[index] = original + h
        up = float(loss_fn())
        param.view(-1)[index] = original - h
        down = float(loss_fn())
        param.view(-1)[index] = original
    return (up - down) / (2.0 * h)


def max_relative_error(loss_fn, params, n_samples=50, h=1e-4, seed=0, floor=1e-6):
    """Sample parameter positions with nonzero analytic involvement and
    compare autograd to central differences. Returns the max relative error."""
    grads = analytic_gradients(loss_fn, params)
    candidates = [
        (pi, i)
        for pi, g in enumerate(grads)
        if g is not None
        for i in range(g.numel())
    ]
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(candidates), size=min(n_samples, len(candidates)), replace=False)
    worst = 0.0
    for k in picks:
        pi, i = candidates[int(k)]
        a = float(grads[pi].view(-1)[i])
        f = finite_difference(loss_fn, params[pi], i, h=h)
        rel = abs(a - f) / max(abs(a), abs(f), floor)
        worst = max(worst, rel)
    return worst
