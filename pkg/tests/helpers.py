"""Shared test utilities: model-level finite-difference gradient checking."""

import numpy as np

from vadreg.autodiff import backward
from vadreg.model import total_loss


def model_grad_check(model, x, y, lam, coords_per_param=6, step=1e-5, rng=None):
    """Max relative error between analytic and central-difference gradients
    of the combined loss, over a seeded subset of coordinates per parameter.

    Coordinates whose difference quotients at step and step/2 disagree are
    sitting on a relu kink (the loss is not differentiable there) and are
    excluded from the max; the smooth ones must agree to high order.
    Returns (worst error, number of coordinates checked, number skipped).
    """
    rng = rng or np.random.default_rng(0)
    backward(total_loss(model, x, y, orth_weight=lam))
    analytic = {name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                for name, p in model.net.parameters()}
    worst = 0.0
    checked = skipped = 0

    def loss_value():
        return total_loss(model, x, y, orth_weight=lam).item()

    for name, param in model.net.parameters():
        flat = param.data.reshape(-1)
        k = min(coords_per_param, flat.size)
        coords = rng.choice(flat.size, size=k, replace=False)
        for i in coords:
            orig = flat[i]
            estimates = []
            for h in (step, step / 2.0):
                flat[i] = orig + h
                fp = loss_value()
                flat[i] = orig - h
                fm = loss_value()
                flat[i] = orig
                estimates.append((fp - fm) / (2.0 * h))
            fd_h, fd_h2 = estimates
            if abs(fd_h - fd_h2) > 1e-6 * max(1.0, abs(fd_h2)):
                skipped += 1        # difference quotient unstable: kink crossing
                continue
            checked += 1
            err = abs(analytic[name].reshape(-1)[i] - fd_h2) / max(1.0, abs(fd_h2))
            worst = max(worst, err)
    return worst, checked, skipped
