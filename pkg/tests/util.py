"""Helpers shared across test modules: finite differences and sampling setups."""
import itertools

import numpy as np
from scipy import stats as sps

from pidm import autodiff as ad
from pidm.autodiff import Tape, Tensor


def brute_force_two_sided_p(diffs):
    """Enumerate all sign assignments of the |d| ranks (oracle for small N)."""
    diffs = np.asarray(diffs, dtype=np.float64)
    diffs = diffs[diffs != 0.0]
    ranks = sps.rankdata(np.abs(diffs))
    w_obs = float(ranks[diffs > 0].sum())
    center = ranks.sum() / 2.0
    dev = abs(w_obs - center)
    hits = 0
    n = len(ranks)
    for signs in itertools.product((0.0, 1.0), repeat=n):
        w = float(np.dot(signs, ranks))
        if abs(w - center) >= dev - 1e-9:
            hits += 1
    return hits / 2.0**n


def central_diff(f, x, h=1e-6):
    """Elementwise central finite-difference gradient of scalar f at x."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        xp = x.copy()
        xm = x.copy()
        xp[idx] += h
        xm[idx] -= h
        grad[idx] = (f(xp) - f(xm)) / (2 * h)
        it.iternext()
    return grad


def tape_gradient(build, x):
    """Gradient of a scalar tape function build(Tensor) -> Tensor at x."""
    with Tape() as tape:
        t = Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)
        loss = build(t)
        tape.backward(loss)
    return t.grad.copy()


def directional_fd(f, x, v, h=1e-6):
    """Central finite difference of f along unit direction v."""
    return (f(x + h * v) - f(x - h * v)) / (2 * h)


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)
    return float(np.max(np.abs(a - b)) / denom)


def guidance_loss_fn(model, system, obs, cfg, t_prev, eps_hat, lambda_phy):
    """Scalar total guidance loss as a plain function of x_{t-1} (numpy)."""
    from pidm.guidance import evaluate_losses

    def f(x_prev):
        losses = evaluate_losses(
            x_prev, t_prev, eps_hat, model.schedule, model.stats, system, obs, cfg,
            model.dt, lambda_phy,
        )
        return losses["loss_total"]

    return f
