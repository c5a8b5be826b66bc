"""Fixed-step Dormand-Prince RK45 with a differentiable single step.

The six-stage fifth-order tableau is stored as exact rationals evaluated
to float64.  dp45_step works identically on plain arrays (fast rollout
path) and on Tensors (tape-differentiable path used by the physics
guidance), because the stage combinations are written with operators both
support.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .autodiff import Tensor
from .errors import BoundExceeded, IntegrationError
from .systems import SystemSpec

_C_RAT = (
    Fraction(0),
    Fraction(1, 5),
    Fraction(3, 10),
    Fraction(4, 5),
    Fraction(8, 9),
    Fraction(1),
)
_A_RAT = (
    (),
    (Fraction(1, 5),),
    (Fraction(3, 40), Fraction(9, 40)),
    (Fraction(44, 45), Fraction(-56, 15), Fraction(32, 9)),
    (
        Fraction(19372, 6561),
        Fraction(-25360, 2187),
        Fraction(64448, 6561),
        Fraction(-212, 729),
    ),
    (
        Fraction(9017, 3168),
        Fraction(-355, 33),
        Fraction(46732, 5247),
        Fraction(49, 176),
        Fraction(-5103, 18656),
    ),
)
_B_RAT = (
    Fraction(35, 384),
    Fraction(0),
    Fraction(500, 1113),
    Fraction(125, 192),
    Fraction(-2187, 6784),
    Fraction(11, 84),
)


@dataclass(frozen=True)
class ButcherTableau:
    """Stage coefficients (c, a, b) as rational-evaluated float64."""

    c: tuple
    a: tuple
    b: tuple

    @classmethod
    def dormand_prince(cls) -> "ButcherTableau":
        return cls(
            c=tuple(float(v) for v in _C_RAT),
            a=tuple(tuple(float(v) for v in row) for row in _A_RAT),
            b=tuple(float(v) for v in _B_RAT),
        )

    def rational_residual(self) -> float:
        """Max absolute difference between stored floats and the exact rationals."""
        errs = [abs(cv - float(cr)) for cv, cr in zip(self.c, _C_RAT)]
        errs += [
            abs(av - float(ar))
            for row, rrow in zip(self.a, _A_RAT)
            for av, ar in zip(row, rrow)
        ]
        errs += [abs(bv - float(br)) for bv, br in zip(self.b, _B_RAT)]
        return max(errs)

    def row_sum_residual(self) -> float:
        """Max |sum(a_row) - c| over stages, computed in exact arithmetic."""
        residuals = [abs(sum(rrow, Fraction(0)) - cr) for rrow, cr in zip(_A_RAT, _C_RAT)]
        return float(max(residuals))

    def weight_sum_residual(self) -> float:
        """|sum(b) - 1| in exact arithmetic."""
        return float(abs(sum(_B_RAT, Fraction(0)) - 1))


DP45 = ButcherTableau.dormand_prince()


def _is_tensor(x) -> bool:
    return isinstance(x, Tensor)


def _finite(x) -> bool:
    arr = x.data if _is_tensor(x) else x
    return bool(np.all(np.isfinite(arr)))


def dp45_step(system: SystemSpec, state, params, dt: float, validate: bool = True):
    """Advance one fixed step; state may be an ndarray or a Tensor[..., dim].

    dt == 0 returns the state plus an exactly-zero increment.  A NaN or Inf
    in any stage raises IntegrationError naming the stage; batched callers
    that handle divergence per trajectory pass validate=False instead.
    """
    if dt < 0:
        raise ValueError(f"dp45_step requires dt >= 0, got {dt}")
    tensorial = _is_tensor(state) or _is_tensor(params)
    if tensorial:
        state = state if _is_tensor(state) else Tensor(state)

        def f(s):
            return system.eval_field(s, params)

    else:
        state = np.asarray(state, dtype=np.float64)

        def f(s):
            return system.field_np(s, params)

    a, b = DP45.a, DP45.b
    ks = []
    for i in range(6):
        if i == 0:
            arg = state
        else:
            incr = a[i][0] * ks[0]
            for j in range(1, i):
                incr = incr + a[i][j] * ks[j]
            arg = state + dt * incr
        k = f(arg)
        if validate and not _finite(k):
            raise IntegrationError(i + 1, f"{system.name} dt={dt}")
        ks.append(k)
    combo = b[0] * ks[0]
    for j in range(1, 6):
        combo = combo + b[j] * ks[j]
    return state + dt * combo


def dp45_rollout(
    system: SystemSpec,
    x0: np.ndarray,
    params,
    n_steps: int,
    dt: float | None = None,
    substeps: int | None = None,
    check_bound: bool = True,
) -> Tensor:
    """Sample a trajectory at interval dt, subdividing each interval internally.

    Returns Tensor[n_steps + 1, dim].  Exceeding the system amplitude bound
    (or any non-finite value) raises BoundExceeded carrying the step index.
    """
    if n_steps < 0:
        raise ValueError("n_steps must be non-negative")
    dt = system.dt if dt is None else dt
    substeps = system.gt_substeps if substeps is None else substeps
    if substeps < 1:
        raise ValueError("substeps must be at least 1")
    x0 = np.asarray(x0, dtype=np.float64)
    out = np.empty((n_steps + 1,) + x0.shape, dtype=np.float64)
    out[0] = x0
    h = dt / substeps
    state = x0
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(1, n_steps + 1):
            try:
                for _ in range(substeps):
                    state = dp45_step(system, state, params, h)
            except IntegrationError as exc:
                raise BoundExceeded(step, system.amp_bound) from exc
            if check_bound and (
                not np.all(np.isfinite(state)) or np.max(np.abs(state)) > system.amp_bound
            ):
                raise BoundExceeded(step, system.amp_bound)
            out[step] = state
    return Tensor(out)


def convergence_order(
    system: SystemSpec,
    x0: np.ndarray,
    params,
    horizon: float,
    n_base: int = 10,
) -> dict:
    """Empirical order from endpoint errors at dt, dt/2, dt/4 vs a dt/64 reference.

    Returns the pairwise log2 error ratios and their mean.
    """

    def endpoint(n: int) -> np.ndarray:
        state = np.asarray(x0, dtype=np.float64)
        h = horizon / n
        for _ in range(n):
            state = dp45_step(system, state, params, h)
        return state

    reference = endpoint(n_base * 64)
    errors = [float(np.linalg.norm(endpoint(n_base * m) - reference)) for m in (1, 2, 4)]
    orders = [float(np.log2(errors[0] / errors[1])), float(np.log2(errors[1] / errors[2]))]
    return {
        "dt": horizon / n_base,
        "errors": errors,
        "orders": orders,
        "order": float(np.mean(orders)),
    }
