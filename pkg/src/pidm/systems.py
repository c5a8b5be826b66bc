"""The five benchmark ODE systems.

Each system defines its vector field once, as algebra over per-component
operands (_field_parts).  The numpy path feeds it array slices and the
autodiff path feeds it Tensors, so both evaluate the exact same floating
point expression and agree bitwise.  Analytic Jacobians back the
finite-difference cross-checks and stiffness diagnostics.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass(frozen=True)
class LyapunovSettings:
    """Rosenstein estimator settings tied to a system."""

    embed_dim: int
    delay: int
    theiler: int
    track_len: int


class SystemSpec:
    """Shared container/behaviour for one benchmark system."""

    name: str = ""
    dim: int = 0
    param_names: tuple = ()
    id_ranges: tuple = ()
    ood_ranges: tuple = ()
    # The OOD box for hyper5d is not separately published, so it falls back
    # to the training box widened by 20% per side and is flagged as such.
    ood_is_widened_id: bool = False
    amp_bound: float = 0.0
    lambda_base: float = 0.0
    dt: float = 0.05
    gt_substeps: int = 10
    lyap: LyapunovSettings = LyapunovSettings(3, 2, 25, 75)

    @property
    def n_params(self) -> int:
        return len(self.param_names)

    def _field_parts(self, c, p):
        raise NotImplementedError

    def _param_list(self, params) -> list:
        """Normalize params to one operand per parameter.

        Accepts [n_params] (plain floats) or [..., n_params] batched arrays
        whose leading axes line up with the state's.
        """
        arr = np.asarray(params, dtype=np.float64)
        if arr.ndim == 0 or arr.shape[-1] != self.n_params:
            raise ValueError(
                f"{self.name}: expected {self.n_params} parameters, got shape {arr.shape}"
            )
        if arr.ndim == 1:
            return [float(v) for v in arr]
        return [arr[..., j : j + 1] for j in range(self.n_params)]

    def field_np(self, state: np.ndarray, params) -> np.ndarray:
        """Vector field on arrays shaped [..., dim]; params [n_params] or batched."""
        comps = [state[..., j : j + 1] for j in range(self.dim)]
        return np.concatenate(self._field_parts(comps, self._param_list(params)), axis=-1)

    def eval_field(self, state: Tensor, params) -> Tensor:
        """Tape-differentiable vector field; params may be floats or a Tensor[n_params]."""
        comps = [ad.narrow(state, -1, j, 1) for j in range(self.dim)]
        if isinstance(params, Tensor):
            plist = [ad.narrow(params, -1, j, 1) for j in range(self.n_params)]
        else:
            plist = self._param_list(params)
        return ad.concat(self._field_parts(comps, plist), axis=-1)

    def jacobian_np(self, state: np.ndarray, params) -> np.ndarray:
        raise NotImplementedError

    def _ranges(self, condition: str):
        if condition == "id":
            return self.id_ranges
        if condition == "ood":
            if self.ood_is_widened_id:
                return tuple((lo - 0.2 * (hi - lo), hi + 0.2 * (hi - lo)) for lo, hi in self.id_ranges)
            return self.ood_ranges
        raise ValueError(f"condition must be 'id' or 'ood', got {condition!r}")

    def sample_params(self, rng: np.random.Generator, condition: str = "id", size: int | None = None) -> np.ndarray:
        """Draw parameters uniformly from the requested box; [n_params] or [size, n_params]."""
        ranges = self._ranges(condition)
        cols = [rng.uniform(lo, hi, size=size) for lo, hi in ranges]
        return np.stack(cols, axis=-1)

    def sample_initial(self, rng: np.random.Generator, params: np.ndarray, size: int | None = None) -> np.ndarray:
        """Draw initial states from the system's seeding box; [dim] or [size, dim]."""
        raise NotImplementedError

    def nominal_params(self) -> np.ndarray:
        """Midpoint of the training parameter box."""
        return np.array([(lo + hi) / 2.0 for lo, hi in self.id_ranges])

    def nominal_initial(self) -> np.ndarray:
        """Deterministic representative initial state."""
        return self.sample_initial(np.random.default_rng(0), self.nominal_params())

    def param_box_disjoint(self) -> bool:
        """True when the ID and OOD boxes have disjoint interiors."""
        lo_id = np.array([r[0] for r in self.id_ranges])
        hi_id = np.array([r[1] for r in self.id_ranges])
        lo_ood = np.array([r[0] for r in self._ranges("ood")])
        hi_ood = np.array([r[1] for r in self._ranges("ood")])
        overlap_lo = np.maximum(lo_id, lo_ood)
        overlap_hi = np.minimum(hi_id, hi_ood)
        return bool(np.any(overlap_hi <= overlap_lo))


def _uniform_box(rng, lo, hi, dim, size):
    shape = (dim,) if size is None else (size, dim)
    return rng.uniform(lo, hi, size=shape)


class Lorenz(SystemSpec):
    name = "lorenz"
    dim = 3
    param_names = ("sigma", "rho", "beta")
    id_ranges = ((8.0, 12.0), (20.0, 35.0), (2.0, 4.0))
    ood_ranges = ((5.0, 8.0), (15.0, 20.0), (1.5, 2.0))
    amp_bound = 500.0
    lambda_base = 2.0
    gt_substeps = 10
    lyap = LyapunovSettings(3, 2, 25, 75)

    def _field_parts(self, c, p):
        x, y, z = c
        sigma, rho, beta = p
        return (
            sigma * (y - x),
            x * (rho - z) - y,
            x * y - beta * z,
        )

    def jacobian_np(self, state, params):
        sigma, rho, beta = params
        x, y, z = state[..., 0], state[..., 1], state[..., 2]
        one = np.ones_like(x)
        zero = np.zeros_like(x)
        rows = [
            np.stack([-sigma * one, sigma * one, zero], axis=-1),
            np.stack([rho - z, -one, -x], axis=-1),
            np.stack([y, x, -beta * one], axis=-1),
        ]
        return np.stack(rows, axis=-2)

    def sample_initial(self, rng, params, size=None):
        return _uniform_box(rng, -10.0, 10.0, self.dim, size)


class Rossler(SystemSpec):
    name = "rossler"
    dim = 3
    param_names = ("a", "b", "c")
    id_ranges = ((0.15, 0.25), (0.15, 0.25), (5.0, 7.0))
    ood_ranges = ((0.10, 0.15), (0.10, 0.15), (3.5, 5.0))
    amp_bound = 200.0
    lambda_base = 2.0
    gt_substeps = 10
    lyap = LyapunovSettings(3, 1, 300, 300)

    def _field_parts(self, c, p):
        x, y, z = c
        a, b, cc = p
        return (
            -y - z,
            x + a * y,
            b + z * (x - cc),
        )

    def jacobian_np(self, state, params):
        a, _b, cc = params
        x, _y, z = state[..., 0], state[..., 1], state[..., 2]
        one = np.ones_like(x)
        zero = np.zeros_like(x)
        rows = [
            np.stack([zero, -one, -one], axis=-1),
            np.stack([one, a * one, zero], axis=-1),
            np.stack([z, zero, x - cc], axis=-1),
        ]
        return np.stack(rows, axis=-2)

    def sample_initial(self, rng, params, size=None):
        return _uniform_box(rng, -5.0, 5.0, self.dim, size)


class Hyper5D(SystemSpec):
    name = "hyper5d"
    dim = 5
    param_names = ("p1", "p2", "p3")
    id_ranges = ((8.0, 12.0), (20.0, 35.0), (2.0, 4.0))
    ood_ranges = ()
    ood_is_widened_id = True
    amp_bound = 500.0
    lambda_base = 1.5
    gt_substeps = 10
    lyap = LyapunovSettings(5, 2, 25, 75)

    def _field_parts(self, c, p):
        x1, x2, x3, x4, x5 = c
        p1, p2, p3 = p
        return (
            p1 * (x2 - x1) + x4,
            p2 * x1 - x2 - x1 * x3 + x5,
            x1 * x2 - p3 * x3,
            -(x1 * x3) + 0.1 * x4,
            -(x2 * x3) + 0.1 * x5,
        )

    def jacobian_np(self, state, params):
        p1, p2, p3 = params
        x1, x2, x3 = state[..., 0], state[..., 1], state[..., 2]
        one = np.ones_like(x1)
        zero = np.zeros_like(x1)
        rows = [
            np.stack([-p1 * one, p1 * one, zero, one, zero], axis=-1),
            np.stack([p2 - x3, -one, -x1, zero, one], axis=-1),
            np.stack([x2, x1, -p3 * one, zero, zero], axis=-1),
            np.stack([-x3, zero, -x1, 0.1 * one, zero], axis=-1),
            np.stack([zero, -x3, -x2, zero, 0.1 * one], axis=-1),
        ]
        return np.stack(rows, axis=-2)

    def sample_initial(self, rng, params, size=None):
        return _uniform_box(rng, -10.0, 10.0, self.dim, size)


class Lorenz96(SystemSpec):
    name = "lorenz96"
    dim = 20
    param_names = ("forcing",)
    id_ranges = ((7.0, 9.0),)
    ood_ranges = ((9.0, 11.0),)
    amp_bound = 200.0
    lambda_base = 0.1
    gt_substeps = 20
    lyap = LyapunovSettings(3, 2, 25, 75)

    def _field_parts(self, c, p):
        (forcing,) = p
        n = self.dim
        return tuple(
            (c[(j + 1) % n] - c[(j - 2) % n]) * c[(j - 1) % n] - c[j] + forcing for j in range(n)
        )

    def field_np(self, state, params):
        # same per-element expression as _field_parts, via rolls
        (forcing,) = self._param_list(params)
        return (np.roll(state, -1, axis=-1) - np.roll(state, 2, axis=-1)) * np.roll(
            state, 1, axis=-1
        ) - state + forcing

    def jacobian_np(self, state, params):
        n = self.dim
        base = np.zeros(state.shape + (n,), dtype=np.float64)
        for j in range(n):
            base[..., j, (j + 1) % n] += state[..., (j - 1) % n]
            base[..., j, (j - 2) % n] += -state[..., (j - 1) % n]
            base[..., j, (j - 1) % n] += state[..., (j + 1) % n] - state[..., (j - 2) % n]
            base[..., j, j] += -1.0
        return base

    def sample_initial(self, rng, params, size=None):
        forcing = np.asarray(params)[..., 0]
        shape = (self.dim,) if size is None else (size, self.dim)
        jitter = rng.uniform(-0.5, 0.5, size=shape)
        if size is None:
            return forcing + jitter
        return np.asarray(forcing).reshape(-1, 1) + jitter


class Rabinovich(SystemSpec):
    name = "rabinovich"
    dim = 3
    param_names = ("alpha", "gamma")
    id_ranges = ((0.10, 0.18), (0.07, 0.13))
    ood_ranges = ((0.20, 0.30), (0.05, 0.09))
    amp_bound = 10.0
    lambda_base = 0.5
    gt_substeps = 50
    lyap = LyapunovSettings(3, 5, 100, 100)

    def _field_parts(self, c, p):
        x, y, z = c
        alpha, gamma = p
        return (
            y * (z - 1.0 + x * x) + gamma * x,
            x * (3.0 * z + 1.0 - x * x) + gamma * y,
            -2.0 * z * (alpha + x * y),
        )

    def jacobian_np(self, state, params):
        alpha, gamma = params
        x, y, z = state[..., 0], state[..., 1], state[..., 2]
        one = np.ones_like(x)
        rows = [
            np.stack([2.0 * x * y + gamma * one, z - 1.0 + x * x, y], axis=-1),
            np.stack([3.0 * z + 1.0 - 3.0 * x * x, gamma * one, 3.0 * x], axis=-1),
            np.stack([-2.0 * z * y, -2.0 * z * x, -2.0 * (alpha + x * y)], axis=-1),
        ]
        return np.stack(rows, axis=-2)

    def sample_initial(self, rng, params, size=None):
        shape = () if size is None else (size,)
        x = rng.uniform(-1.0, 1.0, size=shape)
        y = rng.uniform(-1.0, 1.0, size=shape)
        z = rng.uniform(0.1, 1.0, size=shape)
        return np.stack([x, y, z], axis=-1)


SYSTEMS: dict[str, SystemSpec] = {
    s.name: s for s in (Lorenz(), Rossler(), Hyper5D(), Lorenz96(), Rabinovich())
}


def get_system(name: str) -> SystemSpec:
    try:
        return SYSTEMS[name]
    except KeyError:
        known = ", ".join(sorted(SYSTEMS))
        raise KeyError(f"unknown system {name!r}; known systems: {known}") from None
