"""Benchmark the conv1d kernel backends (compiled extension vs numpy).

Times forward, grad-input, and grad-weight on the shapes the denoiser
actually runs at desk scale, plus a full training step end-to-end under
each backend (the latter re-executes this script in a subprocess because
the backend is chosen at import time).

Run:  python3 benchmarks/bench_kernels.py [--repeat 30]
"""
from __future__ import annotations

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from pidm import _kernels_py
from pidm.backend import kernel_backend

try:
    from pidm import _kernels_cy
except ImportError:
    _kernels_cy = None

# (batch, c_in, c_out, length, kernel) covering the desk denoiser stack
SHAPES = [
    (16, 6, 16, 128, 3),
    (16, 16, 32, 64, 3),
    (16, 32, 64, 32, 3),
    (16, 64, 64, 16, 3),
    (16, 64, 32, 32, 3),
    (16, 16, 6, 128, 1),
]


def time_call(fn, *args, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def bench_shapes(repeat: int) -> None:
    impls = [("py", _kernels_py)] + ([("cy", _kernels_cy)] if _kernels_cy else [])
    header = f"{'shape (B,Ci,Co,L,K)':<24}" + "".join(
        f"{name + ' ' + op:>14}" for name, _ in impls for op in ("fwd", "gin", "gw")
    )
    print(header)
    rng = np.random.default_rng(0)
    for shape in SHAPES:
        b, ci, co, length, k = shape
        x = rng.standard_normal((b, ci, length))
        w = rng.standard_normal((co, ci, k))
        bias = rng.standard_normal(co)
        gout = rng.standard_normal((b, co, length))
        cells = []
        for _, impl in impls:
            cells.append(time_call(impl.conv1d_forward, x, w, bias, repeat=repeat))
            cells.append(time_call(impl.conv1d_grad_input, gout, w, repeat=repeat))
            cells.append(time_call(impl.conv1d_grad_weight, gout, x, k, repeat=repeat))
        print(f"{str(shape):<24}" + "".join(f"{c * 1e6:>11.0f} us" for c in cells))


def bench_training_step(steps: int) -> None:
    """One-liner re-run under each backend: mean seconds per training step."""
    for backend in ("py", "cy" if _kernels_cy else None):
        if backend is None:
            continue
        env = dict(os.environ, PIDM_KERNELS="python" if backend == "py" else "compiled")
        code = (
            "import time, numpy as np;"
            "from pidm.systems import get_system;"
            "from pidm.dataset import generate_corpus;"
            "from pidm.training import train_denoiser;"
            "c = generate_corpus(get_system('lorenz'), 16, 128, np.random.default_rng(0));"
            f"t0 = time.perf_counter(); train_denoiser(c, steps={steps});"
            f"print(f'{{(time.perf_counter() - t0) / {steps} * 1e3:.1f}} ms/step')"
        )
        out = subprocess.run(
            [sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True
        )
        print(f"training step [{backend}]: {out.stdout.strip()}")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=30)
    parser.add_argument("--train-steps", type=int, default=30)
    args = parser.parse_args()
    print(f"active backend at import: {kernel_backend()}")
    if _kernels_cy is None:
        print("compiled extension not built; benchmarking numpy kernels only")
    bench_shapes(args.repeat)
    bench_training_step(args.train_steps)


if __name__ == "__main__":
    main()
