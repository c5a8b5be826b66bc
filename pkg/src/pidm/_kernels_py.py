"""Pure-numpy kernels for the 1D convolution hot path.

Same-padding correlation with odd kernel width, stride 1.  The compiled
module in _kernels_cy.pyx implements the identical signatures; the
backend module picks whichever is importable.
"""
from __future__ import annotations

import numpy as np

BACKEND_NAME = "python"


def _window_view(x: np.ndarray, k: int) -> np.ndarray:
    # [B, C, L + k - 1] -> [B, C, L, k] read-only sliding windows
    return np.lib.stride_tricks.sliding_window_view(x, k, axis=2)


def _pad_last(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    b, c, length = x.shape
    out = np.zeros((b, c, length + 2 * p), dtype=np.float64)
    out[:, :, p : p + length] = x
    return out


def conv1d_forward(x: np.ndarray, w: np.ndarray, bias: np.ndarray | None) -> np.ndarray:
    """x [B, Ci, L], w [Co, Ci, K] (K odd), bias [Co] or None -> [B, Co, L]."""
    k = w.shape[2]
    win = _window_view(_pad_last(x, k // 2), k)
    out = np.einsum("bilk,oik->bol", win, w, optimize=True)
    if bias is not None:
        out += bias[None, :, None]
    return np.ascontiguousarray(out)


def conv1d_grad_input(gout: np.ndarray, w: np.ndarray) -> np.ndarray:
    """gout [B, Co, L], w [Co, Ci, K] -> grad wrt x [B, Ci, L]."""
    k = w.shape[2]
    win = _window_view(_pad_last(gout, k // 2), k)
    return np.ascontiguousarray(np.einsum("bolk,oik->bil", win, w[:, :, ::-1], optimize=True))


def conv1d_grad_weight(gout: np.ndarray, x: np.ndarray, k: int) -> np.ndarray:
    """gout [B, Co, L], x [B, Ci, L] -> grad wrt w [Co, Ci, K]."""
    win = _window_view(_pad_last(x, k // 2), k)
    return np.ascontiguousarray(np.einsum("bol,bilk->oik", gout, win, optimize=True))
