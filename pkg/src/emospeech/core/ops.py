"""Numeric primitives used by the acoustic model and the discriminator."""
from __future__ import annotations

import zlib

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ContractError, DimensionError
from .tensor import Tensor, as_tensor, make_result, mul

LN_EPS = 1e-5


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product ``a @ b``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        return (
            g @ bd.T if a.requires_grad else None,
            ad.T @ g if b.requires_grad else None,
        )

    return make_result(ad @ bd, (a, b), backward)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Fused ``x @ w + b``; ``x`` is a matrix of rows or a single 1-D row."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.ndim not in (1, 2) or w.ndim != 2 or x.shape[-1] != w.shape[0] or b.shape != (w.shape[1],):
        raise DimensionError(f"affine: incompatible shapes {x.shape}, {w.shape} and {b.shape}")
    xd, wd = x.data, w.data
    vector = xd.ndim == 1

    def backward(g):
        return (
            g @ wd.T if x.requires_grad else None,
            (np.outer(xd, g) if vector else xd.T @ g) if w.requires_grad else None,
            (g if vector else g.sum(axis=0)) if b.requires_grad else None,
        )

    return make_result(xd @ wd + b.data, (x, w, b), backward)


def einsum2(subscripts: str, a: Tensor, b: Tensor) -> Tensor:
    """Two-operand einsum without implicit single-operand reductions.

    Every index of each operand must also appear in the output or in the
    other operand, which keeps the backward a pair of einsums.
    """
    a, b = as_tensor(a), as_tensor(b)
    ins, out = subscripts.replace(" ", "").split("->")
    sa, sb = ins.split(",")
    for mine, other in ((sa, sb), (sb, sa)):
        lonely = set(mine) - set(other) - set(out)
        if lonely:
            raise ValueError(f"einsum2: index {sorted(lonely)} is reduced within one operand")
    try:
        data = np.einsum(subscripts, a.data, b.data)
    except ValueError as exc:
        raise DimensionError(f"einsum {subscripts}: shapes {a.shape} and {b.shape}") from exc
    ad, bd = a.data, b.data

    def backward(g):
        return (
            np.einsum(f"{out},{sb}->{sa}", g, bd) if a.requires_grad else None,
            np.einsum(f"{out},{sa}->{sb}", g, ad) if b.requires_grad else None,
        )

    return make_result(data, (a, b), backward)


def softmax(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Softmax along ``axis``; cells where ``mask`` is False get zero weight.

    Uses max-subtraction so large logits do not overflow. A slice whose cells
    are all masked has no valid normalization and raises ``ContractError``.
    """
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax: axis {axis} invalid for shape {x.shape}")
    logits = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), logits.shape)
        if not mask.any(axis=axis).all():
            raise ContractError("softmax: a slice has every position masked")
        logits = np.where(mask, logits, -np.inf)
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_result(y, (x,), backward)


def layer_norm_core(x: Tensor, eps: float = LN_EPS) -> Tensor:
    """Normalize each last-axis row to zero mean and unit variance."""
    x = as_tensor(x)
    d = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv

    def backward(g):
        gs = g.sum(axis=-1, keepdims=True)
        gx = (g * xhat).sum(axis=-1, keepdims=True)
        return (inv / d * (d * g - gs - xhat * gx),)

    return make_result(xhat, (x,), backward)


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int | None = None) -> Tensor:
    """Cross-correlation over the rows of ``x`` (n x c_in).

    ``w`` is (c_out, c_in, k). ``padding=None`` means "same" padding of
    (k - 1) / 2 zeros on each side, which needs an odd kernel.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 2 or w.ndim != 3:
        raise DimensionError(f"conv1d: expected x (n, c_in) and w (c_out, c_in, k), got {x.shape} and {w.shape}")
    n, c_in = x.shape
    c_out, w_in, k = w.shape
    if c_in != w_in:
        raise DimensionError(f"conv1d: input has {c_in} channels but kernel {w.shape} expects {w_in}")
    if padding is None:
        if k % 2 == 0:
            raise ContractError(f"conv1d: same padding needs an odd kernel, got k={k}")
        padding = (k - 1) // 2
    padded = np.zeros((n + 2 * padding, c_in))
    padded[padding:padding + n] = x.data
    if padded.shape[0] < k:
        raise DimensionError(f"conv1d: sequence of {n} rows too short for kernel {k} with padding {padding}")
    windows = sliding_window_view(padded, k, axis=0)[::stride]  # (n_out, c_in, k)
    n_out = windows.shape[0]
    out = np.einsum("nck,ock->no", windows, w.data, optimize=True)
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        if b.shape != (c_out,):
            raise DimensionError(f"conv1d: bias shape {b.shape} does not match {c_out} output channels")
        out = out + b.data
        parents.append(b)
    wd = w.data

    def backward(g):
        gx = gw = None
        if x.requires_grad:
            gcols = np.einsum("no,ock->nck", g, wd, optimize=True)
            gpad = np.zeros_like(padded)
            for j in range(k):
                gpad[j:j + stride * (n_out - 1) + 1:stride] += gcols[:, :, j]
            gx = gpad[padding:padding + n]
        if w.requires_grad:
            gw = np.einsum("no,nck->ock", g, windows, optimize=True)
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=0))
        return tuple(grads)

    return make_result(out, parents, backward)


def dropout_seed(global_seed: int, site: str, step: int) -> np.random.Generator:
    """Generator keyed on (global seed, dropout site, training step)."""
    return np.random.default_rng([global_seed, zlib.crc32(site.encode()), step])


def dropout(x: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; ``rng=None`` or ``p == 0`` is the identity (inference)."""
    if rng is None or p <= 0.0:
        return x
    keep = rng.random(x.shape) >= p
    return mul(x, keep / (1.0 - p))


def sinusoidal_positions(n: int, dim: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
