"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError
from .tensor import Tensor


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_param: int
    worst_index: int
    n_checked: int
    errors: list = field(default_factory=list, repr=False)

    def __float__(self) -> float:
        return self.max_rel_error


def _evaluate(loss_fn: Callable[[], Tensor]) -> float:
    out = loss_fn()
    return float(np.asarray(out.data if isinstance(out, Tensor) else out).reshape(-1)[0])


def finite_diff_check(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    max_coords: int | None = 16,
    seed: int = 0,
    corrupt: tuple[int, int | None] | None = None,
    numeric_fn: Callable[[], Tensor] | None = None,
) -> GradCheckResult:
    """Compare backprop gradients of ``loss_fn`` against central differences.

    ``loss_fn`` must rebuild its graph from the current ``params`` data on
    every call. Up to ``max_coords`` coordinates per parameter are sampled
    (all of them when ``None``). ``corrupt=(param_idx, flat_idx)`` scales
    that analytic entry by 1.1 to exercise fault detection; a ``None`` flat
    index picks the largest-magnitude entry of that parameter. ``numeric_fn``
    replaces ``loss_fn`` for the perturbed evaluations, for losses whose
    analytic graph treats some factor as a constant.

    Relative error per coordinate is
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)``.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ContractError(f"finite-difference step {eps} outside [1e-7, 1e-3]")
    probe = loss_fn if numeric_fn is None else numeric_fn
    base = _evaluate(probe)
    again = _evaluate(probe)
    if base != again:
        raise ContractError(f"loss_fn is not deterministic: {base!r} then {again!r}")

    saved = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = True
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    for p, rg in zip(params, saved):
        p.grad = None
        p.requires_grad = rg
    if corrupt is not None:
        pi, fi = corrupt
        flat = analytic[pi].reshape(-1)
        if fi is None:
            fi = int(np.argmax(np.abs(flat)))
            corrupt = (pi, fi)
        flat[fi] = flat[fi] * 1.1 if flat[fi] != 0 else 1e-3

    rng = np.random.default_rng(seed)
    worst = (0.0, -1, -1)
    errors = []
    checked = 0
    for pi, p in enumerate(params):
        flat = p.data.reshape(-1)
        if max_coords is None or flat.size <= max_coords:
            coords = np.arange(flat.size)
        else:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        if corrupt is not None and corrupt[0] == pi and corrupt[1] not in coords:
            coords = np.append(coords, corrupt[1])
        a_flat = analytic[pi].reshape(-1)
        for idx in coords:
            orig = flat[idx]
            flat[idx] = orig + eps
            plus = _evaluate(probe)
            flat[idx] = orig - eps
            minus = _evaluate(probe)
            flat[idx] = orig
            numeric = (plus - minus) / (2 * eps)
            a = a_flat[idx]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-12)
            errors.append((pi, int(idx), a, numeric, rel))
            checked += 1
            if rel > worst[0]:
                worst = (rel, pi, int(idx))
    return GradCheckResult(worst[0], worst[1], worst[2], checked, errors)
