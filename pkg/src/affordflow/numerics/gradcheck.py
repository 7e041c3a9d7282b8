"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .autograd import Graph, Tensor, backward, no_grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``.

    The floor keeps entries whose true derivative is ~0 from dividing
    finite-difference roundoff by zero.
    """
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def gradcheck(loss_fn: Callable[[], Tensor], params: dict[str, Tensor], h: float = 1e-5,
              max_entries: int | None = None, rng: np.random.Generator | None = None,
              floor: float = 1e-6) -> dict:
    """Compare tape gradients of ``loss_fn()`` against central differences.

    ``loss_fn`` must rebuild the forward pass from the current parameter
    values each call. When ``max_entries`` is set, that many entries per
    parameter are probed (chosen by ``rng``); otherwise every entry is.
    ``floor`` is passed to :func:`relative_error`.

    Returns ``{"max_rel_error", "per_param", "n_checked"}``.
    """
    for p in params.values():
        p.grad = None
    with Graph() as g:
        loss = loss_fn()
        backward(loss, g)
    analytic = {k: (None if p.grad is None else p.grad.copy()) for k, p in params.items()}

    per_param = {}
    n_checked = 0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = (rng or np.random.default_rng(0)).choice(flat.size, max_entries, replace=False)
        num = np.empty(idx.size)
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            with no_grad():
                fp = float(loss_fn().data)
                flat[i] = orig - h
                fm = float(loss_fn().data)
            flat[i] = orig
            num[j] = (fp - fm) / (2.0 * h)
        a = analytic[name]
        a = np.zeros(flat.size) if a is None else a.reshape(-1)
        err = relative_error(a[idx], num, floor)
        per_param[name] = float(err.max()) if err.size else 0.0
        n_checked += idx.size
    for p in params.values():
        p.grad = None
    return {
        "max_rel_error": max(per_param.values()) if per_param else 0.0,
        "per_param": per_param,
        "n_checked": n_checked,
    }
