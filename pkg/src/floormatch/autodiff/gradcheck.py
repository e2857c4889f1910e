"""Central finite-difference gradient verification."""
from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from ..errors import NumericError
from .tensor import Tensor, no_grad


def numerical_gradient(f: Callable[[Tensor], Tensor], x: np.ndarray, eps: float,
                       coords: Optional[np.ndarray] = None) -> np.ndarray:
    """Central differences of scalar ``f`` at ``x`` over flat ``coords`` (all by default)."""
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    out = np.zeros_like(flat)
    if coords is None:
        coords = np.arange(flat.size)
    with no_grad():
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f(Tensor(x)).data)
            flat[i] = orig - eps
            fm = float(f(Tensor(x)).data)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError(f"f is non-finite near coordinate {i}")
            out[i] = (fp - fm) / (2 * eps)
    return out.reshape(x.shape)


def finite_diff_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5,
                      max_coords: Optional[int] = None, rng=None) -> float:
    """Max relative error between the analytic and central-difference gradients.

    Error per coordinate is ``|a - n| / (|a| + |n| + 1e-12)``. ``f`` must map a
    Tensor to a scalar Tensor. With ``max_coords`` a random subset of
    coordinates is compared.
    """
    x = np.array(x, dtype=np.float64)
    xt = Tensor(x.copy(), requires_grad=True)
    y = f(xt)
    if not np.isfinite(y.data).all():
        raise NumericError("f(x) is non-finite")
    y.backward()
    analytic = xt.grad if xt.grad is not None else np.zeros_like(x)
    coords = None
    if max_coords is not None and max_coords < x.size:
        rng = rng if rng is not None else np.random.default_rng(0)
        coords = np.sort(rng.choice(x.size, size=max_coords, replace=False))
    numeric = numerical_gradient(f, x, eps, coords)
    a = analytic.reshape(-1)
    n = numeric.reshape(-1)
    if coords is not None:
        a, n = a[coords], n[coords]
    rel = np.abs(a - n) / (np.abs(a) + np.abs(n) + 1e-12)
    return float(rel.max()) if rel.size else 0.0
