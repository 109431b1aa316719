"""Finite-difference validation of tape gradients."""
from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .tensor import NumericalError, Tape, Tensor

LossFn = Callable[[Tape, Mapping[str, Tensor]], Tensor]


def _value(f: LossFn, params: Mapping[str, np.ndarray]) -> float:
    tape = Tape()
    out = f(tape, tape.watch(params)).item()
    if not np.isfinite(out):
        raise NumericalError("loss is not finite")
    return out


def tape_gradients(f: LossFn, params: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    tape = Tape()
    weights = tape.watch(params)
    loss = f(tape, weights)
    if loss.data.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    names = list(weights)
    grads = tape.gradient(loss, [weights[k] for k in names])
    return dict(zip(names, grads))


def grad_check(f: LossFn, params: Mapping[str, np.ndarray], eps: float = 1e-5,
               floor: float = 1e-6, max_entries: int | None = None,
               rng: np.random.Generator | None = None) -> float:
    """Max relative error between tape and central-difference gradients.

    The error per entry is ``|a - n| / max(|a|, |n|, floor)``. ``f`` must be
    deterministic (re-seed any dropout rng inside it). With ``max_entries``
    a random subset of entries per parameter is checked.
    """
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    analytic = tape_gradients(f, params)
    worst = 0.0
    for name, value in params.items():
        flat = value.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            rng = rng or np.random.default_rng(0)
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        a_flat = analytic[name].reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            up = _value(f, params)
            flat[i] = orig - eps
            down = _value(f, params)
            flat[i] = orig
            numeric = (up - down) / (2 * eps)
            a = a_flat[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
    return worst
