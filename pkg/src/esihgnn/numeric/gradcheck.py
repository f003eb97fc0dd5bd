"""Central finite-difference gradient checking."""

from __future__ import annotations

import numpy as np

from .tape import Tape, no_record


def relative_error(analytic, numeric, floor=1e-8):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def finite_diff_check(f, params, step=1e-5, max_coords=None, seed=0, return_details=False,
                      oracle_dtype=np.longdouble):
    """Compare tape gradients of the scalar function `f()` with central differences.

    `f` must read the current values of `params` and return a scalar Tensor.
    Analytic gradients are taken at the parameters' own precision. The
    difference quotients are evaluated with every parameter promoted to
    `oracle_dtype` (extended precision where the platform has it), so that
    rounding noise in f does not swamp small gradient entries.

    At most `max_coords` coordinates per parameter are checked, sampled with
    `seed` (all when None). Returns the maximum relative error, or a dict of
    per-parameter maxima when `return_details` is set.
    """
    params = list(params)
    with Tape() as tape:
        tape.watch(params)
        loss = f()
    grads = tape.backward(loss, accumulate=False)
    rng = np.random.default_rng(seed)
    originals = [p.data for p in params]
    details = {}
    try:
        for p in params:
            p.data = p.data.astype(oracle_dtype)
        for p in params:
            flat = p.data.reshape(-1)
            g = grads[p].reshape(-1)
            coords = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
            worst = 0.0
            h = oracle_dtype(step)
            for k in coords:
                orig = flat[k]
                with no_record():
                    flat[k] = orig + h
                    up = f().data.reshape(())[()]
                    flat[k] = orig - h
                    down = f().data.reshape(())[()]
                flat[k] = orig
                numeric = float((up - down) / (2 * h))
                worst = max(worst, relative_error(float(g[k]), numeric))
            details[p.name or f"param{len(details)}"] = worst
    finally:
        for p, data in zip(params, originals):
            p.data = data
    if return_details:
        return details
    return max(details.values(), default=0.0)
