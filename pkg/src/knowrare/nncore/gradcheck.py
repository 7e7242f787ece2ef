import numpy as np


def grad_check(f, params, eps=1e-5, max_coords=None, rng=None):
    """Max relative error between ``f``'s analytic gradient and central differences.

    ``f(params)`` must return ``(value, grads)`` with ``grads`` keyed like
    ``params``. Parameters are perturbed in place and restored. Relative
    error is ``|a - n| / max(|a|, |n|, 1e-8)``. With ``max_coords`` only a
    random subset of coordinates per parameter is probed.
    """
    _, analytic = f(params)
    worst = 0.0
    for name in sorted(analytic):
        p = params[name]
        flat = p.reshape(-1)
        a_flat = np.asarray(analytic[name]).reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = (rng or np.random.default_rng(0)).choice(flat.size, max_coords, replace=False)
        for k in coords:
            orig = flat[k]
            flat[k] = orig + eps
            up = f(params)[0]
            flat[k] = orig - eps
            down = f(params)[0]
            flat[k] = orig
            numeric = (up - down) / (2.0 * eps)
            denom = max(abs(a_flat[k]), abs(numeric), 1e-8)
            worst = max(worst, abs(a_flat[k] - numeric) / denom)
    return worst
