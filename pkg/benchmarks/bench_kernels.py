"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints one line per kernel with the best-of-N time for each backend and
the speed-up. Inputs are sized like a default preprocessing/training pass.
"""
import argparse
import timeit

import numpy as np

from knowrare import _kernels_py as py

try:
    from knowrare import _kernels as compiled
except ImportError:
    compiled = None


def cases(rng):
    n = 2000
    minutes = np.sort(rng.uniform(0, 48 * 60, n))
    var = rng.integers(14, size=n)
    values = rng.normal(size=n)
    x = rng.normal(size=(24, 14))
    x[rng.random(x.shape) < 0.4] = np.nan
    fb = rng.normal(size=14)
    scores = np.sort(rng.random(5000))[::-1].copy()
    labels = (rng.random(5000) < 0.3).astype(float)
    z = rng.normal(size=(32, 4 * 128))
    c = rng.normal(size=(32, 128))
    gates, _, tanh_c, _ = py.lstm_cell_forward(z, c)
    dh, dc = rng.normal(size=(32, 128)), rng.normal(size=(32, 128))
    return {
        "window_means": ("window_means", (minutes, var, values, 0.0, 120.0, 24, 14)),
        "fill_missing": ("fill_missing", (x, fb)),
        "ranked_auc": ("ranked_auc", (scores, labels)),
        "lstm_cell_forward": ("lstm_cell_forward", (z, c)),
        "lstm_cell_backward": ("lstm_cell_backward", (dh, dc, gates, c, tanh_c)),
    }


def best(fn, args, repeat, number):
    return min(timeit.repeat(lambda: fn(*args), repeat=repeat, number=number)) / number


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=200)
    args = ap.parse_args()
    if compiled is None:
        print("compiled extension not built; only the fallback is timed")
    print(f"{'kernel':<20} {'python (us)':>12} {'cython (us)':>12} {'speed-up':>9}")
    for label, (name, inputs) in cases(np.random.default_rng(0)).items():
        t_py = best(getattr(py, name), inputs, args.repeat, args.number) * 1e6
        if compiled is None:
            print(f"{label:<20} {t_py:12.1f} {'-':>12} {'-':>9}")
            continue
        t_c = best(getattr(compiled, name), inputs, args.repeat, args.number) * 1e6
        print(f"{label:<20} {t_py:12.1f} {t_c:12.1f} {t_py / t_c:8.2f}x")


if __name__ == "__main__":
    main()
