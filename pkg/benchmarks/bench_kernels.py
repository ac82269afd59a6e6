"""Time the numba kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Kernel timings switch the backend in-process; the end-to-end fits are run
once per backend with the same data and seed.
"""
import argparse
import contextlib
import json
import platform
import time

import numpy as np

from ellmix import _kernels
from ellmix.estimators import fit_backfit
from ellmix.experiments import single_preset, three_shell_mixture
from ellmix.mixture import EmConfig, fit_em
from ellmix.sampler import make_rng, sample_ellipsoid, sample_mixture


@contextlib.contextmanager
def backend(name):
    saved = _kernels.active
    _kernels.active = _kernels.numba_kernels if name == "numba" else _kernels.numpy_kernels
    try:
        yield
    finally:
        _kernels.active = saved


def best_of(fn, repeat):
    fn()  # warm-up (JIT compile / caches)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_cases(n, rng):
    x = rng.normal(size=(n, 3)) * [100.0, 50.0, 50.0]
    w = rng.random(n)
    mu = np.zeros(3)
    chol = np.diag([100.0, 50.0, 50.0])
    logp = rng.normal(size=(n, 3)) * 30
    return {
        "mahal_sq": lambda: _kernels.mahal_sq(x, mu, chol),
        "weighted_scatter": lambda: _kernels.weighted_scatter(x, w, mu),
        "center_update": lambda: _kernels.center_update(x, w, mu, chol, 1e-9),
        "row_softmax": lambda: _kernels.row_softmax(logp),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args()
    names = ["numpy"] + (["numba"] if _kernels.HAVE_NUMBA else [])
    rows = []
    for n in (10_000, 100_000):
        cases = kernel_cases(n, make_rng(0))
        for kname, fn in cases.items():
            t = {b: None for b in names}
            for b in names:
                with backend(b):
                    t[b] = best_of(fn, args.repeat)
            rows.append({"task": f"{kname} n={n}", **t})

    single = sample_ellipsoid(single_preset(3), 10_000, make_rng(1))
    mix_cloud, _ = sample_mixture(three_shell_mixture(), 3000, make_rng(2))
    tasks = {
        "fit_backfit n=10000": lambda: fit_backfit(single),
        "fit_em K=3 n=3000": lambda: fit_em(mix_cloud, EmConfig(K=3, seed=0)),
    }
    for tname, fn in tasks.items():
        t = {}
        for b in names:
            with backend(b):
                t[b] = best_of(fn, max(1, args.repeat // 2))
        rows.append({"task": tname, **t})

    print(f"python {platform.python_version()}, numpy {np.__version__}, "
          f"numba {'yes' if _kernels.HAVE_NUMBA else 'no'}")
    header = f"{'task':34s}" + "".join(f"{b:>12s}" for b in names) + ("     speedup" if len(names) > 1 else "")
    print(header)
    for r in rows:
        line = f"{r['task']:34s}" + "".join(f"{r[b] * 1e3:10.2f}ms" for b in names)
        if len(names) > 1:
            line += f"{r['numpy'] / r['numba']:11.1f}x"
        print(line)
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
