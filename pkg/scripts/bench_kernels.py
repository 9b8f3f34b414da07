"""Benchmark the compiled kernel backend against the NumPy fallback.

Times the two hot kernels (cross-covariance build and posterior-mean
gradient contraction) at the shapes the optimization loop actually uses,
plus one end-to-end explanation call under each backend.

Run:  python scripts/bench_kernels.py
The compiled backend is used when available; MOLONE_PURE_PYTHON=1 forces
the fallback, which is how the pure-Python column is measured here
(subprocess re-import).
"""

import json
import os
import subprocess
import sys
import time
import timeit

import numpy as np

CASES = [
    # (n_query, n_train, dims) pairs seen in fits, acquisitions, explanations
    ("fit gram 36x36 d5", 36, 36, 5),
    ("pool posterior 256x36 d5", 256, 36, 5),
    ("pref cross 4608x72 d4", 4608, 72, 4),
    ("explain grads 64x36 d5", 64, 36, 5),
]


def bench_backend() -> dict:
    import molone.kernels as kb

    gen = np.random.default_rng(0)
    out = {"backend": kb.backend_name(), "cross": {}, "grad_mean": {}}
    for label, nq, nt, d in CASES:
        xq = gen.uniform(size=(nq, d))
        xt = gen.uniform(size=(nt, d))
        ls = gen.uniform(0.2, 1.0, size=d)
        alpha = gen.normal(size=nt)
        reps = max(3, int(2e6 / (nq * nt)))
        out["cross"][label] = timeit.timeit(
            lambda: kb.cross("matern52", xq, xt, ls, 1.3), number=reps) / reps
        out["grad_mean"][label] = timeit.timeit(
            lambda: kb.grad_mean("matern52", xq, xt, ls, 1.3, alpha),
            number=reps) / reps

    from molone import gp
    from molone.explain import ExplainConfig, explain_pair
    from molone.prefgp import ComparisonRecord, PrefFitConfig, fit_preference
    from molone.rng import RngStream

    x = gen.uniform(size=(36, 5))
    y = np.column_stack([np.sin(3 * x[:, 0]), x[:, 1] * x[:, 2]])
    model = gp.fit(x, y, gp.FitConfig(restarts=2, seed=0))
    records = [ComparisonRecord(gen.uniform(size=2), gen.uniform(size=2))
               for _ in range(16)]
    pref = fit_preference(records, PrefFitConfig(seed=0, restarts=1))
    t0 = time.perf_counter()
    for i in range(5):
        explain_pair(np.full(5, 0.3), np.full(5, 0.7), model, pref,
                     ExplainConfig(), RngStream(i, "bench"))
    out["explain_pair"] = (time.perf_counter() - t0) / 5
    return out


def main():
    if os.environ.get("_MOLONE_BENCH_CHILD"):
        print(json.dumps(bench_backend()))
        return

    results = {}
    for pure in (False, True):
        env = dict(os.environ, _MOLONE_BENCH_CHILD="1")
        if pure:
            env["MOLONE_PURE_PYTHON"] = "1"
        proc = subprocess.run([sys.executable, os.path.abspath(__file__)],
                              env=env, capture_output=True, text=True)
        out = json.loads(proc.stdout.strip().splitlines()[-1])
        results[out["backend"]] = out
    if len(results) < 2:
        print("compiled backend unavailable; only the numpy fallback ran")

    numpy_res = results.get("numpy")
    cy_res = results.get("cython")
    print(f"{'case':34s} {'numpy':>10s} {'cython':>10s} {'speedup':>8s}")
    for section in ("cross", "grad_mean"):
        for label in numpy_res[section]:
            t_np = numpy_res[section][label]
            t_cy = cy_res[section][label] if cy_res else float("nan")
            ratio = t_np / t_cy if cy_res else float("nan")
            print(f"{section + ': ' + label:34s} {t_np * 1e6:8.1f}us "
                  f"{t_cy * 1e6:8.1f}us {ratio:7.2f}x")
    t_np = numpy_res["explain_pair"]
    t_cy = cy_res["explain_pair"] if cy_res else float("nan")
    print(f"{'explain_pair end-to-end':34s} {t_np * 1e3:8.2f}ms "
          f"{t_cy * 1e3:8.2f}ms {t_np / t_cy:7.2f}x")


if __name__ == "__main__":
    main()
