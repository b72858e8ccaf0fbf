"""Time the compiled tree-contraction kernel against the numpy fallback.

    python benchmarks/bench_kernels.py [--model pendulum] [--K 4] [--batch 256]

Both backends run on the same trees and random propagator stacks; the script
checks they agree before timing them.
"""

import argparse
import time

import numpy as np

from lindstedt import kernels, models
from lindstedt.trees import BARE, NodeTable, shape_store


def _setup(model, K, batch, seed):
    rng = np.random.default_rng(seed)
    store = shape_store(model, BARE, K)
    table = NodeTable(model)
    jobs = []
    for sid in store.ids(K):
        flat = store.flat(sid)
        d = model.d
        props = rng.standard_normal((batch, flat.n, d, d)) + 1j * rng.standard_normal((batch, flat.n, d, d))
        jobs.append((flat, props))
    return table, jobs


def _run(fn, table, jobs):
    out = []
    for flat, props in jobs:
        out.append(fn(flat.hidx, flat.child_ptr, flat.child_idx, props, True, -1,
                      table.offsets, table.tabK, table.tabC))
    return out


def _best(fn, table, jobs, repeat):
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        _run(fn, table, jobs)
        best = min(best, time.perf_counter() - t)
    return best


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--model", default="pendulum", choices=["pendulum", "two_by_two", "forced_pendulum"])
    p.add_argument("--K", type=int, default=4)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    model = getattr(models, args.model)()
    table, jobs = _setup(model, args.K, args.batch, args.seed)
    py = kernels.python_contract_batch
    print(f"model={model.name} K={args.K} shapes={len(jobs)} batch={args.batch} active_backend={kernels.BACKEND}")
    if kernels.BACKEND != "cython":
        print("compiled kernel not built; timing the numpy fallback only")
        print(f"numpy   {_best(py, table, jobs, args.repeat):.4f} s")
        return
    cy = kernels._impl
    for a, b in zip(_run(cy, table, jobs), _run(py, table, jobs)):
        for x, y in zip(a, b):
            np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-12)
    t_cy = _best(cy, table, jobs, args.repeat)
    t_py = _best(py, table, jobs, args.repeat)
    print(f"cython  {t_cy:.4f} s")
    print(f"numpy   {t_py:.4f} s")
    print(f"speedup {t_py / t_cy:.1f}x")


if __name__ == "__main__":
    main()
