"""Time the numba kernels against the pure-numpy fallback.

Run ``python3 benchmarks/bench_kernels.py``. The numpy side runs in a child
process with DMSG_DISABLE_NUMBA=1, since the backend is fixed at import.
Pass ``--quick`` for smaller sizes.
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _best_of(fn, repeat):
    fn()  # warm-up (jit compile / caches)
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def measure(quick=False, repeat=5):
    from dmsg import _kernels
    from dmsg.buffer import greedy_select
    from dmsg.numerics.sparse import CSRMatrix
    from dmsg.graph import normalize_adjacency, synth_growing_graph

    rng = np.random.default_rng(0)
    out = {"backend": _kernels.BACKEND}

    n = 2000 if quick else 10000
    src = synth_growing_graph(10, n // 10, 16, intra_p=0.02, inter_p=0.001, seed=0)
    adj = normalize_adjacency(src.edges, src.node_count)
    X = rng.standard_normal((src.node_count, 64))
    out[f"spmm n={src.node_count} h=64"] = _best_of(lambda: adj.matmul(X), repeat)

    m, r, c = (2000, 50, 10) if quick else (10000, 200, 20)
    P_cand = rng.dirichlet(np.ones(c), size=m)
    P_set = rng.dirichlet(np.ones(c), size=r)
    nearest = rng.random(r)
    out[f"min_dist {m}x{r}"] = _best_of(lambda: _kernels.min_dist(P_cand, P_set), repeat)
    out[f"intra_gains {m}x{r}"] = _best_of(lambda: _kernels.intra_gains(P_cand, P_set, nearest), repeat)
    out[f"fold_delta {m}x{r}"] = _best_of(lambda: _kernels.fold_delta(P_cand, P_set, nearest), repeat)

    per_class, b = (400, 20) if quick else (2000, 40)
    P = rng.dirichlet(np.ones(4), size=4 * per_class)
    cand = {k: np.arange(k * per_class, (k + 1) * per_class) for k in range(4)}
    out[f"greedy_select 4x{per_class} b={b}"] = _best_of(lambda: greedy_select(None, cand, P, b), max(1, repeat // 2))
    return out


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--quick", action="store_true")
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = p.parse_args()
    if args.child:
        print(json.dumps(measure(args.quick, args.repeat)))
        return

    fast = measure(args.quick, args.repeat)
    env = dict(os.environ, DMSG_DISABLE_NUMBA="1")
    cmd = [sys.executable, __file__, "--child", "--repeat", str(args.repeat)] + (["--quick"] if args.quick else [])
    slow = json.loads(subprocess.run(cmd, env=env, check=True, capture_output=True, text=True).stdout)
    print(f"{'kernel':<34}{fast['backend'] + ' (s)':>12}{slow['backend'] + ' (s)':>12}{'speedup':>10}")
    for key in fast:
        if key == "backend":
            continue
        print(f"{key:<34}{fast[key]:>12.4f}{slow[key]:>12.4f}{slow[key] / fast[key]:>9.1f}x")


if __name__ == "__main__":
    main()
