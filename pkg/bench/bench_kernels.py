"""Compare the compiled kernels with the NumPy fallback.

Run from the repository root::

    python3 bench/bench_kernels.py [--repeat 3]

Workloads are the two hot paths of a ``report`` run on the
five-agent network: the Gerschgorin region scan (one 401 x 801 grid per
follower) and a 10 s RK4 integration at dt = 1e-3.
"""

import argparse
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

from consensus_forge import kernels  # noqa: E402
from consensus_forge.simulate import simulate  # noqa: E402
from consensus_forge.synthesis import gerschgorin_block, gerschgorin_radius, row_sum_norms  # noqa: E402
from instances import example_sim, example_system, example_tree, gains_ex1, gains_ex3  # noqa: E402


def grid_scan(impl, system, gains, grid=400):
    out = []
    for i in range(1, system.N + 1):
        A = gerschgorin_block(system, gains, i)
        R = gerschgorin_radius(i, system, gains)
        W = row_sum_norms(A)[0] + R + 1.0
        out.append(impl.region_slack_grid(A, R, np.linspace(0, W, grid + 1), np.linspace(-W, W, 2 * grid + 1))[0])
    return out


def best_of(fn, repeat):
    times = []
    result = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        result = fn()
        times.append(time.perf_counter() - t0)
    return min(times), result


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)

    backends = kernels.available_backends()
    if "compiled" not in backends:
        print("compiled extension not built; only the fallback is available")
    s = example_system()
    tree = example_tree(s)
    workloads = {
        "gerschgorin grid (4 followers)": lambda name: grid_scan(kernels.get_backend(name), s, gains_ex3()),
        "rk4 agents, 10 s @ 1e-3": lambda name: simulate(s, tree, gains_ex1(), "dst", example_sim(),
                                                         backend=name).states[-1],
    }
    print(f"{'workload':34s}" + "".join(f"{b:>12s}" for b in backends) + "     speedup   max|diff|")
    for label, work in workloads.items():
        timings, results = {}, {}
        for b in backends:
            timings[b], results[b] = best_of(lambda: work(b), args.repeat)
        row = f"{label:34s}" + "".join(f"{timings[b]:11.4f}s" for b in backends)
        if len(backends) == 2:
            a, c = np.asarray(results["compiled"]), np.asarray(results["python"])
            diff = float(np.max(np.abs(a - c) / (1 + np.abs(c))))
            row += f"  {timings['python'] / timings['compiled']:9.1f}x   {diff:.1e}"
        print(row)


if __name__ == "__main__":
    main()
