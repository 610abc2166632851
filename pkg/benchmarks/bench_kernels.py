"""Compiled vs pure-Python kernel timings.

Times the transition-density matrix that dominates the Bellman solve and
then the full solve at the default grid. Usage::

    python benchmarks/bench_kernels.py [--repeat 3] [--M 2000]
"""

import argparse
import time

import numpy as np

from wptsched import kernels
from wptsched.channel import ChannelModel, FrameConfig
from wptsched.dp_policy import solve_bellman


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def use_backend(mod):
    kernels.transition_density = mod.transition_density
    kernels.transition_params = mod.transition_params


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--M", type=int, default=2000)
    ap.add_argument("--nodes", type=int, default=1024)
    args = ap.parse_args()

    backends = {"python": kernels.get_backend("python")}
    try:
        backends["compiled"] = kernels.get_backend("compiled")
    except ImportError:
        print("compiled extension not built; timing the Python kernels only")

    v_from = np.linspace(0, 60, args.M + 1)
    v_to = np.linspace(0, 60, args.nodes)
    cfg = FrameConfig.from_T(126, 3)
    model = ChannelModel.uncorrelated(3, 1.0)

    results = {}
    for name, mod in backends.items():
        dens = best_of(lambda: mod.transition_density(v_from, v_to, 5, 3, 1.0), args.repeat)
        use_backend(mod)
        solve = best_of(lambda: solve_bellman(cfg, model, M=args.M, n_quad=args.nodes),
                        max(1, args.repeat - 1))
        results[name] = (dens, solve)

    print(f"{'backend':<10} {'density (s)':>12} {'solve (s)':>10}")
    for name, (dens, solve) in results.items():
        print(f"{name:<10} {dens:>12.4f} {solve:>10.3f}")
    if len(results) == 2:
        (pd, ps), (cd, cs) = results["python"], results["compiled"]
        print(f"speedup    {pd / cd:>12.2f} {ps / cs:>10.2f}")


if __name__ == "__main__":
    main()
