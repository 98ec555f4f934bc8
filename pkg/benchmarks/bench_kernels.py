"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Shapes follow the coffee-shop workload: one epoch-sized batch through a
32-unit network, pinball over ten quantiles, a planner-sized sampling batch,
and a cycle check on the eight-variable graph. The forward pass is timed at
planner batch size and at full-dataset size, where BLAS-backed numpy wins.
"""

import argparse
import timeit

import numpy as np

from hybridwm.kernels import backends

TAU = np.linspace(0.05, 0.95, 10)


def cases(rng):
    d_in, h = 30, 32
    x = rng.random((4500, d_in))
    params = (rng.normal(size=(d_in, h)), rng.normal(size=h), rng.normal(size=(h, h)), rng.normal(size=h),
              rng.normal(size=(h, 10)), rng.normal(size=10))
    q = np.sort(rng.normal(size=(4500, 10)), axis=1)
    y = rng.normal(size=4500)
    small_q = np.sort(rng.normal(size=(4, 10)), axis=1)
    u = rng.random(4)
    adj = np.zeros((8, 8), dtype=np.uint8)
    for i in range(7):
        adj[i, i + 1] = 1
    x4 = np.ascontiguousarray(x[:4])
    return {
        "mlp_forward 4x30": (lambda k: k.mlp_forward(x4, *params), 5000),
        "mlp_forward 4500x30": (lambda k: k.mlp_forward(x, *params), 20),
        "pinball 4500x10": (lambda k: k.pinball(q, y, TAU), 50),
        "quantile_sample 4 rows": (lambda k: k.quantile_sample(small_q, TAU, u, -5.0, 5.0), 5000),
        "reachable 8-node chain": (lambda k: k.reachable(adj, 0, 7), 20000),
    }


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    impls = backends()
    table = cases(np.random.default_rng(0))
    names = list(impls)
    print(f"{'kernel':<26}" + "".join(f"{n + ' us/call':>18}" for n in names) + (f"{'speedup':>10}" if len(names) > 1 else ""))
    for label, (fn, number) in table.items():
        per_call = {}
        for n, mod in impls.items():
            best = min(timeit.repeat(lambda: fn(mod), number=number, repeat=args.repeat))
            per_call[n] = 1e6 * best / number
        row = f"{label:<26}" + "".join(f"{per_call[n]:18.2f}" for n in names)
        if "cython" in per_call:
            row += f"{per_call['python'] / per_call['cython']:9.1f}x"
        print(row)
    if "cython" not in impls:
        print("compiled extension not built; only the fallback was timed")


if __name__ == "__main__":
    main()
