"""Compare the compiled and pure-Python kernel backends.

Usage: python3 benchmarks/bench_kernels.py [--n 30] [--steps 20000]

Times force evaluation and BAOAB integration for a zigzag crystal and
checks that both backends produce the same trajectory.
"""

import argparse
import time

import numpy as np

from ionkink import dynamics, kernels, statics
from ionkink.model import IonSystem


def _time(fn, repeat=3):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=30)
    ap.add_argument("--steps", type=int, default=20000)
    args = ap.parse_args()

    sys_ = IonSystem.uniform(args.n, 24.6e3, 140e3)
    q = statics.zigzag(sys_)
    params = dynamics.LangevinParams(1e-3)
    dt = dynamics.dt_dimensionless(sys_, params.dt)
    z, x = np.ascontiguousarray(q.z), np.ascontiguousarray(q.x)

    names = ["python"] + (["cython"] if kernels.HAVE_EXTENSION else [])
    rows = []
    finals = {}
    for name in names:
        kern = kernels.get_backend(name)
        nf = 2000
        t_force = _time(lambda: [kern.forces(z, x, sys_.kz, sys_.kxm, sys_.w2, 0.0, 1.0)
                                 for _ in range(nf)]) / nf
        steps = args.steps if name == "cython" else max(args.steps // 20, 1)
        state = dynamics.DynamicsState.at_rest(q, 7)
        t_step = _time(lambda: dynamics.integrate(sys_, state, steps, dt, params=params,
                                                  backend=name), repeat=1) / steps
        finals[name] = dynamics.integrate(sys_, state, 500, dt, params=params, backend=name)[0]
        rows.append((name, t_force * 1e6, t_step * 1e6))

    print(f"N = {args.n}")
    print(f"{'backend':8s} {'forces [us]':>12s} {'step [us]':>10s}")
    for name, tf, ts in rows:
        print(f"{name:8s} {tf:12.2f} {ts:10.2f}")
    if len(rows) == 2:
        print(f"speed-up per step: {rows[0][2] / rows[1][2]:.1f}x")
        a, b = finals["python"], finals["cython"]
        diff = max(np.max(np.abs(a.z - b.z)), np.max(np.abs(a.x - b.x)))
        print(f"max position difference after 500 steps: {diff:.2e}")


if __name__ == "__main__":
    main()
