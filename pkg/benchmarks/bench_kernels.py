"""Compare the compiled and numpy kernel backends on a dislocation window.

    python3 benchmarks/bench_kernels.py [--eps 0.04] [--repeat 3]

Times energy, gradient, Hessian coefficients, Hessian-vector product and
band assembly on the same term table, and reports the largest deviation
between the two backends.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from dislocore.experiments import Setup, build_point
from dislocore.kernels import available, get_backend


def best_of(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--eps", type=float, default=0.04)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    if "cython" not in available():
        print("compiled backend not built; only numpy available")
        return 1
    pt = build_point(Setup(), args.eps)
    m = pt.model
    tab, dmap = m.tab, m.dmap
    rng = np.random.default_rng(0)
    u = dmap.full(m.sampled_dofs())
    v = dmap.expand(rng.standard_normal(m.ndof))
    print(f"eps={pt.eps:.4g} atoms={m.lat.n_atoms} dofs={m.ndof} "
          f"three-body terms={len(tab.idx3)} pair terms={len(tab.idx2)}")

    results = {}
    for name in ("numpy", "cython"):
        be = get_backend(name)
        h = be.evaluate(u, tab, 2)
        h3, h2 = np.ascontiguousarray(h[2]), np.ascontiguousarray(h[3])
        cases = {
            "energy": lambda: be.evaluate(u, tab, 0)[0],
            "gradient": lambda: be.evaluate(u, tab, 1)[1],
            "hessian": lambda: be.evaluate(u, tab, 2)[2],
            "hessvec": lambda: be.hessvec(tab, h3, h2, v),
            "band": lambda: be.band_assemble(tab, h3, h2, dmap.dof, dmap.coef, m.ndof, m.bw),
        }
        results[name] = {k: best_of(f, args.repeat) for k, f in cases.items()}

    print(f"{'kernel':<10}{'numpy [s]':>12}{'cython [s]':>12}{'speedup':>10}{'max rel diff':>15}")
    for k in results["numpy"]:
        tn, on = results["numpy"][k]
        tc, oc = results["cython"][k]
        on, oc = np.asarray(on, dtype=float), np.asarray(oc, dtype=float)
        diff = float(np.max(np.abs(on - oc)) / max(np.max(np.abs(on)), 1e-300))
        print(f"{k:<10}{tn:>12.4f}{tc:>12.4f}{tn / tc:>10.1f}{diff:>15.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
