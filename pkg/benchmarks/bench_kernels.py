"""Compare the compiled TMOP element kernel with the NumPy fallback.

Run with ``python benchmarks/bench_kernels.py``.  Each case times energy,
gradient and Hessian evaluation of one full mesh and checks that both
backends agree.
"""
import argparse
import time

import numpy as np

from morphfit import kernels
from morphfit.cli import perturb_interior
from morphfit.mesh import make_cartesian
from morphfit.tmop import QualityObjective

CASES = [
    ("quad p2 32x32", dict(dim=2, counts=32, order=2, geom="quad")),
    ("tri p3 16x16", dict(dim=2, counts=16, order=3, geom="tri")),
    ("hex p2 8x8x8", dict(dim=3, counts=8, order=2, geom="hex")),
    ("tet p2 4x4x4", dict(dim=3, counts=4, order=2, geom="tet", split=24)),
]


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def run(repeat=3):
    if not kernels.compiled_available():
        raise SystemExit("compiled kernel not built; run `pip install -e . --no-build-isolation`")
    print(f"{'case':<16}{'eval':>6}{'python [s]':>12}{'compiled [s]':>14}{'speedup':>9}{'max diff':>11}")
    for name, kw in CASES:
        mesh = perturb_interior(make_cartesian(**kw), 0.05, seed=1)
        x = mesh.coords.ravel()
        objs = {b: QualityObjective(mesh, backend=b) for b in ("python", "compiled")}
        for order, label in ((1, "grad"), (2, "hess")):
            outs = {b: o._run(x, order) for b, o in objs.items()}
            diff = max(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), 1e-300)
                       for a, b in zip(outs["python"][:order + 1], outs["compiled"][:order + 1]))
            tp = best_of(lambda: objs["python"]._run(x, order), repeat)
            tc = best_of(lambda: objs["compiled"]._run(x, order), repeat)
            print(f"{name:<16}{label:>6}{tp:>12.4f}{tc:>14.4f}{tp / tc:>9.1f}{diff:>11.1e}")


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    p.add_argument("--repeat", type=int, default=3)
    run(p.parse_args().repeat)
