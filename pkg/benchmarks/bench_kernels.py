"""Time the numba kernels against the numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from gatebath import _kernels
from gatebath.exciton import ExcitonSystem
from gatebath.heom import BathSpec, HierarchySpec, build_operator


def kraus_case(d=4, n_ops=16, seed=0):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n_ops * d, d)) + 1j * rng.normal(size=(n_ops * d, d))
    q, _ = np.linalg.qr(a)
    rho = np.eye(d, dtype=complex) / d
    return np.ascontiguousarray(q.reshape(n_ops, d, d)), rho


def heom_case(L, K, nsub=10):
    op = build_operator(ExcitonSystem.symmetric_dimer(100.0), BathSpec(120.0), HierarchySpec(L, K))
    hi = op.hierarchy
    rho = np.zeros((len(hi), 2, 2), dtype=complex)
    rho[0, 0, 0] = 1.0
    return (rho, 1e-4, nsub, op.H, op.gsum, hi.indices.astype(np.float64), hi.plus, hi.minus,
            op.comm_mask, op.low_mask, op.term_mask), len(hi)


def best_of(fn, repeat):
    fn()  # compile / warm caches
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    impls = _kernels.IMPLEMENTATIONS
    if "numba" not in impls:
        print("numba unavailable; only the numpy path exists")
        return

    rows = []
    ops, rho = kraus_case()
    for name in ("numpy", "numba"):
        f = impls[name]["kraus_apply"]
        rows.append(("kraus_apply 4x4, 16 ops", name, best_of(lambda: f(ops, rho), args.repeat)))
    for L, K in ((8, 1), (8, 2)):
        case, n_ados = heom_case(L, K)
        for name in ("numpy", "numba"):
            f = impls[name]["heom_rk4"]
            rows.append((f"heom_rk4 L={L} K={K} ({n_ados} ADOs), 10 steps", name,
                         best_of(lambda: f(*case), args.repeat)))

    width = max(len(r[0]) for r in rows)
    for label, name, secs in rows:
        print(f"{label:<{width}}  {name:<6} {secs * 1e3:10.3f} ms")


if __name__ == "__main__":
    main()
