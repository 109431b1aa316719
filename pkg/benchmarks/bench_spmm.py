"""Time the compiled and numpy sparse kernels on random graphs.

    python3 benchmarks/bench_spmm.py [--nodes 20000] [--degree 10] [--width 128]
"""
import argparse
import timeit

import numpy as np

from graddistill.numeric import _pykernels

try:
    from graddistill.numeric import _ckernels
except ImportError:
    _ckernels = None


def random_csr(n, degree, rng):
    nnz = n * degree
    rows = np.sort(rng.integers(0, n, nnz))
    cols = rng.integers(0, n, nnz)
    indptr = np.zeros(n + 1, np.int64)
    np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
    return indptr, cols.astype(np.int64), rng.random(nnz)


def best_of(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nodes", type=int, default=20000)
    ap.add_argument("--degree", type=int, default=10)
    ap.add_argument("--width", type=int, default=128)
    ap.add_argument("--fanout", type=int, default=5)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    indptr, idx, vals = random_csr(args.nodes, args.degree, rng)
    dense = rng.normal(size=(args.nodes, args.width))
    keys = rng.random(len(idx))
    backends = {"numpy": _pykernels}
    if _ckernels is not None:
        backends["cython"] = _ckernels
    else:
        print("compiled kernels not built; timing the numpy fallback only")

    print(f"nodes={args.nodes} nnz={len(idx)} width={args.width} fanout={args.fanout}")
    print(f"{'kernel':<16}{'backend':<10}{'seconds':>10}")
    times = {}
    for name, mod in backends.items():
        t_mm = best_of(lambda: mod.csr_matmat(indptr, idx, vals, dense, args.nodes), args.repeat)
        t_rs = best_of(lambda: mod.csr_row_sample(indptr, keys, args.fanout), args.repeat)
        times[name] = (t_mm, t_rs)
        print(f"{'csr_matmat':<16}{name:<10}{t_mm:>10.4f}")
        print(f"{'csr_row_sample':<16}{name:<10}{t_rs:>10.4f}")
    if "cython" in times:
        a, b = times["numpy"], times["cython"]
        out_c = _ckernels.csr_matmat(indptr, idx, vals, dense, args.nodes)
        out_p = _pykernels.csr_matmat(indptr, idx, vals, dense, args.nodes)
        print(f"speedup matmat x{a[0] / b[0]:.2f}, row_sample x{a[1] / b[1]:.2f}, "
              f"max |diff| {np.abs(out_c - out_p).max():.2e}")


if __name__ == "__main__":
    main()
