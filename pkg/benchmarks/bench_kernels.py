"""Timing comparison of the compiled and numpy state-vector kernels.

Run as ``python3 benchmarks/bench_kernels.py``.  Exercises the two hot
gather kernels (full-basis XOR apply and truncated-basis table apply) at a
few sizes and reports per-call time and speedup; results from both backends
are cross-checked before timing.
"""

import time

import numpy as np

from rydcrit import _kernels_py
from rydcrit.hamiltonian import BasisSpace
from rydcrit.lattice import build_ring

try:
    from rydcrit import _kernels
except ImportError:
    _kernels = None


def _time(fn, *args, min_time=0.2):
    fn(*args)  # warm up
    n, t0 = 0, time.perf_counter()
    while True:
        fn(*args)
        n += 1
        dt = time.perf_counter() - t0
        if dt > min_time and n >= 5:
            return dt / n


def bench_xor(n_sites, rng):
    dim = 2**n_sites
    psi = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    diag = rng.standard_normal(dim) * (1 + 0j)
    out_a = np.empty_like(psi)
    out_b = np.empty_like(psi)
    coeff = 0.37 + 0.0j
    _kernels_py.apply_xor(psi, out_a, diag, coeff, n_sites)
    rows = [("python", _time(_kernels_py.apply_xor, psi, out_b, diag, coeff, n_sites))]
    if _kernels is not None:
        _kernels.apply_xor(psi, out_b, diag, coeff, n_sites)
        assert np.allclose(out_a, out_b, rtol=1e-13, atol=1e-13)
        rows.append(("cython", _time(_kernels.apply_xor, psi, out_b, diag, coeff, n_sites)))
    return dim, rows


def bench_table(n_sites, rng):
    basis = BasisSpace.blockade_truncated(build_ring(n_sites), 1.4, max_sites=n_sites)
    table = np.empty((basis.dim, n_sites), dtype=np.int64)
    for i in range(n_sites):
        table[:, i] = basis.index_of(basis.states ^ (1 << i))
    psi = rng.standard_normal(basis.dim) + 1j * rng.standard_normal(basis.dim)
    diag = rng.standard_normal(basis.dim) * (1 + 0j)
    out_a = np.empty_like(psi)
    out_b = np.empty_like(psi)
    coeff = 0.37 + 0.0j
    _kernels_py.apply_table(psi, out_a, diag, coeff, table)
    rows = [("python", _time(_kernels_py.apply_table, psi, out_b, diag, coeff, table))]
    if _kernels is not None:
        _kernels.apply_table(psi, out_b, diag, coeff, table)
        assert np.allclose(out_a, out_b, rtol=1e-13, atol=1e-13)
        rows.append(("cython", _time(_kernels.apply_table, psi, out_b, diag, coeff, table)))
    return basis.dim, rows


def main():
    rng = np.random.default_rng(7)
    if _kernels is None:
        print("compiled extension not available; timing the numpy backend only")
    print(f"{'kernel':<12} {'n':>3} {'dim':>7} {'backend':<8} {'per call':>12} {'speedup':>8}")
    for name, fn, sizes in [
        ("apply_xor", bench_xor, (8, 12, 16)),
        ("apply_table", bench_table, (12, 18, 22)),
    ]:
        for n in sizes:
            dim, rows = fn(n, rng)
            base = rows[0][1]
            for backend, t in rows:
                speed = f"{base / t:6.1f}x" if backend != "python" else "     -"
                print(f"{name:<12} {n:>3} {dim:>7} {backend:<8} {t * 1e6:>10.1f}us {speed:>8}")


if __name__ == "__main__":
    main()
