import os
import subprocess
import sys

import numpy as np
import pytest

from rydcrit import _kernels_py, kernels
from rydcrit.hamiltonian import BasisSpace
from rydcrit.lattice import build_ring


def _brute_force_xor(psi, diag, coeff, n_sites):
    out = diag * psi
    for k in range(psi.size):
        for i in range(n_sites):
            out[k] += coeff * psi[k ^ (1 << i)]
    return out


@pytest.mark.parametrize("n_sites", [1, 2, 4, 7])
def test_apply_xor_matches_brute_force(n_sites):
    rng = np.random.default_rng(n_sites)
    dim = 2**n_sites
    psi = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    diag = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    coeff = 0.35 - 0.2j
    out = np.empty(dim, dtype=np.complex128)
    kernels.apply_xor(psi, out, diag, coeff, n_sites)
    assert np.allclose(out, _brute_force_xor(psi, diag, coeff, n_sites), atol=1e-13)


def test_apply_table_matches_xor_on_full_basis():
    # a full table reduces the truncated kernel to the hypercube one
    n = 5
    dim = 2**n
    states = np.arange(dim, dtype=np.int64)
    table = np.empty((dim, n), dtype=np.int64)
    for i in range(n):
        table[:, i] = states ^ (1 << i)
    rng = np.random.default_rng(0)
    psi = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    diag = rng.standard_normal(dim).astype(np.complex128)
    a = np.empty(dim, dtype=np.complex128)
    b = np.empty(dim, dtype=np.complex128)
    kernels.apply_xor(psi, a, diag, 0.5 + 0.1j, n)
    kernels.apply_table(psi, b, diag, 0.5 + 0.1j, table)
    assert np.allclose(a, b, atol=1e-13)


def _flip_table(basis):
    flips = basis.states[:, None] ^ (np.int64(1) << np.arange(basis.n_sites, dtype=np.int64))
    return np.ascontiguousarray(basis.index_of(flips.ravel()).reshape(flips.shape))


def test_apply_table_respects_missing_targets():
    basis = BasisSpace.blockade_truncated(build_ring(8), radius=1.4)
    table = _flip_table(basis)
    rng = np.random.default_rng(1)
    psi = rng.standard_normal(basis.dim) + 1j * rng.standard_normal(basis.dim)
    diag = np.zeros(basis.dim, dtype=np.complex128)
    out = np.empty(basis.dim, dtype=np.complex128)
    kernels.apply_table(psi, out, diag, 1.0, table)
    # row k sums psi over exactly the in-space single flips of state k
    for k in range(basis.dim):
        want = sum(psi[t] for t in table[k] if t >= 0)
        assert out[k] == pytest.approx(want, abs=1e-12)


def test_backends_agree():
    if kernels.BACKEND == "python":
        pytest.skip("compiled extension not present")
    rng = np.random.default_rng(7)
    n = 9
    dim = 2**n
    psi = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    diag = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    a = np.empty(dim, dtype=np.complex128)
    b = np.empty(dim, dtype=np.complex128)
    kernels.apply_xor(psi, a, diag, 0.3 - 0.7j, n)
    _kernels_py.apply_xor(psi, b, diag, 0.3 - 0.7j, n)
    assert np.allclose(a, b, atol=1e-12)

    basis = BasisSpace.blockade_truncated(build_ring(12), radius=1.4)
    table = _flip_table(basis)
    psi = rng.standard_normal(basis.dim) + 1j * rng.standard_normal(basis.dim)
    diag = rng.standard_normal(basis.dim).astype(np.complex128)
    a = np.empty(basis.dim, dtype=np.complex128)
    b = np.empty(basis.dim, dtype=np.complex128)
    kernels.apply_table(psi, a, diag, -0.4j, table)
    _kernels_py.apply_table(psi, b, diag, -0.4j, table)
    assert np.allclose(a, b, atol=1e-12)


def test_pure_python_env_override():
    code = (
        "import os; os.environ['RYDCRIT_PURE_PYTHON'] = '1'; "
        "from rydcrit import kernels; print(kernels.BACKEND)"
    )
    out = subprocess.run(
        [sys.executable, "-c", code], capture_output=True, text=True, check=True
    )
    assert out.stdout.strip() == "python"
