"""Pure-numpy state-vector kernels.

Fallback used when the compiled extension is unavailable (or when
``RYDCRIT_PURE_PYTHON=1``).  Same contract as ``_kernels.pyx``: gather-form
application of ``out = diag * psi + coeff * sum_i flip_i(psi)``, where
``flip_i`` toggles the occupation bit of site ``i``.  ``out`` must not alias
``psi``.
"""

import numpy as np

BACKEND = "python"


def apply_xor(psi, out, diag, coeff, n_sites):
    """Full-basis apply: site flips are index XORs on the 2**n hypercube."""
    np.multiply(diag, psi, out=out)
    src = psi.reshape((2,) * n_sites)
    dst = out.reshape((2,) * n_sites)
    # Flipping bit i of the index is a reversal along one tensor axis; which
    # axis maps to which bit is irrelevant once all axes are summed.
    for ax in range(n_sites):
        dst += coeff * np.flip(src, axis=ax)


def apply_table(psi, out, diag, coeff, table):
    """Truncated-basis apply; ``table[k, i]`` is the flip target or -1 if outside."""
    np.multiply(diag, psi, out=out)
    for i in range(table.shape[1]):
        col = table[:, i]
        ok = col >= 0
        out[ok] += coeff * psi[col[ok]]
