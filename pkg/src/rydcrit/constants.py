"""Unit conventions and reference critical exponents.

Conventions used throughout the package: hbar = 1, angular frequencies in
rad/us, times in us, lengths in units of the lattice spacing ``a``.  A drive
quoted as "2 pi x 1.6 MHz" is stored as ``2 * pi * 1.6`` rad/us.
"""

import math

TWO_PI = 2.0 * math.pi


def mhz(f: float) -> float:
    """Angular frequency (rad/us) for a linear frequency given in MHz."""
    return TWO_PI * f


def mhz_per_us(r: float) -> float:
    """Angular sweep rate (rad/us^2) for a linear rate given in MHz/us."""
    return TWO_PI * r


# Scaling dimensions of the relevant Ising primary fields, used as reference
# values when comparing fitted exponents.  The 2D values are for the (2+1)D
# universality class probed by equal-time correlations.
SIGMA_DIM_1D = 0.125
SIGMA_DIM_2D = 0.518149
EPSILON_DIM_1D = 1.0
EPSILON_DIM_2D = 1.4
