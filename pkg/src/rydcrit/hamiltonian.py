"""Rydberg-array Hamiltonian over an occupation-number basis.

``H = (omega/2) sum_i (|g><r| + |r><g|)_i - delta sum_i n_i
     + sum_{i<j} V_ij n_i n_j``,  ``V_ij = c6 / R_ij**6``.

Site ``i`` maps to bit ``i`` of the basis-state integer; ``n_i`` is the bit
value and the all-ground product state is index 0.  The matrix-free apply
(through :mod:`rydcrit.kernels`) is the hot path; :func:`dense_hamiltonian`
builds the same matrix by an independent Kronecker-product route and serves
as the oracle it is tested against.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
import scipy.sparse as sp

from . import kernels
from .errors import BasisMismatchError, CapacityError, DomainError
from .lattice import DisorderSample, Lattice

DEFAULT_SITE_CAP = 22
_DENSE_SITE_CAP = 14


def blockade_radius(c6: float, omega: float) -> float:
    """Distance at which the pair interaction equals the drive: (c6/omega)**(1/6)."""
    if c6 <= 0 or omega <= 0:
        raise DomainError("blockade radius needs c6 > 0 and omega > 0")
    return (c6 / omega) ** (1.0 / 6.0)


def c6_for_blockade(rb: float, omega: float) -> float:
    """Interaction coefficient that places the blockade radius at ``rb``."""
    if rb <= 0 or omega <= 0:
        raise DomainError("c6_for_blockade needs rb > 0 and omega > 0")
    return omega * rb**6


@dataclass(frozen=True, eq=False)
class BasisSpace:
    """Ordered set of occupation bitstrings the state vector lives on."""

    n_sites: int
    states: np.ndarray
    truncation_radius: Optional[float] = None

    @property
    def dim(self) -> int:
        return self.states.shape[0]

    @property
    def is_full(self) -> bool:
        return self.truncation_radius is None

    @classmethod
    def full(cls, n_sites: int, max_sites: int = DEFAULT_SITE_CAP) -> "BasisSpace":
        if n_sites < 1:
            raise DomainError(f"need at least one site, got {n_sites}")
        if n_sites > max_sites:
            raise CapacityError(
                f"full basis for {n_sites} sites exceeds the cap of {max_sites}; "
                "raise max_sites explicitly to override"
            )
        states = np.arange(1 << n_sites, dtype=np.int64)
        states.setflags(write=False)
        return cls(n_sites=n_sites, states=states)

    @classmethod
    def blockade_truncated(
        cls, lat: Lattice, radius: float, max_sites: int = DEFAULT_SITE_CAP
    ) -> "BasisSpace":
        """Keep only bitstrings with no two excitations within ``radius``.

        The truncated space is variational: ground energies computed in it are
        upper bounds on the full-space values.
        """
        if radius <= 0:
            raise DomainError(f"truncation radius must be positive, got {radius}")
        n = lat.n_sites
        full = BasisSpace.full(n, max_sites=max_sites).states
        dist = lat.distance_matrix()
        keep = np.ones(full.shape[0], dtype=bool)
        for i in range(n):
            for j in range(i + 1, n):
                if dist[i, j] <= radius:
                    keep &= ((full >> i) & (full >> j) & 1) == 0
        states = full[keep].copy()
        states.setflags(write=False)
        return cls(n_sites=n, states=states, truncation_radius=float(radius))

    def index_of(self, query: np.ndarray) -> np.ndarray:
        """Positions of bitstrings in this basis; -1 where absent."""
        q = np.asarray(query, dtype=np.int64)
        if self.is_full:
            inside = (q >= 0) & (q < self.dim)
            return np.where(inside, q, -1)
        pos = np.searchsorted(self.states, q)
        pos = np.clip(pos, 0, self.dim - 1)
        hit = self.states[pos] == q
        return np.where(hit, pos, -1)

    def occupations(self) -> np.ndarray:
        """(dim, n_sites) matrix of occupation bits."""
        return ((self.states[:, None] >> np.arange(self.n_sites)) & 1).astype(np.uint8)

    def same_space(self, other: "BasisSpace") -> bool:
        return (
            self.n_sites == other.n_sites
            and self.dim == other.dim
            and bool(np.array_equal(self.states, other.states))
        )


@dataclass(eq=False)
class StateVector:
    """Amplitudes over a basis space."""

    amplitudes: np.ndarray
    basis: BasisSpace

    def __post_init__(self):
        if self.amplitudes.shape != (self.basis.dim,):
            raise BasisMismatchError(
                f"amplitude length {self.amplitudes.shape} does not match basis dim {self.basis.dim}"
            )

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalized(self) -> "StateVector":
        n = self.norm()
        if n == 0:
            raise DomainError("cannot normalize the zero vector")
        return StateVector(self.amplitudes / n, self.basis)

    def copy(self) -> "StateVector":
        return StateVector(self.amplitudes.copy(), self.basis)

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    @classmethod
    def all_ground(cls, basis: BasisSpace, dtype=np.complex128) -> "StateVector":
        amps = np.zeros(basis.dim, dtype=dtype)
        pos = basis.index_of(np.array([0]))[0]
        if pos < 0:
            raise DomainError("basis does not contain the all-ground bitstring")
        amps[pos] = 1.0
        return cls(amps, basis)


@dataclass(frozen=True, eq=False)
class HamiltonianSpec:
    """Drive, detuning, and pair-interaction matrix (all in rad/us)."""

    omega: float
    delta: float
    v_matrix: np.ndarray
    c6: float

    @property
    def n_sites(self) -> int:
        return self.v_matrix.shape[0]

    @property
    def blockade_radius(self) -> float:
        return blockade_radius(self.c6, self.omega)

    def with_delta(self, delta: float) -> "HamiltonianSpec":
        return replace(self, delta=float(delta))

    @classmethod
    def from_lattice(
        cls,
        lat: Lattice,
        omega: float,
        delta: float,
        rb: Optional[float] = None,
        c6: Optional[float] = None,
        disorder: Optional[DisorderSample] = None,
        site_mask: Optional[np.ndarray] = None,
    ) -> "HamiltonianSpec":
        """Build the spec from a lattice; give exactly one of ``rb`` or ``c6``.

        ``site_mask`` restricts to a subset of sites (atoms lost from traps);
        ``disorder`` swaps in displaced coordinates and per-pair V factors.
        """
        if omega <= 0:
            raise DomainError(f"omega must be positive, got {omega}")
        if (rb is None) == (c6 is None):
            raise DomainError("give exactly one of rb or c6")
        if c6 is None:
            c6 = c6_for_blockade(rb, omega)
        coords = disorder.displaced_coords if disorder is not None else lat.coords
        if site_mask is not None:
            site_mask = np.asarray(site_mask, dtype=bool)
            if site_mask.shape != (lat.n_sites,):
                raise DomainError("site_mask length does not match the lattice")
            coords = coords[site_mask]
        d = coords[:, None, :] - coords[None, :, :]
        dist = np.sqrt((d * d).sum(axis=2))
        if np.any(dist[~np.eye(dist.shape[0], dtype=bool)] <= 0):
            raise DomainError("coincident atoms: pair distance is zero")
        with np.errstate(divide="ignore"):
            v = c6 / dist**6
        np.fill_diagonal(v, 0.0)
        if disorder is not None:
            scale = disorder.v_scale
            if site_mask is not None:
                scale = scale[np.ix_(site_mask, site_mask)]
            v = v * scale
        v.setflags(write=False)
        return cls(omega=float(omega), delta=float(delta), v_matrix=v, c6=float(c6))


class RydbergOperator:
    """Matrix-free engine bound to a (spec geometry, basis) pair.

    Precomputes the interaction diagonal and occupation counts once; per call
    the drive/detuning (and, for non-Hermitian effective evolution, complex
    shifts) are free parameters, so one operator serves a whole ramp.
    """

    def __init__(self, spec: HamiltonianSpec, basis: Optional[BasisSpace] = None):
        if basis is None:
            basis = BasisSpace.full(spec.n_sites)
        if basis.n_sites != spec.n_sites:
            raise BasisMismatchError(
                f"spec has {spec.n_sites} sites but basis has {basis.n_sites}"
            )
        self.spec = spec
        self.basis = basis
        states = basis.states
        self.nocc = np.bitwise_count(states).astype(np.float64)
        pair = np.zeros(basis.dim)
        v = spec.v_matrix
        for i in range(spec.n_sites):
            for j in range(i + 1, spec.n_sites):
                if v[i, j] != 0.0:
                    pair += v[i, j] * ((states >> i) & (states >> j) & 1)
        self.pair_diag = pair
        if basis.is_full:
            self.flip_table = None
        else:
            flips = states[:, None] ^ (np.int64(1) << np.arange(spec.n_sites, dtype=np.int64))
            self.flip_table = np.ascontiguousarray(basis.index_of(flips.ravel()).reshape(flips.shape))

    @property
    def dim(self) -> int:
        return self.basis.dim

    def diagonal(self, delta: float, n_coeff_extra=0.0, const=0.0) -> np.ndarray:
        return self.pair_diag + (n_coeff_extra - delta) * self.nocc + const

    def apply_raw(self, amps: np.ndarray, flip_coeff, diag: np.ndarray, out=None) -> np.ndarray:
        """``out = diag * amps + flip_coeff * sum_i X_i amps`` (X_i flips site i)."""
        if amps.shape != (self.dim,):
            raise BasisMismatchError(
                f"amplitude length {amps.shape} does not match basis dim {self.dim}"
            )
        dtype = np.result_type(amps.dtype, np.asarray(flip_coeff).dtype, diag.dtype)
        amps = np.ascontiguousarray(amps, dtype=dtype)
        diag = np.ascontiguousarray(diag, dtype=dtype)
        if out is None or out.dtype != dtype:
            out = np.empty(self.dim, dtype=dtype)
        if self.flip_table is None:
            kernels.apply_xor(amps, out, diag, dtype.type(flip_coeff), self.spec.n_sites)
        else:
            kernels.apply_table(amps, out, diag, dtype.type(flip_coeff), self.flip_table)
        return out

    def apply(self, amps: np.ndarray, omega=None, delta=None, out=None) -> np.ndarray:
        """Hermitian ``H @ amps`` with optional parameter overrides."""
        omega = self.spec.omega if omega is None else omega
        delta = self.spec.delta if delta is None else delta
        return self.apply_raw(amps, 0.5 * omega, self.diagonal(delta), out=out)

    def expectation(self, amps: np.ndarray, omega=None, delta=None) -> float:
        h_amps = self.apply(amps, omega=omega, delta=delta)
        return float(np.real(np.vdot(amps, h_amps)))

    def norm_bound(self, delta: Optional[float] = None) -> float:
        """Cheap Gershgorin-style bound on the spectral radius."""
        delta = self.spec.delta if delta is None else delta
        diag = self.diagonal(delta)
        return float(np.max(np.abs(diag)) + 0.5 * abs(self.spec.omega) * self.spec.n_sites)


def apply_h(spec: HamiltonianSpec, state: StateVector) -> StateVector:
    """One-shot ``H |state>``; hot paths should hold a :class:`RydbergOperator`."""
    op = RydbergOperator(spec, state.basis)
    return StateVector(op.apply(state.amplitudes), state.basis)


def apply_h_shifted(spec: HamiltonianSpec, shift: float, state: StateVector) -> StateVector:
    """``(H - shift * I) |state>``, as eigensolvers want it."""
    op = RydbergOperator(spec, state.basis)
    diag = op.diagonal(spec.delta, const=-shift)
    return StateVector(op.apply_raw(state.amplitudes, 0.5 * spec.omega, diag), state.basis)


def expectation(spec: HamiltonianSpec, state: StateVector) -> float:
    op = RydbergOperator(spec, state.basis)
    n2 = state.norm() ** 2
    return op.expectation(state.amplitudes) / n2


def _embed(op2: sp.spmatrix, site: int, n: int) -> sp.spmatrix:
    """Kronecker-embed a single-site operator; site 0 is the least significant bit."""
    mat = sp.identity(1, format="csr")
    for k in range(n - 1, -1, -1):
        mat = sp.kron(mat, op2 if k == site else sp.identity(2, format="csr"), format="csr")
    return mat


def dense_hamiltonian(spec: HamiltonianSpec, basis: Optional[BasisSpace] = None) -> np.ndarray:
    """Dense matrix built by Kronecker products, independent of the kernels.

    Used as the oracle for the matrix-free apply and for master-equation
    evolution; capped at a small site count because the cost is 4**n.
    """
    n = spec.n_sites
    if n > _DENSE_SITE_CAP:
        raise CapacityError(f"dense Hamiltonian capped at {_DENSE_SITE_CAP} sites, got {n}")
    sx = sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
    nop = sp.csr_matrix(np.array([[0.0, 0.0], [0.0, 1.0]]))
    h = sp.csr_matrix((1 << n, 1 << n))
    for i in range(n):
        h = h + 0.5 * spec.omega * _embed(sx, i, n) - spec.delta * _embed(nop, i, n)
    for i in range(n):
        for j in range(i + 1, n):
            if spec.v_matrix[i, j] != 0.0:
                h = h + spec.v_matrix[i, j] * (_embed(nop, i, n) @ _embed(nop, j, n))
    full = np.asarray(h.todense())
    if basis is not None and not basis.is_full:
        full = full[np.ix_(basis.states, basis.states)]
    return full
