"""Lattice geometries, bonds, and positional disorder.

Lengths are measured in units of the lattice constant ``a`` (``spacing``
scales the generated coordinates).  Ring sites sit on a circle of radius
``a / (2 sin(pi/N))`` so nearest neighbours are exactly ``a`` apart; the
correlator distance axis instead uses the chord parameterization
``(N/pi) sin(pi j / N)``, which is symmetric under ``j <-> N - j``.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import GeometryError


class Bond(NamedTuple):
    """Nearest-neighbour bond; ``sign`` is the staggering sign of its first site."""

    i: int
    j: int
    sign: int


@dataclass(frozen=True, eq=False)
class Lattice:
    geometry: str
    spacing: float
    coords: np.ndarray
    bonds: tuple[Bond, ...]
    boundary_bond_mask: np.ndarray

    @property
    def n_sites(self) -> int:
        return self.coords.shape[0]

    @property
    def n_bonds(self) -> int:
        return len(self.bonds)

    def distance_matrix(self) -> np.ndarray:
        """Pairwise Euclidean distances between site coordinates."""
        d = self.coords[:, None, :] - self.coords[None, :, :]
        return np.sqrt((d * d).sum(axis=2))

    def bond_centers(self) -> np.ndarray:
        return np.array([(self.coords[b.i] + self.coords[b.j]) / 2.0 for b in self.bonds])

    def boundary_site_mask(self) -> np.ndarray:
        """Sites touched by at least one boundary bond (empty for rings)."""
        mask = np.zeros(self.n_sites, dtype=bool)
        for b, is_edge in zip(self.bonds, self.boundary_bond_mask):
            if is_edge:
                mask[b.i] = mask[b.j] = True
        return mask

    def to_json(self) -> str:
        doc = {
            "geometry": self.geometry,
            "spacing": self.spacing,
            "coords": self.coords.tolist(),
            "bonds": [[b.i, b.j, b.sign] for b in self.bonds],
            "boundary_mask": [int(v) for v in self.boundary_bond_mask],
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Lattice":
        doc = json.loads(text)
        return cls(
            geometry=doc["geometry"],
            spacing=float(doc["spacing"]),
            coords=_freeze(np.asarray(doc["coords"], dtype=float)),
            bonds=tuple(Bond(int(i), int(j), int(s)) for i, j, s in doc["bonds"]),
            boundary_bond_mask=_freeze(np.asarray(doc["boundary_mask"], dtype=bool)),
        )


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def chord_distance(n_sites: int, j: int | np.ndarray) -> float | np.ndarray:
    """Chord parameterization ``(N/pi) sin(pi j / N)`` of ring separations."""
    return (n_sites / math.pi) * np.sin(np.pi * np.asarray(j, dtype=float) / n_sites)


def build_ring(n_sites: int, spacing: float = 1.0) -> Lattice:
    """Ring of ``n_sites`` atoms with nearest-neighbour spacing ``spacing``."""
    if n_sites < 3:
        raise GeometryError(f"ring needs at least 3 sites, got {n_sites}")
    if spacing <= 0:
        raise GeometryError(f"spacing must be positive, got {spacing}")
    if n_sites % 2:
        warnings.warn(
            f"odd ring ({n_sites} sites) frustrates the staggered field",
            stacklevel=2,
        )
    radius = spacing / (2.0 * math.sin(math.pi / n_sites))
    angles = 2.0 * math.pi * np.arange(n_sites) / n_sites
    coords = radius * np.column_stack([np.cos(angles), np.sin(angles)])
    bonds = tuple(Bond(i, (i + 1) % n_sites, 1 if i % 2 == 0 else -1) for i in range(n_sites))
    return Lattice(
        geometry="ring",
        spacing=float(spacing),
        coords=_freeze(coords),
        bonds=bonds,
        boundary_bond_mask=_freeze(np.zeros(n_sites, dtype=bool)),
    )


def build_square(nx: int, ny: int, spacing: float = 1.0) -> Lattice:
    """Open-boundary ``nx x ny`` square lattice; site index is ``x + nx * y``."""
    if nx < 2 or ny < 2:
        raise GeometryError(f"square needs nx, ny >= 2, got {nx} x {ny}")
    if spacing <= 0:
        raise GeometryError(f"spacing must be positive, got {spacing}")
    xs, ys = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
    coords = spacing * np.column_stack([xs.ravel(), ys.ravel()]).astype(float)

    def idx(x: int, y: int) -> int:
        return x + nx * y

    def on_edge(x: int, y: int) -> bool:
        return x in (0, nx - 1) or y in (0, ny - 1)

    bonds: list[Bond] = []
    edge_flags: list[bool] = []
    for y in range(ny):
        for x in range(nx - 1):
            bonds.append(Bond(idx(x, y), idx(x + 1, y), 1 if (x + y) % 2 == 0 else -1))
            edge_flags.append(on_edge(x, y) and on_edge(x + 1, y))
    for y in range(ny - 1):
        for x in range(nx):
            bonds.append(Bond(idx(x, y), idx(x, y + 1), 1 if (x + y) % 2 == 0 else -1))
            edge_flags.append(on_edge(x, y) and on_edge(x, y + 1))
    return Lattice(
        geometry="square",
        spacing=float(spacing),
        coords=_freeze(coords),
        bonds=tuple(bonds),
        boundary_bond_mask=_freeze(np.array(edge_flags, dtype=bool)),
    )


@dataclass(frozen=True, eq=False)
class DisorderSample:
    """One realization of interaction-strength and positional disorder."""

    v_scale: np.ndarray
    displaced_coords: np.ndarray
    seed: int


def sample_disorder(
    lattice: Lattice,
    v_sigma: float,
    sigma_r: float = 0.0,
    sigma_v: float = 0.0,
    t_evolve: float = 0.0,
    seed: int = 0,
) -> DisorderSample:
    """Draw one disorder realization.

    ``v_sigma`` is the relative std of i.i.d. multiplicative factors applied to
    each pair interaction (truncated below at 0.05 so V_ij stays positive).
    Positional disorder displaces every coordinate by a static normal spread
    ``sigma_r`` plus a velocity spread ``sigma_v`` integrated over
    ``t_evolve``.
    """
    if v_sigma < 0 or sigma_r < 0 or sigma_v < 0 or t_evolve < 0:
        raise GeometryError("disorder scales must be non-negative")
    n = lattice.n_sites
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, k=1)
    factors = np.clip(rng.normal(1.0, v_sigma, size=iu.size), 0.05, None)
    v_scale = np.ones((n, n))
    v_scale[iu, ju] = factors
    v_scale[ju, iu] = factors
    displaced = (
        lattice.coords
        + rng.normal(0.0, sigma_r, size=(n, 2))
        + rng.normal(0.0, sigma_v, size=(n, 2)) * t_evolve
    )
    return DisorderSample(v_scale=_freeze(v_scale), displaced_coords=_freeze(displaced), seed=seed)


def sample_holes(lattice: Lattice, fraction: float, seed: int) -> np.ndarray:
    """Boolean keep-mask with each site removed independently with ``fraction``."""
    if not 0.0 <= fraction < 1.0:
        raise GeometryError(f"hole fraction must be in [0, 1), got {fraction}")
    rng = np.random.default_rng(seed)
    return rng.random(lattice.n_sites) >= fraction
