"""Lattice-operator fields and correlators from snapshots or exact states.

All fields here are diagonal in the occupation basis, so snapshot averages
and exact expectations run through the same pair-binning code: snapshots
supply one field row per shot, exact states supply one row per basis state
weighted by ``|amplitude|^2``.

Field conventions:
  * ring order field: per site, ``(-1)^i (n_i - mean_n)`` with the
    dataset-global mean density;
  * square order field: per bond, ``parity * (n_first - n_second)`` with the
    checkerboard parity of the bond's first site;
  * ring energy field: per link, ``n_i + n_{i+1} - mean_n``.

Distances: chord distance ``(N/pi) sin(pi j / N)`` for ring separations,
straight-line distance between bond centers on squares; numerically equal
distances are merged at 1e-6 resolution.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .errors import BasisMismatchError, DomainError, GeometryError
from .hamiltonian import StateVector
from .lattice import Lattice, chord_distance
from .measurement import SnapshotSet
from .serialize import read_csv, write_csv

_BIN_DECIMALS = 6


@dataclass(frozen=True)
class CorrelatorSeries:
    """Two-point correlator vs distance with pair counts.

    ``counts`` are distinct carrier pairs per distance bin (self-pairs
    included in the zero-distance bin); ``stderrs`` are standard errors over
    snapshots, zero for exact-state input.
    """

    distances: np.ndarray
    values: np.ndarray
    stderrs: np.ndarray
    counts: np.ndarray
    field: str
    region: str
    connected: bool

    def __post_init__(self):
        d = np.asarray(self.distances, dtype=float)
        v = np.asarray(self.values, dtype=float)
        s = np.asarray(self.stderrs, dtype=float)
        c = np.asarray(self.counts, dtype=np.int64)
        if not (d.shape == v.shape == s.shape == c.shape):
            raise DomainError("series arrays must share one shape")
        if d.size and np.any(np.diff(d) <= 0):
            raise DomainError("distances must be strictly increasing")
        if np.any(~np.isfinite(v)):
            raise DomainError("correlator values must be finite")
        if np.any(c < 1):
            raise DomainError("each retained bin needs at least one pair")
        for name, arr in (("distances", d), ("values", v), ("stderrs", s), ("counts", c)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def to_csv(self, path) -> None:
        write_csv(
            path,
            ["distance", "value", "stderr", "count"],
            zip(self.distances, self.values, self.stderrs, self.counts),
        )

    @classmethod
    def from_csv(cls, path, field: str = "", region: str = "all", connected: bool = False):
        header, data = read_csv(path)
        col = {name: data[:, k] for k, name in enumerate(header)}
        return cls(
            distances=col["distance"],
            values=col["value"],
            stderrs=col["stderr"],
            counts=col["count"].astype(np.int64),
            field=field,
            region=region,
            connected=connected,
        )


# ---------------------------------------------------------------------------
# field values


def _bits_matrix(basis) -> np.ndarray:
    n = basis.n_sites
    return ((basis.states[:, None] >> np.arange(n, dtype=np.int64)[None, :]) & 1).astype(float)


def _require_ring(lat: Lattice, what: str):
    if lat.geometry != "ring":
        raise GeometryError(f"{what} is defined on rings, got {lat.geometry!r}")


def _require_square(lat: Lattice, what: str):
    if lat.geometry != "square":
        raise GeometryError(f"{what} is defined on square lattices, got {lat.geometry!r}")


def staggered_site_field(bits: np.ndarray, mean_n: float) -> np.ndarray:
    """``(-1)^i (n_i - mean_n)`` applied along the last axis."""
    n = bits.shape[-1]
    signs = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    return signs * (bits - mean_n)


def staggered_bond_field(bits: np.ndarray, lat: Lattice) -> np.ndarray:
    """Per-bond ``parity * (n_first - n_second)`` using the stored bond signs."""
    i = np.array([b.i for b in lat.bonds])
    j = np.array([b.j for b in lat.bonds])
    s = np.array([b.sign for b in lat.bonds], dtype=float)
    return s * (bits[..., i] - bits[..., j])


def link_energy_field(bits: np.ndarray, mean_n: float) -> np.ndarray:
    """Ring link field ``n_i + n_{i+1} - mean_n`` (periodic, N links)."""
    return bits + np.roll(bits, -1, axis=-1) - mean_n


def _field_rows(
    bits: np.ndarray, lat: Lattice, field: str, mean_n: Optional[float]
) -> np.ndarray:
    if field == "sigma":
        if lat.geometry == "ring":
            if mean_n is None:
                raise DomainError("ring order field needs the dataset mean density")
            return staggered_site_field(bits, mean_n)
        if lat.geometry == "square":
            return staggered_bond_field(bits, lat)
        raise GeometryError(f"unsupported geometry {lat.geometry!r}")
    if field == "epsilon":
        _require_ring(lat, "the link energy field")
        if mean_n is None:
            raise DomainError("link energy field needs the dataset mean density")
        return link_energy_field(bits, mean_n)
    raise DomainError(f"unknown field {field!r} (use 'sigma' or 'epsilon')")


def sigma_1d(snaps: SnapshotSet, mean_n: Optional[float] = None) -> np.ndarray:
    """Staggered order field per snapshot and site on a ring."""
    _require_ring(snaps.lattice, "the staggered order field")
    if mean_n is None:
        mean_n = float(snaps.records.mean())
    if not 0.0 <= mean_n <= 1.0:
        raise DomainError(f"mean_n must be in [0,1], got {mean_n}")
    return staggered_site_field(snaps.records.astype(float), mean_n)


def sigma_2d_bonds(snaps: SnapshotSet) -> np.ndarray:
    """Staggered order field per snapshot and bond on a square lattice."""
    _require_square(snaps.lattice, "the bond order field")
    return staggered_bond_field(snaps.records.astype(float), snaps.lattice)


def epsilon_1d(snaps: SnapshotSet, mean_n: Optional[float] = None) -> np.ndarray:
    """Energy field per snapshot and link on a ring."""
    _require_ring(snaps.lattice, "the link energy field")
    if mean_n is None:
        mean_n = float(snaps.records.mean())
    return link_energy_field(snaps.records.astype(float), mean_n)


# ---------------------------------------------------------------------------
# carriers, regions, and pair bins


def _carrier_region_mask(lat: Lattice, field: str, region: str) -> np.ndarray:
    if field == "sigma" and lat.geometry == "square":
        boundary = lat.boundary_bond_mask
    elif lat.geometry == "ring":
        boundary = np.zeros(lat.n_sites, dtype=bool)  # rings have no boundary
    else:
        boundary = lat.boundary_site_mask()
    if region == "all":
        return np.ones(boundary.size, dtype=bool)
    if region == "bulk":
        return ~boundary
    if region == "boundary":
        return boundary
    raise DomainError(f"unknown region {region!r} (use all/bulk/boundary)")


def _pair_bins(lat: Lattice, field: str, region: str):
    """Distance-sorted bins of carrier pairs: list of (distance, idx_a, idx_b)."""
    keep = _carrier_region_mask(lat, field, region)
    carriers = np.nonzero(keep)[0]
    if carriers.size == 0:
        raise DomainError(f"region {region!r} selects no field carriers")
    if lat.geometry == "ring":
        n = lat.n_sites
        a, b = np.meshgrid(carriers, carriers, indexing="ij")
        a, b = a[a <= b], b[a <= b]
        sep = np.minimum((b - a) % n, (a - b) % n)
        dist = np.round(chord_distance(n, sep) * lat.spacing, _BIN_DECIMALS)
    else:
        centers = lat.bond_centers()[carriers]
        ia, ib = np.triu_indices(carriers.size, k=0)
        a, b = carriers[ia], carriers[ib]
        dist = np.round(
            np.sqrt(((centers[ia] - centers[ib]) ** 2).sum(axis=1)), _BIN_DECIMALS
        )
    bins = []
    for d in np.unique(dist):
        sel = dist == d
        bins.append((float(d), a[sel], b[sel]))
    return bins


def _series_from_rows(
    rows: np.ndarray,
    weights: Optional[np.ndarray],
    lat: Lattice,
    field: str,
    region: str,
    connected: bool,
) -> CorrelatorSeries:
    bins = _pair_bins(lat, field, region)
    if connected:
        mean_f = (
            rows.mean(axis=0) if weights is None else weights @ rows
        )
    dists, vals, errs, counts = [], [], [], []
    for d, ia, ib in bins:
        prod = rows[:, ia] * rows[:, ib]
        if connected:
            prod = prod - mean_f[ia] * mean_f[ib]
        per_row = prod.mean(axis=1)
        if weights is None:
            m = per_row.size
            v = float(per_row.mean())
            e = float(per_row.std(ddof=1) / np.sqrt(m)) if m > 1 else 0.0
        else:
            v = float(weights @ per_row)
            e = 0.0
        dists.append(d)
        vals.append(v)
        errs.append(e)
        counts.append(ia.size)
    return CorrelatorSeries(
        distances=np.array(dists),
        values=np.array(vals),
        stderrs=np.array(errs),
        counts=np.array(counts),
        field=field,
        region=region,
        connected=connected,
    )


def _rows_and_weights(
    data: Union[SnapshotSet, StateVector],
    lattice: Optional[Lattice],
    field: str,
    mean_n: Optional[float],
):
    if isinstance(data, SnapshotSet):
        lat = data.lattice
        bits = data.records.astype(float)
        weights = None
    elif isinstance(data, StateVector):
        if lattice is None:
            raise DomainError("exact-state correlators need the lattice")
        lat = lattice
        if lat.n_sites != data.basis.n_sites:
            raise BasisMismatchError(
                f"lattice has {lat.n_sites} sites, state {data.basis.n_sites}"
            )
        bits = _bits_matrix(data.basis)
        weights = data.normalized().probabilities()
    else:
        raise DomainError(f"unsupported input {type(data).__name__}")
    needs_mean = field == "epsilon" or (field == "sigma" and lat.geometry == "ring")
    if needs_mean and mean_n is None:
        mean_n = float(bits.mean() if weights is None else weights @ bits.mean(axis=1))
    rows = _field_rows(bits, lat, field, mean_n)
    return rows, weights, lat


def two_point(
    data: Union[SnapshotSet, StateVector],
    lattice: Optional[Lattice] = None,
    field: str = "sigma",
    region: str = "all",
    connected: bool = False,
    mean_n: Optional[float] = None,
) -> CorrelatorSeries:
    """Distance-binned two-point correlator of a diagonal lattice field.

    Averages ``field(a) * field(b)`` over every carrier pair in the region
    (both carriers must lie in it), then over snapshots or basis states.
    """
    if isinstance(data, SnapshotSet) and data.n_snapshots == 0:
        raise DomainError("no retained snapshots")
    rows, weights, lat = _rows_and_weights(data, lattice, field, mean_n)
    return _series_from_rows(rows, weights, lat, field, region, connected)


def order_parameter(
    data: Union[SnapshotSet, StateVector],
    lattice: Optional[Lattice] = None,
    field: str = "sigma",
    region: str = "all",
    mean_n: Optional[float] = None,
) -> tuple[float, float]:
    """``(1/K^2) sum_{a,b in region} <field_a field_b>`` with K carriers.

    Self-pairs included; equals the mean of ``(sum_a field_a / K)^2``.
    Returns (value, stderr over snapshots; 0 for exact states).
    """
    rows, weights, lat = _rows_and_weights(data, lattice, field, mean_n)
    keep = _carrier_region_mask(lat, field, region)
    if not keep.any():
        raise DomainError(f"region {region!r} selects no field carriers")
    s = rows[:, keep].sum(axis=1) / keep.sum()
    per_row = s * s
    if weights is None:
        m = per_row.size
        err = float(per_row.std(ddof=1) / np.sqrt(m)) if m > 1 else 0.0
        return float(per_row.mean()), err
    return float(weights @ per_row), 0.0


def mean_field(
    data: Union[SnapshotSet, StateVector],
    lattice: Optional[Lattice] = None,
    field: str = "sigma",
    region: str = "all",
    mean_n: Optional[float] = None,
) -> tuple[float, float]:
    """Region-averaged one-point function of the field (value, stderr)."""
    rows, weights, lat = _rows_and_weights(data, lattice, field, mean_n)
    keep = _carrier_region_mask(lat, field, region)
    if not keep.any():
        raise DomainError(f"region {region!r} selects no field carriers")
    per_row = rows[:, keep].mean(axis=1)
    if weights is None:
        m = per_row.size
        err = float(per_row.std(ddof=1) / np.sqrt(m)) if m > 1 else 0.0
        return float(per_row.mean()), err
    return float(weights @ per_row), 0.0


@dataclass(frozen=True)
class DensityStats:
    per_site: np.ndarray
    per_site_err: np.ndarray
    global_mean: float
    global_err: float


def rydberg_density(snaps: SnapshotSet) -> DensityStats:
    """Per-site and global detected-Rydberg fractions with binomial errors."""
    if snaps.n_snapshots == 0:
        raise DomainError("no retained snapshots")
    m = snaps.n_snapshots
    per = snaps.records.mean(axis=0)
    per_err = np.sqrt(np.clip(per * (1.0 - per), 0.0, None) / m)
    g = float(snaps.records.mean())
    g_err = float(np.sqrt(max(g * (1.0 - g), 0.0) / (m * snaps.n_sites)))
    return DensityStats(per_site=per, per_site_err=per_err, global_mean=g, global_err=g_err)


def occupation_expectations(state: StateVector) -> np.ndarray:
    """Exact per-site occupation expectations from amplitudes."""
    probs = state.normalized().probabilities()
    return probs @ _bits_matrix(state.basis)
