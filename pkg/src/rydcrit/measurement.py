"""Occupation-basis snapshots: sampling, detection errors, post-selection.

A snapshot is one detected bitstring over the lattice (1 = detected Rydberg).
Sets carry their lattice and a provenance dict so downstream estimators can
tell raw, error-dressed, and post-selected data apart.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import numpy as np

from .errors import BasisMismatchError, DomainError
from .hamiltonian import StateVector
from .lattice import Lattice
from .serialize import json_dumps_stable


@dataclass(frozen=True)
class SnapshotSet:
    """M x N binary detection records plus lattice and provenance."""

    records: np.ndarray
    lattice: Lattice
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        rec = np.ascontiguousarray(np.asarray(self.records, dtype=np.uint8))
        if rec.ndim != 2:
            raise DomainError(f"records must be 2-D, got shape {rec.shape}")
        if rec.size and rec.max() > 1:
            raise DomainError("records must contain only 0/1 entries")
        if rec.shape[1] != self.lattice.n_sites:
            raise BasisMismatchError(
                f"{rec.shape[1]} columns vs {self.lattice.n_sites} lattice sites"
            )
        rec.setflags(write=False)
        object.__setattr__(self, "records", rec)

    @property
    def n_snapshots(self) -> int:
        return self.records.shape[0]

    @property
    def n_sites(self) -> int:
        return self.records.shape[1]

    def with_provenance(self, **extra) -> "SnapshotSet":
        merged = dict(self.provenance)
        merged.update(extra)
        return SnapshotSet(self.records, self.lattice, merged)

    def save(self, path) -> None:
        """One-line JSON header, then one CSV row of 0/1 per snapshot."""
        header = {
            "lattice": self.lattice.to_json(),
            "provenance": self.provenance,
            "n_snapshots": self.n_snapshots,
            "n_sites": self.n_sites,
        }
        with open(path, "w") as fh:
            fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n")
            for row in self.records:
                fh.write(",".join(str(int(b)) for b in row) + "\n")

    @classmethod
    def load(cls, path) -> "SnapshotSet":
        with open(path) as fh:
            header = json.loads(fh.readline())
            rows = [line.strip() for line in fh if line.strip()]
        rec = (
            np.array([[int(tok) for tok in row.split(",")] for row in rows], dtype=np.uint8)
            if rows
            else np.zeros((0, header["n_sites"]), dtype=np.uint8)
        )
        return cls(rec, Lattice.from_json(header["lattice"]), header.get("provenance", {}))


@dataclass(frozen=True)
class DetectionModel:
    """Readout error model: ``1 - eta0`` false positives (ground detected as
    Rydberg), ``eps_det`` false negatives (Rydberg detected as ground).

    ``eps_det`` may carry a signed inversion estimate; it is clamped to
    [0, 1] only when actually flipping bits.  ``p_pi`` is the pi-pulse
    excitation probability from the same calibration and plays no role in
    snapshot dressing.
    """

    eta0: float = 0.980
    eps_det: float = 0.0
    p_pi: Optional[float] = None

    def __post_init__(self):
        if not 0.0 <= self.eta0 <= 1.0:
            raise DomainError(f"eta0 must be in [0,1], got {self.eta0}")


def sample_snapshots(
    state: StateVector,
    lattice: Lattice,
    n_shots: int,
    seed: Any,
    keep_mask: Optional[np.ndarray] = None,
) -> SnapshotSet:
    """Draw ``n_shots`` i.i.d. occupation bitstrings from ``|amplitude|^2``.

    ``keep_mask`` (length ``lattice.n_sites``) marks sites still holding an
    atom; the state lives on the kept sites and lost sites are recorded as
    detected Rydberg, mirroring how loss reads out.
    """
    if n_shots < 1:
        raise DomainError("n_shots must be >= 1")
    if abs(state.norm() - 1.0) > 1e-9:
        raise DomainError(f"state norm {state.norm()} is not 1 within 1e-9")
    if keep_mask is None:
        keep_mask = np.ones(lattice.n_sites, dtype=bool)
    keep_mask = np.asarray(keep_mask, dtype=bool)
    if keep_mask.shape != (lattice.n_sites,):
        raise BasisMismatchError("keep_mask length does not match lattice")
    n_kept = int(keep_mask.sum())
    if state.basis.n_sites != n_kept:
        raise BasisMismatchError(
            f"state has {state.basis.n_sites} sites but keep_mask keeps {n_kept}"
        )
    rng = np.random.default_rng(seed)
    probs = state.probabilities()
    probs = probs / probs.sum()
    idx = rng.choice(probs.size, size=n_shots, p=probs)
    drawn = state.basis.states[idx]
    bits_kept = ((drawn[:, None] >> np.arange(n_kept, dtype=np.int64)[None, :]) & 1).astype(
        np.uint8
    )
    records = np.ones((n_shots, lattice.n_sites), dtype=np.uint8)
    records[:, keep_mask] = bits_kept
    prov = {"seed": _seed_repr(seed), "source": "state", "detection": None, "postselect": None}
    if not keep_mask.all():
        prov["holes"] = [int(i) for i in np.nonzero(~keep_mask)[0]]
    return SnapshotSet(records, lattice, prov)


def sample_ensemble_snapshots(
    states: Sequence[StateVector],
    lattice: Lattice,
    seed: Any,
    shots_per_state: int = 1,
    keep_mask: Optional[np.ndarray] = None,
) -> SnapshotSet:
    """One snapshot per prepared state by default; ``shots_per_state > 1``
    reuses states and therefore correlates shots (flagged in provenance)."""
    if not states:
        raise DomainError("ensemble is empty")
    base = list(seed) if isinstance(seed, (list, tuple)) else [seed]
    parts = []
    for k, st in enumerate(states):
        part = sample_snapshots(st, lattice, shots_per_state, base + [k], keep_mask=keep_mask)
        parts.append(part.records)
    prov = {
        "seed": _seed_repr(seed),
        "source": "ensemble",
        "n_states": len(states),
        "shots_per_state": shots_per_state,
        "correlated_shots": shots_per_state > 1,
        "detection": None,
        "postselect": None,
    }
    if keep_mask is not None and not np.asarray(keep_mask, dtype=bool).all():
        prov["holes"] = [int(i) for i in np.nonzero(~np.asarray(keep_mask, dtype=bool))[0]]
    return SnapshotSet(np.concatenate(parts, axis=0), lattice, prov)


def apply_detection_errors(snaps: SnapshotSet, model: DetectionModel, seed: Any) -> SnapshotSet:
    """Flip ground bits to Rydberg with prob ``1 - eta0`` and Rydberg bits to
    ground with prob ``clip(eps_det, 0, 1)``, independently per bit."""
    rng = np.random.default_rng(seed)
    rec = snaps.records.copy()
    u = rng.random(rec.shape)
    eps = min(max(model.eps_det, 0.0), 1.0)
    ground = rec == 0
    rec[ground & (u < 1.0 - model.eta0)] = 1
    rec[~ground & (u < eps)] = 0
    return SnapshotSet(
        rec,
        snaps.lattice,
        {
            **snaps.provenance,
            "detection": {"eta0": model.eta0, "eps_det": model.eps_det, "seed": _seed_repr(seed)},
        },
    )


def forward_detection_stats(eta0: float, p_pi: float, eps_det: float) -> tuple[float, float]:
    """Ground-detection probabilities after one and two pi pulses.

    The forward model the calibration inversion is tested against:
    ``n_g1 = eta0 (1-p) + eps p`` and
    ``n_g2 = eta0 (p^2 + (1-p)^2) + 2 eps p (1-p)``.
    """
    n_g1 = eta0 * (1.0 - p_pi) + eps_det * p_pi
    n_g2 = eta0 * (p_pi**2 + (1.0 - p_pi) ** 2) + 2.0 * eps_det * p_pi * (1.0 - p_pi)
    return n_g1, n_g2


def infer_detection_error(eta0: float, n_g1: float, n_g2: float) -> tuple[float, float]:
    """Invert the two-pulse calibration for (p_pi, eps_det), closed form.

    ``eps_det`` is returned signed (small negative estimates are statistically
    consistent with zero and deliberately not clamped).
    """
    for name, v in (("eta0", eta0), ("n_g1", n_g1), ("n_g2", n_g2)):
        if not 0.0 <= v <= 1.0:
            raise DomainError(f"{name} must be in [0,1], got {v}")
    denom = 2.0 * (eta0 - n_g1)
    if denom == 0.0:
        raise DomainError("eta0 == n_g1: calibration equations are degenerate")
    p = (n_g2 + eta0 - 2.0 * n_g1) / denom
    if not 0.0 <= p <= 1.0:
        warnings.warn(f"inverted pi-pulse probability {p:.4f} outside [0,1]", stacklevel=2)
    if p == 0.0:
        raise DomainError("p_pi = 0: false-negative rate is unconstrained")
    eps = (n_g1 - eta0 * (1.0 - p)) / p
    return p, eps


def postselect_blockade(snaps: SnapshotSet, radius: float) -> SnapshotSet:
    """Drop snapshots with >= 2 detected Rydberg atoms within ``radius``.

    Distances are nominal lattice distances (straight-line), matching how an
    experiment would screen without knowing thermal displacements.  Idempotent.
    """
    if radius <= 0:
        raise DomainError(f"radius must be positive, got {radius}")
    dist = snaps.lattice.distance_matrix()
    n = snaps.n_sites
    iu, ju = np.triu_indices(n, k=1)
    close = dist[iu, ju] <= radius
    pi, pj = iu[close], ju[close]
    rec = snaps.records
    violating = np.zeros(snaps.n_snapshots, dtype=bool)
    if pi.size:
        violating = ((rec[:, pi] == 1) & (rec[:, pj] == 1)).any(axis=1)
    mask = ~violating
    kept = rec[mask]
    rejection = float(violating.mean()) if snaps.n_snapshots else 0.0
    return SnapshotSet(
        kept,
        snaps.lattice,
        {
            **snaps.provenance,
            "postselect": {
                "radius": radius,
                "rejection_fraction": rejection,
                "mask": [bool(m) for m in mask],
                "n_before": snaps.n_snapshots,
            },
        },
    )


def _seed_repr(seed: Any):
    if isinstance(seed, (list, tuple)):
        return [int(s) for s in seed]
    if seed is None:
        return None
    return int(seed)
