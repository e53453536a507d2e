import math

import numpy as np
import pytest

from rydcrit.errors import BasisMismatchError, DomainError, GeometryError
from rydcrit.hamiltonian import BasisSpace, StateVector
from rydcrit.lattice import build_ring, build_square
from rydcrit.measurement import SnapshotSet, sample_snapshots
from rydcrit.observables import (
    CorrelatorSeries,
    epsilon_1d,
    mean_field,
    occupation_expectations,
    order_parameter,
    rydberg_density,
    sigma_1d,
    sigma_2d_bonds,
    two_point,
)


def _neel_mix(n_sites, n_shots):
    """Exact 50/50 mixture of the two staggered patterns."""
    rec = np.zeros((n_shots, n_sites), dtype=np.uint8)
    rec[: n_shots // 2, 0::2] = 1
    rec[n_shots // 2 :, 1::2] = 1
    return SnapshotSet(rec, build_ring(n_sites), {"source": "synthetic"})


def _random_snaps(n_sites, n_shots, seed, density=0.4):
    rng = np.random.default_rng(seed)
    rec = (rng.random((n_shots, n_sites)) < density).astype(np.uint8)
    return SnapshotSet(rec, build_ring(n_sites), {"source": "synthetic"})


def test_neel_mixture_long_range_quarter():
    snaps = _neel_mix(12, 500)
    series = two_point(snaps, field="sigma")
    assert np.allclose(series.values, 0.25, atol=1e-12)
    assert np.allclose(series.stderrs, 0.0, atol=1e-12)
    # the symmetric mixture has zero mean field, so connecting changes nothing
    conn = two_point(snaps, field="sigma", connected=True)
    assert np.allclose(conn.values, 0.25, atol=1e-12)
    mv, _ = mean_field(snaps)
    assert abs(mv) < 1e-12
    ov, oe = order_parameter(snaps)
    assert ov == pytest.approx(0.25, abs=1e-12)
    assert oe == pytest.approx(0.0, abs=1e-12)


def test_checkerboard_square_saturates():
    lat = build_square(4, 4)
    xy = lat.coords.sum(axis=1)
    rec = ((xy % 2) == 0).astype(np.uint8)[None, :]
    snaps = SnapshotSet(rec, lat, {"source": "synthetic"})
    rows = sigma_2d_bonds(snaps)
    assert np.array_equal(rows, np.ones((1, len(lat.bonds))))
    assert order_parameter(snaps)[0] == pytest.approx(1.0, abs=1e-12)
    series = two_point(snaps)
    assert np.allclose(series.values, 1.0, atol=1e-12)
    # the complementary pattern flips every bond but not the squared order
    flipped = SnapshotSet(1 - rec, lat, {"source": "synthetic"})
    assert np.array_equal(sigma_2d_bonds(flipped), -rows)
    assert order_parameter(flipped)[0] == pytest.approx(1.0, abs=1e-12)


def test_ring_translation_invariance():
    snaps = _random_snaps(12, 200, seed=5)
    rolled = SnapshotSet(np.roll(snaps.records, 1, axis=1), snaps.lattice, {"source": "synthetic"})
    for connected in (False, True):
        a = two_point(snaps, field="sigma", connected=connected)
        b = two_point(rolled, field="sigma", connected=connected)
        assert np.allclose(a.values, b.values, atol=1e-12)
        assert np.array_equal(a.counts, b.counts)
    assert order_parameter(snaps)[0] == pytest.approx(order_parameter(rolled)[0], abs=1e-12)


def test_zero_distance_bin_is_second_moment():
    snaps = _random_snaps(12, 150, seed=6)
    series = two_point(snaps, field="sigma")
    assert series.distances[0] == 0.0
    assert series.counts[0] == 12
    assert series.values[0] >= 0.0
    # by hand: mean over sites and shots of sigma^2
    rows = sigma_1d(snaps)
    assert series.values[0] == pytest.approx((rows**2).mean(), abs=1e-12)


def test_ring_bin_layout():
    snaps = _random_snaps(6, 10, seed=7)
    series = two_point(snaps, field="sigma")
    assert list(series.counts) == [6, 6, 6, 3]
    expected = [(6 / math.pi) * math.sin(math.pi * k / 6) for k in range(4)]
    assert np.allclose(series.distances, expected, atol=1e-6)


def test_square_region_carriers():
    lat = build_square(3, 3)
    rng = np.random.default_rng(8)
    rec = (rng.random((40, 9)) < 0.4).astype(np.uint8)
    snaps = SnapshotSet(rec, lat, {"source": "synthetic"})
    zero_counts = {}
    for region in ("all", "boundary", "bulk"):
        series = two_point(snaps, field="sigma", region=region)
        zero_counts[region] = int(series.counts[0])
    # 12 bonds total; 8 have both endpoints on the open edge
    assert zero_counts == {"all": 12, "boundary": 8, "bulk": 4}


def test_sampled_converges_to_exact():
    lat = build_ring(6)
    basis = BasisSpace.full(6)
    rng = np.random.default_rng(9)
    amps = rng.standard_normal(basis.dim) + 1j * rng.standard_normal(basis.dim)
    psi = StateVector(amps, basis).normalized()
    mean_n = float(occupation_expectations(psi).mean())
    exact = two_point(psi, lattice=lat, field="sigma", mean_n=mean_n)
    assert np.allclose(exact.stderrs, 0.0)
    for m in (2000, 20_000):
        snaps = sample_snapshots(psi, lat, m, seed=[10, m])
        est = two_point(snaps, field="sigma", mean_n=mean_n)
        assert np.array_equal(est.counts, exact.counts)
        tol = 6.0 * est.stderrs + 1e-3
        assert np.all(np.abs(est.values - exact.values) < tol)


def test_energy_field_neel():
    snaps = _neel_mix(12, 40)
    rows = epsilon_1d(snaps)
    # every link in either staggered pattern holds exactly one atom
    assert np.allclose(rows, 0.5, atol=1e-12)
    series = two_point(snaps, field="epsilon")
    assert np.allclose(series.values, 0.25, atol=1e-12)
    conn = two_point(snaps, field="epsilon", connected=True)
    assert np.allclose(conn.values, 0.0, atol=1e-12)


def test_exact_state_against_brute_force():
    lat = build_ring(4)
    basis = BasisSpace.full(4)
    rng = np.random.default_rng(11)
    amps = rng.standard_normal(16) + 1j * rng.standard_normal(16)
    psi = StateVector(amps, basis).normalized()
    mean_n = 0.3
    series = two_point(psi, lattice=lat, field="sigma", mean_n=mean_n)

    probs = psi.probabilities()
    bits = ((np.arange(16)[:, None] >> np.arange(4)[None, :]) & 1).astype(float)
    sig = np.where(np.arange(4) % 2 == 0, 1.0, -1.0) * (bits - mean_n)
    corr = np.einsum("s,sa,sb->ab", probs, sig, sig)
    by_sep = {0: [], 1: [], 2: []}
    for a in range(4):
        for b in range(a, 4):
            sep = min((b - a) % 4, (a - b) % 4)
            by_sep[sep].append(corr[a, b])
    expected = [np.mean(by_sep[k]) for k in range(3)]
    assert np.allclose(series.values, expected, atol=1e-12)
    assert list(series.counts) == [4, 4, 2]


def test_order_parameter_matches_definition():
    snaps = _random_snaps(10, 80, seed=12)
    rows = sigma_1d(snaps)
    s2 = rows.mean(axis=1) ** 2
    v, e = order_parameter(snaps)
    assert v == pytest.approx(s2.mean(), abs=1e-12)
    assert e == pytest.approx(s2.std(ddof=1) / math.sqrt(80), abs=1e-12)


def test_density_stats():
    lat = build_ring(4)
    rec = np.array([[1, 0, 0, 0], [1, 1, 0, 0]], dtype=np.uint8)
    stats = rydberg_density(SnapshotSet(rec, lat, {}))
    assert np.allclose(stats.per_site, [1.0, 0.5, 0.0, 0.0])
    assert stats.global_mean == pytest.approx(3 / 8)
    assert stats.per_site_err[1] == pytest.approx(math.sqrt(0.25 / 2))
    assert stats.global_err == pytest.approx(math.sqrt((3 / 8) * (5 / 8) / 8))
    empty = SnapshotSet(np.zeros((0, 4), dtype=np.uint8), lat, {})
    with pytest.raises(DomainError):
        rydberg_density(empty)
    with pytest.raises(DomainError):
        two_point(empty)


def test_occupation_expectations():
    basis = BasisSpace.full(1)
    psi = StateVector(np.array([1.0, 1.0], dtype=complex), basis).normalized()
    assert np.allclose(occupation_expectations(psi), [0.5])
    basis4 = BasisSpace.full(4)
    amps = np.zeros(16, dtype=complex)
    amps[0b0101] = amps[0b1010] = 1.0 / math.sqrt(2)
    cat = StateVector(amps, basis4)
    assert np.allclose(occupation_expectations(cat), 0.5)


def test_series_csv_roundtrip(tmp_path):
    series = two_point(_random_snaps(8, 60, seed=13), field="sigma", connected=True)
    path = tmp_path / "corr.csv"
    series.to_csv(path)
    back = CorrelatorSeries.from_csv(path, field="sigma", region="all", connected=True)
    assert np.array_equal(back.distances, series.distances)
    assert np.array_equal(back.values, series.values)
    assert np.array_equal(back.stderrs, series.stderrs)
    assert np.array_equal(back.counts, series.counts)
    assert back.field == "sigma" and back.connected


def test_series_validation():
    ok = dict(field="sigma", region="all", connected=False)
    one = np.ones(3)
    with pytest.raises(DomainError):
        CorrelatorSeries(np.array([0.0, 1.0, 1.0]), one, one, np.ones(3, dtype=int), **ok)
    with pytest.raises(DomainError):
        CorrelatorSeries(np.array([0.0, 1.0, 2.0]), one, one, np.array([1, 0, 1]), **ok)
    with pytest.raises(DomainError):
        CorrelatorSeries(
            np.array([0.0, 1.0, 2.0]),
            np.array([1.0, np.nan, 1.0]),
            one,
            np.ones(3, dtype=int),
            **ok,
        )
    with pytest.raises(DomainError):
        CorrelatorSeries(np.array([0.0, 1.0]), one, one, np.ones(3, dtype=int), **ok)


def test_input_validation():
    ring = build_ring(6)
    square = build_square(3, 3)
    psi = StateVector.all_ground(BasisSpace.full(6))
    snaps = _random_snaps(6, 10, seed=14)
    sq_snaps = SnapshotSet(np.zeros((5, 9), dtype=np.uint8), square, {})
    with pytest.raises(DomainError):
        two_point(psi)  # exact states need an explicit lattice
    with pytest.raises(BasisMismatchError):
        two_point(psi, lattice=build_ring(8))
    with pytest.raises(DomainError):
        two_point(snaps, field="tau")
    with pytest.raises(DomainError):
        two_point(snaps, region="edge")
    with pytest.raises(DomainError):
        two_point(snaps, region="boundary")  # rings have no boundary carriers
    with pytest.raises(GeometryError):
        two_point(sq_snaps, field="epsilon")
    with pytest.raises(GeometryError):
        sigma_1d(sq_snaps)
    with pytest.raises(GeometryError):
        sigma_2d_bonds(snaps)
    with pytest.raises(DomainError):
        sigma_1d(snaps, mean_n=1.5)
    with pytest.raises(DomainError):
        two_point(np.zeros((3, 6)))
