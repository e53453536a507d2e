import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from rydcrit.constants import mhz
from rydcrit.errors import BasisMismatchError, DomainError, IntegrationError
from rydcrit.evolve import (
    JumpOperators,
    JumpParams,
    density_from_state,
    evolve_lindblad,
    evolve_trajectory,
    evolve_unitary,
    make_jump_operators,
    trajectory_ensemble,
)
from rydcrit.hamiltonian import (
    BasisSpace,
    HamiltonianSpec,
    StateVector,
    dense_hamiltonian,
)
from rydcrit.lattice import build_ring
from rydcrit.ramps import RampProfile, gap_adaptive_ramp, linear_ramp
from rydcrit.spectrum import ground_state, reachable_gap_profile

OMEGA = mhz(1.6)

pytestmark = pytest.mark.filterwarnings("ignore:odd ring")


def _flat_ramp(duration, omega, delta, n_points=5):
    t = np.linspace(0.0, duration, n_points)
    return RampProfile(times=t, deltas=np.full(n_points, float(delta)), omegas=np.full(n_points, float(omega)))


def _single_site_spec(omega, delta):
    return HamiltonianSpec(omega=omega, delta=delta, v_matrix=np.zeros((1, 1)), c6=1.0)


def _no_jump_params():
    return JumpParams(gamma_decay=0.0, omega_blue=0.0, omega_ir=0.0, delta_int=1.0, gamma_e=0.0)


# ---------------------------------------------------------------------------
# jump parameters


def test_derived_rates_match_measured_system():
    p = JumpParams.experiment_defaults()
    assert p.scatter_rate == pytest.approx(1.0 / 70.69, rel=0.01)
    assert p.two_photon_omega == pytest.approx(mhz(1.6), rel=0.01)
    assert p.gamma_decay == pytest.approx(1.0 / 71.44, rel=1e-12)


def test_rate_scaling():
    p = JumpParams.experiment_defaults()
    q = p.scaled(50.0)
    assert q.scatter_rate == pytest.approx(50.0 * p.scatter_rate, rel=1e-12)
    assert q.gamma_decay == pytest.approx(50.0 * p.gamma_decay, rel=1e-12)
    # drive-derived quantities are untouched
    assert q.two_photon_omega == p.two_photon_omega
    with pytest.raises(DomainError):
        p.scaled(-1.0)


def test_make_jump_operators_scale():
    basis = BasisSpace.full(2)
    j = make_jump_operators(JumpParams.experiment_defaults(), basis, rate_scale=7.0)
    assert j.params.gamma_decay == pytest.approx(7.0 / 71.44)


# ---------------------------------------------------------------------------
# jump operators


def test_channel_labels_and_count():
    basis = BasisSpace.full(3)
    j = JumpOperators(JumpParams.experiment_defaults(), basis)
    assert j.labels == ["decay:0", "decay:1", "decay:2", "scatter:0", "scatter:1", "scatter:2"]
    assert j.n_channels == 6
    j0 = JumpOperators(_no_jump_params(), basis)
    assert j0.labels == [] and j0.n_channels == 0


def test_decay_channel_action():
    basis = BasisSpace.full(2)
    p = JumpParams(gamma_decay=0.25, omega_blue=0.0, omega_ir=0.0, delta_int=1.0, gamma_e=0.0)
    j = JumpOperators(p, basis)
    amps = np.array([0.1, 0.2, 0.3, 0.4], dtype=complex)
    out = j.apply_channel("decay:0", amps)
    # |g><r| on site 0 with amplitude sqrt(0.25)
    assert np.allclose(out, [0.5 * 0.2, 0.0, 0.5 * 0.4, 0.0])
    out = j.apply_channel("decay:1", amps)
    assert np.allclose(out, [0.5 * 0.3, 0.5 * 0.4, 0.0, 0.0])


def test_scatter_channel_action():
    basis = BasisSpace.full(1)
    p = JumpParams.experiment_defaults()
    j = JumpOperators(p, basis)
    amps = np.array([0.6, 0.8], dtype=complex)
    out = j.apply_channel("scatter:0", amps)
    assert out[0] == pytest.approx(p.alpha * 0.6 + p.beta * 0.8, abs=1e-15)
    assert out[1] == 0.0


def test_channels_match_dense_matrices():
    rng = np.random.default_rng(8)
    basis = BasisSpace.full(3)
    j = JumpOperators(JumpParams.experiment_defaults(), basis)
    mats = j.dense_matrices()
    psi = rng.standard_normal(8) + 1j * rng.standard_normal(8)
    for label, m in zip(j.labels, mats):
        assert np.allclose(j.apply_channel(label, psi), m @ psi, atol=1e-14)


def test_norm_decay_bookkeeping():
    # the non-Hermitian part of H_eff must reproduce sum_j <c_j^dag c_j>:
    # 2 Im <psi|H_eff|psi> = -sum_j ||c_j psi||^2
    rng = np.random.default_rng(12)
    lat = build_ring(4)
    spec = HamiltonianSpec.from_lattice(lat, omega=OMEGA, delta=0.4 * OMEGA, rb=1.4)
    basis = BasisSpace.full(4)
    from rydcrit.hamiltonian import RydbergOperator

    op = RydbergOperator(spec, basis)
    j = JumpOperators(JumpParams.experiment_defaults().scaled(10.0), basis)
    flip_shift, n_shift, const_shift = j.heff_shifts()
    psi = rng.standard_normal(16) + 1j * rng.standard_normal(16)
    diag = op.pair_diag.astype(complex) + n_shift * op.nocc + const_shift - spec.delta * op.nocc
    h_eff_psi = op.apply_raw(psi, 0.5 * spec.omega + flip_shift, diag)
    lhs = 2.0 * np.vdot(psi, h_eff_psi).imag
    rhs = -j.channel_weights(psi).sum()
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_jump_operators_on_truncated_basis():
    lat = build_ring(8)
    basis = BasisSpace.blockade_truncated(lat, 1.4)
    j = JumpOperators(JumpParams.experiment_defaults(), basis)
    # removing an excitation never violates the blockade constraint
    rng = np.random.default_rng(3)
    psi = rng.standard_normal(basis.dim)
    for label in j.labels:
        out = j.apply_channel(label, psi)
        assert np.all(np.isfinite(out))


# ---------------------------------------------------------------------------
# closed-system propagation


def test_pi_pulse_inverts_population():
    spec = _single_site_spec(math.pi, 0.0)
    ramp = _flat_ramp(1.0, math.pi, 0.0)
    res = evolve_unitary(spec, ramp, StateVector.all_ground(BasisSpace.full(1)))
    assert res.state.probabilities()[1] == pytest.approx(1.0, abs=1e-6)
    assert res.norm_drift < 1e-9
    assert res.step_error <= 1e-6


def test_half_pulse_is_balanced():
    spec = _single_site_spec(math.pi / 2, 0.0)
    ramp = _flat_ramp(1.0, math.pi / 2, 0.0)
    res = evolve_unitary(spec, ramp, StateVector.all_ground(BasisSpace.full(1)))
    assert res.state.probabilities()[1] == pytest.approx(0.5, abs=1e-6)


def test_zero_drive_freezes_populations():
    rng = np.random.default_rng(4)
    lat = build_ring(4)
    spec = HamiltonianSpec.from_lattice(lat, omega=OMEGA, delta=0.0, rb=1.3)
    basis = BasisSpace.full(4)
    amps = rng.standard_normal(16) + 1j * rng.standard_normal(16)
    psi0 = StateVector(amps, basis).normalized()
    t = np.linspace(0.0, 1.0, 9)
    ramp = RampProfile(times=t, deltas=np.linspace(-1, 1, 9) * OMEGA, omegas=np.zeros(9))
    res = evolve_unitary(spec, ramp, psi0)
    assert np.max(np.abs(res.state.probabilities() - psi0.probabilities())) < 1e-8


def test_unitary_matches_dense_propagation():
    # independent oracle: stiff ODE solve of the Schrodinger equation with
    # the dense Kronecker-product Hamiltonian
    lat = build_ring(4)
    spec = HamiltonianSpec.from_lattice(lat, omega=OMEGA, delta=0.0, rb=1.4)
    basis = BasisSpace.full(4)
    ramp = linear_ramp(-OMEGA, OMEGA, rate=2.0 * OMEGA / 0.8, omega=OMEGA, n_points=9)
    psi0 = ground_state(spec.with_delta(-OMEGA), basis)[1]
    res = evolve_unitary(spec, ramp, psi0, amp_tol=1e-8)

    h0 = dense_hamiltonian(spec.with_delta(0.0))
    diag = np.diag(h0).copy()
    h_flip = h0 - np.diag(diag)
    nocc = np.array([bin(s).count("1") for s in range(16)], dtype=float)

    def rhs(t, y):
        om = np.interp(t, ramp.times, ramp.omegas)
        de = np.interp(t, ramp.times, ramp.deltas)
        h = (om / spec.omega) * h_flip + np.diag(diag - de * nocc)
        return -1j * (h @ y)

    sol = solve_ivp(rhs, (0.0, ramp.duration), psi0.amplitudes.astype(complex), method="DOP853", rtol=1e-11, atol=1e-13)
    fid = abs(np.vdot(sol.y[:, -1], res.state.amplitudes))
    assert fid > 1.0 - 1e-8


def test_adaptive_ramp_prepares_target_state():
    lat = build_ring(4)
    spec = HamiltonianSpec.from_lattice(lat, omega=OMEGA, delta=0.0, rb=1.4)
    basis = BasisSpace.full(4)
    grid = np.linspace(-1, 1, 9) * OMEGA
    prof = reachable_gap_profile(spec, grid, basis)
    ramp = gap_adaptive_ramp(prof, -OMEGA, OMEGA, total_time=2.0, omega=OMEGA, n_points=51)
    psi0 = ground_state(spec.with_delta(-OMEGA), basis)[1]
    res = evolve_unitary(spec, ramp, psi0)
    target = ground_state(spec.with_delta(OMEGA), basis)[1]
    assert abs(np.vdot(res.state.amplitudes, target.amplitudes)) > 0.99


def test_time_reversal_fidelity():
    # H(t) is real symmetric, so conjugating and running the ramp backwards
    # undoes the evolution
    lat = build_ring(6)
    spec = HamiltonianSpec.from_lattice(lat, omega=OMEGA, delta=0.0, rb=1.4)
    basis = BasisSpace.full(6)
    ramp = linear_ramp(-OMEGA, OMEGA, rate=2.0 * OMEGA, omega=OMEGA, n_points=9)
    psi0 = ground_state(spec.with_delta(-OMEGA), basis)[1]  # real amplitudes
    fwd = evolve_unitary(spec, ramp, psi0)
    back = evolve_unitary(
        spec, ramp.reversed(), StateVector(np.conj(fwd.state.amplitudes), basis)
    )
    fid = abs(np.vdot(back.state.amplitudes, psi0.amplitudes))
    assert fid > 1.0 - 1e-6


def test_sample_fn_runs_at_ramp_nodes():
    spec = _single_site_spec(1.0, 0.0)
    ramp = _flat_ramp(1.0, 1.0, 0.0, n_points=6)
    seen = []
    res = evolve_unitary(
        spec,
        ramp,
        StateVector.all_ground(BasisSpace.full(1)),
        sample_fn=lambda amps, t: float(np.abs(amps[1]) ** 2),
    )
    ts = [t for t, _ in res.samples]
    assert ts == pytest.approx(list(ramp.times))
    # sampled population follows the Rabi formula
    for t, v in res.samples:
        assert v == pytest.approx(math.sin(0.5 * t) ** 2, abs=1e-6)


def test_unitary_refinement_guard():
    # a wild detuning sweep over one giant segment cannot meet an impossible
    # tolerance within two halvings; the guard must report, not loop
    vm = np.array([[0.0, 4.0], [4.0, 0.0]])
    spec = HamiltonianSpec(omega=3.0, delta=0.0, v_matrix=vm, c6=4.0)
    ramp = RampProfile(
        times=np.array([0.0, 5.0]),
        deltas=np.array([-50.0, 50.0]),
        omegas=np.array([3.0, 3.0]),
    )
    with pytest.raises(IntegrationError):
        evolve_unitary(
            spec,
            ramp,
            StateVector.all_ground(BasisSpace.full(2)),
            amp_tol=1e-14,
            max_refinements=2,
        )


# ---------------------------------------------------------------------------
# trajectories


def test_zero_rates_reduce_to_unitary():
    lat = build_ring(4)
    spec = HamiltonianSpec.from_lattice(lat, omega=OMEGA, delta=0.2 * OMEGA, rb=1.4)
    basis = BasisSpace.full(4)
    ramp = linear_ramp(-OMEGA, OMEGA, rate=2.0 * OMEGA, omega=OMEGA, n_points=9)
    psi0 = StateVector.all_ground(basis)
    jumps = JumpOperators(_no_jump_params(), basis)
    traj = evolve_trajectory(spec, ramp, psi0, jumps, seed=3)
    assert traj.jump_times == []
    uni = evolve_unitary(spec, ramp, psi0, amp_tol=1e-9)
    fid = abs(np.vdot(traj.state.amplitudes, uni.state.amplitudes))
    assert fid > 1.0 - 1e-6


def test_trajectory_seed_determinism():
    lat = build_ring(3)
    spec = HamiltonianSpec.from_lattice(lat, omega=OMEGA, delta=0.5 * OMEGA, rb=1.2)
    basis = BasisSpace.full(3)
    ramp = _flat_ramp(2.0, OMEGA, 0.5 * OMEGA)
    jumps = JumpOperators(JumpParams.experiment_defaults().scaled(100.0), basis)
    psi0 = StateVector.all_ground(basis)
    a = evolve_trajectory(spec, ramp, psi0, jumps, seed=[7, 1])
    b = evolve_trajectory(spec, ramp, psi0, jumps, seed=[7, 1])
    assert a.jump_times == b.jump_times
    assert a.jump_channels == b.jump_channels
    assert np.array_equal(a.state.amplitudes, b.state.amplitudes)
    c = evolve_trajectory(spec, ramp, psi0, jumps, seed=[7, 2])
    assert a.jump_times != c.jump_times or a.jump_channels != c.jump_channels


def test_trajectory_rejects_basis_mismatch():
    lat = build_ring(3)
    spec = HamiltonianSpec.from_lattice(lat, omega=OMEGA, delta=0.0, rb=1.2)
    jumps = JumpOperators(JumpParams.experiment_defaults(), BasisSpace.full(3))
    psi0 = StateVector.all_ground(BasisSpace.blockade_truncated(lat, 1.2))
    with pytest.raises(BasisMismatchError):
        evolve_trajectory(spec, _flat_ramp(1.0, OMEGA, 0.0), psi0, jumps, seed=0)


def test_single_atom_decay_statistics():
    # empirical jump-time CDF against 1 - exp(-gamma t), 3 sigma at checkpoints
    gamma = 1.0
    spec = _single_site_spec(0.0, 0.0)
    basis = BasisSpace.full(1)
    psi0 = StateVector(np.array([0.0, 1.0], dtype=complex), basis)
    params = JumpParams(gamma_decay=gamma, omega_blue=0.0, omega_ir=0.0, delta_int=1.0, gamma_e=0.0)
    jumps = JumpOperators(params, basis)
    ramp = _flat_ramp(3.0, 0.0, 0.0, n_points=2)
    m = 2000
    first_jumps = []
    for k in range(m):
        traj = evolve_trajectory(spec, ramp, psi0, jumps, seed=[2026, k])
        assert len(traj.jump_times) <= 1  # once in |g> the channel weights vanish
        first_jumps.append(traj.jump_times[0] if traj.jump_times else np.inf)
    first_jumps = np.array(first_jumps)
    for t in (0.3, 0.7, 1.5, 2.5):
        f_exact = 1.0 - math.exp(-gamma * t)
        f_hat = float(np.mean(first_jumps <= t))
        sigma = math.sqrt(f_exact * (1.0 - f_exact) / m)
        assert abs(f_hat - f_exact) < 3.0 * sigma


def test_ensemble_matches_master_equation():
    vm = np.array([[0.0, 4.0 * OMEGA], [4.0 * OMEGA, 0.0]])
    spec = HamiltonianSpec(omega=OMEGA, delta=0.3 * OMEGA, v_matrix=vm, c6=4.0 * OMEGA)
    basis = BasisSpace.full(2)
    ramp = linear_ramp(-OMEGA, OMEGA, rate=4.0 * OMEGA, omega=OMEGA, n_points=9)
    psi0 = StateVector.all_ground(basis)
    params = JumpParams.experiment_defaults()
    trajs = trajectory_ensemble(spec, ramp, psi0, params, n_traj=200, master_seed=42, rate_scale=50.0)
    occ = np.array(
        [
            [t.state.probabilities()[[1, 3]].sum(), t.state.probabilities()[[2, 3]].sum()]
            for t in trajs
        ]
    )
    mean = occ.mean(axis=0)
    sem = occ.std(axis=0, ddof=1) / math.sqrt(len(trajs))
    jumps = JumpOperators(params.scaled(50.0), basis)
    rho = evolve_lindblad(spec, ramp, density_from_state(psi0), jumps)
    p = np.diag(rho).real
    exact = np.array([p[1] + p[3], p[2] + p[3]])
    assert np.all(np.abs(mean - exact) < 3.0 * sem)


def test_ensemble_is_order_and_jobs_independent():
    lat = build_ring(3)
    spec = HamiltonianSpec.from_lattice(lat, omega=OMEGA, delta=0.5 * OMEGA, rb=1.2)
    basis = BasisSpace.full(3)
    ramp = _flat_ramp(1.0, OMEGA, 0.5 * OMEGA)
    psi0 = StateVector.all_ground(basis)
    params = JumpParams.experiment_defaults()
    a = trajectory_ensemble(spec, ramp, psi0, params, n_traj=4, master_seed=9, rate_scale=100.0)
    b = trajectory_ensemble(
        spec, ramp, psi0, params, n_traj=4, master_seed=9, rate_scale=100.0, jobs=2
    )
    for x, y in zip(a, b):
        assert x.jump_times == y.jump_times
        assert x.jump_channels == y.jump_channels
        assert np.array_equal(x.state.amplitudes, y.state.amplitudes)


def test_ensemble_postprocess_runs_in_worker():
    lat = build_ring(3)
    spec = HamiltonianSpec.from_lattice(lat, omega=OMEGA, delta=0.0, rb=1.2)
    basis = BasisSpace.full(3)
    psi0 = StateVector.all_ground(basis)
    out = trajectory_ensemble(
        spec,
        _flat_ramp(0.5, OMEGA, 0.0),
        psi0,
        JumpParams.experiment_defaults(),
        n_traj=3,
        master_seed=1,
        postprocess=lambda t: len(t.jump_times),
    )
    assert out == [0, 0, 0]
    with pytest.raises(DomainError):
        trajectory_ensemble(spec, _flat_ramp(0.5, OMEGA, 0.0), psi0, JumpParams.experiment_defaults(), n_traj=0, master_seed=1)


# ---------------------------------------------------------------------------
# master-equation oracle


def test_lindblad_single_atom_decay():
    gamma = 0.8
    spec = _single_site_spec(0.0, 0.0)
    basis = BasisSpace.full(1)
    params = JumpParams(gamma_decay=gamma, omega_blue=0.0, omega_ir=0.0, delta_int=1.0, gamma_e=0.0)
    jumps = JumpOperators(params, basis)
    rho0 = np.array([[0.0, 0.0], [0.0, 1.0]], dtype=complex)
    for t_end in (0.5, 1.7):
        ramp = _flat_ramp(t_end, 0.0, 0.0, n_points=2)
        rho = evolve_lindblad(spec, ramp, rho0, jumps)
        assert rho[1, 1].real == pytest.approx(math.exp(-gamma * t_end), abs=1e-8)
        assert abs(np.trace(rho) - 1.0) < 1e-8


def test_lindblad_rate_time_scaling():
    # with no Hamiltonian the map depends on rates and time only through
    # their product, so k x rates over T equals rates over k x T
    spec = _single_site_spec(0.0, 0.0)
    basis = BasisSpace.full(1)
    base = JumpParams(gamma_decay=0.3, omega_blue=50.0, omega_ir=30.0, delta_int=800.0, gamma_e=0.4)
    rho0 = np.array([[0.25, 0.4], [0.4, 0.75]], dtype=complex)
    fast = evolve_lindblad(spec, _flat_ramp(0.5, 0.0, 0.0, 2), rho0, JumpOperators(base.scaled(3.0), basis))
    slow = evolve_lindblad(spec, _flat_ramp(1.5, 0.0, 0.0, 2), rho0, JumpOperators(base, basis))
    assert np.max(np.abs(fast - slow)) < 1e-8


def test_lindblad_shape_guard():
    spec = _single_site_spec(1.0, 0.0)
    jumps = JumpOperators(JumpParams.experiment_defaults(), BasisSpace.full(1))
    with pytest.raises(BasisMismatchError):
        evolve_lindblad(spec, _flat_ramp(1.0, 1.0, 0.0), np.eye(3, dtype=complex), jumps)


def test_density_from_state():
    basis = BasisSpace.full(1)
    psi = StateVector(np.array([1.0, 1.0j], dtype=complex) / math.sqrt(2), basis)
    rho = density_from_state(psi)
    assert rho[0, 0] == pytest.approx(0.5)
    assert rho[0, 1] == pytest.approx(-0.5j)
    assert np.trace(rho) == pytest.approx(1.0)
