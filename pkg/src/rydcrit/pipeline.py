"""End-to-end experiment stages driven by a validated config.

Every stage writes deterministic artifacts into one output directory; a
final manifest lists each file with its content hash.  Reruns with the same
(config, seed) produce byte-identical file bodies — the manifest's wall-time
entry is the only thing allowed to differ.

Child RNG streams are spawned as ``[master_seed, STAGE_TAG, ...]`` so adding
a stage never shifts another stage's draws.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .analysis import FitResult, bootstrap, fit_correlator, kz_rate_scan
from .config import TWO_PI, ExperimentConfig
from .errors import ConfigError, DomainError
from .evolve import evolve_unitary, trajectory_ensemble
from .hamiltonian import BasisSpace, HamiltonianSpec, StateVector
from .lattice import Lattice, sample_disorder, sample_holes
from .measurement import (
    DetectionModel,
    SnapshotSet,
    apply_detection_errors,
    postselect_blockade,
    sample_ensemble_snapshots,
    sample_snapshots,
)
from .observables import rydberg_density, two_point
from .ramps import (
    RampProfile,
    gap_adaptive_ramp,
    linear_gap_ramp,
    linear_ramp,
    min_adiabaticity,
)
from .serialize import sha256_file, write_csv, write_json
from .spectrum import (
    GapProfile,
    gap_profile,
    ground_state,
    reachable_gap_profile,
    symmetry_perms,
)

# child-seed tags; order matters for reproducibility, never renumber
_SEED_DISORDER = 11
_SEED_HOLES = 12
_SEED_TRAJ = 21
_SEED_SAMPLE = 31
_SEED_DETECT = 41
_SEED_BOOT = 51


def _flat_seed(*parts: int) -> int:
    """Deterministically collapse a seed path into one integer."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


@dataclass
class RunState:
    """Everything stages share while a run threads through the pipeline."""

    cfg: ExperimentConfig
    outdir: Path
    jobs: int = 1
    plot_data: bool = False
    files: dict = field(default_factory=dict)
    lattice: Optional[Lattice] = None
    basis: Optional[BasisSpace] = None
    spec: Optional[HamiltonianSpec] = None
    keep_mask: Optional[np.ndarray] = None
    profile: Optional[GapProfile] = None
    ramp: Optional[RampProfile] = None
    snapshots: Optional[SnapshotSet] = None
    stages: list = field(default_factory=list)

    def record(self, relpath: str):
        self.files[relpath] = str(self.outdir / relpath)

    def write_json(self, relpath: str, payload: dict):
        write_json(self.outdir / relpath, payload)
        self.record(relpath)


def _ensure_geometry(state: RunState):
    """Build lattice, disorder, holes, spec, and basis once per run."""
    if state.spec is not None:
        return
    cfg = state.cfg
    lat = cfg.build_lattice()
    dis = cfg.data.get("disorder", {})
    disorder = None
    v_sigma = dis.get("v_sigma", 0.0)
    sigma_r = dis.get("sigma_r", 0.0)
    sigma_v = dis.get("sigma_v", 0.0)
    ramp_t = cfg.data.get("ramp", {}).get("total_time_us", 0.0) or 0.0
    if v_sigma > 0 or sigma_r > 0 or sigma_v > 0:
        disorder = sample_disorder(
            lat, v_sigma, sigma_r, sigma_v, t_evolve=ramp_t, seed=[cfg.seed, _SEED_DISORDER]
        )
    keep = None
    if dis.get("hole_fraction", 0.0) > 0:
        keep = sample_holes(lat, dis["hole_fraction"], seed=[cfg.seed, _SEED_HOLES])
        if cfg.data.get("basis", {}).get("truncation") == "blockade":
            raise ConfigError(
                "blockade truncation cannot be combined with holes; use full basis",
                path="basis.truncation",
            )
    spec = cfg.build_spec(lat, delta=0.0, disorder=disorder, site_mask=keep)
    if keep is None:
        basis = cfg.build_basis(lat)
    else:
        basis = BasisSpace.full(int(keep.sum()), max_sites=cfg.capacity_cap)
    state.lattice, state.basis, state.spec, state.keep_mask = lat, basis, spec, keep


# ---------------------------------------------------------------------------
# stages


def run_gap_scan(state: RunState) -> GapProfile:
    """Scan the spectral gap over the configured detuning grid.

    Writes both the bare first-excitation profile and (by default) the
    drive-reachable profile restricted to the symmetric sector; the latter
    stays finite through the ordering transition and is what ramp synthesis
    uses.
    """
    cfg = state.cfg
    if "gap_scan" not in cfg.data:
        raise ConfigError("config has no gap_scan section", path="gap_scan")
    _ensure_geometry(state)
    grid = cfg.gap_grid()
    plain = gap_profile(state.spec, grid, state.basis)
    plain.to_csv(state.outdir / "gap_profile.csv")
    state.record("gap_profile.csv")
    summary = {
        "delta_grid_over_omega": [float(d / cfg.omega) for d in grid],
        "plain_minimum": _min_entry(plain, cfg.omega),
    }
    chosen = plain
    if cfg.data["gap_scan"]["reachable"]:
        perms = symmetry_perms(state.lattice, state.basis)
        reach = reachable_gap_profile(state.spec, grid, state.basis, perms=perms)
        reach.to_csv(state.outdir / "gap_reachable.csv")
        state.record("gap_reachable.csv")
        summary["reachable_minimum"] = _min_entry(reach, cfg.omega)
        chosen = reach
    state.write_json("gap_scan.json", summary)
    state.profile = chosen
    state.stages.append("gap_scan")
    return chosen


def _min_entry(profile: GapProfile, omega: float) -> dict:
    d, g = profile.minimum()
    return {
        "delta": float(d),
        "delta_over_omega": float(d / omega),
        "gap": float(g),
        "gap_over_omega": float(g / omega),
    }


def run_ramp(state: RunState) -> RampProfile:
    """Synthesize the configured detuning schedule and write it out."""
    cfg = state.cfg
    sec = cfg.data.get("ramp")
    if sec is None:
        raise ConfigError("config has no ramp section", path="ramp")
    _ensure_geometry(state)
    om = cfg.omega
    d0 = sec["delta_start_over_omega"] * om
    d1 = sec["delta_end_over_omega"] * om
    kind = sec["kind"]
    info: dict = {"kind": kind}
    if kind == "linear":
        rate = TWO_PI * sec["rate_mhz_per_us"]
        ramp = linear_ramp(d0, d1, rate=rate, omega=om, n_points=sec.get("n_points") or 65)
        info["rate"] = rate
    else:
        if state.profile is None:
            if "gap_scan" not in cfg.data:
                raise ConfigError(
                    "gap-adaptive ramps need a gap_scan section", path="gap_scan"
                )
            run_gap_scan(state)
        profile = state.profile
        total = sec["total_time_us"]
        if kind == "lila-discrete":
            ramp = gap_adaptive_ramp(
                profile, d0, d1, total, om, n_points=sec.get("n_points") or 101
            )
        else:
            ramp = linear_gap_ramp(
                float(profile.gap_at(d0)), float(profile.gap_at(d1)), d0, d1, total, om,
                n_points=sec.get("n_points") or 65,
            )
        info["gamma"] = ramp.gamma
        info["min_adiabaticity"] = float(min_adiabaticity(ramp, profile.gap_at))
    if sec["turn_on_us"] > 0:
        ramp = ramp.with_turn_on(sec["turn_on_us"])
    info["duration"] = ramp.duration
    info["n_points"] = int(ramp.times.size)
    ramp.to_csv(state.outdir / "ramp.csv")
    state.record("ramp.csv")
    state.write_json("ramp.json", info)
    state.ramp = ramp
    state.stages.append("ramp")
    return ramp


def _initial_state(state: RunState) -> StateVector:
    """Ground state at the ramp's starting point; bare vacuum after a
    turn-on prefix (the drive is off there, so the vacuum is exact)."""
    ramp = state.ramp
    if ramp.omegas[0] == 0.0:
        return StateVector.all_ground(state.basis)
    spec0 = state.spec.with_delta(float(ramp.deltas[0]))
    _, gs = ground_state(spec0, state.basis)
    return gs


def run_prepare(state: RunState) -> SnapshotSet:
    """Evolve through the ramp and emit measurement snapshots.

    Closed runs propagate one state and sample shots from it; open runs give
    every shot group its own trajectory so shot-to-shot variance includes
    the jump randomness.
    """
    cfg = state.cfg
    if "measurement" not in cfg.data:
        raise ConfigError("config has no measurement section", path="measurement")
    _ensure_geometry(state)
    if state.ramp is None:
        run_ramp(state)
    meas = cfg.data["measurement"]
    params = cfg.jump_params()
    psi0 = _initial_state(state)
    prep_info: dict = {"decoherence": "off" if params is None else cfg.data["decoherence"]["mode"]}
    if params is None:
        res = evolve_unitary(state.spec, state.ramp, psi0)
        prep_info["steps"] = res.n_steps
        prep_info["step_error"] = res.step_error
        snaps = sample_snapshots(
            res.state,
            state.lattice,
            meas["n_shots"],
            seed=[cfg.seed, _SEED_SAMPLE],
            keep_mask=state.keep_mask,
        )
    else:
        per = meas["shots_per_trajectory"]
        n_traj = -(-meas["n_shots"] // per)
        trajs = trajectory_ensemble(
            state.spec,
            state.ramp,
            psi0,
            params,
            n_traj,
            master_seed=_flat_seed(cfg.seed, _SEED_TRAJ),
            jobs=state.jobs,
        )
        states = [t.state for t in trajs]
        prep_info["n_trajectories"] = n_traj
        prep_info["mean_jumps"] = float(np.mean([len(t.jump_times) for t in trajs]))
        snaps = sample_ensemble_snapshots(
            states,
            state.lattice,
            seed=[cfg.seed, _SEED_SAMPLE],
            shots_per_state=per,
            keep_mask=state.keep_mask,
        )
        snaps = SnapshotSet(
            snaps.records[: meas["n_shots"]], snaps.lattice, snaps.provenance
        )
    det = meas["detection"]
    if det["enabled"]:
        snaps = apply_detection_errors(
            snaps,
            DetectionModel(eta0=det["eta0"], eps_det=det["eps_det"]),
            seed=[cfg.seed, _SEED_DETECT],
        )
    if meas["postselect"]:
        snaps = postselect_blockade(snaps, state.spec.blockade_radius)
        prep_info["rejection_fraction"] = snaps.provenance["postselect"]["rejection_fraction"]
    prep_info["n_snapshots"] = snaps.n_snapshots
    snaps.save(state.outdir / "snapshots.txt")
    state.record("snapshots.txt")
    state.write_json("prepare.json", prep_info)
    state.snapshots = snaps
    state.stages.append("prepare")
    return snaps


def run_analyze(state: RunState, snapshots: Optional[SnapshotSet] = None) -> list[FitResult]:
    """Correlators, decay-model fits, and optional bootstrap errors."""
    cfg = state.cfg
    ana = cfg.data.get("analysis")
    if ana is None:
        raise ConfigError("config has no analysis section", path="analysis")
    snaps = snapshots if snapshots is not None else state.snapshots
    if snaps is None:
        path = state.outdir / "snapshots.txt"
        if not path.exists():
            raise DomainError("no snapshots available; run the prepare stage first")
        snaps = SnapshotSet.load(path)
    if snaps.n_snapshots == 0:
        raise DomainError("snapshot set is empty after post-selection")
    results = []
    records = []
    for fieldname in ana["fields"]:
        series = two_point(
            snaps, field=fieldname, region=ana["region"], connected=ana["connected"]
        )
        relcsv = f"correlator_{fieldname}.csv"
        series.to_csv(state.outdir / relcsv)
        state.record(relcsv)
        for model in ana["models"]:
            fit = fit_correlator(
                series,
                model=model,
                fit_mask=series.distances >= ana["min_fit_distance"],
            )
            if ana["bootstrap_replicates"] > 0:
                summary = bootstrap(
                    snaps,
                    _FitStatistic(fieldname, model, ana),
                    ana["bootstrap_replicates"],
                    seed=[cfg.seed, _SEED_BOOT],
                )
                fit = fit.with_bootstrap(summary)
            results.append(fit)
            records.append(_fit_record(fieldname, fit, snaps, cfg))
    dens = rydberg_density(snaps)
    state.write_json(
        "density.json",
        {
            "global_mean": dens.global_mean,
            "global_err": dens.global_err,
            "per_site": [float(v) for v in dens.per_site],
        },
    )
    state.write_json("fits.json", {"fits": records})
    state.stages.append("analyze")
    return results


class _FitStatistic:
    """Picklable bootstrap statistic: correlator -> fit -> (dim, 1/xi)."""

    def __init__(self, fieldname: str, model: str, ana: dict):
        self.fieldname = fieldname
        self.model = model
        self.ana = ana

    def __call__(self, snaps: SnapshotSet):
        series = two_point(
            snaps,
            field=self.fieldname,
            region=self.ana["region"],
            connected=self.ana["connected"],
        )
        fit = fit_correlator(
            series,
            model=self.model,
            fit_mask=series.distances >= self.ana["min_fit_distance"],
        )
        dim = fit.params.get("scaling_dim", np.nan)
        rate = fit.params.get("decay_rate", np.nan)
        return np.array([dim, rate])


def _fit_record(fieldname: str, fit: FitResult, snaps: SnapshotSet, cfg) -> dict:
    rec = {
        "field": fieldname,
        "model": fit.model,
        "params": fit.params,
        "stderrs": fit.stderrs,
        "residual_norm": fit.residual_norm,
        "n_points": fit.n_points,
        "fit_range": list(fit.fit_range),
        "log_mode": fit.log_mode,
        "bic": fit.bic,
        "n_snapshots": snaps.n_snapshots,
        "config_hash": cfg.config_hash(),
    }
    if fit.bootstrap is not None:
        b = fit.bootstrap
        rec["bootstrap"] = {
            "n_requested": b.n_requested,
            "n_failed": b.n_failed,
            "mean": np.asarray(b.mean).tolist(),
            "std": np.asarray(b.std).tolist(),
            "skewness": np.asarray(b.skewness).tolist(),
            "median": np.asarray(b.median).tolist(),
            "percentile_low": np.asarray(b.percentile_low).tolist(),
            "percentile_high": np.asarray(b.percentile_high).tolist(),
        }
    return rec


def run_kz(state: RunState) -> list:
    """Linear-sweep rate scan of the density-response peak, both directions."""
    cfg = state.cfg
    kz = cfg.data.get("kz")
    if kz is None:
        raise ConfigError("config has no kz section", path="kz")
    _ensure_geometry(state)
    ramp_sec = cfg.data.get("ramp")
    if ramp_sec is None:
        raise ConfigError("kz runs need a ramp section for the sweep window", path="ramp")
    om = cfg.omega
    d_lo = ramp_sec["delta_start_over_omega"] * om
    d_hi = ramp_sec["delta_end_over_omega"] * om
    n_pts = kz["n_points"]
    nocc = np.bitwise_count(state.basis.states).astype(float)
    n_sites = state.basis.n_sites

    def run_sweep(rate: float, direction: str):
        if direction == "forward":
            ramp = linear_ramp(d_lo, d_hi, rate=rate, omega=om, n_points=n_pts)
        else:
            ramp = linear_ramp(d_hi, d_lo, rate=rate, omega=om, n_points=n_pts)
        _, gs = ground_state(state.spec.with_delta(float(ramp.deltas[0])), state.basis)

        def nbar(amps, t):
            return float((np.abs(amps) ** 2 @ nocc) / n_sites)

        res = evolve_unitary(state.spec, ramp, gs, sample_fn=nbar)
        ts = np.array([t for t, _ in res.samples])
        vals = np.array([v for _, v in res.samples])
        deltas = np.interp(ts, ramp.times, ramp.deltas)
        order = np.argsort(deltas)
        return deltas[order], vals[order]

    rates = [TWO_PI * r for r in kz["rates_mhz_per_us"]]
    points = kz_rate_scan(run_sweep, rates, directions=tuple(kz["directions"]))
    rows = [
        (p.rate / TWO_PI, p.direction, p.delta_max, p.delta_max / om) for p in points
    ]
    write_csv(
        state.outdir / "kz_scan.csv",
        ["rate_mhz_per_us", "direction", "delta_max", "delta_max_over_omega"],
        rows,
    )
    state.record("kz_scan.csv")
    if state.plot_data:
        for i, p in enumerate(points):
            rel = f"kz_curve_{p.direction}_{i % len(rates)}.csv"
            p.scan.curves_to_csv(state.outdir / rel)
            state.record(rel)
    state.stages.append("kz")
    return points


def run_pipeline(
    cfg: ExperimentConfig,
    outdir,
    jobs: int = 1,
    plot_data: bool = False,
) -> dict:
    """Chain every stage the config declares; returns the manifest dict."""
    state = new_run(cfg, outdir, jobs=jobs, plot_data=plot_data)
    if "gap_scan" in cfg.data:
        run_gap_scan(state)
    # a ramp section alongside kz (and no measurement) only sets the sweep
    # window, so skip the standalone ramp artifact in that case
    want_ramp = "ramp" in cfg.data and (
        "measurement" in cfg.data or "kz" not in cfg.data
    )
    if want_ramp:
        run_ramp(state)
    if "measurement" in cfg.data and state.ramp is not None:
        run_prepare(state)
    if "analysis" in cfg.data and state.snapshots is not None:
        run_analyze(state)
    if "kz" in cfg.data:
        run_kz(state)
    return finalize(state)


def new_run(cfg: ExperimentConfig, outdir, jobs: int = 1, plot_data: bool = False) -> RunState:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    state = RunState(cfg=cfg, outdir=outdir, jobs=jobs, plot_data=plot_data)
    state._t0 = time.time()
    (outdir / "config_canonical.json").write_text(cfg.canonical_text())
    state.record("config_canonical.json")
    return state


def finalize(state: RunState) -> dict:
    """Hash every artifact and write the manifest."""
    manifest = {
        "name": state.cfg.name,
        "config_hash": state.cfg.config_hash(),
        "package_version": __version__,
        "seed": state.cfg.seed,
        "stages": state.stages,
        "files": {rel: sha256_file(path) for rel, path in sorted(state.files.items())},
        "wall_time_s": round(time.time() - getattr(state, "_t0", time.time()), 3),
    }
    write_json(state.outdir / "manifest.json", manifest)
    return manifest
