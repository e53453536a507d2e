"""Critical-point location, correlator-decay fits, and bootstrap errors.

Decay models for two-point correlators C(d):

  ``power``      A * d^(-2 s)
  ``exponential``A * exp(-d / xi)
  ``power_exp``  A * d^(-2 s) * exp(-d / xi)
  ``finite_t``   A * (t / sinh(pi t d))^(2 s)

with ``s`` the scaling dimension (the reported exponent is ``2 s``).  All
four are linear in (log A, s, 1/xi) after taking logs — ``finite_t`` after a
one-dimensional search over the temperature-like scale ``t`` — so fits are
deterministic weighted linear least squares wherever the data are positive,
with a direct nonlinear fallback otherwise.

The susceptibility pipeline locates the critical point from the density
curve in four fixed steps: light smoothing, spline interpolation onto a
denser grid, central-difference derivative, heavier smoothing, then the
peak.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence, Union

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import least_squares, minimize_scalar
from scipy.signal import savgol_filter
from scipy.stats import skew as _skew

from .errors import BootstrapUnstableError, DomainError, FitDegenerateError, RydcritError
from .measurement import SnapshotSet
from .observables import CorrelatorSeries
from .serialize import write_csv

MODELS = ("power", "exponential", "power_exp", "finite_t")


# ---------------------------------------------------------------------------
# fit results


@dataclass(frozen=True)
class BootstrapSummary:
    n_requested: int
    n_failed: int
    mean: Any
    std: Any
    skewness: Any
    median: Any
    percentile_low: Any
    percentile_high: Any
    asymmetric: Any

    def interval(self):
        """(low, high): percentile interval when skewed, else mean +/- std."""
        if np.any(self.asymmetric):
            return self.percentile_low, self.percentile_high
        return self.mean - self.std, self.mean + self.std


@dataclass(frozen=True)
class FitResult:
    model: str
    params: dict
    stderrs: dict
    residual_norm: float
    n_points: int
    fit_range: tuple[float, float]
    log_mode: bool
    bic: float
    bootstrap: Optional[BootstrapSummary] = None

    @property
    def exponent(self) -> float:
        """The decay exponent 2 * scaling_dim, when the model has one."""
        return 2.0 * self.params["scaling_dim"]

    def with_bootstrap(self, summary: BootstrapSummary) -> "FitResult":
        return FitResult(
            self.model,
            self.params,
            self.stderrs,
            self.residual_norm,
            self.n_points,
            self.fit_range,
            self.log_mode,
            self.bic,
            summary,
        )


# ---------------------------------------------------------------------------
# model machinery


def _model_columns(model: str, d: np.ndarray, t_scale: Optional[float]):
    """Design-matrix columns for log C = X @ theta; first column is log A."""
    ones = np.ones_like(d)
    if model == "power":
        return np.column_stack([ones, -2.0 * np.log(d)]), ("amplitude", "scaling_dim")
    if model == "exponential":
        return np.column_stack([ones, -d]), ("amplitude", "decay_rate")
    if model == "power_exp":
        return (
            np.column_stack([ones, -2.0 * np.log(d), -d]),
            ("amplitude", "scaling_dim", "decay_rate"),
        )
    if model == "finite_t":
        if t_scale is None:
            raise DomainError("finite_t columns need a t_scale")
        g = np.log(t_scale / np.sinh(math.pi * t_scale * d))
        return np.column_stack([ones, 2.0 * g]), ("amplitude", "scaling_dim")
    raise DomainError(f"unknown model {model!r}; choose from {MODELS}")


def model_value(model: str, d: np.ndarray, params: dict) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    a = params["amplitude"]
    if model == "power":
        return a * d ** (-2.0 * params["scaling_dim"])
    if model == "exponential":
        return a * np.exp(-d / params["xi"])
    if model == "power_exp":
        out = a * d ** (-2.0 * params["scaling_dim"])
        if np.isfinite(params["xi"]):
            out = out * np.exp(-d / params["xi"])
        return out
    if model == "finite_t":
        t = params["t_scale"]
        return a * (t / np.sinh(math.pi * t * d)) ** (2.0 * params["scaling_dim"])
    raise DomainError(f"unknown model {model!r}")


def _wlsq(x: np.ndarray, y: np.ndarray, w: np.ndarray):
    """Weighted linear least squares with covariance; raises on rank loss."""
    sw = np.sqrt(w)
    xw = x * sw[:, None]
    yw = y * sw
    if np.linalg.matrix_rank(xw) < x.shape[1]:
        raise FitDegenerateError("design matrix is rank deficient")
    theta, res, *_ = np.linalg.lstsq(xw, yw, rcond=None)
    resid = yw - xw @ theta
    rss = float(resid @ resid)
    dof = max(x.shape[0] - x.shape[1], 1)
    cov = rss / dof * np.linalg.inv(xw.T @ xw)
    return theta, rss, cov


def default_fit_mask(series: CorrelatorSeries, min_distance: float = 1.5) -> np.ndarray:
    """Default fit range: drop lattice-scale bins (d < 1.5 spacings) and a
    thin largest-distance bin (< 4 pairs)."""
    mask = series.distances >= min_distance
    if mask.any():
        last = np.nonzero(mask)[0][-1]
        if series.counts[last] < 4:
            mask[last] = False
    return mask


def _theta_to_params(model: str, names, theta, cov):
    params: dict = {}
    stderrs: dict = {}
    errs = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    for k, name in enumerate(names):
        if name == "amplitude":
            params["amplitude"] = float(np.exp(theta[k]))
            stderrs["amplitude"] = float(params["amplitude"] * errs[k])
        elif name == "decay_rate":
            rate = float(theta[k])
            params["decay_rate"] = rate
            stderrs["decay_rate"] = float(errs[k])
            params["xi"] = 1.0 / rate if rate > 0 else math.inf
            stderrs["xi"] = float(errs[k] / rate**2) if rate > 0 else math.inf
        else:
            params[name] = float(theta[k])
            stderrs[name] = float(errs[k])
    return params, stderrs


def _bic(rss: float, n: int, k: int) -> float:
    return n * math.log(max(rss / n, 1e-300)) + k * math.log(n)


def _log_weights(values: np.ndarray, stderrs: np.ndarray) -> np.ndarray:
    """Inverse-variance weights on log values; uniform when errors missing."""
    if np.all(stderrs > 0):
        rel = stderrs / np.abs(values)
        return 1.0 / np.clip(rel, 1e-12, None) ** 2
    return np.ones_like(values)


def _init_params(model: str, d: np.ndarray, c: np.ndarray) -> dict:
    """Deterministic starting point: scaling dim from the log-log slope of
    the first half, decay rate from the semilog slope of the last half."""
    pos = c > 0
    dp, cp = d[pos], c[pos]
    out = {"amplitude": float(abs(c[0])) or 1.0, "scaling_dim": 0.125, "decay_rate": 0.1}
    if dp.size >= 4:
        h = dp.size // 2
        sl1 = np.polyfit(np.log(dp[:h]), np.log(cp[:h]), 1)[0]
        out["scaling_dim"] = float(max(-sl1 / 2.0, 1e-3))
        sl2 = np.polyfit(dp[h:], np.log(cp[h:]), 1)[0]
        out["decay_rate"] = float(max(-sl2, 1e-6))
        out["amplitude"] = float(cp[0] * dp[0] ** (2 * out["scaling_dim"]))
    out["t_scale"] = out["decay_rate"] / math.pi if out["decay_rate"] > 0 else 0.01
    return out


def _direct_fit(model: str, d, c, w, t_scale_fixed=None):
    """Nonlinear least squares in linear space (used when values <= 0)."""
    init = _init_params(model, d, c)
    name_map = {
        "power": ["amplitude", "scaling_dim"],
        "exponential": ["amplitude", "decay_rate"],
        "power_exp": ["amplitude", "scaling_dim", "decay_rate"],
        "finite_t": ["amplitude", "scaling_dim", "t_scale"],
    }[model]
    x0 = np.array([init[n] for n in name_map])

    def predict(vec):
        p = dict(zip(name_map, vec))
        if "decay_rate" in p:
            p["xi"] = 1.0 / p["decay_rate"] if p["decay_rate"] > 0 else math.inf
        return model_value(model, d, p)

    sw = np.sqrt(w)
    sol = least_squares(lambda v: sw * (predict(v) - c), x0, method="lm", max_nfev=20000)
    if not sol.success and sol.status <= 0:
        raise FitDegenerateError(f"direct fit failed: {sol.message}")
    n, k = d.size, x0.size
    rss = float(2.0 * sol.cost)
    try:
        jtj = sol.jac.T @ sol.jac
        cov = rss / max(n - k, 1) * np.linalg.inv(jtj)
        errs = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    except np.linalg.LinAlgError:
        errs = np.full(k, math.nan)
    params = dict(zip(name_map, (float(v) for v in sol.x)))
    stderrs = dict(zip(name_map, (float(e) for e in errs)))
    if "decay_rate" in params:
        r = params["decay_rate"]
        params["xi"] = 1.0 / r if r > 0 else math.inf
        stderrs["xi"] = stderrs["decay_rate"] / r**2 if r > 0 else math.inf
    return params, stderrs, rss, n, k


def fit_correlator(
    series: CorrelatorSeries,
    model: str = "power_exp",
    fit_mask: Optional[np.ndarray] = None,
    weights: Optional[np.ndarray] = None,
) -> FitResult:
    """Fit a decay model to a correlator series.

    Positive data are fitted as weighted linear least squares on logs; any
    non-positive value in range triggers the direct nonlinear mode (the
    ``log_mode`` flag records which ran).  Weights default to
    inverse-variance from the series standard errors when present.
    """
    if model not in MODELS:
        raise DomainError(f"unknown model {model!r}; choose from {MODELS}")
    if fit_mask is None:
        fit_mask = default_fit_mask(series)
    fit_mask = np.asarray(fit_mask, dtype=bool)
    d = series.distances[fit_mask]
    c = series.values[fit_mask]
    e = series.stderrs[fit_mask]
    n_par = {"power": 2, "exponential": 2, "power_exp": 3, "finite_t": 3}[model]
    if d.size < n_par + 1:
        raise FitDegenerateError(
            f"{d.size} points in range but {model} needs at least {n_par + 1}"
        )
    w = weights[fit_mask] if weights is not None else _log_weights(c, e)
    rng_lo, rng_hi = float(d.min()), float(d.max())

    if np.all(c > 0):
        y = np.log(c)
        if model == "finite_t":

            def rss_of(log_t: float) -> float:
                x, _ = _model_columns(model, d, math.exp(log_t))
                try:
                    return _wlsq(x, y, w)[1]
                except FitDegenerateError:
                    return math.inf

            span = max(rng_hi, 1.0)
            opt = minimize_scalar(
                rss_of,
                bounds=(math.log(1e-4 / span), math.log(50.0 / span)),
                method="bounded",
                options={"xatol": 1e-12},
            )
            t_best = math.exp(opt.x)
            x, names = _model_columns(model, d, t_best)
            theta, rss, cov = _wlsq(x, y, w)
            params, stderrs = _theta_to_params(model, names, theta, cov)
            params["t_scale"] = float(t_best)
            stderrs.setdefault("t_scale", math.nan)
            k = 3
        else:
            x, names = _model_columns(model, d, None)
            theta, rss, cov = _wlsq(x, y, w)
            params, stderrs = _theta_to_params(model, names, theta, cov)
            k = x.shape[1]
        return FitResult(
            model=model,
            params=params,
            stderrs=stderrs,
            residual_norm=math.sqrt(rss / d.size),
            n_points=int(d.size),
            fit_range=(rng_lo, rng_hi),
            log_mode=True,
            bic=_bic(rss, d.size, k),
        )

    if model == "finite_t":
        raise FitDegenerateError("finite_t model requires positive correlator values")
    params, stderrs, rss, n, k = _direct_fit(model, d, c, w)
    return FitResult(
        model=model,
        params=params,
        stderrs=stderrs,
        residual_norm=math.sqrt(rss / n),
        n_points=int(n),
        fit_range=(rng_lo, rng_hi),
        log_mode=False,
        bic=_bic(rss, n, k),
    )


def joint_fit(
    series_list: Sequence[CorrelatorSeries],
    model: str = "power_exp",
    fit_masks: Optional[Sequence[np.ndarray]] = None,
) -> FitResult:
    """Simultaneous fit with one shared scaling dimension.

    Amplitudes and decay rates stay per-series (keys ``amplitude_k`` /
    ``xi_k``).  Requires positive values (log mode only).
    """
    if model not in ("power", "power_exp", "finite_t"):
        raise DomainError(f"joint fit is defined for power-law models, not {model!r}")
    if len(series_list) < 1:
        raise DomainError("need at least one series")
    if fit_masks is None:
        fit_masks = [default_fit_mask(s) for s in series_list]
    ds, cs, es = [], [], []
    for s, m in zip(series_list, fit_masks):
        m = np.asarray(m, dtype=bool)
        ds.append(s.distances[m])
        cs.append(s.values[m])
        es.append(s.stderrs[m])
    if any(np.any(c <= 0) for c in cs):
        raise FitDegenerateError("joint fit requires positive correlator values")
    n_series = len(series_list)
    n_tot = sum(d.size for d in ds)
    y = np.log(np.concatenate(cs))
    w = np.concatenate([_log_weights(c, e) for c, e in zip(cs, es)])
    d_all = np.concatenate(ds)

    def build(t_scale: Optional[float]):
        cols = []
        names: list[str] = []
        for k, d in enumerate(ds):
            col = np.zeros(n_tot)
            col[_block(ds, k)] = 1.0
            cols.append(col)
            names.append(f"amplitude_{k}")
        if t_scale is None:
            shared = -2.0 * np.log(d_all)
        else:
            shared = 2.0 * np.log(t_scale / np.sinh(math.pi * t_scale * d_all))
        cols.append(shared)
        names.append("scaling_dim")
        if model == "power_exp":
            for k, d in enumerate(ds):
                col = np.zeros(n_tot)
                col[_block(ds, k)] = -d
                cols.append(col)
                names.append(f"decay_rate_{k}")
        return np.column_stack(cols), names

    if model == "finite_t":
        span = max(float(d_all.max()), 1.0)

        def rss_of(log_t):
            x, _ = build(math.exp(log_t))
            try:
                return _wlsq(x, y, w)[1]
            except FitDegenerateError:
                return math.inf

        opt = minimize_scalar(
            rss_of,
            bounds=(math.log(1e-4 / span), math.log(50.0 / span)),
            method="bounded",
            options={"xatol": 1e-12},
        )
        t_best = math.exp(opt.x)
        x, names = build(t_best)
    else:
        t_best = None
        x, names = build(None)
    k_par = x.shape[1] + (1 if model == "finite_t" else 0)
    if n_tot < k_par + 1:
        raise FitDegenerateError(f"{n_tot} points cannot constrain {k_par} parameters")
    theta, rss, cov = _wlsq(x, y, w)
    errs = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    params: dict = {}
    stderrs: dict = {}
    for i, name in enumerate(names):
        if name.startswith("amplitude"):
            params[name] = float(np.exp(theta[i]))
            stderrs[name] = float(params[name] * errs[i])
        elif name.startswith("decay_rate"):
            rate = float(theta[i])
            idx = name.split("_")[-1]
            params[name] = rate
            stderrs[name] = float(errs[i])
            params[f"xi_{idx}"] = 1.0 / rate if rate > 0 else math.inf
            stderrs[f"xi_{idx}"] = float(errs[i] / rate**2) if rate > 0 else math.inf
        else:
            params[name] = float(theta[i])
            stderrs[name] = float(errs[i])
    if t_best is not None:
        params["t_scale"] = float(t_best)
    d_cat = d_all
    return FitResult(
        model=model,
        params=params,
        stderrs=stderrs,
        residual_norm=math.sqrt(rss / n_tot),
        n_points=int(n_tot),
        fit_range=(float(d_cat.min()), float(d_cat.max())),
        log_mode=True,
        bic=_bic(rss, n_tot, k_par),
    )


def _block(ds, k):
    start = sum(d.size for d in ds[:k])
    return slice(start, start + ds[k].size)


# ---------------------------------------------------------------------------
# susceptibility peak


@dataclass(frozen=True)
class SmoothingConfig:
    window_small: int = 5
    poly_small: int = 2
    window_large: int = 11
    poly_large: int = 2
    upsample: int = 10


@dataclass(frozen=True)
class SusceptibilityScan:
    delta_grid: np.ndarray
    mean_n: np.ndarray
    smoothed_n: np.ndarray
    dense_grid: np.ndarray
    dense_n: np.ndarray
    chi_raw: np.ndarray
    chi: np.ndarray
    delta_max: float
    peak_unique: bool
    config: SmoothingConfig

    def curves_to_csv(self, path) -> None:
        write_csv(
            path,
            ["delta", "interp_n", "chi_raw", "chi_smooth"],
            zip(self.dense_grid, self.dense_n, self.chi_raw, self.chi),
        )

    def raw_to_csv(self, path) -> None:
        write_csv(
            path,
            ["delta", "mean_n", "smoothed_n"],
            zip(self.delta_grid, self.mean_n, self.smoothed_n),
        )


def susceptibility_peak(
    deltas: np.ndarray,
    mean_n: np.ndarray,
    config: SmoothingConfig = SmoothingConfig(),
) -> SusceptibilityScan:
    """Locate the density-response peak in four fixed steps.

    (1) light polynomial smoothing of the raw density curve, (2) cubic-spline
    interpolation onto an ``upsample`` x denser uniform grid, (3) central
    differences for the derivative, (4) heavier smoothing of the derivative;
    the peak of the result is the reported location.  A flat derivative is
    flagged via ``peak_unique=False``.
    """
    deltas = np.asarray(deltas, dtype=float)
    mean_n = np.asarray(mean_n, dtype=float)
    if deltas.shape != mean_n.shape or deltas.ndim != 1:
        raise DomainError("delta grid and density must be 1-D with one shape")
    if deltas.size < 7:
        raise DomainError(f"need at least 7 grid points, got {deltas.size}")
    if np.any(np.diff(deltas) <= 0):
        raise DomainError("delta grid must be strictly increasing")
    w1 = min(config.window_small, deltas.size - (deltas.size + 1) % 2)
    smoothed = savgol_filter(mean_n, w1, config.poly_small)
    spline = CubicSpline(deltas, smoothed)
    dense = np.linspace(deltas[0], deltas[-1], config.upsample * (deltas.size - 1) + 1)
    dense_n = spline(dense)
    chi_raw = np.gradient(dense_n, dense)
    w2 = min(config.window_large, dense.size - (dense.size + 1) % 2)
    chi = savgol_filter(chi_raw, w2, config.poly_large)
    imax = int(np.argmax(chi))
    spread = float(chi.max() - chi.min())
    unique = spread > 1e-9 * max(1.0, abs(float(chi.max())))
    return SusceptibilityScan(
        delta_grid=deltas,
        mean_n=mean_n,
        smoothed_n=smoothed,
        dense_grid=dense,
        dense_n=dense_n,
        chi_raw=chi_raw,
        chi=chi,
        delta_max=float(dense[imax]),
        peak_unique=unique,
        config=config,
    )


@dataclass(frozen=True)
class KzPoint:
    rate: float
    direction: str
    delta_max: float
    scan: SusceptibilityScan


def kz_rate_scan(
    run_sweep: Callable[[float, str], tuple[np.ndarray, np.ndarray]],
    rates: Sequence[float],
    directions: Sequence[str] = ("forward",),
    config: SmoothingConfig = SmoothingConfig(),
) -> list[KzPoint]:
    """Sweep-rate scan of the density-response peak.

    ``run_sweep(rate, direction)`` must return a ``(delta, mean_n)`` series
    for one linear sweep.  Points come back grouped by direction, rates in
    the given order; failures carry the offending rate.
    """
    if len(rates) < 1:
        raise DomainError("need at least one rate")
    out: list[KzPoint] = []
    for direction in directions:
        if direction not in ("forward", "backward"):
            raise DomainError(f"unknown direction {direction!r}")
        for rate in rates:
            try:
                deltas, dens = run_sweep(rate, direction)
                scan = susceptibility_peak(np.asarray(deltas), np.asarray(dens), config)
            except RydcritError as exc:
                raise type(exc)(f"rate {rate} ({direction}): {exc}") from exc
            out.append(KzPoint(rate=float(rate), direction=direction, delta_max=scan.delta_max, scan=scan))
    return out


# ---------------------------------------------------------------------------
# bootstrap


def bootstrap(
    data: Union[SnapshotSet, np.ndarray],
    estimator: Callable[[Any], Any],
    n_replicates: int,
    seed: Any,
    max_failure_fraction: float = 0.1,
    skew_threshold: float = 0.5,
) -> BootstrapSummary:
    """M-out-of-M resampling with full estimator re-runs.

    ``estimator`` maps a resampled dataset to a float or a 1-D array of
    floats.  Failing replicates (library errors, linear-algebra failures)
    are dropped and counted; more than ``max_failure_fraction`` failures
    aborts.  Percentile intervals (15.8/84) are attached per component when
    the replicate distribution is skewed beyond ``skew_threshold``.
    """
    if n_replicates < 2:
        raise DomainError("need at least 2 bootstrap replicates")
    if isinstance(data, SnapshotSet):
        m = data.n_snapshots
        rebuild = lambda idx: SnapshotSet(data.records[idx], data.lattice, data.provenance)
    else:
        arr = np.asarray(data)
        m = arr.shape[0]
        rebuild = lambda idx: arr[idx]
    if m < 1:
        raise DomainError("dataset is empty")
    rng = np.random.default_rng(seed)
    values = []
    n_failed = 0
    for _ in range(n_replicates):
        idx = rng.integers(0, m, size=m)
        try:
            values.append(np.asarray(estimator(rebuild(idx)), dtype=float))
        except (RydcritError, np.linalg.LinAlgError, FloatingPointError, ValueError):
            n_failed += 1
    if n_failed > max_failure_fraction * n_replicates:
        raise BootstrapUnstableError(
            f"{n_failed}/{n_replicates} replicates failed (> {max_failure_fraction:.0%})"
        )
    stack = np.stack(values)
    mean = stack.mean(axis=0)
    std = stack.std(axis=0, ddof=1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # constant slices yield nan skewness
        sk = np.nan_to_num(_skew(stack, axis=0), nan=0.0)
    scalar = stack.ndim == 1
    summary = BootstrapSummary(
        n_requested=n_replicates,
        n_failed=n_failed,
        mean=float(mean) if scalar else mean,
        std=float(std) if scalar else std,
        skewness=float(sk) if scalar else sk,
        median=float(np.median(stack, axis=0)) if scalar else np.median(stack, axis=0),
        percentile_low=float(np.percentile(stack, 15.8, axis=0))
        if scalar
        else np.percentile(stack, 15.8, axis=0),
        percentile_high=float(np.percentile(stack, 84.0, axis=0))
        if scalar
        else np.percentile(stack, 84.0, axis=0),
        asymmetric=bool(abs(sk) > skew_threshold)
        if scalar
        else np.abs(sk) > skew_threshold,
    )
    return summary
