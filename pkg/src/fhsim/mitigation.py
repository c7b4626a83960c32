"""Post-selection, symmetry averaging, affine noise learning, error bars and smoothing."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Hashable, Mapping, Sequence

import numpy as np

from .observables import TimeSeries
from .shots import ShotTable


# --------------------------------------------------------- post-selection
@dataclass
class RetentionReport:
    total: int
    retained: int
    histogram: dict  # (N_up, N_dn) -> count
    target: tuple[int, int]

    @property
    def fraction(self) -> float:
        return self.retained / self.total if self.total else 0.0

    @property
    def empty(self) -> bool:
        return self.retained == 0


def postselect(shots: ShotTable, policy: str | int = "exact", target: tuple[int, int] | None = None
               ) -> tuple[ShotTable, RetentionReport]:
    """Keep shots whose per-sector particle numbers match ``target``.

    ``policy="exact"`` keeps only exact matches; an integer ``e`` keeps shots
    with ``|N_up - t_up| + |N_dn - t_dn| <= e``. The default target is half
    filling ``(L/2, L/2)``.
    """
    L = shots.n_sites
    if target is None:
        if L % 2:
            raise ValueError("half-filling target needs an even number of sites")
        target = (L // 2, L // 2)
    hw = shots.sector_weights()
    err = np.abs(hw[:, 0] - target[0]) + np.abs(hw[:, 1] - target[1])
    if policy == "exact":
        keep = err == 0
    else:
        e = float(policy)
        if e < 0:
            raise ValueError("max_error must be non-negative")
        keep = err <= e
    hist: dict = {}
    for a, b in map(tuple, hw):
        hist[(int(a), int(b))] = hist.get((int(a), int(b)), 0) + 1
    return shots.subset(keep), RetentionReport(len(shots), int(keep.sum()), hist, tuple(target))


# ----------------------------------------------------- symmetry averaging
def spin_partner(subset: Sequence[int], n_sites: int) -> tuple[int, ...]:
    """Mode set with every mode moved to the opposite spin sector."""
    n = 2 * n_sites
    return tuple(sorted((m + n_sites) % n for m in subset))


def symmetry_average(z_map: Mapping[tuple[int, ...], float], n_sites: int) -> dict[tuple[int, ...], float]:
    """Average each Z-string value with its spin-reflected partner (when present)."""
    out = {}
    for S, v in z_map.items():
        S = tuple(sorted(S))
        P = spin_partner(S, n_sites)
        out[S] = 0.5 * (v + z_map[P]) if P in z_map and P != S else v
    return out


# --------------------------------------------------------- error bars
def twirl_error_bar(per_instance_means, per_instance_vars, N_t: int, N_s: int) -> float | np.ndarray:
    """Standard error of the pooled mean over ``N_t`` twirl instances of ``N_s`` shots.

    ``sigma^2 = sum_i (mu_i - mu)^2 / (N_t (N_t - 1)) + sum_i s_i^2 / (N_t^2 N_s)``;
    the second term is dropped when ``N_s = 1``.
    """
    if N_t < 2:
        raise ValueError("need at least two twirl instances")
    mu_i = np.asarray(per_instance_means, dtype=float)
    var_i = np.asarray(per_instance_vars, dtype=float)
    mu = mu_i.mean(axis=0)
    between = ((mu_i - mu) ** 2).sum(axis=0) / (N_t * (N_t - 1))
    within = 0.0 if N_s <= 1 else np.nan_to_num(var_i).sum(axis=0) / (N_t ** 2 * N_s)
    s = np.sqrt(between + within)
    return float(s) if np.ndim(s) == 0 else s


def naive_error_bar(values: np.ndarray) -> float:
    """Plain standard error treating all shots as one sample."""
    v = np.asarray(values, dtype=float)
    return float(v.std(ddof=1) / math.sqrt(len(v)))


@dataclass
class BootstrapResult:
    sigma: np.ndarray
    replicates: np.ndarray
    degenerate: bool = False


def resample_shots(shots: ShotTable, rng: np.random.Generator) -> ShotTable:
    """Two-level resample: twirl instances with replacement, then shots within
    each drawn instance, separately for every ``(time, U)`` group."""
    parts = []
    for _, grp in shots.groups():
        inst = grp.twirl_groups()
        pick = rng.integers(0, len(inst), size=len(inst))
        for new_id, k in enumerate(pick):
            rows = inst[k]
            rows = rows[rng.integers(0, len(rows), size=len(rows))]
            sub = grp.subset(rows)
            sub.twirl_id[:] = new_id
            parts.append(sub)
    return ShotTable.concat(parts)


def bootstrap(shots: ShotTable, pipeline: Callable[[ShotTable], object], B: int = 200, seed=None) -> BootstrapResult:
    """Standard deviation of ``pipeline`` outputs over ``B`` two-level resamples."""
    if B < 1:
        raise ValueError("B must be >= 1")
    rng = np.random.default_rng(seed)
    reps = np.array([np.asarray(pipeline(resample_shots(shots, rng)), dtype=float) for _ in range(B)])
    if B == 1:
        return BootstrapResult(np.zeros(reps.shape[1:]), reps, True)
    return BootstrapResult(reps.std(axis=0, ddof=1), reps, False)


# ------------------------------------------------------------------- TFLO
@dataclass
class TfloConfig:
    snr_threshold: float = 3.0
    prior_slope: tuple[float, float] = (1.0, 1.0)  # mean, sd when a group has no stage-1 fits
    prior_intercept: tuple[float, float] = (0.0, 0.5)
    min_prior_sd: float = 1e-3


@dataclass
class AffineFit:
    slope: float
    intercept: float
    cov: np.ndarray
    stage: int
    snr: float
    residual_rms: float


@dataclass
class TfloMap:
    """``exact ~ slope * noisy + intercept`` per observable."""

    fits: dict[Hashable, AffineFit]
    priors: dict[Hashable, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    groups: dict[Hashable, Hashable] = field(default_factory=dict)

    def __getitem__(self, label) -> AffineFit:
        return self.fits[label]

    @classmethod
    def identity(cls, labels) -> "TfloMap":
        return cls({k: AffineFit(1.0, 0.0, np.zeros((2, 2)), 0, math.inf, 0.0) for k in labels})


def default_group(label, n_sites: int | None = None) -> Hashable:
    """``(weight, acts on several sites)`` for mode-tuple labels, else one shared group."""
    if isinstance(label, tuple) and all(isinstance(m, (int, np.integer)) for m in label):
        if n_sites is None:
            return (len(label), None)
        return (len(label), len({m % n_sites for m in label}) > 1)
    return "other"


def _align(noisy: TimeSeries, exact: TimeSeries) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    idx_e = {round(float(t), 9): i for i, t in enumerate(exact.times)}
    ii, jj = [], []
    for i, t in enumerate(noisy.times):
        j = idx_e.get(round(float(t), 9))
        if j is not None:
            ii.append(i)
            jj.append(j)
    ii, jj = np.array(ii, int), np.array(jj, int)
    return noisy.values[ii], noisy.sigmas[ii], exact.values[jj]


def _ols(x, y):
    A = np.stack([x, np.ones_like(x)], axis=1)
    theta, *_ = np.linalg.lstsq(A, y, rcond=None)
    r = y - A @ theta
    dof = max(len(x) - 2, 1)
    s2 = float(r @ r) / dof
    cov = s2 * np.linalg.pinv(A.T @ A)
    return theta, cov, float(np.sqrt(np.mean(r ** 2)))


def _ridge(x, y, noise_var, mu, Sigma):
    A = np.stack([x, np.ones_like(x)], axis=1)
    P = np.linalg.inv(Sigma)
    H = A.T @ A / noise_var + P
    cov = np.linalg.inv(H)
    theta = cov @ (A.T @ y / noise_var + P @ mu)
    r = y - A @ theta
    return theta, cov, float(np.sqrt(np.mean(r ** 2)))


def tflo_fit(noisy: Mapping[Hashable, TimeSeries], exact: Mapping[Hashable, TimeSeries],
             config: TfloConfig | None = None, group_of: Callable[[Hashable], Hashable] | None = None,
             n_sites: int | None = None) -> TfloMap:
    """Learn an affine noisy-to-exact map per observable in two stages.

    Stage 1 fits by ordinary least squares every observable whose exact
    series varies by at least ``snr_threshold`` mean noisy error bars. Stage 2
    forms a Gaussian prior on (slope, intercept) per group from the stage-1
    fits and fits the remaining observables by prior-regularized least
    squares.
    """
    cfg = config or TfloConfig()
    group_of = group_of or (lambda k: default_group(k, n_sites))
    data, stage1, stage2 = {}, [], []
    for k, ns in noisy.items():
        if k not in exact:
            raise KeyError(f"no exact series for {k!r}")
        x, s, y = _align(ns, exact[k])
        if len(x) < 3:
            raise ValueError(f"{k!r}: fewer than 3 aligned time points")
        if np.ptp(x) == 0:
            raise ValueError(f"{k!r}: noisy series has zero variance")
        sig = float(np.mean(s)) if np.any(s > 0) else 0.0
        snr = math.inf if sig == 0 else float(np.ptp(y) / sig)
        data[k] = (x, s, y, snr)
        (stage1 if snr >= cfg.snr_threshold and np.ptp(y) > 0 else stage2).append(k)
    fits: dict = {}
    groups = {k: group_of(k) for k in data}
    for k in stage1:
        x, s, y, snr = data[k]
        theta, cov, rms = _ols(x, y)
        fits[k] = AffineFit(float(theta[0]), float(theta[1]), cov, 1, snr, rms)
    # per-group priors from stage-1 fits; fall back to all stage-1 fits, then the config
    all1 = np.array([[fits[k].slope, fits[k].intercept] for k in stage1]) if stage1 else np.zeros((0, 2))

    def prior_from(th):
        if len(th) >= 2:
            mu = th.mean(0)
            sd = np.maximum(th.std(0, ddof=1), cfg.min_prior_sd)
            return mu, np.diag(sd ** 2)
        if len(th) == 1:
            return th[0], np.diag([cfg.prior_slope[1] ** 2, cfg.prior_intercept[1] ** 2])
        return (np.array([cfg.prior_slope[0], cfg.prior_intercept[0]]),
                np.diag([cfg.prior_slope[1] ** 2, cfg.prior_intercept[1] ** 2]))

    priors = {}
    for g in set(groups.values()):
        th = np.array([[fits[k].slope, fits[k].intercept] for k in stage1 if groups[k] == g]).reshape(-1, 2)
        priors[g] = prior_from(th if len(th) else all1)
    for k in stage2:
        x, s, y, snr = data[k]
        mu, Sigma = priors[groups[k]]
        nv = float(np.mean(s ** 2)) if np.any(s > 0) else max(float(np.var(x)), 1e-12)
        theta, cov, rms = _ridge(x, y, nv, mu, Sigma)
        fits[k] = AffineFit(float(theta[0]), float(theta[1]), cov, 2, snr, rms)
    return TfloMap(fits, priors, groups)


def tflo_apply(fmap: TfloMap | AffineFit, noisy: TimeSeries, label: Hashable | None = None,
               provenance: str = "tflo") -> TimeSeries:
    """Map a noisy series through its affine fit; sigmas include parameter uncertainty."""
    fit = fmap if isinstance(fmap, AffineFit) else fmap[label if label is not None else noisy.label]
    x = noisy.values
    v = fit.slope * x + fit.intercept
    var = (fit.slope * noisy.sigmas) ** 2 + fit.cov[0, 0] * x ** 2 + 2 * fit.cov[0, 1] * x + fit.cov[1, 1]
    return TimeSeries(noisy.times, v, np.sqrt(np.maximum(var, 0)), noisy.label, provenance)


# -------------------------------------------------------------- smoothing
@dataclass
class SmootherConfig:
    length_scale: float = 0.6
    amplitude: float = 1.5  # kernel variance
    noise_floor: float = 1e-6
    fit_noise: bool = False
    n_particles: int = 6000
    # particle-filter scales (absolute units, calibrated once on synthetic test signals)
    value_noise: float = 0.05
    velocity_noise: float = 1.0
    velocity_decay: float = 0.7
    init_velocity_sd: float = 0.5
    n_trajectories: int = 2000

    def __post_init__(self):
        for name in ("length_scale", "amplitude", "noise_floor", "value_noise", "velocity_noise",
                     "velocity_decay", "init_velocity_sd"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.n_particles < 1 or self.n_trajectories < 1:
            raise ValueError("particle counts must be positive")


def gpr_smooth(series: TimeSeries, config: SmootherConfig | None = None,
               times: np.ndarray | None = None) -> TimeSeries:
    """Gaussian-process posterior with a fixed squared-exponential kernel.

    The observation noise is the series' own error bars (plus a small floor)
    or, with ``fit_noise``, a white-noise level fitted by marginal likelihood.
    The data mean is subtracted before the fit and added back.
    """
    from sklearn.gaussian_process import GaussianProcessRegressor
    from sklearn.gaussian_process.kernels import RBF, ConstantKernel, WhiteKernel

    cfg = config or SmootherConfig()
    if len(series) < 3:
        raise ValueError("need at least 3 points")
    t = series.times.reshape(-1, 1)
    y = series.values
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(series.sigmas)) and np.all(np.isfinite(t))):
        raise ValueError("non-finite input")
    offset = float(y.mean())
    base = ConstantKernel(cfg.amplitude, "fixed") * RBF(cfg.length_scale, "fixed")
    alpha = series.sigmas ** 2 + cfg.noise_floor
    if cfg.fit_noise:
        k = base + WhiteKernel(max(float(np.var(y)) * 0.1, 1e-4), (1e-8, 1e2))
        g = GaussianProcessRegressor(k, alpha=cfg.noise_floor, optimizer="fmin_l_bfgs_b", random_state=0)
        g.fit(t, y - offset)
        alpha = np.full(len(y), g.kernel_.k2.noise_level + cfg.noise_floor)
    gp = GaussianProcessRegressor(base, alpha=alpha, optimizer=None)
    gp.fit(t, y - offset)
    tq = series.times if times is None else np.asarray(times, dtype=float)
    mean, sd = gp.predict(tq.reshape(-1, 1), return_std=True)
    return TimeSeries(tq, mean + offset, sd, series.label, "gpr")


def _systematic(w: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = len(w)
    u = (rng.random() + np.arange(n)) / n
    return np.minimum(np.searchsorted(np.cumsum(w), u), n - 1)


@dataclass
class PfResult:
    series: TimeSeries
    velocity: np.ndarray
    restarts: list[int]


def particle_filter(series: TimeSeries, config: SmootherConfig | None = None, seed=None) -> PfResult:
    """Bootstrap particle filter over (value, velocity) with ancestry smoothing.

    Velocities decay exponentially and both components receive Gaussian
    process noise scaled by ``sqrt(dt)``. After each likelihood reweighting
    the ensemble is resampled systematically and every particle records its
    parent. Smoothed trajectories are traced backwards from particles drawn
    at the final time; their mean and spread give the output. If every
    particle sits far outside the observation error the ensemble is restarted
    around the observation and the step index is reported.
    """
    cfg = config or SmootherConfig()
    rng = np.random.default_rng(seed)
    t, y = series.times, series.values
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(t))):
        raise ValueError("non-finite input")
    n, P = len(t), cfg.n_particles
    obs_sd = np.maximum(series.sigmas, 1e-6)
    X = np.empty((n, P))
    V = np.empty((n, P))
    parent = np.zeros((n, P), np.int64)
    restarts = []
    x = y[0] + obs_sd[0] * rng.standard_normal(P)
    v = cfg.init_velocity_sd * rng.standard_normal(P)
    for k in range(n):
        if k > 0:
            dt = max(float(t[k] - t[k - 1]), 1e-12)
            v = v * cfg.velocity_decay ** dt + cfg.velocity_noise * math.sqrt(dt) * rng.standard_normal(P)
            x = x + v * dt + cfg.value_noise * math.sqrt(dt) * rng.standard_normal(P)
        z = (x - y[k]) / obs_sd[k]
        if np.min(np.abs(z)) > 6:
            restarts.append(k)
            x = y[k] + obs_sd[k] * rng.standard_normal(P)
            z = (x - y[k]) / obs_sd[k]
        logw = -0.5 * z ** 2
        w = np.exp(logw - logw.max())
        w /= w.sum()
        idx = _systematic(w, rng)
        x, v = x[idx], v[idx]
        X[k], V[k], parent[k] = x, v, idx
    # ancestry tracing from uniformly drawn final particles (weights are uniform after resampling)
    m = min(cfg.n_trajectories, P)
    cur = rng.integers(0, P, size=m)
    trajX = np.empty((n, m))
    trajV = np.empty((n, m))
    for k in range(n - 1, -1, -1):
        trajX[k] = X[k, cur]
        trajV[k] = V[k, cur]
        cur = parent[k, cur]
    ts = TimeSeries(t, trajX.mean(1), trajX.std(1), series.label, "pf")
    return PfResult(ts, trajV.mean(1), restarts)


def particle_filter_smooth(series: TimeSeries, config: SmootherConfig | None = None, seed=None) -> TimeSeries:
    return particle_filter(series, config, seed).series
