"""Scaling experiments and point checks for the high-temperature limit laws.

Each ``run_*`` experiment draws M disorder instances per system size N,
computes an error statistic Delta whose 2k-th moment should decay like
N^{-k}, estimates E[Delta^{2k}] with a percentile-bootstrap CI, and fits the
log-log slope across the N grid.  The ``check_*`` operations verify exact
finite-N identities (no asymptotics involved): the fundamental identity
<sigma_i> = <tanh(beta l_i + h)>, the interpolation covariance and
derivative identities, and the stability of the fixed point q under the
one-spin temperature reduction.

Every experiment is a pure function of its config: per-sample seeds are
derived from (master_seed, N, sample_index), so results are identical for
any worker count and rerunning a config reproduces its report bit for bit.
The q entering any statistic is always the solved fixed point at the
experiment's (beta, h), never an empirical overlap average.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import simpson

from .core_model import (
    Disorder,
    ModelParams,
    derive_seed,
    sample_disorder,
    standard_normals,
)
from .gibbs_exact import (
    DiscreteFieldLaw,
    EnumerationCapacityError,
    ENUMERATION_CAP,
    config_batch,
    enumerate_gibbs,
    gibbs_weights,
    linear_field_table,
    magnetizations_from_weights,
    replica_second_moments,
)
from .mcmc import ChainConfig, run_chain
from .stats import bootstrap_mean, empirical_moment, gauss_hermite, ks_distance
from .theory import (
    Cosine,
    TestFunction,
    gaussian_cdf,
    gaussian_expectation,
    mixture_density,
    mixture_expectation,
    mixture_prediction,
    solve_q,
    tap_rhs,
)

DEFAULT_N_GRID = (8, 10, 12, 14, 16, 18, 20)
IDENTITY_CAP = 14  # fundamental-identity check enumerates per site


# ---------------------------------------------------------------------------
# configuration and report types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    """Parameters of one scaling experiment.

    ``n_disorder_samples`` is the number M of independent disorder draws per
    N; the moment order is 2k.  ``chain`` is only consulted for the mcmc
    backend.
    """

    beta: float
    h: float
    k: int = 1
    n_grid: Tuple[int, ...] = DEFAULT_N_GRID
    n_disorder_samples: int = 400
    backend: str = "exact"
    chain: Optional[ChainConfig] = None
    test_function: TestFunction = Cosine(1.0)
    master_seed: int = 20250809
    quad_order: int = 40
    n_bootstrap: int = 1000
    compute_ks: bool = True
    workers: int = 1

    def __post_init__(self):
        if not 0.0 <= self.beta < 0.5:
            raise ValueError(f"experiments require 0 <= beta < 0.5, got {self.beta}")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        grid = tuple(int(n) for n in self.n_grid)
        if grid != tuple(sorted(grid)) or len(grid) == 0 or grid[0] < 1:
            raise ValueError("n_grid must be a nonempty ascending sequence of N >= 1")
        object.__setattr__(self, "n_grid", grid)
        if self.backend not in ("exact", "mcmc"):
            raise ValueError(f"backend must be 'exact' or 'mcmc', got {self.backend!r}")
        if self.backend == "exact" and grid[-1] > ENUMERATION_CAP:
            raise EnumerationCapacityError(
                f"exact backend caps N at {ENUMERATION_CAP}, grid reaches {grid[-1]}"
            )
        if self.backend == "mcmc" and self.chain is None:
            raise ValueError("the mcmc backend needs a ChainConfig")
        if self.n_disorder_samples < 20:
            raise ValueError("need at least 20 disorder samples per N")
        if self.quad_order < 2:
            raise ValueError("quad_order must be >= 2")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def to_dict(self) -> dict:
        return {
            "beta": self.beta,
            "h": self.h,
            "k": self.k,
            "n_grid": list(self.n_grid),
            "n_disorder_samples": self.n_disorder_samples,
            "backend": self.backend,
            "chain": None
            if self.chain is None
            else {
                "n_samples": self.chain.n_samples,
                "burnin_sweeps": self.chain.burnin_sweeps,
                "thinning": self.chain.thinning,
                "seed": self.chain.seed,
            },
            "test_function": self.test_function.to_dict(),
            "master_seed": self.master_seed,
            "quad_order": self.quad_order,
            "n_bootstrap": self.n_bootstrap,
            "compute_ks": self.compute_ks,
            "workers": self.workers,
        }

    @classmethod
    def from_dict(cls, spec: dict) -> "ExperimentConfig":
        spec = dict(spec)
        if "chain" in spec and spec["chain"] is not None:
            spec["chain"] = ChainConfig(**spec["chain"])
        if "test_function" in spec and isinstance(spec["test_function"], dict):
            spec["test_function"] = TestFunction.from_dict(spec["test_function"])
        if "n_grid" in spec:
            spec["n_grid"] = tuple(spec["n_grid"])
        return cls(**spec)


@dataclass(frozen=True)
class ScalingRow:
    """Moment estimate for one system size."""

    n_spins: int
    n_samples: int
    moment: float
    ci_low: float
    ci_high: float
    n_effective: int
    se: float
    ks_median: Optional[float] = None


@dataclass
class ScalingReport:
    """Per-N moment table plus the fitted log-log scaling exponent.

    ``slope`` is None when a fit is impossible (some moment is exactly zero,
    as in the linear-test-function null).
    """

    statistic: str
    k: int
    rows: List[ScalingRow]
    slope: Optional[float]
    intercept: Optional[float]
    slope_se: Optional[float]
    extras: Dict[str, float] = field(default_factory=dict)


def fit_scaling(
    points: Sequence[Tuple[float, float, Optional[float]]],
) -> Tuple[float, float, float]:
    """Weighted least-squares fit of log(moment) against log(N).

    ``points`` holds (N, moment, se) triples.  Per-point variances on the
    log scale are (se / moment)**2 by the delta method; if any se is
    missing, zero, or non-finite the fit falls back to ordinary least
    squares with a residual-based slope error.  Returns
    (slope, intercept, slope_se).
    """
    pts = list(points)
    if len(pts) < 3:
        raise ValueError(f"need >= 3 points to fit, got {len(pts)}")
    n = np.array([p[0] for p in pts], dtype=np.float64)
    moment = np.array([p[1] for p in pts], dtype=np.float64)
    se = np.array(
        [np.nan if p[2] is None else float(p[2]) for p in pts], dtype=np.float64
    )
    if np.any(moment <= 0):
        raise ValueError(
            "all moments must be > 0 to fit on a log scale; "
            "increase the number of disorder samples"
        )
    x = np.log(n)
    y = np.log(moment)
    use_weights = bool(np.all(np.isfinite(se)) and np.all(se > 0))
    weight = (moment / se) ** 2 if use_weights else np.ones_like(x)
    sw = weight.sum()
    xbar = (weight * x).sum() / sw
    ybar = (weight * y).sum() / sw
    sxx = (weight * (x - xbar) ** 2).sum()
    if sxx <= 0:
        raise ValueError("need at least two distinct N values")
    slope = (weight * (x - xbar) * (y - ybar)).sum() / sxx
    intercept = ybar - slope * xbar
    if use_weights:
        # per-point variances taken as known: Var(slope) = 1 / sum_i w_i (x_i - xbar)^2
        slope_se = math.sqrt(1.0 / sxx)
    else:
        resid = y - (intercept + slope * x)
        dof = max(len(pts) - 2, 1)
        slope_se = math.sqrt(float((resid**2).sum()) / dof / sxx)
    return float(slope), float(intercept), float(slope_se)


def _finish_report(statistic: str, k: int, rows: List[ScalingRow]) -> ScalingReport:
    slope = intercept = slope_se = None
    if all(row.moment > 0 for row in rows) and len(rows) >= 3:
        slope, intercept, slope_se = fit_scaling(
            [(row.n_spins, row.moment, row.se) for row in rows]
        )
    return ScalingReport(
        statistic=statistic, k=k, rows=rows, slope=slope,
        intercept=intercept, slope_se=slope_se,
    )


def _map_indexed(worker: Callable, args: list, workers: int) -> list:
    if workers <= 1 or len(args) <= 1:
        return [worker(a) for a in args]
    chunk = max(1, len(args) // (workers * 8))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(worker, args, chunksize=chunk))


def _moment_row(
    cfg: ExperimentConfig,
    statistic: str,
    n: int,
    deltas: np.ndarray,
    ks_values: List[float],
) -> ScalingRow:
    finite = np.isfinite(deltas)
    kept = deltas[finite]
    mom = empirical_moment(
        kept,
        2 * cfg.k,
        n_boot=cfg.n_bootstrap,
        seed=derive_seed(cfg.master_seed, f"bootstrap:{statistic}:{n}"),
    )
    return ScalingRow(
        n_spins=n,
        n_samples=cfg.n_disorder_samples,
        moment=mom.estimate,
        ci_low=mom.ci_low,
        ci_high=mom.ci_high,
        n_effective=int(finite.sum()),
        se=mom.se,
        ks_median=float(np.median(ks_values)) if ks_values else None,
    )


def _sample_disorder_for(cfg: ExperimentConfig, n: int, idx: int) -> Tuple[ModelParams, Disorder]:
    params = ModelParams(n_spins=n, beta=cfg.beta, h=cfg.h)
    disorder = sample_disorder(params, derive_seed(cfg.master_seed, f"disorder:{n}", idx))
    return params, disorder


def _chain_for(cfg: ExperimentConfig, n: int, idx: int) -> ChainConfig:
    return replace(cfg.chain, seed=derive_seed(cfg.master_seed, f"chain:{n}", idx))


# ---------------------------------------------------------------------------
# cavity-field CLT: <U(l)> vs N(r, 1-q), plain and centered
# ---------------------------------------------------------------------------


def _cavity_worker(args) -> Tuple[float, Optional[float]]:
    cfg, q, n, idx, centered = args
    params, disorder = _sample_disorder_for(cfg, n, idx)
    g = standard_normals(derive_seed(cfg.master_seed, f"cavity:{n}", idx), n)
    variance = 1.0 - q
    u = cfg.test_function
    if cfg.backend == "exact":
        _, w = gibbs_weights(params, disorder)
        values = linear_field_table(g / math.sqrt(n))
        r = float(w @ values)
        x = values - r if centered else values
        stat = float(w @ np.asarray(u.value(x), dtype=np.float64))
        weights = w
    else:
        est = run_chain(params, disorder, _chain_for(cfg, n, idx), keep_samples=True)
        values = est.samples.astype(np.float64) @ (g / math.sqrt(n))
        r = float(values.mean())
        x = values - r if centered else values
        stat = float(np.asarray(u.value(x), dtype=np.float64).mean())
        weights = None
    mean_ref = 0.0 if centered else r
    ref = gaussian_expectation(u, mean_ref, variance, cfg.quad_order)
    delta = stat - ref
    ks = None
    if cfg.compute_ks and weights is not None:
        law = DiscreteFieldLaw.from_samples(x, weights)
        ks = ks_distance(law, lambda v: gaussian_cdf(v, mean_ref, variance))
    return delta, ks


def _run_cavity(cfg: ExperimentConfig, centered: bool, statistic: str) -> ScalingReport:
    q = solve_q(cfg.beta, cfg.h, quad_order=cfg.quad_order).q
    rows = []
    for n in cfg.n_grid:
        args = [(cfg, q, n, idx, centered) for idx in range(cfg.n_disorder_samples)]
        results = _map_indexed(_cavity_worker, args, cfg.workers)
        deltas = np.array([res[0] for res in results])
        ks_values = [res[1] for res in results if res[1] is not None]
        rows.append(_moment_row(cfg, statistic, n, deltas, ks_values))
    return _finish_report(statistic, cfg.k, rows)


def run_cavity_clt(cfg: ExperimentConfig) -> ScalingReport:
    """Scaling of <U(l)> - E[U(X)], X ~ N(r, 1-q), over the N grid.

    Exact backend: <U(l)> and r = <l> by enumeration, plus (optionally) the
    per-sample KS distance between the exact Gibbs law of l and the
    predicted Gaussian CDF.
    """
    return _run_cavity(cfg, centered=False, statistic="cavity_clt")


def run_centered_cavity_clt(cfg: ExperimentConfig) -> ScalingReport:
    """Same protocol with the centered statistic <U(l - r)> vs N(0, 1-q)."""
    return _run_cavity(cfg, centered=True, statistic="centered_cavity_clt")


# ---------------------------------------------------------------------------
# local-field CLT: <U(l_i)> vs the two-Gaussian mixture
# ---------------------------------------------------------------------------

_MIXTURE_NORM_POINTS = 16385


def _mixture_norm_error(mp) -> float:
    lo_mean, hi_mean = min(mp.means), max(mp.means)
    sd = math.sqrt(mp.variance)
    xs = np.linspace(lo_mean - 13.0 * sd, hi_mean + 13.0 * sd, _MIXTURE_NORM_POINTS)
    return abs(float(simpson(mixture_density(xs, mp), x=xs)) - 1.0)


def _local_worker(args) -> Tuple[float, float]:
    cfg, q, n, idx, site = args
    params, disorder = _sample_disorder_for(cfg, n, idx)
    u = cfg.test_function
    if cfg.backend == "exact":
        _, w = gibbs_weights(params, disorder)
        m = magnetizations_from_weights(w, n)
    else:
        est = run_chain(params, disorder, _chain_for(cfg, n, idx), keep_samples=True)
        m = est.magnetizations
    sites = range(1, n + 1) if site is None else (site,)
    deltas = []
    norm_err = 0.0
    for s in sites:
        i = s - 1
        gamma = float(disorder.couplings[i] @ m) / math.sqrt(n) - params.beta * (
            1.0 - q
        ) * float(m[i])
        mp = mixture_prediction(gamma, params.beta, params.h, q)
        if cfg.backend == "exact":
            values = linear_field_table(disorder.couplings[i] / math.sqrt(n))
            stat = float(w @ np.asarray(u.value(values), dtype=np.float64))
        else:
            values = est.samples.astype(np.float64) @ (
                disorder.couplings[i] / math.sqrt(n)
            )
            stat = float(np.asarray(u.value(values), dtype=np.float64).mean())
        ref = mixture_expectation(u, mp, cfg.quad_order)
        deltas.append(stat - ref)
        norm_err = max(norm_err, _mixture_norm_error(mp))
    return float(np.mean(deltas)), norm_err


def run_local_clt(
    cfg: ExperimentConfig,
    site: Optional[int] = 1,
    allow_mcmc_backend: bool = False,
) -> ScalingReport:
    """Scaling of <U(l_i)> minus the mixture expectation at site i.

    ``site=None`` averages the statistic over all sites; otherwise the fixed
    1-based site is used.  The exact backend is required by default because
    the mixture parameters gamma_i, p_i are built from the magnetizations:
    sampling error there biases the statistic.  Pass
    ``allow_mcmc_backend=True`` to accept that bias explicitly.

    The report's ``extras["mixture_norm_max_err"]`` tracks the worst
    per-sample deviation of the mixture density's integral from 1.
    """
    if cfg.backend != "exact":
        if not allow_mcmc_backend:
            raise ValueError(
                "run_local_clt needs the exact backend (mcmc magnetization noise "
                "biases the mixture parameters); pass allow_mcmc_backend=True "
                "to override"
            )
        warnings.warn(
            "mcmc backend for the local-field statistic: magnetization noise "
            "enters gamma_i quadratically and biases the fitted moments",
            stacklevel=2,
        )
    if site is not None and site < 1:
        raise ValueError("site must be a 1-based index or None")
    q = solve_q(cfg.beta, cfg.h, quad_order=cfg.quad_order).q
    rows = []
    worst_norm = 0.0
    statistic = "local_clt"
    for n in cfg.n_grid:
        if site is not None and site > n:
            raise ValueError(f"site {site} is out of range for N = {n}")
        args = [(cfg, q, n, idx, site) for idx in range(cfg.n_disorder_samples)]
        results = _map_indexed(_local_worker, args, cfg.workers)
        deltas = np.array([res[0] for res in results])
        worst_norm = max(worst_norm, max(res[1] for res in results))
        rows.append(_moment_row(cfg, statistic, n, deltas, []))
    report = _finish_report(statistic, cfg.k, rows)
    report.extras["mixture_norm_max_err"] = worst_norm
    return report


# ---------------------------------------------------------------------------
# TAP residual: <sigma_i> vs tanh(beta gamma_i + h)
# ---------------------------------------------------------------------------


def _tap_worker(args) -> Tuple[float, Optional[float]]:
    cfg, q, n, idx, site = args
    params, disorder = _sample_disorder_for(cfg, n, idx)
    if cfg.backend == "exact":
        _, w = gibbs_weights(params, disorder)
        m = magnetizations_from_weights(w, n)
    else:
        m = run_chain(params, disorder, _chain_for(cfg, n, idx)).magnetizations
    sites = range(1, n + 1) if site is None else (site,)
    deltas = [
        float(m[s - 1]) - tap_rhs(params, disorder, m, q, s) for s in sites
    ]
    return float(np.mean(deltas)), None


def run_tap_residual(
    cfg: ExperimentConfig,
    site: Optional[int] = 1,
    allow_mcmc_backend: bool = False,
) -> ScalingReport:
    """Scaling of the TAP residual <sigma_i> - tanh(beta gamma_i + h)."""
    if cfg.backend != "exact":
        if not allow_mcmc_backend:
            raise ValueError(
                "run_tap_residual needs exact magnetizations; pass "
                "allow_mcmc_backend=True to accept sampling bias"
            )
        warnings.warn(
            "mcmc backend for the TAP residual: magnetization noise inflates "
            "the fitted moments",
            stacklevel=2,
        )
    q = solve_q(cfg.beta, cfg.h, quad_order=cfg.quad_order).q
    statistic = "tap_residual"
    rows = []
    for n in cfg.n_grid:
        if site is not None and site > n:
            raise ValueError(f"site {site} is out of range for N = {n}")
        args = [(cfg, q, n, idx, site) for idx in range(cfg.n_disorder_samples)]
        results = _map_indexed(_tap_worker, args, cfg.workers)
        deltas = np.array([res[0] for res in results])
        rows.append(_moment_row(cfg, statistic, n, deltas, []))
    return _finish_report(statistic, cfg.k, rows)


# ---------------------------------------------------------------------------
# overlap / T-statistic concentration
# ---------------------------------------------------------------------------

OVERLAP_STATISTICS = ("overlap", "t_i", "t_ii", "t_ij")


def _overlap_worker(args) -> Tuple[float, float, float, float]:
    cfg, q, n, idx = args
    params, disorder = _sample_disorder_for(cfg, n, idx)
    overlap_m2, tstats = replica_second_moments(params, disorder, q)
    return overlap_m2, tstats.m_ti, tstats.m_tii, tstats.m_tij


def run_overlap_concentration(cfg: ExperimentConfig) -> Dict[str, ScalingReport]:
    """Disorder averages of the exact quenched second moments
    <(R_12 - q)^2>, <T_1^2>, <T_{1,1}^2>, <T_{1,2}^2> across the N grid.

    Returns one ScalingReport per statistic, keyed by OVERLAP_STATISTICS.
    The per-sample values are already second moments, so the per-N estimate
    is their plain disorder mean (bootstrap CI), and the target slope for
    each series is -1.
    """
    if cfg.backend != "exact":
        raise ValueError("overlap concentration requires the exact backend")
    q = solve_q(cfg.beta, cfg.h, quad_order=cfg.quad_order).q
    per_stat_rows: Dict[str, List[ScalingRow]] = {s: [] for s in OVERLAP_STATISTICS}
    for n in cfg.n_grid:
        args = [(cfg, q, n, idx) for idx in range(cfg.n_disorder_samples)]
        results = np.array(_map_indexed(_overlap_worker, args, cfg.workers))
        for col, name in enumerate(OVERLAP_STATISTICS):
            values = results[:, col]
            mom = bootstrap_mean(
                values,
                n_boot=cfg.n_bootstrap,
                seed=derive_seed(cfg.master_seed, f"bootstrap:{name}:{n}"),
            )
            per_stat_rows[name].append(
                ScalingRow(
                    n_spins=n,
                    n_samples=cfg.n_disorder_samples,
                    moment=mom.estimate,
                    ci_low=mom.ci_low,
                    ci_high=mom.ci_high,
                    n_effective=int(np.isfinite(values).sum()),
                    se=mom.se,
                )
            )
    return {
        name: _finish_report(name, 1, rows) for name, rows in per_stat_rows.items()
    }


# ---------------------------------------------------------------------------
# exact identity checks
# ---------------------------------------------------------------------------


def check_fundamental_identity(params: ModelParams, disorder: Disorder) -> float:
    """max_i |<sigma_i> - <tanh(beta l_i + h)>|, both sides by enumeration."""
    n = params.n_spins
    if n > IDENTITY_CAP:
        raise EnumerationCapacityError(
            f"fundamental-identity check caps N at {IDENTITY_CAP}, got {n}"
        )
    _, w = gibbs_weights(params, disorder)
    m = magnetizations_from_weights(w, n)
    worst = 0.0
    sqrt_n = math.sqrt(n)
    for i in range(n):
        values = linear_field_table(disorder.couplings[i] / sqrt_n)
        lhs = float(w @ np.tanh(params.beta * values + params.h))
        worst = max(worst, abs(lhs - float(m[i])))
    return worst


@dataclass(frozen=True, eq=False)
class InterpolationProbe:
    """Frozen replica pair and interpolation time for the covariance checks.

    The interpolated fields are u_i(t) = sqrt(t) (l^i - r) + sqrt(1-t) xi^i
    with l^i = g . sigma^i / sqrt(N), r = g . m / sqrt(N), g a fresh standard
    Gaussian vector and xi^i ~ N(0, 1-q); ``stream_seed`` drives the (g, xi)
    Monte Carlo streams.
    """

    t: float
    sigma1: np.ndarray
    sigma2: np.ndarray
    stream_seed: int

    def __post_init__(self):
        if not 0.0 < self.t < 1.0:
            raise ValueError(
                f"t must lie strictly inside (0, 1): u'(t) has sqrt(t) and "
                f"sqrt(1-t) poles at the endpoints (got {self.t})"
            )
        for name in ("sigma1", "sigma2"):
            arr = np.asarray(getattr(self, name))
            if arr.ndim != 1 or not np.all(np.abs(arr) == 1):
                raise ValueError(f"{name} must be a 1-D +-1 configuration")
            object.__setattr__(self, name, arr.astype(np.int8))


def sample_gibbs_configs(
    params: ModelParams, disorder: Disorder, n_configs: int, seed: int
) -> np.ndarray:
    """Draw exact i.i.d. configurations from the Gibbs measure (small N)."""
    n = params.n_spins
    _, w = gibbs_weights(params, disorder)
    rng = np.random.Generator(np.random.PCG64(seed))
    codes = rng.choice(1 << n, size=n_configs, p=w / w.sum())
    return np.vstack([config_batch(n, c, c + 1)[0] for c in codes])


def make_interpolation_probe(
    params: ModelParams, disorder: Disorder, t: float, seed: int
) -> InterpolationProbe:
    """Freeze two exact Gibbs replicas and a stream seed into a probe."""
    configs = sample_gibbs_configs(
        params, disorder, 2, derive_seed(seed, "probe-configs")
    )
    return InterpolationProbe(
        t=t, sigma1=configs[0], sigma2=configs[1],
        stream_seed=derive_seed(seed, "probe-streams"),
    )


@dataclass(frozen=True)
class CovarianceIdentityRow:
    name: str
    estimate: float
    closed_form: float
    se: float
    deviation_se: float


@dataclass
class CovarianceCheckReport:
    t: float
    n_samples: int
    rows: List[CovarianceIdentityRow]

    def max_deviation_se(self) -> float:
        return max(row.deviation_se for row in self.rows)


_MC_CHUNK = 1 << 14


class _StreamingMoments:
    """Accumulate mean and per-mean standard error over sample chunks."""

    def __init__(self):
        self.n = 0
        self.total = 0.0
        self.total_sq = 0.0

    def add(self, values: np.ndarray) -> None:
        self.n += values.size
        self.total += float(values.sum())
        self.total_sq += float((values**2).sum())

    @property
    def mean(self) -> float:
        return self.total / self.n

    @property
    def se(self) -> float:
        var = max(self.total_sq / self.n - self.mean**2, 0.0) * self.n / (self.n - 1)
        return math.sqrt(var / self.n)


def check_interpolation_covariances(
    probe: InterpolationProbe,
    params: ModelParams,
    disorder: Disorder,
    mc_samples: int,
) -> CovarianceCheckReport:
    """Monte Carlo check of the interpolation covariance identities.

    E_0[u_1'(t) u_1(t)] = T_{1,1}/2, E_0[u_1'(t) u_2(t)] = T_{1,2}/2 and
    E_0[u_1'(t) r] = T_1 / (2 sqrt(t)), with the T statistics evaluated at
    the probe's frozen replicas and the exact magnetizations.  Estimates are
    reported with their standard errors and deviations in SE units.
    """
    n = params.n_spins
    if probe.sigma1.size != n or probe.sigma2.size != n:
        raise ValueError("probe configurations do not match N")
    if mc_samples < 2:
        raise ValueError("need at least 2 Monte Carlo samples")
    m = enumerate_gibbs(params, disorder, include_pairs=False).magnetizations
    q = solve_q(params.beta, params.h).q
    sdot1 = probe.sigma1 - m
    sdot2 = probe.sigma2 - m
    t11 = float(sdot1 @ sdot1) / n - (1.0 - q)
    t12 = float(sdot1 @ sdot2) / n
    t1 = float(sdot1 @ m) / n
    t = probe.t
    closed = {
        "u1'.u1": t11 / 2.0,
        "u1'.u2": t12 / 2.0,
        "u1'.r": t1 / (2.0 * math.sqrt(t)),
    }
    acc = {name: _StreamingMoments() for name in closed}
    sqrt_n = math.sqrt(n)
    sd = math.sqrt(1.0 - q)
    s1 = probe.sigma1.astype(np.float64)
    s2 = probe.sigma2.astype(np.float64)
    done = 0
    chunk_idx = 0
    while done < mc_samples:
        block = min(_MC_CHUNK, mc_samples - done)
        g = standard_normals(
            derive_seed(probe.stream_seed, "g", chunk_idx), (block, n)
        )
        xi1 = sd * standard_normals(derive_seed(probe.stream_seed, "xi1", chunk_idx), block)
        xi2 = sd * standard_normals(derive_seed(probe.stream_seed, "xi2", chunk_idx), block)
        l1 = g @ s1 / sqrt_n
        l2 = g @ s2 / sqrt_n
        r = g @ m / sqrt_n
        a1 = l1 - r
        a2 = l2 - r
        u1 = math.sqrt(t) * a1 + math.sqrt(1.0 - t) * xi1
        u2 = math.sqrt(t) * a2 + math.sqrt(1.0 - t) * xi2
        u1p = a1 / (2.0 * math.sqrt(t)) - xi1 / (2.0 * math.sqrt(1.0 - t))
        acc["u1'.u1"].add(u1p * u1)
        acc["u1'.u2"].add(u1p * u2)
        acc["u1'.r"].add(u1p * r)
        done += block
        chunk_idx += 1
    rows = []
    for name, target in closed.items():
        est = acc[name]
        rows.append(
            CovarianceIdentityRow(
                name=name,
                estimate=est.mean,
                closed_form=target,
                se=est.se,
                deviation_se=abs(est.mean - target) / est.se,
            )
        )
    return CovarianceCheckReport(t=t, n_samples=mc_samples, rows=rows)


@dataclass
class DerivativeCheckReport:
    """Finite difference of phi(t) = E_0[V(u_1,r) V(u_2,r)] vs the
    integration-by-parts expansion, estimated with common random numbers."""

    t: float
    dt: float
    n_samples: int
    finite_difference: float
    fd_se: float
    lemma_rhs: float
    rhs_se: float
    diff_mean: float
    diff_se: float
    deviation_se: float


def check_interpolation_derivative(
    params: ModelParams,
    disorder: Disorder,
    U: TestFunction,
    t: float,
    dt: float,
    mc_samples: int,
    seed: int = 0,
    quad_order: int = 40,
) -> DerivativeCheckReport:
    """Compare (phi(t+dt) - phi(t-dt)) / (2 dt) against the derivative formula.

    phi(t) = E_0[V(u_1(t), r) V(u_2(t), r)] with V(x, y) = U(x + y) -
    E_xi[U(xi + y)], the replicas drawn exactly from the Gibbs measure and
    frozen.  Both estimates use the same (g, xi) draws, so the reported
    difference collapses to the Monte Carlo noise of the mismatch.
    """
    if not (0.0 < t - dt and t + dt < 1.0):
        raise ValueError("need 0 < t - dt and t + dt < 1")
    if mc_samples < 2:
        raise ValueError("need at least 2 Monte Carlo samples")
    n = params.n_spins
    _, w = gibbs_weights(params, disorder)
    m = magnetizations_from_weights(w, n)
    q = solve_q(params.beta, params.h).q
    configs = sample_gibbs_configs(params, disorder, 2, derive_seed(seed, "derivative-configs"))
    s1 = configs[0].astype(np.float64)
    s2 = configs[1].astype(np.float64)
    sdot1 = s1 - m
    sdot2 = s2 - m
    t11 = float(sdot1 @ sdot1) / n - (1.0 - q)
    t22 = float(sdot2 @ sdot2) / n - (1.0 - q)
    t12 = float(sdot1 @ sdot2) / n
    t1 = float(sdot1 @ m) / n
    t2 = float(sdot2 @ m) / n

    rule = gauss_hermite(quad_order)
    sd = math.sqrt(1.0 - q)
    nodes = sd * rule.nodes
    qw = rule.weights
    sqrt_n = math.sqrt(n)
    inv_2sqrt_t = 1.0 / (2.0 * math.sqrt(t))

    fd_acc = _StreamingMoments()
    rhs_acc = _StreamingMoments()
    diff_acc = _StreamingMoments()
    stream_seed = derive_seed(seed, "derivative-streams")
    done = 0
    chunk_idx = 0
    while done < mc_samples:
        block = min(_MC_CHUNK, mc_samples - done)
        g = standard_normals(derive_seed(stream_seed, "g", chunk_idx), (block, n))
        xi1 = sd * standard_normals(derive_seed(stream_seed, "xi1", chunk_idx), block)
        xi2 = sd * standard_normals(derive_seed(stream_seed, "xi2", chunk_idx), block)
        l1 = g @ s1 / sqrt_n
        l2 = g @ s2 / sqrt_n
        r = g @ m / sqrt_n
        a1 = l1 - r
        a2 = l2 - r
        # E_xi[U(xi + r)] and E_xi[U'(xi + r)] per sample, by quadrature
        grid = r[:, None] + nodes[None, :]
        eu_r = np.asarray(U.value(grid), dtype=np.float64) @ qw
        eu1_r = np.asarray(U.d1(grid), dtype=np.float64) @ qw

        def v_at(tt: float, a, xi):
            u = math.sqrt(tt) * a + math.sqrt(1.0 - tt) * xi
            return np.asarray(U.value(u + r), dtype=np.float64) - eu_r, u

        v1_plus, _ = v_at(t + dt, a1, xi1)
        v2_plus, _ = v_at(t + dt, a2, xi2)
        v1_minus, _ = v_at(t - dt, a1, xi1)
        v2_minus, _ = v_at(t - dt, a2, xi2)
        fd = (v1_plus * v2_plus - v1_minus * v2_minus) / (2.0 * dt)

        v1, u1 = v_at(t, a1, xi1)
        v2, u2 = v_at(t, a2, xi2)
        up1 = np.asarray(U.d1(u1 + r), dtype=np.float64)
        up2 = np.asarray(U.d1(u2 + r), dtype=np.float64)
        upp1 = np.asarray(U.d2(u1 + r), dtype=np.float64)
        upp2 = np.asarray(U.d2(u2 + r), dtype=np.float64)
        rhs = (
            0.5 * (t11 * upp1 * v2 + t22 * upp2 * v1)
            + t12 * up1 * up2
            + inv_2sqrt_t * (t1 * upp1 * v2 + t2 * upp2 * v1)
            + inv_2sqrt_t * (t1 * up1 * (up2 - eu1_r) + t2 * up2 * (up1 - eu1_r))
        )
        fd_acc.add(fd)
        rhs_acc.add(rhs)
        diff_acc.add(fd - rhs)
        done += block
        chunk_idx += 1
    return DerivativeCheckReport(
        t=t,
        dt=dt,
        n_samples=mc_samples,
        finite_difference=fd_acc.mean,
        fd_se=fd_acc.se,
        lemma_rhs=rhs_acc.mean,
        rhs_se=rhs_acc.se,
        diff_mean=diff_acc.mean,
        diff_se=diff_acc.se,
        deviation_se=abs(diff_acc.mean) / diff_acc.se,
    )


# ---------------------------------------------------------------------------
# q vs q_minus
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QMinusRow:
    n_spins: int
    q: float
    q_minus: float
    scaled_gap: float  # N * |q - q_minus|


def check_q_minus(beta: float, h: float, n_grid: Sequence[int]) -> List[QMinusRow]:
    """Solve q at beta and at beta_minus = beta sqrt((N-1)/N) for each N.

    The scaled gap N |q - q_minus| staying bounded (flat up to a modest
    factor) is the numerical signature of the |q - q_minus| <= L/N bound.
    """
    base = solve_q(beta, h)
    rows = []
    for n in n_grid:
        if n < 2:
            raise ValueError("q_minus needs N >= 2")
        beta_minus = beta * math.sqrt((n - 1) / n)
        reduced = solve_q(beta_minus, h)
        rows.append(
            QMinusRow(
                n_spins=int(n),
                q=base.q,
                q_minus=reduced.q,
                scaled_gap=n * abs(base.q - reduced.q),
            )
        )
    return rows
