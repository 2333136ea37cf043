# montecarlo.py
#  Replicated experiments on simulated Neyman-Scott panels.
#
#  Replication r at grid point k draws its panel from
#      seed = derive_seed(master_seed, k, r)
#  so a replication never depends on any other one. Blocks of replications
#  run in worker processes and are written back by index, which makes the
#  output identical for every worker count.
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import (
    ABS_BIAS_TOLERANCE,
    DEFAULT_M,
    DEFAULT_MASTER_SEED,
    DEFAULT_N_GRID,
    DEFAULT_REPLICATIONS,
    DEFAULT_SIGMA2,
    SE_TOLERANCE,
)
from likelihood import mle_closed_form, within_group_ss
from model_core import (
    MeanScheme,
    ModelSpec,
    PanelData,
    as_scheme,
    default_scheme,
    derive_seed,
    generate_panel,
    make_spec,
    scheme_to_dict,
)
from recast import contrast_transform, cramer_rao_bound, sigma2_mle_recast
from utils import ConfigError, json_float

logger = logging.getLogger(__name__)

NAIVE = "naive"
RECAST = "recast"
BIAS_CORRECTED = "bias_corrected_naive"
MU_HAT_1 = "mu_hat_1"

# columns of the per-replication estimate block
_COL_NAIVE, _COL_RECAST, _COL_MU1 = 0, 1, 2


# ================= CONFIG & RESULT TYPES =================

@dataclass(frozen=True)
class ExperimentConfig:
    sigma2: float = DEFAULT_SIGMA2
    m: int = DEFAULT_M
    n_grid: Tuple[int, ...] = DEFAULT_N_GRID
    replications: int = DEFAULT_REPLICATIONS
    master_seed: int = DEFAULT_MASTER_SEED
    scheme: MeanScheme = field(default_factory=default_scheme)

    def __post_init__(self):
        grid = tuple(int(v) for v in self.n_grid)
        object.__setattr__(self, "n_grid", grid)
        if not grid:
            raise ConfigError("n_grid must not be empty")
        if any(v < 1 for v in grid):
            raise ConfigError(f"n_grid entries must be >= 1, got {list(grid)}")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError(f"n_grid must be strictly ascending, got {list(grid)}")
        if int(self.replications) != self.replications or self.replications < 1:
            raise ConfigError(f"replications must be an integer >= 1, got {self.replications}")
        if int(self.m) != self.m or self.m < 2:
            raise ConfigError(f"m must be >= 2, got {self.m}")
        if not self.sigma2 > 0:
            raise ConfigError(f"sigma2 must be > 0, got {self.sigma2}")
        object.__setattr__(self, "replications", int(self.replications))
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "sigma2", float(self.sigma2))
        object.__setattr__(self, "master_seed", int(self.master_seed))

    def spec_for(self, n: int) -> ModelSpec:
        return make_spec(self.m, n, self.sigma2, self.scheme)

    def to_dict(self) -> dict:
        return {
            "sigma2": self.sigma2,
            "m": self.m,
            "n_grid": list(self.n_grid),
            "replications": self.replications,
            "master_seed": self.master_seed,
            "scheme": scheme_to_dict(self.scheme),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        kwargs = {}
        for key in ("sigma2", "m", "n_grid", "replications", "master_seed"):
            if d.get(key) is not None:
                kwargs[key] = d[key]
        if d.get("scheme") is not None:
            kwargs["scheme"] = as_scheme(d["scheme"])
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e


@dataclass(frozen=True)
class EstimatorSummary:
    estimator_name: str
    n: int
    replications: int
    mean: float
    bias: float
    variance: float
    mse: float
    std_error_of_mean: float
    crlb_ratio: Optional[float] = None
    predicted_mean: Optional[float] = None
    se_variance: float = 0.0
    low_replication: bool = False

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator_name,
            "n": self.n,
            "R": self.replications,
            "mean": json_float(self.mean),
            "bias": json_float(self.bias),
            "variance": json_float(self.variance),
            "mse": json_float(self.mse),
            "se_mean": json_float(self.std_error_of_mean),
            "crlb_ratio": json_float(self.crlb_ratio),
            "predicted_mean": json_float(self.predicted_mean),
            "se_variance": json_float(self.se_variance),
            "low_replication": self.low_replication,
        }


@dataclass(frozen=True, eq=False)
class SamplePath:
    n_points: Tuple[int, ...]
    naive_estimates: np.ndarray
    recast_estimates: np.ndarray
    sigma2: float = DEFAULT_SIGMA2
    m: int = DEFAULT_M
    seed: int = 0
    n_max: int = 0

    def to_dict(self) -> dict:
        return {
            "sigma2": self.sigma2,
            "m": self.m,
            "seed": self.seed,
            "n_max": self.n_max,
            "n": list(self.n_points),
            "naive": [float(v) for v in self.naive_estimates],
            "recast": [float(v) for v in self.recast_estimates],
        }


@dataclass(frozen=True)
class DiagnosticReport:
    n_parameters: int
    n_observations: int
    ratio: float
    ratio_limit: float
    warning: bool
    naive_sigma2: float
    suggested_estimate: float
    message: str

    def to_dict(self) -> dict:
        return {
            "n_parameters": self.n_parameters,
            "n_observations": self.n_observations,
            "observations_per_parameter": self.ratio,
            "ratio_limit": self.ratio_limit,
            "warning": self.warning,
            "naive_sigma2": self.naive_sigma2,
            "suggested_estimate": self.suggested_estimate,
            "message": self.message,
        }


@dataclass(frozen=True)
class Verdict:
    claim: str
    observed: float
    predicted: float
    tolerance: float
    passed: bool

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{self.claim} {self.observed:.6g} vs predicted {self.predicted:.6g} (tol {self.tolerance:.3g}): {status}"

    def to_dict(self) -> dict:
        return {
            "claim": self.claim,
            "observed": json_float(self.observed),
            "predicted": json_float(self.predicted),
            "tolerance": json_float(self.tolerance),
            "passed": self.passed,
        }


# ================= REPLICATION ENGINE =================

def replication_seed(master_seed: int, k: int, r: int) -> int:
    return derive_seed(master_seed, k, r)


def _replicate_block(task) -> Tuple[int, int, np.ndarray]:
    """Worker: estimates for replications [start, stop) of grid point k."""
    spec, master_seed, k, start, stop = task
    out = np.empty((stop - start, 3))
    for r in range(start, stop):
        panel = generate_panel(spec, replication_seed(master_seed, k, r))
        theta, _ = mle_closed_form(panel)
        rec = sigma2_mle_recast(contrast_transform(panel))
        out[r - start, _COL_NAIVE] = theta.sigma2
        out[r - start, _COL_RECAST] = rec.sigma2_hat
        out[r - start, _COL_MU1] = theta.mu_hat[0]
    return k, start, out


def _blocks(replications: int, workers: int) -> List[Tuple[int, int]]:
    size = max(1, math.ceil(replications / (4 * max(1, workers))))
    return [(s, min(s + size, replications)) for s in range(0, replications, size)]


def simulate_estimates(config: ExperimentConfig, workers: int = 1) -> Dict[int, np.ndarray]:
    """
    Raw per-replication estimates: n -> (R, 3) array with columns
    (naive sigma2, recast sigma2, mu_hat_1).
    """
    if int(workers) != workers or workers < 1:
        raise ValueError(f"workers must be a positive integer, got {workers}")
    R = config.replications
    specs = [config.spec_for(n) for n in config.n_grid]
    tasks = [
        (spec, config.master_seed, k, start, stop)
        for k, spec in enumerate(specs)
        for start, stop in _blocks(R, workers)
    ]
    results = {n: np.empty((R, 3)) for n in config.n_grid}

    t0 = time.perf_counter()
    if workers == 1:
        blocks = map(_replicate_block, tasks)
        for k, start, out in blocks:
            results[config.n_grid[k]][start:start + out.shape[0]] = out
    else:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            for k, start, out in executor.map(_replicate_block, tasks):
                results[config.n_grid[k]][start:start + out.shape[0]] = out
    logger.info(
        "simulated %d replications x %d grid points in %.2fs (workers=%d)",
        R, len(config.n_grid), time.perf_counter() - t0, workers,
    )
    return results


def summarize(
    name: str,
    n: int,
    estimates: np.ndarray,
    target: float,
    predicted_mean: Optional[float] = None,
    crlb: Optional[float] = None,
) -> EstimatorSummary:
    """Mean, bias (mean - target), population variance, MSE about target and SEs."""
    est = np.asarray(estimates, dtype=float)
    R = est.shape[0]
    if R < 1:
        raise ValueError("no estimates to summarize")
    mean = float(np.mean(est))
    dev = est - mean
    variance = float(np.mean(dev * dev))
    err = est - target
    mse = float(np.mean(err * err))
    m4 = float(np.mean(dev ** 4))
    se_var = math.sqrt(max(m4 - variance * variance, 0.0) / R)
    return EstimatorSummary(
        estimator_name=name,
        n=int(n),
        replications=R,
        mean=mean,
        bias=mean - target,
        variance=variance,
        mse=mse,
        std_error_of_mean=math.sqrt(variance / R),
        crlb_ratio=(variance / crlb) if crlb else None,
        predicted_mean=predicted_mean,
        se_variance=se_var,
        low_replication=R < 2,
    )


def _summaries_from_estimates(config: ExperimentConfig, estimates: Dict[int, np.ndarray]) -> List[EstimatorSummary]:
    s2, m = config.sigma2, config.m
    correction = m / (m - 1)
    out = []
    for n in config.n_grid:
        block = estimates[n]
        crlb = cramer_rao_bound(s2, (m - 1) * n)
        naive = block[:, _COL_NAIVE]
        out.append(summarize(NAIVE, n, naive, s2, predicted_mean=(m - 1) / m * s2))
        out.append(summarize(RECAST, n, block[:, _COL_RECAST], s2, predicted_mean=s2, crlb=crlb))
        out.append(summarize(BIAS_CORRECTED, n, correction * naive, s2, predicted_mean=s2, crlb=crlb))
        if block.shape[0] < 2:
            logger.warning("n=%d: only %d replication, variances are 0", n, block.shape[0])
    return out


# ================= EXPERIMENTS =================

def run_bias_experiment(config: ExperimentConfig, workers: int = 1) -> List[EstimatorSummary]:
    """
    For every n in the grid: R panels, summaries for the naive MLE (expected
    mean (m-1)/m sigma2), the recast MLE and the bias-corrected naive
    estimator m/(m-1) * naive (both expected sigma2).
    """
    logger.info("bias experiment: %s", config.to_dict())
    return _summaries_from_estimates(config, simulate_estimates(config, workers))


def run_consistency_sweep(config: ExperimentConfig, workers: int = 1) -> List[EstimatorSummary]:
    """Bias experiment over a grid spanning at least two decades of n."""
    grid = config.n_grid
    if len(grid) < 3:
        raise ConfigError(f"a consistency sweep needs >= 3 grid points, got {list(grid)}")
    if grid[-1] < 100 * grid[0]:
        raise ConfigError(f"a consistency sweep must span >= 2 orders of magnitude, got {list(grid)}")
    return run_bias_experiment(config, workers)


def run_incidental_mean_experiment(config: ExperimentConfig, workers: int = 1) -> List[EstimatorSummary]:
    """
    Sampling distribution of mu_hat_1 at every n: its variance stays at
    sigma2/m however many groups there are.
    """
    estimates = simulate_estimates(config, workers)
    out = []
    for n in config.n_grid:
        mu1 = config.spec_for(n).mu[0]
        out.append(
            summarize(
                MU_HAT_1, n, estimates[n][:, _COL_MU1], mu1,
                predicted_mean=mu1, crlb=config.sigma2 / config.m,
            )
        )
    return out


def pick(summaries: Sequence[EstimatorSummary], estimator: str) -> List[EstimatorSummary]:
    return [s for s in summaries if s.estimator_name == estimator]


def naive_bias_flatness(summaries: Sequence[EstimatorSummary]) -> float:
    """Largest pairwise |bias_a - bias_b| / sqrt(se_a^2 + se_b^2) among naive summaries."""
    naive = pick(summaries, NAIVE)
    worst = 0.0
    for i, a in enumerate(naive):
        for b in naive[i + 1:]:
            se = math.hypot(a.std_error_of_mean, b.std_error_of_mean)
            diff = abs(a.bias - b.bias)
            if se > 0:
                worst = max(worst, diff / se)
            elif diff > 0:
                worst = math.inf
    return worst


def variance_decay_ratio(summaries: Sequence[EstimatorSummary], estimator: str = RECAST) -> float:
    """variance at the smallest n over variance at the largest n."""
    rows = sorted(pick(summaries, estimator), key=lambda s: s.n)
    if len(rows) < 2:
        raise ValueError(f"need >= 2 grid points for '{estimator}'")
    if rows[-1].variance == 0:
        return math.inf
    return rows[0].variance / rows[-1].variance


# ================= SAMPLE PATHS =================

def default_checkpoints(n_max: int, per_decade: int = 20) -> Tuple[int, ...]:
    """Log-spaced group counts from 1 to n_max (both included)."""
    if n_max < 1:
        raise ValueError(f"n_max must be >= 1, got {n_max}")
    decades = math.log10(n_max)
    num = max(2, int(math.ceil(decades * per_decade)) + 1)
    pts = np.unique(np.round(np.logspace(0.0, decades, num)).astype(int))
    pts = pts[(pts >= 1) & (pts <= n_max)]
    return tuple(int(v) for v in np.union1d(pts, [1, n_max]))


def run_sample_path(
    sigma2: float,
    m: int,
    n_max: int,
    seed: int,
    checkpoints: Optional[Sequence[int]] = None,
    scheme: Optional[MeanScheme] = None,
) -> SamplePath:
    """
    One panel with n_max groups; naive and recast estimates computed on the
    first n groups for every checkpoint n.
    """
    checkpoints = tuple(int(c) for c in (checkpoints if checkpoints is not None else default_checkpoints(n_max)))
    if not checkpoints:
        raise ValueError("checkpoints must not be empty")
    if any(b <= a for a, b in zip(checkpoints, checkpoints[1:])):
        raise ValueError(f"checkpoints must be strictly ascending, got {list(checkpoints)}")
    if checkpoints[0] < 1 or checkpoints[-1] > n_max:
        raise ValueError(f"checkpoints must lie in [1, n_max={n_max}]")

    spec = make_spec(m, n_max, sigma2, scheme if scheme is not None else default_scheme())
    panel = generate_panel(spec, seed)
    running_ss = np.cumsum(within_group_ss(panel.values))
    y = contrast_transform(panel).values
    running_ssy = np.cumsum(np.sum(y * y, axis=0))

    n = np.asarray(checkpoints)
    naive = running_ss[n - 1] / (m * n)
    recast = running_ssy[n - 1] / ((m - 1) * n)
    return SamplePath(
        checkpoints, naive, recast, sigma2=float(sigma2), m=int(m), seed=int(seed), n_max=int(n_max)
    )


def decade_max_deviation(
    n_points: Sequence[int], estimates: Sequence[float], target: float, lo: int, hi: int
) -> float:
    """max |estimate - target| over checkpoints with lo <= n <= hi."""
    n = np.asarray(n_points)
    est = np.asarray(estimates, dtype=float)
    mask = (n >= lo) & (n <= hi)
    if not mask.any():
        raise ValueError(f"no checkpoints in [{lo}, {hi}]")
    return float(np.max(np.abs(est[mask] - target)))


# ================= THIN-INFORMATION DIAGNOSTIC =================

GROWTH_SIZES = (10 ** 2, 10 ** 6)
MIN_RATIO_GROWTH = 10.0


def information_growth_warning(
    parameter_count: Callable[[int], int],
    observation_count: Callable[[int], int],
    sizes: Tuple[int, int] = GROWTH_SIZES,
    min_growth: float = MIN_RATIO_GROWTH,
) -> bool:
    """
    True when observations per parameter fail to grow with the sample:
    the ratio at sizes[1] groups is less than min_growth times the ratio at
    sizes[0] groups.
    """
    lo, hi = sizes
    r_lo = observation_count(lo) / parameter_count(lo)
    r_hi = observation_count(hi) / parameter_count(hi)
    return r_hi < min_growth * r_lo


def thin_information_diagnostic(data: PanelData) -> DiagnosticReport:
    m, n = data.m, data.n
    n_params = n + 1
    n_obs = m * n
    warn = information_growth_warning(lambda k: k + 1, lambda k: m * k)
    theta, _ = mle_closed_form(data)
    suggested = m / (m - 1) * theta.sigma2
    ratio = n_obs / n_params
    if warn:
        message = (
            f"{n_obs} observations for {n_params} parameters ({ratio:.4g} per parameter, "
            f"bounded by m={m} as n grows). The group means grow with the sample, so the "
            f"naive sigma2 estimate {theta.sigma2:.6g} converges to {(m - 1)}/{m} of sigma2. "
            f"Use the recast estimate {suggested:.6g} (= m/(m-1) x naive)."
        )
    else:
        message = f"{ratio:.4g} observations per parameter and growing with n."
    return DiagnosticReport(
        n_parameters=n_params,
        n_observations=n_obs,
        ratio=ratio,
        ratio_limit=float(m),
        warning=warn,
        naive_sigma2=theta.sigma2,
        suggested_estimate=suggested,
        message=message,
    )


# ================= VERDICTS =================

def _within(claim: str, observed: float, predicted: float, tol: float) -> Verdict:
    return Verdict(claim, observed, predicted, tol, bool(abs(observed - predicted) <= tol))


def bias_verdicts(config: ExperimentConfig, summaries: Sequence[EstimatorSummary], k: float = SE_TOLERANCE) -> List[Verdict]:
    s2, m = config.sigma2, config.m
    out = []
    for s in pick(summaries, NAIVE):
        out.append(_within(f"n={s.n} naive bias", s.bias, -s2 / m, k * s.std_error_of_mean))
    for s in pick(summaries, RECAST):
        out.append(_within(f"n={s.n} recast mean", s.mean, s2, k * s.std_error_of_mean))
        bound = cramer_rao_bound(s2, (m - 1) * s.n)
        out.append(_within(f"n={s.n} recast variance", s.variance, bound, 0.1 * bound))
    return out


def sweep_verdicts(config: ExperimentConfig, summaries: Sequence[EstimatorSummary], k: float = SE_TOLERANCE) -> List[Verdict]:
    out = [v for v in bias_verdicts(config, summaries, k) if "variance" not in v.claim]
    for s in pick(summaries, NAIVE):
        out.append(_within(
            f"n={s.n} naive bias (absolute)", s.bias, -config.sigma2 / config.m, ABS_BIAS_TOLERANCE * config.sigma2
        ))
    flat = naive_bias_flatness(summaries)
    out.append(Verdict("naive bias flatness (max pairwise z)", flat, 0.0, k, bool(flat <= k)))
    grid = config.n_grid
    expected = grid[-1] / grid[0]
    ratio = variance_decay_ratio(summaries, RECAST)
    out.append(_within(f"recast variance ratio n={grid[0]}/n={grid[-1]}", ratio, expected, 0.3 * expected))
    return out


def incidental_verdicts(config: ExperimentConfig, summaries: Sequence[EstimatorSummary], k: float = SE_TOLERANCE) -> List[Verdict]:
    target = config.sigma2 / config.m
    return [
        _within(f"n={s.n} variance of mu_hat_1", s.variance, target, k * s.se_variance)
        for s in pick(summaries, MU_HAT_1)
    ]


def path_verdicts(path: SamplePath, k: float = SE_TOLERANCE) -> List[Verdict]:
    s2, m = path.sigma2, path.m
    n_last = path.n_points[-1]
    n_eff = (m - 1) * n_last
    recast_sd = math.sqrt(2.0 / n_eff) * s2
    naive_sd = (m - 1) / m * recast_sd
    out = [
        _within(f"n={n_last} naive path", float(path.naive_estimates[-1]), (m - 1) / m * s2, k * naive_sd),
        _within(f"n={n_last} recast path", float(path.recast_estimates[-1]), s2, k * recast_sd),
    ]
    if n_last >= 100:
        first = decade_max_deviation(path.n_points, path.recast_estimates, s2, 1, 9)
        last = decade_max_deviation(path.n_points, path.recast_estimates, s2, n_last // 10, n_last)
        out.append(Verdict("recast last-decade max deviation below first-decade", last, first, first, bool(last < first)))
    return out


def experiment_report(
    kind: str,
    config: ExperimentConfig,
    summaries: Sequence[EstimatorSummary],
    verdicts: Sequence[Verdict],
) -> dict:
    """Config echo, seed derivation and results, free of anything run-dependent."""
    return {
        "kind": kind,
        "config": config.to_dict(),
        "seeds": {
            "master_seed": config.master_seed,
            "derivation": "splitmix64 chain over (master_seed, grid_index, replication)",
            "first_replication": [replication_seed(config.master_seed, k, 0) for k in range(len(config.n_grid))],
        },
        "summaries": [s.to_dict() for s in summaries],
        "verdicts": [v.to_dict() for v in verdicts],
    }


def path_report(path: SamplePath, verdicts: Sequence[Verdict]) -> dict:
    return {
        "kind": "path",
        "config": {"sigma2": path.sigma2, "m": path.m, "n_max": path.n_max, "seed": path.seed},
        "path": path.to_dict(),
        "verdicts": [v.to_dict() for v in verdicts],
    }
