# optimizer.py
#  Damped Newton ascent on the naive log-likelihood kernel. The Hessian is
#  diagonal in the mu-block plus one sigma2 row/column, so each Newton step is
#  solved in O(n) by eliminating the mu-block (Schur complement).
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np

from config import GRAD_TOL, MAX_ITER, MIN_SIGMA2, STEP_SHRINK
from likelihood import ThetaFull, hessian_blocks, log_likelihood_kernel, score
from model_core import PanelData

logger = logging.getLogger(__name__)

# A line search that shrinks the step this many times has stalled.
MAX_BACKTRACKS = 60
# Kernel values closer than this (relative) count as equal in the line search.
ASCENT_SLACK = 1e-13


@dataclass(frozen=True)
class OptimizerConfig:
    grad_tol: float = GRAD_TOL
    max_iter: int = MAX_ITER
    step_shrink: float = STEP_SHRINK
    min_sigma2: float = MIN_SIGMA2

    def __post_init__(self):
        if not self.grad_tol > 0:
            raise ValueError(f"grad_tol must be > 0, got {self.grad_tol}")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ValueError(f"max_iter must be a positive integer, got {self.max_iter}")
        if not 0 < self.step_shrink < 1:
            raise ValueError(f"step_shrink must be in (0, 1), got {self.step_shrink}")
        if not self.min_sigma2 > 0:
            raise ValueError(f"min_sigma2 must be > 0, got {self.min_sigma2}")


@dataclass(frozen=True, eq=False)
class OptimizeResult:
    theta: ThetaFull
    iterations: int
    converged: bool
    final_grad_norm: float
    boundary_hit: bool = False
    message: str = ""
    kernel_trace: Tuple[float, ...] = field(default=(), repr=False)

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "final_grad_norm": self.final_grad_norm,
            "boundary_hit": self.boundary_hit,
            "message": self.message,
        }


# ================= INITIALIZATION =================

def default_init(data: PanelData, config: Optional[OptimizerConfig] = None) -> ThetaFull:
    """mu_t <- group means, sigma2 <- variance of all cells (1.0 if that sits on the barrier)."""
    config = config or OptimizerConfig()
    mu = data.values.mean(axis=0)
    s2 = float(np.var(data.values))
    if s2 <= config.min_sigma2:
        s2 = 1.0
    return ThetaFull(mu, s2)


def randomized_init(
    data: PanelData,
    rng: np.random.Generator,
    mu_spread: float = 10.0,
    sigma2_range: Tuple[float, float] = (0.25, 4.0),
) -> ThetaFull:
    """Group means shifted by uniform noise, sigma2 scaled by a log-uniform factor."""
    base = default_init(data)
    mu = base.mu_hat + rng.uniform(-mu_spread, mu_spread, size=data.n)
    lo, hi = sigma2_range
    factor = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
    return ThetaFull(mu, base.sigma2 * factor)


# ================= NEWTON =================

def _ascent_direction(theta: ThetaFull, data: PanelData, grad: np.ndarray) -> Tuple[np.ndarray, str]:
    g_mu, g_s = grad[:-1], grad[-1]
    diag_mu, cross, h = hessian_blocks(theta, data)
    schur = h - float(np.sum(cross * cross / diag_mu))
    if schur < 0:
        # H d = -g with H = [[D, c], [c', h]]
        d_s = (-g_s + float(np.sum(cross * g_mu / diag_mu))) / schur
        d_mu = (-g_mu - cross * d_s) / diag_mu
        return np.append(d_mu, d_s), "newton"
    # Concave only in expectation here: Fisher scoring with the expected
    # information diag(m/sigma2, mn/(2 sigma2^2)).
    s2 = theta.sigma2
    d_mu = g_mu * s2 / data.m
    d_s = g_s * 2.0 * s2 * s2 / (data.m * data.n)
    return np.append(d_mu, d_s), "scoring"


def maximize_naive_likelihood(
    data: PanelData,
    init: Optional[ThetaFull] = None,
    config: Optional[OptimizerConfig] = None,
) -> OptimizeResult:
    """
    Maximizes the naive kernel from `init` (default_init when None).
    Converged means sup-norm of the score <= grad_tol. Iterates never step
    below min_sigma2; an iterate pushed against that barrier ends the run
    with boundary_hit set.
    """
    config = config or OptimizerConfig()
    theta = init if init is not None else default_init(data, config)
    if theta.n != data.n:
        raise ValueError(f"init has {theta.n} group means but the panel has n={data.n} groups")
    if not theta.sigma2 > config.min_sigma2:
        raise ValueError(
            f"init sigma2={theta.sigma2} must be above the barrier min_sigma2={config.min_sigma2}"
        )

    x = theta.to_vector()
    f = log_likelihood_kernel(theta, data)
    grad = score(theta, data)
    gnorm = float(np.max(np.abs(grad)))
    trace = [f]
    iterations = 0

    while gnorm > config.grad_tol:
        if iterations >= config.max_iter:
            logger.info("newton: no convergence after %d iterations (|g|=%.3e)", iterations, gnorm)
            return OptimizeResult(
                ThetaFull.from_vector(x), iterations, False, gnorm,
                message=f"max_iter={config.max_iter} reached", kernel_trace=tuple(trace),
            )

        direction, kind = _ascent_direction(ThetaFull.from_vector(x), data, grad)
        alpha = 1.0
        # clip so that sigma2 stays above the barrier
        while x[-1] + alpha * direction[-1] <= config.min_sigma2:
            alpha *= config.step_shrink
            if alpha == 0.0:
                break

        accepted = False
        for _ in range(MAX_BACKTRACKS):
            cand = x + alpha * direction
            if cand[-1] > config.min_sigma2:
                f_new = log_likelihood_kernel(ThetaFull.from_vector(cand), data)
                if np.isfinite(f_new) and f_new >= f - ASCENT_SLACK * max(1.0, abs(f)):
                    accepted = True
                    break
            alpha *= config.step_shrink

        iterations += 1
        if not accepted:
            logger.info("newton: line search stalled at iteration %d", iterations)
            return OptimizeResult(
                ThetaFull.from_vector(x), iterations, False, gnorm,
                message="line search stalled", kernel_trace=tuple(trace),
            )

        x, f = cand, f_new
        trace.append(f)
        theta = ThetaFull.from_vector(x)
        grad = score(theta, data)
        gnorm = float(np.max(np.abs(grad)))
        logger.debug("newton it=%d step=%s alpha=%.3g f=%.12g |g|=%.3e", iterations, kind, alpha, f, gnorm)

        # one more shrink of sigma2 would cross the barrier
        if x[-1] <= config.min_sigma2 / config.step_shrink and gnorm > config.grad_tol:
            logger.info("newton: sigma2=%.3e reached the barrier", x[-1])
            return OptimizeResult(
                theta, iterations, False, gnorm, boundary_hit=True,
                message=f"sigma2 driven to the barrier min_sigma2={config.min_sigma2}",
                kernel_trace=tuple(trace),
            )

    logger.info("newton: converged in %d iterations (|g|=%.3e)", iterations, gnorm)
    return OptimizeResult(
        ThetaFull.from_vector(x), iterations, True, gnorm,
        message="converged", kernel_trace=tuple(trace),
    )


# ================= FINITE DIFFERENCES =================

def finite_diff_gradient(
    f: Callable[[ThetaFull], float], theta: ThetaFull, step: float = 1e-6
) -> np.ndarray:
    """
    Central-difference gradient of f over the (mu_1, ..., mu_n, sigma2)
    vector, step `step` in every coordinate.
    """
    if not step > 0:
        raise ValueError(f"step must be > 0, got {step}")
    x0 = theta.to_vector()
    grad = np.zeros_like(x0)
    e = np.zeros_like(x0)
    for i in range(x0.shape[0]):
        e[i] = step
        f_plus = f(ThetaFull.from_vector(x0 + e))
        f_minus = f(ThetaFull.from_vector(x0 - e))
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise FloatingPointError(f"non-finite function value in coordinate {i}")
        grad[i] = (f_plus - f_minus) / (2.0 * step)
        e[i] = 0.0
    return grad
