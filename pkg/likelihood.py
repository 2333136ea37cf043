# likelihood.py
#  Naive likelihood of the Neyman-Scott panel, treating (mu_1, ..., mu_n, sigma2)
#  as the parameter. With m replicates per group:
#    ln L = -(mn/2) ln sigma2 - (1/(2 sigma2)) sum_t sum_i (x_it - mu_t)^2
#  which is -n ln sigma2 - ... for the two-replicate panel.
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, NamedTuple, Tuple

import numpy as np

from model_core import PanelData

STATIONARY_TOL = 1e-8


# ================= PARAMETER POINTS =================

@dataclass(frozen=True, eq=False)
class ThetaFull:
    mu_hat: np.ndarray
    sigma2: float

    def __post_init__(self):
        mu = np.array(self.mu_hat, dtype=float).reshape(-1)
        mu.flags.writeable = False
        object.__setattr__(self, "mu_hat", mu)
        object.__setattr__(self, "sigma2", float(self.sigma2))
        if not self.sigma2 >= 0:
            raise ValueError(f"sigma2 must be >= 0, got {self.sigma2}")

    @property
    def n(self) -> int:
        return self.mu_hat.shape[0]

    @property
    def degenerate(self) -> bool:
        return self.sigma2 == 0.0

    def to_vector(self) -> np.ndarray:
        """Parameter vector ordered (mu_1, ..., mu_n, sigma2)."""
        return np.append(self.mu_hat, self.sigma2)

    @classmethod
    def from_vector(cls, vec) -> "ThetaFull":
        vec = np.asarray(vec, dtype=float)
        return cls(vec[:-1], float(vec[-1]))


class GroupStats(NamedTuple):
    mu_hat_t: float
    s2_t: float


class GroupTable:
    """Per-group sample means and mean squared deviations, kept as arrays."""

    def __init__(self, mu_hat: np.ndarray, s2: np.ndarray):
        self.mu_hat = mu_hat
        self.s2 = s2

    def __len__(self) -> int:
        return self.mu_hat.shape[0]

    def __getitem__(self, t: int) -> GroupStats:
        return GroupStats(float(self.mu_hat[t]), float(self.s2[t]))

    def __iter__(self) -> Iterator[GroupStats]:
        for t in range(len(self)):
            yield self[t]


@dataclass(frozen=True)
class SecondOrderReport:
    """
    Second derivatives of the kernel at theta. d2_mu is the common value of
    d2/dmu_t^2, cross_max_abs the largest |d2/dsigma2 dmu_t| over groups.
    determinant is the smallest per-group 2x2 determinant
    d2_mu * d2_sigma2 - cross_t^2; schur_complement is
    d2_sigma2 - sum_t cross_t^2 / d2_mu, negative iff the whole Hessian is
    negative definite once the mu-block is.
    """

    d2_mu: float
    cross_max_abs: float
    d2_sigma2: float
    determinant: float
    schur_complement: float
    at_stationary_point: bool
    is_maximum: bool

    def to_dict(self) -> dict:
        return {
            "d2_mu": self.d2_mu,
            "cross_max_abs": self.cross_max_abs,
            "d2_sigma2": self.d2_sigma2,
            "determinant": self.determinant,
            "schur_complement": self.schur_complement,
            "at_stationary_point": self.at_stationary_point,
            "is_maximum": self.is_maximum,
        }


# ================= HELPERS =================

def _check(theta: ThetaFull, data: PanelData):
    if theta.n != data.n:
        raise ValueError(f"theta has {theta.n} group means but the panel has n={data.n} groups")
    if not theta.sigma2 > 0:
        raise ValueError(f"likelihood is undefined at sigma2={theta.sigma2}; sigma2 must be > 0")


def _residuals(theta: ThetaFull, data: PanelData) -> np.ndarray:
    return data.values - theta.mu_hat[None, :]


def within_group_ss(values: np.ndarray) -> np.ndarray:
    """sum_i (x_it - xbar_t)^2 for every group t."""
    dev = values - values.mean(axis=0)[None, :]
    return np.sum(dev * dev, axis=0)


# ================= LIKELIHOOD =================

def log_likelihood_kernel(theta: ThetaFull, data: PanelData) -> float:
    _check(theta, data)
    resid = _residuals(theta, data)
    ss = float(np.sum(resid * resid))
    mn = data.m * data.n
    return -0.5 * mn * math.log(theta.sigma2) - ss / (2.0 * theta.sigma2)


def log_density_full(theta: ThetaFull, data: PanelData) -> float:
    """Joint log-density with the -(mn/2) ln(2 pi) constant retained."""
    mn = data.m * data.n
    return log_likelihood_kernel(theta, data) - 0.5 * mn * math.log(2.0 * math.pi)


def score(theta: ThetaFull, data: PanelData) -> np.ndarray:
    """Gradient of the kernel, ordered (mu_1, ..., mu_n, sigma2)."""
    _check(theta, data)
    resid = _residuals(theta, data)
    s2 = theta.sigma2
    g_mu = resid.sum(axis=0) / s2
    ss = float(np.sum(resid * resid))
    g_sigma2 = -0.5 * data.m * data.n / s2 + ss / (2.0 * s2 * s2)
    return np.append(g_mu, g_sigma2)


def hessian_blocks(theta: ThetaFull, data: PanelData) -> Tuple[np.ndarray, np.ndarray, float]:
    """
    The kernel Hessian is diagonal in the mu-block, with one row/column of
    cross terms against sigma2:
      d2/dmu_t^2         = -m / sigma2
      d2/dsigma2 dmu_t   = -(1/sigma2^2) sum_i (x_it - mu_t)
      d2/d(sigma2)^2     = (mn/2)/sigma2^2 - SS/sigma2^3
    Returns (mu diagonal, cross vector, sigma2 curvature).
    """
    _check(theta, data)
    resid = _residuals(theta, data)
    s2 = theta.sigma2
    diag_mu = np.full(data.n, -data.m / s2)
    cross = -resid.sum(axis=0) / (s2 * s2)
    ss = float(np.sum(resid * resid))
    d2_sigma2 = 0.5 * data.m * data.n / (s2 * s2) - ss / (s2 * s2 * s2)
    return diag_mu, cross, d2_sigma2


def second_order_check(theta: ThetaFull, data: PanelData) -> SecondOrderReport:
    """
    Evaluates the second-order conditions. At the closed-form MLE the cross
    terms vanish and d2_mu = -m/sigma2_hat, d2_sigma2 = -mn/(2 sigma2_hat^2).
    A theta whose cross terms are not zero (relative to the data scale) is
    reported with at_stationary_point False.
    """
    diag_mu, cross, d2_sigma2 = hessian_blocks(theta, data)
    d2_mu = float(diag_mu[0])
    dets = diag_mu * d2_sigma2 - cross * cross
    schur = d2_sigma2 - float(np.sum(cross * cross / diag_mu))

    # cross_t * sigma2^2 is the residual sum of group t
    resid_sum = np.abs(cross) * theta.sigma2 * theta.sigma2
    scale = np.maximum(1.0, np.abs(data.values).sum(axis=0))
    at_stationary = bool(np.all(resid_sum <= STATIONARY_TOL * scale))

    is_max = bool(d2_mu < 0 and d2_sigma2 < 0 and float(dets.min()) > 0)
    return SecondOrderReport(
        d2_mu=d2_mu,
        cross_max_abs=float(np.abs(cross).max()),
        d2_sigma2=float(d2_sigma2),
        determinant=float(dets.min()),
        schur_complement=float(schur),
        at_stationary_point=at_stationary,
        is_maximum=is_max,
    )


# ================= CLOSED-FORM MLE =================

def mle_closed_form(data: PanelData) -> Tuple[ThetaFull, GroupTable]:
    """
    mu_hat_t = group mean, s2_t = (1/m) sum_i (x_it - mu_hat_t)^2,
    sigma2_hat = mean of s2_t = (1/(mn)) * within-group SS.
    sigma2_hat == 0 is returned as is; check theta.degenerate.
    """
    values = data.values
    mu_hat = values.mean(axis=0)
    dev = values - mu_hat[None, :]
    s2 = np.mean(dev * dev, axis=0)
    sigma2_hat = float(np.mean(s2))
    return ThetaFull(mu_hat, sigma2_hat), GroupTable(mu_hat, s2)


def naive_sigma2(data: PanelData) -> float:
    return mle_closed_form(data)[0].sigma2
