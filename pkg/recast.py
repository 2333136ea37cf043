# recast.py
#  Recast model: orthonormal contrasts within each group remove the group
#  means and leave (m-1) NIID(0, sigma2) variables per group. For m = 2 the
#  single contrast is Y_t = (x_1t - x_2t) / sqrt(2).
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from model_core import PanelData


@dataclass(frozen=True, eq=False)
class ContrastSeries:
    values: np.ndarray
    m: int
    n: int

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[None, :]
        if values.shape != (self.m - 1, self.n):
            raise ValueError(
                f"contrast array has shape {values.shape}, expected ({self.m - 1}, {self.n})"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("contrast series contains non-finite values")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def n_eff(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class RecastEstimate:
    sigma2_hat: float
    n_eff: int
    crlb: float
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "sigma2_hat": self.sigma2_hat,
            "n_eff": self.n_eff,
            "crlb": self.crlb,
            "degenerate": self.degenerate,
        }


# ================= TRANSFORMS =================

def helmert_matrix(m: int) -> np.ndarray:
    """
    (m-1) x m orthonormal Helmert contrasts. Row j (1-based) is
    (1, ..., 1, -j, 0, ..., 0) / sqrt(j(j+1)) with j leading ones, so every
    row is orthogonal to the constant vector.
    """
    if m < 2:
        raise ValueError(f"m must be >= 2, got {m}")
    h = np.zeros((m - 1, m))
    for j in range(1, m):
        h[j - 1, :j] = 1.0
        h[j - 1, j] = -float(j)
        h[j - 1] /= math.sqrt(j * (j + 1))
    return h


def difference_transform(data: PanelData) -> ContrastSeries:
    """Y_t = (x_1t - x_2t) / sqrt(2); two-replicate panels only."""
    if data.m != 2:
        raise ValueError(f"difference_transform needs m == 2 (got m={data.m}); use helmert_transform")
    x = data.values
    y = (x[0] - x[1]) / np.sqrt(2.0)
    return ContrastSeries(y[None, :], 2, data.n)


def helmert_transform(data: PanelData) -> ContrastSeries:
    """
    Y_jt = (sum_{i<=j} x_it - j * x_(j+1)t) / sqrt(j(j+1)), j = 1..m-1.
    Evaluated in this form (not as a matrix product) so that the m = 2 case
    reproduces difference_transform bit for bit.
    """
    if data.m < 2:
        raise ValueError(f"m must be >= 2, got {data.m}")
    x = data.values
    j = np.arange(1, data.m, dtype=float)[:, None]
    partial = np.cumsum(x, axis=0)[:-1]
    y = (partial - j * x[1:]) / np.sqrt(j * (j + 1.0))
    return ContrastSeries(y, data.m, data.n)


def contrast_transform(data: PanelData) -> ContrastSeries:
    if data.m == 2:
        return difference_transform(data)
    return helmert_transform(data)


# ================= RECAST MLE =================

def sigma2_mle_recast(series: ContrastSeries) -> RecastEstimate:
    """sigma2_hat = (1/n_eff) sum Y^2 with n_eff = (m-1) n."""
    n_eff = series.n_eff
    if n_eff < 1:
        raise ValueError("contrast series is empty")
    y = series.values
    s2 = float(np.sum(y * y)) / n_eff
    return RecastEstimate(
        sigma2_hat=s2,
        n_eff=n_eff,
        crlb=2.0 * s2 * s2 / n_eff,
        degenerate=s2 == 0.0,
    )


def recast_log_likelihood(sigma2: float, series: ContrastSeries) -> float:
    """Log-density of the simple Normal model Y ~ NIID(0, sigma2)."""
    if not sigma2 > 0:
        raise ValueError(f"sigma2 must be > 0, got {sigma2}")
    n_eff = series.n_eff
    ssy = float(np.sum(series.values * series.values))
    return -0.5 * n_eff * math.log(2.0 * math.pi * sigma2) - ssy / (2.0 * sigma2)


def recast_score(sigma2: float, series: ContrastSeries) -> float:
    if not sigma2 > 0:
        raise ValueError(f"sigma2 must be > 0, got {sigma2}")
    ssy = float(np.sum(series.values * series.values))
    return -0.5 * series.n_eff / sigma2 + ssy / (2.0 * sigma2 * sigma2)


def fisher_information_sigma2(sigma2: float, n_eff: int) -> float:
    """n_eff / (2 sigma2^2): information about sigma2 in n_eff NIID(0, sigma2) draws."""
    if not sigma2 > 0:
        raise ValueError(f"sigma2 must be > 0, got {sigma2}")
    if int(n_eff) != n_eff or n_eff < 1:
        raise ValueError(f"n_eff must be a positive integer, got {n_eff}")
    return n_eff / (2.0 * sigma2 * sigma2)


def cramer_rao_bound(sigma2: float, n_eff: int) -> float:
    return 1.0 / fisher_information_sigma2(sigma2, n_eff)


def recast_estimate(data: PanelData) -> RecastEstimate:
    return sigma2_mle_recast(contrast_transform(data))
