"""Nonparametric empirical Bayes estimate of the mixing distribution behind
the auxiliary statistics, via maximum likelihood over a fixed atom grid.

The model treats each auxiliary statistic as signal-plus-standard-normal,
T = xi + Z, and estimates the distribution G of xi by maximizing the mixture
log-likelihood over probability weights on a uniform grid spanning the
sample range. The EM update

    w_l  <-  w_l * mean_i [ phi(x_i - u_l) / f_w(x_i) ]

keeps the average log-likelihood nondecreasing at every step, which the fit
records and enforces.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import FitError
from .gaussnum import bvn_upper, std_normal_cdf

__all__ = [
    "MixingDistribution", "fit_gmle", "marginal_density",
    "expected_false_rejections",
]

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)
_ATOM_FLOOR = 1e-10
_WEIGHT_TOL = 1e-10


@dataclass(frozen=True)
class MixingDistribution:
    """Discrete distribution: ascending support atoms and matching weights."""

    support: np.ndarray
    weights: np.ndarray
    em_loglik: tuple = None  # average log-likelihood trajectory of the fit

    def __post_init__(self):
        sup = np.asarray(self.support, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if sup.ndim != 1 or sup.shape != w.shape or sup.size == 0:
            raise ValueError("support and weights must be equal-length 1d")
        if not np.isfinite(sup).all():
            raise ValueError("support atoms must be finite")
        if np.any(np.diff(sup) <= 0.0):
            raise ValueError("support must be strictly ascending")
        if np.any(w < 0.0):
            raise ValueError("weights must be nonnegative")
        if abs(float(w.sum()) - 1.0) > _WEIGHT_TOL:
            raise ValueError(f"weights must sum to 1 within {_WEIGHT_TOL}")
        object.__setattr__(self, "support", sup)
        object.__setattr__(self, "weights", w)
        sup.setflags(write=False)
        w.setflags(write=False)

    def to_csv(self, path):
        pd.DataFrame({"support": self.support,
                      "weight": self.weights}).to_csv(path, index=False)

    @classmethod
    def from_csv(cls, path):
        df = pd.read_csv(path)
        if not {"support", "weight"} <= set(df.columns):
            raise ValueError("mixing file needs columns support,weight")
        return cls(df["support"].to_numpy(dtype=float),
                   df["weight"].to_numpy(dtype=float))


def _phi(x):
    return _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def fit_gmle(samples, grid_size=400, tol=1e-8, max_iter=5000):
    """Grid maximum-likelihood mixing distribution for the normal-mean model.

    The grid is uniform over [min(samples), max(samples)]. Stops when the
    relative increase of the average log-likelihood drops below tol or after
    max_iter EM sweeps; atoms lighter than 1e-10 are dropped at the end and
    the weights renormalized.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("samples must be nonempty")
    if not np.isfinite(x).all():
        raise ValueError("samples must be finite")
    if x.size < 10:
        raise ValueError(f"need at least 10 samples, got {x.size}")
    grid_size = int(grid_size)
    if grid_size < 50:
        raise ValueError("grid_size must be at least 50")
    if tol <= 0.0 or max_iter < 1:
        raise ValueError("tol must be positive and max_iter at least 1")

    lo, hi = float(x.min()), float(x.max())
    if lo == hi:
        return MixingDistribution(np.array([lo]), np.array([1.0]),
                                  em_loglik=(0.0,))

    grid = np.linspace(lo, hi, grid_size)
    dens = _phi(x[:, None] - grid[None, :])  # (n, grid)
    w = np.full(grid_size, 1.0 / grid_size)
    traj = []
    prev = -np.inf
    for _ in range(max_iter):
        f = dens @ w
        ll = float(np.mean(np.log(f)))
        if traj and ll < prev - 1e-9 * max(1.0, abs(prev)):
            raise FitError("EM log-likelihood decreased; numerical failure")
        traj.append(ll)
        if np.isfinite(prev) and ll - prev <= tol * max(1.0, abs(prev)):
            break
        prev = ll
        w = w * (dens.T @ (1.0 / f)) / x.size

    keep = w >= _ATOM_FLOOR
    w = w[keep]
    return MixingDistribution(grid[keep], w / w.sum(), em_loglik=tuple(traj))


def marginal_density(g, x):
    """Density of atom + standard normal noise at x."""
    arr = np.asarray(x, dtype=float)
    out = _phi(arr[..., None] - g.support) @ g.weights
    return float(out) if np.isscalar(x) or arr.ndim == 0 else out


def expected_false_rejections(g, rho_hat, t1, t2):
    """Sum over locations of P(xi + Z1 >= t1, Z2 >= t2) under the mixing
    distribution, with per-location correlation between Z1 and Z2.

    At t1 = -inf the screening coordinate is inert and the value is exactly
    m * (1 - Phi(t2)).
    """
    rho = np.asarray(rho_hat, dtype=float)
    m = rho.shape[0]
    if t1 == -np.inf:
        # survival form, bit-identical to the bvn limit at h = -inf
        return m * std_normal_cdf(-t2)
    uniq, counts = np.unique(rho, return_counts=True)
    # (unique rho) x (atoms) quadrant probabilities
    probs = bvn_upper(t1 - g.support[None, :], t2, uniq[:, None])
    per_rho = probs @ g.weights
    return float(counts @ per_rho)
