"""Builds the screening statistic pair from a field of observations, and the
regression variant for monotone-trend testing on panel data.

The primary statistic standardizes each observation by its noise sd; the
auxiliary statistic standardizes the sum of the neighboring observations by
the sd of that sum. rho_hat records the correlation between the two under
the noise model, which the false-rejection estimates need.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .covmodel import derive_stat_params, fit_residual_kernel, kernel_eval
from .errors import DataFormatError, FitError

__all__ = [
    "StatPair", "RegressionFit",
    "build_statistics", "build_regression_statistics",
    "read_direct_csv", "read_panel_csv",
]


@dataclass(frozen=True)
class StatPair:
    """Auxiliary and primary statistics plus their correlation, per location."""

    t1_hat: np.ndarray
    t2_hat: np.ndarray
    rho_hat: np.ndarray
    ids: tuple = None

    def __post_init__(self):
        t1 = np.asarray(self.t1_hat, dtype=float)
        t2 = np.asarray(self.t2_hat, dtype=float)
        rho = np.asarray(self.rho_hat, dtype=float)
        m = t1.shape[0]
        if t2.shape != (m,) or rho.shape != (m,):
            raise ValueError("statistic arrays must share one length")
        if not (np.isfinite(t1).all() and np.isfinite(t2).all()):
            raise ValueError("statistics must be finite")
        if np.any(np.abs(rho) > 1.0):
            raise ValueError("rho_hat must lie in [-1, 1]")
        ids = self.ids
        ids = tuple(str(i) for i in ids) if ids is not None \
            else tuple(str(i) for i in range(m))
        if len(ids) != m:
            raise ValueError("ids length mismatch")
        object.__setattr__(self, "t1_hat", t1)
        object.__setattr__(self, "t2_hat", t2)
        object.__setattr__(self, "rho_hat", rho)
        object.__setattr__(self, "ids", ids)

    @property
    def m(self):
        return self.t1_hat.shape[0]


@dataclass(frozen=True)
class RegressionFit:
    beta_hat: np.ndarray
    mu0_hat: np.ndarray
    sigma_eps_hat: np.ndarray
    se_beta_hat: np.ndarray


def _neighbor_sums(values, neighborhoods):
    m = values.shape[0]
    flat = np.concatenate(neighborhoods.indices)
    seg = np.repeat(np.arange(m),
                    [a.size for a in neighborhoods.indices])
    return np.bincount(seg, weights=values[flat], minlength=m)


def build_statistics(observations, stat_params, neighborhoods, ids=None):
    """StatPair from one observation per location and noise parameters."""
    obs = np.asarray(observations, dtype=float)
    m = obs.shape[0]
    if obs.ndim != 1:
        raise ValueError("observations must be a flat per-location vector")
    if len(neighborhoods.indices) != m or stat_params.sigma.shape[0] != m:
        raise ValueError("observations, parameters and neighborhoods must "
                         "agree on m")
    if not np.isfinite(obs).all():
        bad = int(np.flatnonzero(~np.isfinite(obs))[0])
        raise ValueError(f"non-finite observation at location index {bad}")
    t2 = obs / stat_params.sigma
    t1 = _neighbor_sums(obs, neighborhoods) / stat_params.tau
    if ids is None:
        ids = neighborhoods.ids
    return StatPair(t1_hat=t1, t2_hat=t2, rho_hat=stat_params.rho.copy(),
                    ids=ids)


def read_direct_csv(path):
    """Long-format observations: columns id, rep, value."""
    df = pd.read_csv(path, dtype={"id": str})
    need = {"id", "rep", "value"}
    if set(df.columns) != need:
        raise DataFormatError(
            f"observations file needs exactly columns id,rep,value; "
            f"found {sorted(df.columns)}")
    wide = df.pivot_table(index="rep", columns="id", values="value",
                          aggfunc="first")
    if wide.isna().any().any():
        missing = wide.columns[wide.isna().any()][0]
        raise DataFormatError(
            f"incomplete replicate grid, e.g. location {missing!r}")
    return wide


def read_panel_csv(path):
    """Long-format panel: columns id, t, value."""
    df = pd.read_csv(path, dtype={"id": str})
    need = {"id", "t", "value"}
    if set(df.columns) != need:
        raise DataFormatError(
            f"panel file needs exactly columns id,t,value; "
            f"found {sorted(df.columns)}")
    wide = df.pivot_table(index="t", columns="id", values="value",
                          aggfunc="first")
    if wide.isna().any().any():
        missing = wide.columns[wide.isna().any()][0]
        raise DataFormatError(
            f"incomplete panel grid, e.g. location {missing!r}")
    return wide


def build_regression_statistics(panel, domain, neighborhoods, beta0,
                                family="exponential", **fit_kwargs):
    """Per-location OLS slopes tested against decline beyond beta0.

    panel is a (time x location) frame or array aligned with the domain,
    observed on a common time grid. The null at each location is
    slope >= -beta0; statistics are sign-flipped so that large positive
    values are evidence of decline. Returns (StatPair, RegressionFit,
    fitted noise KernelSpec).

    Second moments of the slope estimates are propagated through the kernel
    fitted to the standardized residuals, so t2's denominator equals the
    classic OLS standard error exactly when the fitted kernel scale is 1.
    """
    if isinstance(panel, pd.DataFrame):
        cols = list(panel.columns.astype(str))
        if set(cols) != set(domain.ids):
            raise DataFormatError("panel locations do not match the domain")
        x = panel.to_numpy(dtype=float)[:, [cols.index(i)
                                            for i in domain.ids]]
        t = np.asarray(panel.index, dtype=float)
    else:
        x = np.asarray(panel, dtype=float)
        t = np.asarray(fit_kwargs.pop("times"), dtype=float)
    n_t, m = x.shape
    if m != domain.m:
        raise ValueError("panel width must equal the number of locations")
    if n_t < 3:
        raise ValueError("need at least 3 time points")
    if not np.isfinite(x).all():
        raise ValueError("panel values must be finite")
    tc = t - t.mean()
    sxx = float(np.sum(tc * tc))
    if sxx == 0.0:
        raise ValueError("time variable is constant")

    beta = (tc @ x) / sxx
    mu0 = x.mean(axis=0) - beta * t.mean()
    resid = x - (mu0[None, :] + np.outer(t, beta))
    dof = n_t - 2
    sig_eps = np.sqrt(np.sum(resid * resid, axis=0) / dof)
    if np.any(sig_eps <= 0.0):
        bad = int(np.flatnonzero(sig_eps <= 0.0)[0])
        raise FitError(f"degenerate residual variance at location index {bad}")
    std_resid = resid / sig_eps[None, :]

    kernel = fit_residual_kernel(std_resid, domain, family=family,
                                 **fit_kwargs)

    # cov(beta_v, beta_v') = sigma_eps(v) sigma_eps(v') k(d(v,v')) / Sxx
    dist = domain.distance_matrix()
    cov_beta = np.outer(sig_eps, sig_eps) \
        * kernel_eval(kernel, dist, np.eye(m, dtype=bool)) / sxx
    params = derive_stat_params(cov_beta, domain, neighborhoods)

    shifted = beta + beta0
    t2 = -shifted / params.sigma
    t1 = -_neighbor_sums(shifted, neighborhoods) / params.tau
    stats = StatPair(t1_hat=t1, t2_hat=t2, rho_hat=params.rho.copy(),
                     ids=domain.ids)
    fit = RegressionFit(beta_hat=beta, mu0_hat=mu0, sigma_eps_hat=sig_eps,
                        se_beta_hat=params.sigma.copy())
    return stats, fit, kernel
