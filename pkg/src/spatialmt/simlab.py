"""Simulation laboratory: synthetic spatial testing problems with known
ground truth, plus a replication runner that scores procedures by false
discovery proportion and power.

Signal shapes are frozen module constants. The 1d setups live on an evenly
spaced grid over [0, 30]; signal regions are cubic B-spline bumps of width 2
(peak height 1), with 1 / 3 / 6 bumps for the sparse / medium / dense
levels. The 2d setups live on a square lattice over [0, 5]^2 and combine a
smooth product-bump field with a clustered Bernoulli field: the sparse level
uses the cluster alone, medium the smooth field alone, dense their sum. The
regression setup simulates yearly panels with a smooth negative-trend field.

Noise kernels (nugget-mix form, unit variance):
    weak    r=0.5 exponential, range 0.05
    medium  r=0.8 exponential, range 0.10
    strong  r=0.6 gaussian,    range 0.20
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd
from scipy.interpolate import BSpline

from .covmodel import (KernelSpec, derive_stat_params, fit_covariance_mle,
                       kernel_matrix)
from .errors import FitError
from .gaussnum import std_normal_cdf
from .geometry import SpatialDomain, knn_neighborhoods, select_npeb_subset
from .npeb import fit_gmle
from .statbuild import build_regression_statistics, build_statistics
from .testing import (FdpEstimatorConfig, apply_rejections, bh_procedure,
                      groupwise_pi0, one_d_threshold, search_cutoffs_2d,
                      storey_bh, weight_scheme)

__all__ = [
    "SetupConfig", "GroundTruth", "NOISE_KERNELS", "PROCEDURES",
    "sample_gp", "generate_setup", "evaluate", "run_replications",
]

SETUPS = ("I", "II", "III", "IV", "V", "ozone")
SPARSITY = ("sparse", "medium", "dense")

NOISE_KERNELS = {
    "weak": KernelSpec("exponential", r=0.5, range=0.05, shape=1.0),
    "medium": KernelSpec("exponential", r=0.8, range=0.10, shape=1.0),
    "strong": KernelSpec("gaussian", r=0.6, range=0.20, shape=2.0),
}

PROCEDURES = ("bh", "st", "2d-st", "sabha", "2d-sa", "gbh", "2d-gbh")

# 1d signal layout on [0, 30]
_DOMAIN_1D = (0.0, 30.0)
_BUMP_CENTERS = {
    "sparse": (15.0,),
    "medium": (5.0, 15.0, 25.0),
    "dense": (2.5, 7.5, 12.5, 17.5, 22.5, 27.5),
}
_BUMP_RADIUS = 1.0  # bump width 2

# 2d layout on [0, 5]^2: smooth per-axis profile reuses the dense centers
# rescaled by 1/6; clustered field is a disk plus rare background signals
_DOMAIN_2D = 5.0
_DISK_CENTER = (0.5, 0.5)
_DISK_RADIUS = 0.25
_DISK_P_IN = 0.9
_DISK_P_OUT = 0.01
_SIGNAL_PROB_PEAK = 0.9  # Setup II: Bernoulli rate at a bump peak

# Setup III latent field
_GP_MEAN = {"sparse": -2.5, "medium": -2.0, "dense": -1.0}
_GP_KERNEL = KernelSpec("exponential", r=1.0, range=0.3, shape=1.0, scale=3.0)

# regression setup: yearly panel with two negative-trend clusters
_YEARS = tuple(range(2010, 2022))
_TREND_CLUSTERS = ((1.4, 1.6, -0.9), (3.4, 3.2, -0.75))  # (x, y, depth)
_TREND_RADIUS = 1.6
_SIGMA_EPS_RANGE = (0.8, 1.2)
_OZONE_NOISE = KernelSpec("exponential", r=0.5, range=0.5, shape=1.0)
_GP_JITTER = 1e-10

_BUMP_BASIS = BSpline.basis_element(
    np.array([-1.0, -0.5, 0.0, 0.5, 1.0]), extrapolate=False)
_BUMP_PEAK = float(_BUMP_BASIS(0.0))


@dataclass(frozen=True)
class SetupConfig:
    setup: str
    sparsity: str
    gamma: float
    noise: str
    m: int
    reps: int
    seed: int

    def __post_init__(self):
        if self.setup not in SETUPS:
            raise ValueError(f"setup must be one of {SETUPS}")
        if self.sparsity not in SPARSITY:
            raise ValueError(f"sparsity must be one of {SPARSITY}")
        if self.noise not in NOISE_KERNELS:
            raise ValueError("noise must be weak, medium or strong")
        if self.m < 10:
            raise ValueError("m must be at least 10")
        if self.reps < 1:
            raise ValueError("reps must be positive")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")


@dataclass(frozen=True)
class GroundTruth:
    """Signal field and the non-null indicator theta = (mu > 0)."""

    mu: np.ndarray
    theta: np.ndarray = None

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "theta", mu > 0.0)


def _bump(u):
    out = _BUMP_BASIS(np.asarray(u, dtype=float))
    return np.nan_to_num(out, nan=0.0) / _BUMP_PEAK


def _profile_1d(x, sparsity, lo=0.0, hi=30.0):
    """Sum of unit-peak bumps at the frozen centers, rescaled to [lo, hi]."""
    scale = (hi - lo) / (_DOMAIN_1D[1] - _DOMAIN_1D[0])
    total = np.zeros_like(np.asarray(x, dtype=float))
    for c in _BUMP_CENTERS[sparsity]:
        center = lo + c * scale
        total = total + _bump((x - center) / (_BUMP_RADIUS * scale))
    return total


def _grid_1d(m):
    return SpatialDomain(tuple(f"s{i:04d}" for i in range(m)),
                         np.linspace(*_DOMAIN_1D, m)[:, None])


def _grid_2d(m):
    side = int(round(math.sqrt(m)))
    if side * side != m:
        raise ValueError(f"2d setups need a square m, got {m}")
    ax = np.linspace(0.0, _DOMAIN_2D, side)
    xx, yy = np.meshgrid(ax, ax, indexing="ij")
    coords = np.column_stack([xx.ravel(), yy.ravel()])
    return SpatialDomain(tuple(f"s{i:04d}" for i in range(m)), coords)


_ROOT_CACHE = {}


def _gp_sqrt(kernel, domain):
    # reused across replicates: the factor depends only on (kernel, domain)
    key = (kernel, domain.ids, domain.coords.tobytes())
    root = _ROOT_CACHE.get(key)
    if root is not None:
        return root
    mat = kernel_matrix(kernel, domain)
    mat = mat + _GP_JITTER * np.eye(domain.m)
    vals, vecs = np.linalg.eigh(mat)
    floor = -1e-8 * float(vals.max())
    if vals.min() < floor:
        raise FitError("kernel matrix is not positive semidefinite")
    root = vecs * np.sqrt(np.clip(vals, 0.0, None))
    if len(_ROOT_CACHE) > 8:
        _ROOT_CACHE.clear()
    _ROOT_CACHE[key] = root
    return root


def sample_gp(kernel, domain, seed):
    """One mean-zero draw from the kernel via its matrix square root."""
    rng = np.random.default_rng(seed)
    return _gp_sqrt(kernel, domain) @ rng.standard_normal(domain.m)


def _smooth_2d(domain):
    x, y = domain.coords[:, 0], domain.coords[:, 1]
    return (_profile_1d(x, "dense", 0.0, _DOMAIN_2D)
            * _profile_1d(y, "dense", 0.0, _DOMAIN_2D))


def _cluster_prob(domain):
    x, y = domain.coords[:, 0], domain.coords[:, 1]
    inside = ((x - _DISK_CENTER[0]) ** 2 + (y - _DISK_CENTER[1]) ** 2
              <= _DISK_RADIUS ** 2)
    return np.where(inside, _DISK_P_IN, _DISK_P_OUT)


def _trend_field(domain):
    x, y = domain.coords[:, 0], domain.coords[:, 1]
    beta = np.zeros(domain.m)
    for cx, cy, depth in _TREND_CLUSTERS:
        d = np.sqrt((x - cx) ** 2 + (y - cy) ** 2)
        beta = beta + depth * _bump(d / _TREND_RADIUS)
    return beta


def generate_setup(cfg, beta0=0.3):
    """(domain, observations, truth) for one replicate of a setup.

    observations is (n_replicates, m): one row for setups I-III, three for
    the 2d setups, and one row per year for the regression setup (where
    truth flags locations whose trend declines beyond beta0).
    """
    rng = np.random.default_rng(cfg.seed)
    noise = NOISE_KERNELS[cfg.noise]

    if cfg.setup in ("I", "II", "III"):
        domain = _grid_1d(cfg.m)
        x = domain.coords[:, 0]
        if cfg.setup == "I":
            mu = cfg.gamma * _profile_1d(x, cfg.sparsity)
        elif cfg.setup == "II":
            prob = _SIGNAL_PROB_PEAK * _profile_1d(x, cfg.sparsity)
            mu = cfg.gamma * (rng.random(cfg.m) < prob).astype(float)
        else:
            mean = _GP_MEAN[cfg.sparsity]
            latent = mean + _gp_sqrt(_GP_KERNEL, domain) \
                @ rng.standard_normal(cfg.m)
            mu = cfg.gamma * latent
        eps = _gp_sqrt(noise, domain) @ rng.standard_normal(cfg.m)
        return domain, (mu + eps)[None, :], GroundTruth(mu)

    if cfg.setup in ("IV", "V"):
        domain = _grid_2d(cfg.m)
        mu = np.zeros(cfg.m)
        if cfg.sparsity in ("sparse", "dense"):
            mu = mu + cfg.gamma * (rng.random(cfg.m)
                                   < _cluster_prob(domain)).astype(float)
        if cfg.sparsity in ("medium", "dense"):
            mu = mu + cfg.gamma * _smooth_2d(domain)
        root = _gp_sqrt(noise, domain)
        obs = mu[None, :] + (root @ rng.standard_normal((cfg.m, 3))).T
        return domain, obs, GroundTruth(mu)

    # regression setup: scattered locations, yearly panel
    loc_rng = np.random.default_rng(20260819)  # frozen layout
    coords = loc_rng.uniform(0.0, _DOMAIN_2D, size=(cfg.m, 2))
    domain = SpatialDomain(tuple(f"s{i:04d}" for i in range(cfg.m)), coords)
    beta = _trend_field(domain)
    sig_eps = loc_rng.uniform(*_SIGMA_EPS_RANGE, size=cfg.m)
    mu0 = 35.0 + 2.0 * coords[:, 0]
    years = np.array(_YEARS, dtype=float)
    root = _gp_sqrt(_OZONE_NOISE, domain)
    eps = (root @ rng.standard_normal((cfg.m, years.size))).T
    obs = mu0[None, :] + np.outer(years, beta) + sig_eps[None, :] * eps
    return domain, obs, GroundTruth(-(beta + beta0))


def evaluate(rejected_mask, truth):
    """(false discovery proportion, true positive fraction or nan)."""
    rej = np.asarray(rejected_mask, dtype=bool)
    theta = truth.theta
    n_rej = int(rej.sum())
    fdp = float(np.sum(rej & ~theta)) / max(1, n_rej)
    n_sig = int(theta.sum())
    power = float(np.sum(rej & theta)) / n_sig if n_sig else float("nan")
    return fdp, power


def _make_groups(domain, n_1d=5, side_2d=3):
    """Coarse partition used by the grouped-null-fraction procedures."""
    if domain.dim == 1:
        x = domain.coords[:, 0]
        edges = np.linspace(x.min(), x.max(), n_1d + 1)
        return np.clip(np.searchsorted(edges, x, side="right") - 1,
                       0, n_1d - 1)
    gx = np.clip((domain.coords[:, 0] / _DOMAIN_2D * side_2d).astype(int),
                 0, side_2d - 1)
    gy = np.clip((domain.coords[:, 1] / _DOMAIN_2D * side_2d).astype(int),
                 0, side_2d - 1)
    return gx * side_2d + gy


def _build_stats(cfg, domain, nbhd, obs, beta0):
    """Statistic pair for one replicate, plus metadata for the record."""
    if cfg.setup == "ozone":
        panel = pd.DataFrame(obs, index=np.array(_YEARS, dtype=float),
                             columns=list(domain.ids))
        stats, _, _ = build_regression_statistics(panel, domain, nbhd, beta0)
        return stats
    if cfg.setup in ("IV", "V"):
        n_rep = obs.shape[0]
        family = NOISE_KERNELS[cfg.noise].family
        fitted = fit_covariance_mle(obs, domain, family=family)
        cov = kernel_matrix(fitted, domain) / n_rep
        params = derive_stat_params(cov, domain, nbhd)
        return build_statistics(obs.mean(axis=0), params, nbhd,
                                ids=domain.ids)
    params = derive_stat_params(NOISE_KERNELS[cfg.noise], domain, nbhd)
    return build_statistics(obs[0], params, nbhd, ids=domain.ids)


def _run_procedure(name, stats, g, groups, q):
    """Rejection mask plus the matched screening-free count (nan for the
    procedures that do not search)."""
    p2 = std_normal_cdf(-stats.t2_hat)
    if name == "bh":
        return bh_procedure(p2, q), np.nan
    if name == "st":
        return storey_bh(p2, q, lambda_p=0.5), np.nan
    if name in ("sabha", "gbh"):
        pi0_loc = groupwise_pi0(p2, groups, lambda_p=0.5)
        scheme = "sabha" if name == "sabha" else "gbh"
        cfg = FdpEstimatorConfig(weights=weight_scheme(pi0_loc, scheme),
                                 pi0_local=pi0_loc if name == "sabha"
                                 else None)
        thr = one_d_threshold(stats, g, cfg, q)
        return apply_rejections(stats, float("inf"), thr, cfg), np.nan
    if name == "2d-st":
        cfg = FdpEstimatorConfig()
        res = search_cutoffs_2d(stats, g, cfg, q)
        return res.rejected_mask, res.init_n_rejected
    if name in ("2d-sa", "2d-gbh"):
        pi0_loc = groupwise_pi0(p2, groups, lambda_p=0.5)
        scheme = "sabha" if name == "2d-sa" else "gbh"
        cfg = FdpEstimatorConfig(weights=weight_scheme(pi0_loc, scheme),
                                 pi0_local=pi0_loc if name == "2d-sa"
                                 else None)
        res = search_cutoffs_2d(stats, g, cfg, q)
        return res.rejected_mask, res.init_n_rejected
    raise ValueError(f"unknown procedure {name!r}")


def run_replications(cfg, procedures, q, kappa=4, beta0=0.3, threads=1):
    """Replicated evaluation of procedures on one setup.

    Returns (summary, records): summary has one row per procedure and
    metric (fdp / power / n_rejected) with mean and standard error over the
    successful replicates; records holds the per-replicate values. Raises
    if more than 10% of replicates fail.
    """
    procedures = tuple(procedures)
    unknown = [p for p in procedures if p not in PROCEDURES]
    if unknown:
        raise ValueError(f"unknown procedures {unknown}")
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0, 1)")

    def one_rep(rep):
        sub = replace(cfg, seed=cfg.seed ^ rep)
        domain, obs, truth = generate_setup(sub, beta0=beta0)
        nbhd = knn_neighborhoods(domain, kappa)
        stats = _build_stats(cfg, domain, nbhd, obs, beta0)
        subset = select_npeb_subset(domain, nbhd)
        g = fit_gmle(stats.t1_hat[subset.indices])
        groups = _make_groups(domain)
        rows = []
        for name in procedures:
            mask, matched = _run_procedure(name, stats, g, groups, q)
            fdp, power = evaluate(mask, truth)
            rows.append({"rep": rep, "procedure": name, "fdp": fdp,
                         "power": power, "n_rejected": int(mask.sum()),
                         "n_rejected_1d_init": matched})
        return rows

    records, failures = [], 0
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(one_rep, r) for r in range(cfg.reps)]
            for fut in futures:
                try:
                    records.extend(fut.result())
                except Exception:
                    failures += 1
    else:
        for rep in range(cfg.reps):
            try:
                records.extend(one_rep(rep))
            except Exception:
                failures += 1
                continue
    if failures > 0.1 * cfg.reps:
        raise RuntimeError(
            f"{failures} of {cfg.reps} replicates failed; aborting")

    rec = pd.DataFrame.from_records(records)
    out = []
    for name in procedures:
        sel = rec[rec["procedure"] == name]
        for metric in ("fdp", "power", "n_rejected"):
            vals = sel[metric].to_numpy(dtype=float)
            vals = vals[np.isfinite(vals)]
            mean = float(vals.mean()) if vals.size else float("nan")
            se = float(vals.std(ddof=1) / math.sqrt(vals.size)) \
                if vals.size > 1 else float("nan")
            out.append({"procedure": name, "metric": metric,
                        "mean": mean, "se": se})
    return pd.DataFrame(out), rec
