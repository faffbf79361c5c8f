"""Noise covariance models: stationary kernels with a nugget component,
replicate-based maximum likelihood fitting, and the per-location second
moment parameters (sigma, tau, rho) consumed by the statistic builder.

Kernel form, shared by every family:

    k(s, s') = scale * [ (1 - r) * 1{s = s'} + r * corr(d(s, s')) ]

where r in [0, 1] is the weight of the spatially correlated component
(1 - r is the iid nugget fraction) and corr depends on the family:
exponential exp(-d/range), gaussian exp(-(d/range)^2), nugget-mix
exp(-(d/range)^shape) with shape in {1, 2}, and matern with smoothness
shape (nu) in {0.5, 1.5, 2.5} under the scaling corr(d) =
(2 sqrt(nu) d / range)^nu K_nu(2 sqrt(nu) d / range) / (2^(nu-1) Gamma(nu)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize, special

from .errors import DataFormatError, FitError

__all__ = [
    "KernelSpec", "StatParams", "kernel_eval", "kernel_matrix",
    "fit_covariance_mle", "fit_residual_kernel", "derive_stat_params",
    "kernel_to_mapping", "kernel_from_mapping",
]

_FAMILIES = ("exponential", "gaussian", "matern", "nugget-mix")
_MATERN_NU = (0.5, 1.5, 2.5)


@dataclass(frozen=True)
class KernelSpec:
    family: str
    r: float
    range: float
    shape: float
    scale: float = 1.0

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if not 0.0 <= self.r <= 1.0:
            raise ValueError("r must lie in [0, 1]")
        if not self.range > 0.0:
            raise ValueError("range must be positive")
        if not self.scale > 0.0:
            raise ValueError("scale must be positive")
        if self.family == "exponential" and self.shape != 1.0:
            raise ValueError("exponential kernel has shape 1")
        if self.family == "gaussian" and self.shape != 2.0:
            raise ValueError("gaussian kernel has shape 2")
        if self.family == "nugget-mix" and self.shape not in (1.0, 2.0):
            raise ValueError("nugget-mix shape must be 1 or 2")
        if self.family == "matern" and self.shape not in _MATERN_NU:
            raise ValueError(f"matern smoothness must be one of {_MATERN_NU}")


@dataclass(frozen=True)
class StatParams:
    """Per-location scale parameters: marginal sd, neighborhood-sum sd, and
    the correlation between a location's own noise and its neighbor sum."""

    sigma: np.ndarray
    tau: np.ndarray
    rho: np.ndarray


def _corr(spec, dist):
    d = np.asarray(dist, dtype=float)
    if spec.family == "exponential":
        return np.exp(-d / spec.range)
    if spec.family == "gaussian":
        return np.exp(-((d / spec.range) ** 2))
    if spec.family == "nugget-mix":
        return np.exp(-((d / spec.range) ** spec.shape))
    nu = spec.shape
    x = 2.0 * math.sqrt(nu) * d / spec.range
    safe = np.where(x > 0.0, x, 1.0)
    val = (safe ** nu) * special.kv(nu, safe) / (2.0 ** (nu - 1.0)
                                                 * math.gamma(nu))
    return np.where(x > 0.0, val, 1.0)


def kernel_eval(spec, dist, same_point):
    """Covariance between two points at the given distance.

    same_point marks pairs that are literally the same location; only those
    receive the nugget mass.
    """
    d = np.asarray(dist, dtype=float)
    if np.any(d < 0.0):
        raise ValueError("distances must be nonnegative")
    same = np.asarray(same_point, dtype=bool)
    return spec.scale * (spec.r * _corr(spec, d)
                         + (1.0 - spec.r) * same.astype(float))


def kernel_matrix(spec, domain):
    dist = domain.distance_matrix()
    same = np.eye(domain.m, dtype=bool)
    return kernel_eval(spec, dist, same)


def _chol_logdet_quad(mat, resid):
    """(logdet, sum of quadratic forms) with a jitter ladder; None on failure."""
    base = np.mean(np.diag(mat))
    for jit in (0.0, 1e-10, 1e-8, 1e-6):
        try:
            c = linalg.cholesky(mat + jit * base * np.eye(mat.shape[0]),
                                lower=True, check_finite=False)
        except linalg.LinAlgError:
            continue
        logdet = 2.0 * np.sum(np.log(np.diag(c)))
        z = linalg.solve_triangular(c, resid.T, lower=True,
                                    check_finite=False)
        return logdet, float(np.sum(z * z))
    return None


def _profiled_objective(dist, resid, family, shape, log_range, logit_r):
    """Negative log-likelihood with the overall scale profiled out.

    The scale that minimizes n*logdet(scale*R) + q/scale is q/(n*m), which
    turns the objective into n*m*log(q/(n*m)) + n*logdet(R) + n*m.
    """
    n, m = resid.shape
    rng_ = math.exp(log_range)
    r = 1.0 / (1.0 + math.exp(-logit_r))
    spec = KernelSpec(family, r=r, range=rng_, shape=shape, scale=1.0)
    mat = kernel_eval(spec, dist, np.eye(m, dtype=bool))
    out = _chol_logdet_quad(mat, resid)
    if out is None:
        return np.inf, None
    logdet, quad = out
    if quad <= 0.0:
        return np.inf, None
    scale = quad / (n * m)
    value = n * m * math.log(scale) + n * logdet + n * m
    return value, scale


def _fit_one_family(dist, resid, family, shape, n_restarts, rng):
    n, m = resid.shape
    extent = float(dist.max())
    pos = dist[dist > 0.0]
    d_min = float(pos.min()) if pos.size else 1.0

    def fun(u):
        return _profiled_objective(dist, resid, family, shape, u[0], u[1])[0]

    # moment-based start: nearest-neighbor correlation suggests r, a modest
    # fraction of the extent suggests the range
    v_hat = float(np.mean(resid * resid)) * n / max(n - 1, 1)
    nn = np.argmin(np.where(dist > 0.0, dist, np.inf), axis=1)
    c1 = float(np.mean(resid * resid[:, nn])) * n / max(n - 1, 1)
    r0 = np.clip(c1 / v_hat if v_hat > 0 else 0.5, 0.05, 0.95)
    starts = [(math.log(max(3.0 * d_min, 0.05 * extent)),
               math.log(r0 / (1.0 - r0)))]
    for _ in range(max(0, n_restarts - 1)):
        lo, hi = math.log(d_min), math.log(max(extent, d_min * 2))
        rr = rng.uniform(0.05, 0.95)
        starts.append((rng.uniform(lo, hi), math.log(rr / (1.0 - rr))))

    best = None
    for u0 in starts:
        res = optimize.minimize(
            fun, np.array(u0), method="Nelder-Mead",
            options={"xatol": 2e-3, "fatol": 1e-7, "maxfev": 300})
        if best is None or res.fun < best.fun:
            best = res
    value, scale = _profiled_objective(dist, resid, family, shape,
                                       best.x[0], best.x[1])
    if not np.isfinite(value) or scale is None:
        return None
    r = 1.0 / (1.0 + math.exp(-best.x[1]))
    return value, KernelSpec(family, r=float(r),
                             range=float(math.exp(best.x[0])),
                             shape=shape, scale=float(scale))


def fit_covariance_mle(observations, domain, family="exponential", *,
                       n_restarts=5, seed=0):
    """Fit a kernel to replicated fields by Gaussian maximum likelihood.

    observations is (n_replicates, m) aligned with the domain; the mean is
    profiled out by the per-location replicate average, the overall scale
    analytically, and Nelder-Mead runs on (log range, logit r) from
    n_restarts starting points (the first moment-based, the rest random).
    Families with a discrete shape try every admissible shape value.
    """
    obs = np.asarray(observations, dtype=float)
    if obs.ndim != 2 or obs.shape[1] != domain.m:
        raise ValueError(f"observations must be (n, m={domain.m})")
    n = obs.shape[0]
    if n < 2:
        raise ValueError("need at least 2 replicates to fit a covariance")
    if not np.isfinite(obs).all():
        raise ValueError("observations must be finite")
    resid = obs - obs.mean(axis=0, keepdims=True)
    if float(np.max(np.abs(resid))) == 0.0:
        raise FitError("degenerate data: no variation across replicates")
    if family not in _FAMILIES:
        raise ValueError(f"unknown kernel family {family!r}")

    shapes = {"exponential": (1.0,), "gaussian": (2.0,),
              "nugget-mix": (1.0, 2.0), "matern": _MATERN_NU}[family]
    dist = domain.distance_matrix()
    rng = np.random.default_rng(seed)
    best = None
    for shape in shapes:
        got = _fit_one_family(dist, resid, family, shape, n_restarts, rng)
        if got is not None and (best is None or got[0] < best[0]):
            best = got
    if best is None:
        raise FitError("covariance fit failed: no admissible optimum")
    return best[1]


def fit_residual_kernel(residuals, domain, family="exponential", **kwargs):
    """Fit the noise kernel to standardized regression residuals, treated as
    replicates over time. Same likelihood as fit_covariance_mle."""
    return fit_covariance_mle(residuals, domain, family, **kwargs)


def derive_stat_params(cov, domain, neighborhoods):
    """sigma, tau, rho for every location from a kernel or covariance matrix.

    tau(s)^2 sums the covariance over all neighbor pairs of N(s); rho(s) is
    cov(own noise, neighbor sum) / (sigma * tau), clamped to [-1, 1].
    """
    m = domain.m
    if isinstance(cov, KernelSpec):
        cov_fn = None
        spec = cov
    else:
        cmat = np.asarray(cov, dtype=float)
        if cmat.shape != (m, m):
            raise ValueError(f"covariance matrix must be ({m}, {m})")
        cov_fn = cmat
        spec = None

    coords = domain.coords
    sigma = np.empty(m)
    tau = np.empty(m)
    rho = np.empty(m)
    for s in range(m):
        nb = neighborhoods.indices[s]
        if cov_fn is not None:
            block = cov_fn[np.ix_(nb, nb)]
            own = cov_fn[s, s]
            cross = cov_fn[s, nb]
        else:
            dnb = np.sqrt(np.sum(
                (coords[nb][:, None, :] - coords[nb][None, :, :]) ** 2,
                axis=2))
            block = kernel_eval(spec, dnb, np.eye(nb.size, dtype=bool))
            own = spec.scale
            cross = kernel_eval(
                spec, np.sqrt(np.sum((coords[nb] - coords[s]) ** 2, axis=1)),
                np.zeros(nb.size, dtype=bool))
        t2 = float(block.sum())
        if t2 <= 0.0:
            raise ValueError(
                f"nonpositive neighborhood variance at location {s}")
        if own <= 0.0:
            raise ValueError(f"nonpositive marginal variance at location {s}")
        sigma[s] = math.sqrt(own)
        tau[s] = math.sqrt(t2)
        rho[s] = float(cross.sum()) / (sigma[s] * tau[s])
    return StatParams(sigma=sigma, tau=tau, rho=np.clip(rho, -1.0, 1.0))


def kernel_to_mapping(spec):
    return {"family": spec.family, "r": spec.r, "range": spec.range,
            "shape": spec.shape, "scale": spec.scale}


def kernel_from_mapping(mapping):
    missing = [k for k in ("family", "r", "range", "shape")
               if k not in mapping]
    if missing:
        raise DataFormatError(
            f"kernel mapping is missing keys: {', '.join(missing)}")
    try:
        return KernelSpec(family=str(mapping["family"]),
                          r=float(mapping["r"]),
                          range=float(mapping["range"]),
                          shape=float(mapping["shape"]),
                          scale=float(mapping.get("scale", 1.0)))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, DataFormatError):
            raise
        raise DataFormatError(f"bad kernel mapping: {exc}")
