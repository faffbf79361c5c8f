"""Gaussian numerics: univariate normal CDF/quantile and the bivariate
upper-quadrant probability that drives every false-rejection estimate.

The bivariate routine follows the Drezner-Wesolowsky single-integral
reduction with Gauss-Legendre quadrature and the separate high-correlation
expansion, the classic double-precision scheme. It is vectorized with
numpy broadcasting because callers evaluate it on (locations x atoms)
grids inside tight loops. Absolute error is below 1e-7 for |rho| <= 0.999;
rho = +-1 and infinite arguments are handled by exact limit formulas.
"""

from __future__ import annotations

import numpy as np
from scipy import special

__all__ = ["std_normal_cdf", "std_normal_quantile", "bvn_upper", "big_l"]

# Gauss-Legendre (weights, abscissae) pairs; node count picked by |rho|.
_GL6_W = np.array([0.1713244923791705, 0.3607615730481384, 0.4679139345726904])
_GL6_X = np.array([0.9324695142031522, 0.6612093864662647, 0.2386191860831970])
_GL12_W = np.array([
    0.04717533638651177, 0.1069393259953183, 0.1600783285433464,
    0.2031674267230659, 0.2334925365383547, 0.2491470458134029,
])
_GL12_X = np.array([
    0.9815606342467191, 0.9041172563704750, 0.7699026741943050,
    0.5873179542866171, 0.3678314989981802, 0.1252334085114692,
])
_GL20_W = np.array([
    0.01761400713915212, 0.04060142980038694, 0.06267204833410906,
    0.08327674157670475, 0.1019301198172404, 0.1181945319615184,
    0.1316886384491766, 0.1420961093183821, 0.1491729864726037,
    0.1527533871307259,
])
_GL20_X = np.array([
    0.9931285991850949, 0.9639719272779138, 0.9122344282513259,
    0.8391169718222188, 0.7463319064601508, 0.6360536807265150,
    0.5108670019508271, 0.3737060887154196, 0.2277858511416451,
    0.07652652113349733,
])

# correlations beyond this are clamped before quadrature; +-1 stay exact
_RHO_CLAMP = 0.999


def _check_finite_or_inf(name, x):
    if np.isnan(x).any():
        raise ValueError(f"{name} contains NaN")


def std_normal_cdf(x):
    """Standard normal CDF. Accepts scalars or arrays; NaN input raises."""
    arr = np.asarray(x, dtype=float)
    _check_finite_or_inf("x", arr)
    out = special.ndtr(arr)
    return float(out) if np.isscalar(x) or arr.ndim == 0 else out


def std_normal_quantile(p):
    """Inverse standard normal CDF on the open interval (0, 1)."""
    arr = np.asarray(p, dtype=float)
    _check_finite_or_inf("p", arr)
    if np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise ValueError("p must lie strictly inside (0, 1)")
    out = special.ndtri(arr)
    return float(out) if np.isscalar(p) or arr.ndim == 0 else out


def _sf(x):
    # 1 - Phi(x), computed as Phi(-x) to keep tail precision
    return special.ndtr(-x)


def _dw_mid(h, k, r):
    """|r| < 0.925 branch: Gauss-Legendre on the Drezner integral."""
    out = np.empty_like(h)
    bands = [
        (np.abs(r) < 0.3, _GL6_W, _GL6_X),
        ((np.abs(r) >= 0.3) & (np.abs(r) < 0.75), _GL12_W, _GL12_X),
        (np.abs(r) >= 0.75, _GL20_W, _GL20_X),
    ]
    for mask, w, x in bands:
        if not mask.any():
            continue
        hh, kk, rr = h[mask], k[mask], r[mask]
        ww = np.concatenate([w, w])
        xx = np.concatenate([1.0 - x, 1.0 + x])
        hk = hh * kk
        hs = 0.5 * (hh * hh + kk * kk)
        asr = 0.5 * np.arcsin(rr)
        sn = np.sin(asr[:, None] * xx[None, :])
        val = np.exp((sn * hk[:, None] - hs[:, None]) / (1.0 - sn * sn)) @ ww
        out[mask] = val * asr / (2.0 * np.pi) + _sf(hh) * _sf(kk)
    return out


def _dw_tail(h, k, r):
    """0.925 <= |r| <= 0.999 branch: expansion around |r| = 1."""
    neg = r < 0.0
    k = np.where(neg, -k, k)
    hk = h * k
    bvn = np.zeros_like(h)

    a_s = (1.0 - r) * (1.0 + r)
    a = np.sqrt(a_s)
    bs = (h - k) ** 2
    c = (4.0 - hk) / 8.0
    d = (12.0 - hk) / 16.0
    asr = -0.5 * (bs / a_s + hk)

    m1 = asr > -100.0
    bvn = np.where(
        m1,
        a * np.exp(asr) * (1.0 - c * (bs - a_s) * (1.0 - d * bs / 5.0) / 3.0
                           + c * d * a_s * a_s / 5.0),
        bvn,
    )
    m2 = -hk < 100.0
    b = np.sqrt(bs)
    sp = np.sqrt(2.0 * np.pi) * _sf(b / a)
    corr = np.exp(-0.5 * hk) * sp * b * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0)
    bvn = np.where(m2, bvn - corr, bvn)

    a2 = a / 2.0
    for is_ in (-1.0, 1.0):
        xs = (a2[:, None] * (is_ * _GL20_X[None, :] + 1.0)) ** 2
        rs = np.sqrt(1.0 - xs)
        asr2 = -0.5 * (bs[:, None] / xs + hk[:, None])
        sp2 = 1.0 + c[:, None] * xs * (1.0 + d[:, None] * xs)
        ep = np.exp(-hk[:, None] * (1.0 - rs) / (2.0 * (1.0 + rs))) / rs
        term = np.where(asr2 > -100.0, np.exp(asr2) * (ep - sp2), 0.0)
        bvn = bvn + a2 * (term @ _GL20_W)
    bvn = -bvn / (2.0 * np.pi)

    pos = bvn + _sf(np.maximum(h, k))
    # k was sign-flipped above, so this is the exact r = -1 endpoint
    flp = -bvn + np.maximum(0.0, special.ndtr(k) - special.ndtr(h))
    return np.where(neg, flp, pos)


def bvn_upper(h, k, rho):
    """P(V1 >= h, V2 >= k) for standard bivariate normal with correlation rho.

    Broadcasts over array arguments. h, k may be +-inf (exact limits);
    rho must lie in [-1, 1], with |rho| in (0.999, 1) clamped to 0.999 and
    rho = +-1 evaluated by the exact degenerate formulas.
    """
    h_a, k_a, r_a = np.broadcast_arrays(
        np.asarray(h, dtype=float), np.asarray(k, dtype=float),
        np.asarray(rho, dtype=float))
    for name, arr in (("h", h_a), ("k", k_a), ("rho", r_a)):
        _check_finite_or_inf(name, arr)
    if np.any(np.abs(r_a) > 1.0):
        raise ValueError("rho must lie in [-1, 1]")

    scalar = np.isscalar(h) and np.isscalar(k) and np.isscalar(rho)
    h_f = np.ravel(h_a).astype(float)
    k_f = np.ravel(k_a).astype(float)
    r_f = np.ravel(r_a).astype(float)
    out = np.empty_like(h_f)

    m_zero = np.isposinf(h_f) | np.isposinf(k_f)
    out[m_zero] = 0.0
    m_h = np.isneginf(h_f) & ~m_zero
    out[m_h] = _sf(k_f[m_h])          # covers k = -inf too: sf(-inf) = 1
    m_k = np.isneginf(k_f) & ~m_zero & ~m_h
    out[m_k] = _sf(h_f[m_k])

    rest = ~(m_zero | m_h | m_k)
    m_p1 = rest & (r_f == 1.0)
    out[m_p1] = _sf(np.maximum(h_f[m_p1], k_f[m_p1]))
    m_m1 = rest & (r_f == -1.0)
    out[m_m1] = np.maximum(0.0, _sf(h_f[m_m1]) - special.ndtr(k_f[m_m1]))

    core = rest & (np.abs(r_f) < 1.0)
    if core.any():
        hc, kc = h_f[core], k_f[core]
        rc = np.clip(r_f[core], -_RHO_CLAMP, _RHO_CLAMP)
        val = np.empty_like(hc)
        mid = np.abs(rc) < 0.925
        if mid.any():
            val[mid] = _dw_mid(hc[mid], kc[mid], rc[mid])
        if (~mid).any():
            val[~mid] = _dw_tail(hc[~mid], kc[~mid], rc[~mid])
        out[core] = val

    out = np.clip(out, 0.0, 1.0).reshape(h_a.shape)
    return float(out) if scalar else out


def big_l(t1, t2, xi, rho):
    """P(V1 + xi >= t1, V2 >= t2) for (V1, V2) standard normal, corr rho.

    Equals the upper-quadrant probability at (t1 - xi, t2). t1 = -inf gives
    exactly 1 - Phi(t2), the screening-free marginal tail.
    """
    t1_a = np.asarray(t1, dtype=float)
    xi_a = np.asarray(xi, dtype=float)
    return bvn_upper(t1_a - xi_a, t2, rho)
