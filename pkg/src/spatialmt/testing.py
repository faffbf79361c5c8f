"""False-discovery control over a spatial field: plug-in FDP estimates for
joint cutoffs on the (auxiliary, primary) statistic pair, the screening-free
one-dimensional initializer, and the pruned search that returns the exact
rejection-maximizing cutoff pair subject to the FDP budget.

Unweighted estimate at cutoffs (t1, t2), with R = #{T1 >= t1, T2 >= t2}:

    pi0_hat * ( sum_s integral L(t1, t2, x, rho_s) dG(x) + offset ) / (1 v R)

Weighted estimate for p-value-scale cutoffs (t1, t2), weights w(s) > 0 and
censoring level tau:

    ( sum_s pi0_s integral L(c(t1,s), c(t2,s), x, rho_s) dG(x) + offset )
        / (1 v R),      c(t, s) = Phi^-1(1 - min(tau, w(s) * t))

with R counting locations rejected under both censored weighted cutoffs.
The weighted machinery engages whenever weights, local pi0, or a censoring
level below 1 are supplied; otherwise the unweighted form is used.

The search enumerates the candidate grid of observed statistic pairs
row-by-row in descending primary cutoff, restricted to rows at or below the
one-dimensional threshold, and skips provably suboptimal candidates: within
a row, a candidate needs at least R_req = ceil(FDP * R / q) rejections
before it can become feasible, so the index jumps ahead by R_req - R. Both
restrictions are exact: the returned cutoffs maximize rejections among all
estimated-FDP-feasible pairs, with ties broken toward the smallest estimate.
Ties among statistic values are handled on multiset positions, evaluating
each distinct cutoff once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.special import ndtri

from .gaussnum import bvn_upper, std_normal_cdf
from .npeb import expected_false_rejections

__all__ = [
    "FdpEstimatorConfig", "DecisionResult",
    "storey_pi0", "groupwise_pi0", "weight_scheme",
    "estimate_fdp", "one_d_threshold", "search_cutoffs_2d",
    "apply_rejections", "bh_procedure", "storey_bh",
    "write_rejections_csv", "decision_record",
]

_WEIGHT_FLOOR = 1e-6


@dataclass(frozen=True)
class FdpEstimatorConfig:
    """Knobs of the FDP estimate.

    storey_lambda: screening level of the global null-fraction estimate,
        on the primary statistic scale (default 0).
    offset: numerator offset; None means "use the FDP budget q".
    censor_tau: p-value censoring level in (0, 1]; 1 disables censoring.
    weights: per-location positive weights (None means unweighted mode
        unless pi0_local or censoring is supplied).
    pi0_local: per-location null fractions for the weighted numerator;
        None defaults to the global Storey estimate.
    """

    storey_lambda: float = 0.0
    offset: float = None
    censor_tau: float = 1.0
    weights: np.ndarray = None
    pi0_local: np.ndarray = None

    def __post_init__(self):
        if not np.isfinite(self.storey_lambda):
            raise ValueError("storey_lambda must be finite")
        if self.offset is not None and not self.offset >= 0.0:
            raise ValueError("offset must be nonnegative")
        if not 0.0 < self.censor_tau <= 1.0:
            raise ValueError("censor_tau must lie in (0, 1]")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if not np.isfinite(w).all() or np.any(w <= 0.0):
                raise ValueError("weights must be finite and positive")
            object.__setattr__(self, "weights", w)
        if self.pi0_local is not None:
            p0 = np.asarray(self.pi0_local, dtype=float)
            if np.any(p0 <= 0.0) or np.any(p0 > 1.0):
                raise ValueError("pi0_local must lie in (0, 1]")
            object.__setattr__(self, "pi0_local", p0)

    @property
    def weighted(self):
        return (self.weights is not None or self.pi0_local is not None
                or self.censor_tau < 1.0)


@dataclass(frozen=True)
class DecisionResult:
    """Outcome of a cutoff search.

    t1_star / t2_star are on the statistic scale in unweighted mode
    (-inf = no screening, +inf = reject nothing) and on the p-value scale
    in weighted mode (+inf = no screening, 0 = reject nothing). The
    candidate counters track the raw pair grid, its restriction to rows at
    or below the one-dimensional threshold, and the candidates actually
    evaluated; evaluations equals the number of numerator evaluations.
    init_n_rejected is the rejection count of the one-dimensional
    initializer, for matched comparisons.
    """

    t1_star: float
    t2_star: float
    rejected: frozenset
    rejected_mask: np.ndarray
    fdp_hat: float
    n_rejected: int
    evaluations: int
    candidates_step1: int
    candidates_step2: int
    candidates_step3: int
    init_n_rejected: int


def storey_pi0(t2_hat, storey_lambda=0.0):
    """Global null-fraction estimate #{T2 < lambda} / (m Phi(lambda)),
    clamped to [1/m, 1]."""
    t2 = np.asarray(t2_hat, dtype=float)
    m = t2.shape[0]
    denom = m * std_normal_cdf(storey_lambda)
    raw = float(np.sum(t2 < storey_lambda)) / denom
    return float(min(1.0, max(1.0 / m, raw)))


def groupwise_pi0(p_values, groups, lambda_p=0.5):
    """Per-location Storey estimate pooled within groups, on p-values."""
    p = np.asarray(p_values, dtype=float)
    if not 0.0 <= lambda_p < 1.0:
        raise ValueError("lambda_p must lie in [0, 1)")
    labels, inverse = np.unique(np.asarray(groups), return_inverse=True)
    out = np.empty(p.shape[0])
    for g in range(labels.size):
        sel = inverse == g
        n_g = int(sel.sum())
        raw = float(np.sum(p[sel] > lambda_p)) / (n_g * (1.0 - lambda_p))
        out[sel] = min(1.0, max(1.0 / n_g, raw))
    return out


def weight_scheme(pi0_local, scheme):
    """Weights from local null fractions: 'sabha' uses 1/pi0, 'laws' uses
    (1-pi0)/pi0 floored away from zero, 'gbh' rescales laws to mean 1."""
    p0 = np.asarray(pi0_local, dtype=float)
    if np.any(p0 <= 0.0) or np.any(p0 > 1.0):
        raise ValueError("pi0_local must lie in (0, 1]")
    if scheme == "sabha":
        return 1.0 / p0
    if scheme == "laws":
        return np.maximum((1.0 - p0) / p0, _WEIGHT_FLOOR)
    if scheme == "gbh":
        w = np.maximum((1.0 - p0) / p0, _WEIGHT_FLOOR)
        return w / w.mean()
    raise ValueError(f"unknown weight scheme {scheme!r}")


def _sf(x):
    return std_normal_cdf(-np.asarray(x, dtype=float))


def _quantile_upper(p):
    """Phi^-1(1 - p) with the closed endpoints mapped to +-inf."""
    arr = np.asarray(p, dtype=float)
    out = np.empty_like(arr)
    lo = arr <= 0.0
    hi = arr >= 1.0
    mid = ~(lo | hi)
    out[lo] = np.inf
    out[hi] = -np.inf
    out[mid] = -ndtri(arr[mid])
    return out


class _Evaluator:
    """Shared state for FDP evaluation at cutoff pairs.

    Exposes numerator-and-ratio evaluation on the operative scale: the raw
    statistic scale when unweighted, the negated weighted p-value scale
    u_j = -p_j / w otherwise. Groups locations with identical
    (weight, local pi0, rho) so the bivariate quadrant probabilities are
    computed once per distinct triple.
    """

    def __init__(self, stats, g, cfg, q):
        if not 0.0 < q < 1.0:
            raise ValueError("q must lie in (0, 1)")
        self.g = g
        self.q = q
        self.cfg = cfg
        self.offset = q if cfg.offset is None else cfg.offset
        self.m = stats.m
        self.evaluations = 0
        self.weighted = cfg.weighted
        if not self.weighted:
            self.pi0 = storey_pi0(stats.t2_hat, cfg.storey_lambda)
            self.rho = stats.rho_hat
            self.u1 = stats.t1_hat
            self.u2 = stats.t2_hat
            self.eligible = np.ones(self.m, dtype=bool)
        else:
            w = cfg.weights if cfg.weights is not None else np.ones(self.m)
            if w.shape[0] != self.m:
                raise ValueError("weights length must match the statistics")
            pi0_loc = cfg.pi0_local if cfg.pi0_local is not None else \
                np.full(self.m, storey_pi0(stats.t2_hat, cfg.storey_lambda))
            if pi0_loc.shape[0] != self.m:
                raise ValueError("pi0_local length must match the statistics")
            self.w = w
            self.pi0_loc = pi0_loc
            tau = cfg.censor_tau
            p1 = _sf(stats.t1_hat)
            p2 = _sf(stats.t2_hat)
            self.u1 = -p1 / w
            self.u2 = -p2 / w
            self.eligible = (p1 <= tau) & (p2 <= tau)
            trip = np.column_stack([w, pi0_loc, stats.rho_hat])
            uniq, counts = np.unique(trip, axis=0, return_counts=True)
            self.g_w = uniq[:, 0]
            self.g_pi0 = uniq[:, 1]
            self.g_rho = uniq[:, 2]
            self.g_counts = counts.astype(float)

    # -- numerators ---------------------------------------------------------

    def numerator(self, a1, a2):
        """Offset-inclusive numerator at operative-scale cutoffs (a1, a2)."""
        self.evaluations += 1
        if not self.weighted:
            core = expected_false_rejections(self.g, self.rho, a1, a2)
            return self.pi0 * (core + self.offset)
        tau = self.cfg.censor_tau
        t1 = -a1 if a1 != -np.inf else np.inf
        t2 = -a2 if a2 != -np.inf else np.inf
        c1 = _quantile_upper(np.minimum(tau, self.g_w * t1))
        c2 = _quantile_upper(np.minimum(tau, self.g_w * t2))
        probs = bvn_upper(c1[:, None] - self.g.support[None, :],
                          c2[:, None], self.g_rho[:, None])
        per = probs @ self.g.weights
        return float(np.sum(self.g_counts * self.g_pi0 * per)) + self.offset

    def fdp(self, a1, a2, n_rejected):
        return self.numerator(a1, a2) / max(1, n_rejected)

    def count_rejections(self, a1, a2):
        return int(np.sum(self.eligible & (self.u1 >= a1)
                          & (self.u2 >= a2)))

    # -- screening-free initializer -----------------------------------------

    def init_numerators(self, a2_values):
        """Numerators at (no screening, a2) for a vector of candidates;
        closed form unless censoring is active."""
        a2 = np.asarray(a2_values, dtype=float)
        if not self.weighted:
            return self.pi0 * (self.m * _sf(a2) + self.offset)
        tau = self.cfg.censor_tau
        t2 = -a2
        arg2 = np.minimum(tau, self.g_w[:, None] * t2[None, :])
        c2 = _quantile_upper(arg2)
        if tau >= 1.0:
            tail = _sf(c2)
        else:
            c1 = _quantile_upper(np.array([tau]))[0]
            probs = bvn_upper(
                c1 - self.g.support[None, None, :],
                c2[:, :, None], self.g_rho[:, None, None])
            tail = probs @ self.g.weights
        w_pi = self.g_counts * self.g_pi0
        return w_pi @ tail + self.offset


def estimate_fdp(t1, t2, stats, g, cfg, q):
    """Estimated FDP at the given cutoffs (statistic scale when unweighted,
    p-value scale when weighted)."""
    ev = _Evaluator(stats, g, cfg, q)
    if not ev.weighted:
        a1, a2 = float(t1), float(t2)
    else:
        a1 = -float(t1) if t1 != np.inf else -np.inf
        a2 = -float(t2) if t2 != np.inf else -np.inf
    r = ev.count_rejections(a1, a2)
    return ev.numerator(a1, a2) / max(1, r)


def _init_scan(ev):
    """Best screening-free cutoff: maximizes rejections among candidates
    with estimated FDP <= q; ties toward the smallest cutoff. Returns
    (a2 on the operative scale, R, fdp); +inf sentinel rejects nothing."""
    u2 = ev.u2[ev.eligible]
    if u2.size:
        cand = np.unique(u2)[::-1]                   # descending
        srt = np.sort(u2)
        r_vec = u2.size - np.searchsorted(srt, cand, side="left")
        est = ev.init_numerators(cand) / np.maximum(1, r_vec)
        ok = est <= ev.q
        if ok.any():
            best = np.argmax(np.where(ok, r_vec, -1))
            return float(cand[best]), int(r_vec[best]), float(est[best])
    fdp0 = float(ev.init_numerators(np.array([np.inf]))[0]) \
        if ev.weighted else ev.pi0 * ev.offset
    return np.inf, 0, fdp0


def one_d_threshold(stats, g, cfg, q):
    """Screening-free cutoff on the native scale: the primary-statistic
    threshold when unweighted, the weighted p-value threshold otherwise.
    Returns the reject-nothing sentinel (+inf, or 0 when weighted) if no
    candidate is feasible."""
    ev = _Evaluator(stats, g, cfg, q)
    a2, _, _ = _init_scan(ev)
    if not ev.weighted:
        return float(a2)
    return 0.0 if a2 == np.inf else float(-a2)


def search_cutoffs_2d(stats, g, cfg, q, m_stop=None):
    """Exact rejection-maximizing cutoff pair subject to estimated FDP <= q.

    Enumerates candidate pairs (observed auxiliary value, observed primary
    value) restricted to the screening-free threshold's rows, pruning
    candidates that provably cannot beat the incumbent. m_stop, if given,
    stops after that many consecutive rows whose evaluated candidates all
    exceed the budget (a heuristic; None keeps the search exact).
    """
    ev = _Evaluator(stats, g, cfg, q)
    if m_stop is not None and m_stop < 1:
        raise ValueError("m_stop must be positive when given")

    a2_init, r_init, fdp_init = _init_scan(ev)
    best_a1, best_a2 = -np.inf, a2_init
    r_max, fdp_min = r_init, fdp_init

    el = ev.eligible
    v1 = ev.u1[el]
    v2 = ev.u2[el]
    n = v1.size
    step1 = 1  # the (inf, inf) sentinel pair
    step2 = 1 if a2_init == np.inf else 0
    bad_rows = 0
    stopped = False

    if n:
        by_v2 = np.argsort(-v2, kind="stable")
        v2_desc = v2[by_v2]
        v1_desc = v1[by_v2]
        asc = np.argsort(v1, kind="stable")
        v1_sorted = v1[asc]
        pos_in_sorted = np.empty(n, dtype=int)
        pos_in_sorted[asc] = np.arange(n)
        active = np.zeros(n, dtype=bool)

        row_starts = np.flatnonzero(
            np.concatenate([[True], v2_desc[1:] != v2_desc[:-1]]))
        row_ends = np.append(row_starts[1:], n)

        for start, end in zip(row_starts, row_ends):
            y = v2_desc[start]
            active[pos_in_sorted[by_v2[start:end]]] = True
            arr = v1_sorted[active]
            m_max = float(v1_desc[start:end].max())
            idx_le = int(np.searchsorted(arr, m_max, side="right"))
            e_above = arr.size - idx_le
            step1 += idx_le
            if y > a2_init or stopped:
                continue
            step2 += idx_le
            entries = arr[:idx_le]
            m_i = idx_le

            def r_at(j):
                v = entries[m_i - j]
                cnt_ge = m_i - int(np.searchsorted(entries, v, side="left"))
                return float(v), cnt_ge

            v_first, cnt_first = r_at(1)
            j = 1 + max(0, r_max - (e_above + cnt_first))
            row_ok = False
            while j <= m_i:
                v, cnt_ge = r_at(j)
                r = e_above + cnt_ge
                fdp = ev.fdp(v, y, r)
                if fdp <= q:
                    row_ok = True
                if (r == r_max and fdp < fdp_min) or (r > r_max and fdp <= q):
                    best_a1, best_a2 = v, y
                    r_max, fdp_min = r, fdp
                    j = cnt_ge + 1
                else:
                    r_req = math.ceil(fdp * r / q)
                    j = max(j + max(1, r_req - r), cnt_ge + 1)
            if m_stop is not None:
                bad_rows = 0 if row_ok else bad_rows + 1
                if bad_rows >= m_stop:
                    stopped = True

    mask = _rejection_mask_operative(ev, best_a1, best_a2)
    ids = frozenset(i for i, rej in zip(stats.ids, mask) if rej)
    if not ev.weighted:
        t1_star, t2_star = float(best_a1), float(best_a2)
    else:
        t1_star = np.inf if best_a1 == -np.inf else float(-best_a1)
        t2_star = 0.0 if best_a2 == np.inf else float(-best_a2)
    return DecisionResult(
        t1_star=t1_star, t2_star=t2_star, rejected=ids, rejected_mask=mask,
        fdp_hat=float(fdp_min), n_rejected=int(mask.sum()),
        evaluations=ev.evaluations, candidates_step1=step1,
        candidates_step2=step2, candidates_step3=ev.evaluations,
        init_n_rejected=r_init)


def _rejection_mask_operative(ev, a1, a2):
    return ev.eligible & (ev.u1 >= a1) & (ev.u2 >= a2)


def apply_rejections(stats, t1, t2, cfg=None):
    """Rejection mask at the given cutoffs (native scales, see
    DecisionResult)."""
    cfg = cfg if cfg is not None else FdpEstimatorConfig()
    if not cfg.weighted:
        return (stats.t1_hat >= t1) & (stats.t2_hat >= t2)
    w = cfg.weights if cfg.weights is not None else np.ones(stats.m)
    tau = cfg.censor_tau
    p1 = _sf(stats.t1_hat)
    p2 = _sf(stats.t2_hat)
    a1 = -float(t1) if t1 != np.inf else -np.inf
    a2 = -float(t2) if t2 != np.inf else -np.inf
    return ((p1 <= tau) & (p2 <= tau)
            & (-p1 / w >= a1) & (-p2 / w >= a2))


def bh_procedure(p_values, q):
    """Step-up procedure on raw p-values; returns a rejection mask."""
    p = np.asarray(p_values, dtype=float)
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0, 1)")
    m = p.shape[0]
    order = np.argsort(p, kind="stable")
    thresh = q * np.arange(1, m + 1) / m
    ok = p[order] <= thresh
    if not ok.any():
        return np.zeros(m, dtype=bool)
    k = int(np.flatnonzero(ok)[-1])
    return p <= p[order][k]


def storey_bh(p_values, q, lambda_p=0.5):
    """Step-up procedure at the null-fraction-adjusted level q / pi0_hat."""
    p = np.asarray(p_values, dtype=float)
    m = p.shape[0]
    if not 0.0 <= lambda_p < 1.0:
        raise ValueError("lambda_p must lie in [0, 1)")
    pi0 = min(1.0, max(1.0 / m,
                       float(np.sum(p > lambda_p)) / (m * (1.0 - lambda_p))))
    return bh_procedure(p, min(q / pi0, 1.0 - 1e-12))


def write_rejections_csv(stats, rejected_mask, path):
    pd.DataFrame({
        "id": list(stats.ids),
        "t1_hat": stats.t1_hat,
        "t2_hat": stats.t2_hat,
        "rejected": rejected_mask.astype(int),
    }).to_csv(path, index=False)


def decision_record(result, method, q):
    """JSON-ready summary of a decision."""
    def clean(x):
        if x is None or (isinstance(x, float) and not math.isfinite(x)):
            return None if x is None else ("inf" if x > 0 else "-inf")
        return x

    return {
        "method": method, "q": float(q),
        "t1_star": clean(float(result.t1_star)),
        "t2_star": clean(float(result.t2_star)),
        "fdp_hat": float(result.fdp_hat),
        "n_rejected": int(result.n_rejected),
        "evaluations": int(result.evaluations),
    }
