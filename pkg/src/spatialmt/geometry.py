"""Spatial domains, k-nearest-neighbor maps, and the spaced subset used to
fit the mixing distribution.

Locations live in 1 or 2 dimensions. All neighbor orderings are by distance
with ties broken by position in the domain (construction order), which makes
every routine here deterministic for a fixed input file.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import DataFormatError

__all__ = [
    "SpatialDomain", "NeighborhoodMap", "NpebSubset",
    "knn_neighborhoods", "adaptive_neighborhoods", "select_npeb_subset",
]

KAPPA_MAX = 7


@dataclass(frozen=True)
class SpatialDomain:
    """Ordered collection of unique location ids with 1d or 2d coordinates."""

    ids: tuple
    coords: np.ndarray  # (m, dim), dim in {1, 2}

    def __post_init__(self):
        ids = tuple(str(i) for i in self.ids)
        coords = np.atleast_2d(np.asarray(self.coords, dtype=float))
        if coords.shape[0] == 1 and len(ids) > 1:
            coords = coords.T
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "coords", coords)
        if coords.ndim != 2 or coords.shape[1] not in (1, 2):
            raise ValueError("coords must be (m, 1) or (m, 2)")
        if coords.shape[0] != len(ids):
            raise ValueError("ids and coords length mismatch")
        if len(set(ids)) != len(ids):
            raise ValueError("location ids must be unique")
        if not np.isfinite(coords).all():
            raise ValueError("coordinates must be finite")
        coords.setflags(write=False)

    @property
    def m(self):
        return len(self.ids)

    @property
    def dim(self):
        return self.coords.shape[1]

    def distance_matrix(self):
        d = self.coords[:, None, :] - self.coords[None, :, :]
        return np.sqrt(np.sum(d * d, axis=2))

    @classmethod
    def from_csv(cls, path):
        df = pd.read_csv(path, dtype={"id": str})
        cols = set(df.columns)
        if "id" not in cols or "x" not in cols:
            raise DataFormatError(
                f"locations file needs columns id,x[,y]; found {sorted(cols)}")
        coord_cols = ["x", "y"] if "y" in cols else ["x"]
        try:
            coords = df[coord_cols].to_numpy(dtype=float)
        except (TypeError, ValueError) as exc:
            raise DataFormatError(f"non-numeric coordinates: {exc}") from exc
        if df["id"].duplicated().any():
            dup = df.loc[df["id"].duplicated(), "id"].iloc[0]
            raise DataFormatError(f"duplicate location id {dup!r}")
        return cls(tuple(df["id"]), coords)


@dataclass(frozen=True)
class NeighborhoodMap:
    """Per-location neighbor index lists, aligned with a domain's ordering.

    Invariants: a location is never its own neighbor, lists are nonempty
    with at most KAPPA_MAX entries, and each list is sorted by distance
    (ties by domain position).
    """

    ids: tuple
    indices: tuple  # tuple of int ndarrays

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))
        idx = tuple(np.asarray(a, dtype=int) for a in self.indices)
        object.__setattr__(self, "indices", idx)
        m = len(self.ids)
        if len(idx) != m:
            raise ValueError("one neighbor list per location required")
        for s, arr in enumerate(idx):
            if arr.size == 0 or arr.size > KAPPA_MAX:
                raise ValueError(
                    f"neighbor list of location {s} has size {arr.size}, "
                    f"expected 1..{KAPPA_MAX}")
            if (arr < 0).any() or (arr >= m).any():
                raise ValueError(f"neighbor index out of range at location {s}")
            if s in arr:
                raise ValueError(f"location {s} listed as its own neighbor")
            if len(np.unique(arr)) != arr.size:
                raise ValueError(f"duplicate neighbor at location {s}")

    @property
    def sizes(self):
        return np.array([a.size for a in self.indices])

    def neighbor_ids(self, s):
        return tuple(self.ids[j] for j in self.indices[s])


@dataclass(frozen=True)
class NpebSubset:
    """Spaced location subset with pairwise disjoint closed neighborhoods."""

    ids: tuple
    indices: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))
        object.__setattr__(
            self, "indices", np.asarray(self.indices, dtype=int))


def _sorted_neighbor_order(domain):
    """Row i: all other locations sorted by distance to i, ties by position."""
    dist = domain.distance_matrix()
    np.fill_diagonal(dist, np.inf)
    m = domain.m
    pos = np.broadcast_to(np.arange(m), (m, m))
    order = np.lexsort((pos, dist), axis=1)
    return order, dist


def knn_neighborhoods(domain, kappa):
    """The kappa nearest neighbors of every location."""
    kappa = int(kappa)
    m = domain.m
    if kappa >= m:
        raise ValueError(f"kappa={kappa} needs at least kappa+1={kappa + 1} "
                         f"locations, domain has m={m}")
    if not 1 <= kappa <= KAPPA_MAX:
        raise ValueError(f"kappa must be in [1, {KAPPA_MAX}], got {kappa}")
    order, _ = _sorted_neighbor_order(domain)
    idx = tuple(order[i, :kappa].copy() for i in range(m))
    return NeighborhoodMap(domain.ids, idx)


def adaptive_neighborhoods(domain, primary_stats, kappa_default=4,
                           kappa_min=2, kappa_max=KAPPA_MAX):
    """Per-location neighborhood size driven by the screening statistics.

    A location whose two nearest neighbors include a negative statistic keeps
    the default size. Otherwise the size grows to the longest all-positive
    run among the kappa_max nearest, floored at kappa_min. The measure-zero
    case of an exact zero among the two nearest falls back to the default.
    """
    stats = np.asarray(primary_stats, dtype=float)
    m = domain.m
    if stats.shape != (m,):
        raise ValueError("primary_stats must have one value per location")
    if not np.isfinite(stats).all():
        raise ValueError("primary_stats must be finite")
    if not (1 <= kappa_min <= kappa_default <= kappa_max <= KAPPA_MAX):
        raise ValueError("need 1 <= kappa_min <= kappa_default <= kappa_max "
                         f"<= {KAPPA_MAX}")
    if m <= kappa_max:
        raise ValueError(f"domain too small for kappa_max={kappa_max}")

    order, _ = _sorted_neighbor_order(domain)
    near = order[:, :kappa_max]
    vals = stats[near]
    positive = vals > 0.0
    # longest all-positive prefix of each row
    run = np.where(positive.all(axis=1), kappa_max,
                   np.argmin(positive, axis=1))
    kappas = np.where(run >= kappa_min, np.minimum(run, kappa_max),
                      kappa_default)
    idx = tuple(near[i, :kappas[i]].copy() for i in range(m))
    return NeighborhoodMap(domain.ids, idx)


def select_npeb_subset(domain, neighborhoods):
    """Greedy scan in domain order keeping locations whose closed
    neighborhoods stay pairwise disjoint."""
    m = domain.m
    if len(neighborhoods.indices) != m:
        raise ValueError("neighborhood map does not match domain")
    used = np.zeros(m, dtype=bool)
    accepted = []
    for s in range(m):
        closed = np.append(neighborhoods.indices[s], s)
        if not used[closed].any():
            accepted.append(s)
            used[closed] = True
    idx = np.array(accepted, dtype=int)
    return NpebSubset(tuple(domain.ids[i] for i in idx), idx)
