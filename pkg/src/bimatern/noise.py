"""Correlated-nugget measurement noise.

Builds the sparse nugget precision Q_eps for arbitrary co-location patterns,
its closed-form log-determinant, and the log-scale working-parameter maps
used by the optimizers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .sparse import assemble

DIAGONAL = "diagonal"
GENERAL = "general"

# coordinates are rounded to this many decimals before co-location matching
PAIRING_DECIMALS = 9


class NoiseError(Exception):
    pass


@dataclass(frozen=True)
class NuggetParams:
    sigma_e1: float
    sigma_e2: float
    rho_e: float = 0.0
    structure: str = DIAGONAL

    def __post_init__(self):
        if self.sigma_e1 <= 0 or self.sigma_e2 <= 0:
            raise NoiseError("nugget standard deviations must be positive")
        if self.structure not in (DIAGONAL, GENERAL):
            raise NoiseError(f"unknown structure {self.structure!r}")
        if self.structure == DIAGONAL and self.rho_e != 0.0:
            object.__setattr__(self, "rho_e", 0.0)
        if abs(self.rho_e) >= 1.0:
            raise NoiseError("|rho_e| must be < 1")

    def covariance2(self):
        """The 2x2 nugget covariance for a co-located observation pair."""
        s1, s2, r = self.sigma_e1, self.sigma_e2, self.rho_e
        return np.array([[s1 * s1, s1 * s2 * r], [s1 * s2 * r, s2 * s2]])


@dataclass(frozen=True)
class NuggetLayout:
    """Co-location pattern of a bivariate observation set.

    pair_index[i] is the global index (into the stacked field-1-then-field-2
    observation vector) of the observation of the other field sharing
    location i, or -1 when unpaired.
    """

    n1: int
    n2: int
    pair_index: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.pair_index, dtype=np.int64)
        object.__setattr__(self, "pair_index", p)
        if len(p) != self.n1 + self.n2:
            raise NoiseError("pair_index length must be n1 + n2")
        for i, j in enumerate(p):
            if j >= 0:
                if p[j] != i:
                    raise NoiseError("pairing must be symmetric")
                if (i < self.n1) == (j < self.n1):
                    raise NoiseError("pairs must join observations of different fields")

    @property
    def n_total(self):
        return self.n1 + self.n2

    @property
    def paired_rows(self):
        """Indices i < n1 of field-1 observations having a field-2 partner."""
        idx = np.arange(self.n1)
        return idx[self.pair_index[: self.n1] >= 0]


def layout_from_locations(loc1, loc2):
    """Derive the co-location pairing from per-field coordinate arrays.

    Coordinates are rounded to PAIRING_DECIMALS decimals; identical rounded
    coordinates in the two fields are paired (injectively, first match wins).
    """
    loc1 = np.atleast_2d(np.asarray(loc1, dtype=np.float64))
    loc2 = np.atleast_2d(np.asarray(loc2, dtype=np.float64))
    n1, n2 = len(loc1), len(loc2)
    pair = np.full(n1 + n2, -1, dtype=np.int64)
    avail = {}
    for j in range(n2):
        key = tuple(np.round(loc2[j], PAIRING_DECIMALS))
        avail.setdefault(key, []).append(j)
    for i in range(n1):
        key = tuple(np.round(loc1[i], PAIRING_DECIMALS))
        cand = avail.get(key)
        if cand:
            j = cand.pop(0)
            pair[i] = n1 + j
            pair[n1 + j] = i
    return NuggetLayout(n1=n1, n2=n2, pair_index=pair)


def nugget_precision(params, layout):
    """Sparse precision of the measurement noise for the given layout.

    Paired observations receive the 2x2 inverse of the nugget covariance;
    unpaired observations an independent 1/sigma^2 entry.
    """
    s1, s2, r = params.sigma_e1, params.sigma_e2, params.rho_e
    if abs(r) >= 1.0:
        raise NoiseError("|rho_e| must be < 1")
    denom = 1.0 - r * r
    q11 = 1.0 / (denom * s1 * s1)
    q22 = 1.0 / (denom * s2 * s2)
    q12 = -r / (denom * s1 * s2)
    trip = []
    pair = layout.pair_index
    for i in range(layout.n_total):
        field1 = i < layout.n1
        j = pair[i]
        if j < 0:
            trip.append((i, i, 1.0 / (s1 * s1) if field1 else 1.0 / (s2 * s2)))
        else:
            trip.append((i, i, q11 if field1 else q22))
            trip.append((i, j, q12))
    return assemble(trip, layout.n_total, layout.n_total)


def nugget_covariance(params, layout):
    """Dense covariance of the measurement noise (oracle / simulation use)."""
    m = layout.n_total
    cov = np.zeros((m, m))
    s1, s2, r = params.sigma_e1, params.sigma_e2, params.rho_e
    for i in range(m):
        field1 = i < layout.n1
        cov[i, i] = s1 * s1 if field1 else s2 * s2
        j = layout.pair_index[i]
        if j >= 0:
            cov[i, j] = s1 * s2 * r
    return cov


def nugget_logdet(params, layout):
    """log |Q_eps| in closed form: paired blocks plus unpaired diagonal terms."""
    s1, s2, r = params.sigma_e1, params.sigma_e2, params.rho_e
    n_pairs = len(layout.paired_rows)
    n_un1 = layout.n1 - n_pairs
    n_un2 = layout.n2 - n_pairs
    paired = -n_pairs * (2.0 * np.log(s1) + 2.0 * np.log(s2) + np.log(1.0 - r * r))
    unpaired = -2.0 * n_un1 * np.log(s1) - 2.0 * n_un2 * np.log(s2)
    return paired + unpaired


# ---------------------------------------------------------------------------
# working-parameter maps


def rho_e_to_working(rho_e):
    return -np.log((1.0 - rho_e) / (1.0 + rho_e))


def rho_e_from_working(t):
    # tanh rounds to exactly +-1 for |t| beyond ~38; keep the correlation
    # strictly inside the open interval so optimizer line searches that
    # overshoot still produce a valid (if extreme) parameter
    return float(np.clip(np.tanh(0.5 * t), -1.0 + 1e-12, 1.0 - 1e-12))


def log_to_working(x):
    return np.log(x)


def log_from_working(t):
    return np.exp(t)
