"""Kernel-sum scans for the intrinsic dimension and a kernel bandwidth."""

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from ._io import write_columns

_RADIUS_SLACK = 1 + 1e-9


class PairDistances:
    """Squared distances of all anchor pairs (i < j) within ``cutoff``.

    Computed once per scan so that every ``eps`` sees the same neighbour set
    and ``S(eps)`` is nondecreasing.
    """

    def __init__(self, X, cutoff):
        X = np.asarray(X, dtype=float)
        self.m = X.shape[0]
        self.cutoff = float(cutoff)
        if self.cutoff >= np.linalg.norm(np.ptp(X, axis=0)):
            # every pair is inside the cutoff; skip the tree
            d2 = pdist(X, "sqeuclidean")
        else:
            pairs = cKDTree(X).query_pairs(self.cutoff * _RADIUS_SLACK, output_type="ndarray")
            d2 = np.sum((X[pairs[:, 0]] - X[pairs[:, 1]]) ** 2, axis=1)
        self.d2 = np.sort(d2[d2 <= self.cutoff**2])

    def kernel_sum(self, epsilon):
        """``S(eps) = m^-2 sum_{i,j} k_eps(x_i, x_j)`` (diagonal included)."""
        off = np.sum(np.exp(-self.d2 / epsilon))
        return (self.m + 2.0 * off) / self.m**2


def kernel_sum(X, epsilon, cutoff=None):
    if cutoff is None:
        cutoff = np.sqrt(2 * epsilon)
    return PairDistances(X, cutoff).kernel_sum(epsilon)


@dataclass
class DimensionScan:
    """Result of a bandwidth scan.

    ``slopes[i]`` is the log-log slope located at ``slope_epsilons[i]``;
    ``band`` holds the indices (into ``slopes``) of the contiguous region
    around the maximum whose slopes are within 10% of it.
    """

    epsilons: np.ndarray
    S_values: np.ndarray
    slopes: np.ndarray
    slope_epsilons: np.ndarray
    eps_star: float
    d_int: float
    scan_cutoff: float
    band: np.ndarray

    @property
    def a_max(self):
        return self.d_int / 2

    def columns(self):
        """Rows ``(eps, S, log eps, log S, a)``; slopes aligned to rows."""
        a = np.full(self.epsilons.size, np.nan)
        if self.slopes.size == self.epsilons.size:
            a[:] = self.slopes
        else:
            a[: self.slopes.size] = self.slopes
        return np.column_stack([self.epsilons, self.S_values, np.log(self.epsilons), np.log(self.S_values), a])

    def save(self, path):
        meta = {"eps_star": float(self.eps_star), "d_int": float(self.d_int), "scan_cutoff": float(self.scan_cutoff)}
        write_columns(path, self.columns(), ["epsilon", "S", "log_epsilon", "log_S", "slope"], meta=meta)


def _band(slopes, i_max, rel=0.1):
    top = slopes[i_max]
    ok = np.abs(slopes - top) <= rel * abs(top)
    lo = hi = i_max
    while lo > 0 and ok[lo - 1]:
        lo -= 1
    while hi < slopes.size - 1 and ok[hi + 1]:
        hi += 1
    return np.arange(lo, hi + 1)


def _check_points(X):
    X = check_array(X, dtype=float)
    if X.shape[0] < 2:
        raise ValueError("need at least two points")
    if np.all(X == X[0]):
        raise ValueError("all points coincide; the kernel-sum slope is undefined")
    return X


def linear_region(slopes, rel=0.1, floor=0.5):
    """Longest contiguous run of slopes that agree to within ``rel`` of their
    maximum, ignoring runs with any slope below ``floor`` times the global
    maximum (the flat tails where S is saturated or purely diagonal).

    Returns inclusive ``(lo, hi)`` indices into ``slopes``.
    """
    top = slopes.max()
    best, best_key = (int(np.argmax(slopes)),) * 2, (0, top)
    for lo in range(slopes.size):
        if slopes[lo] < floor * top:
            continue
        hi_val = lo_val = slopes[lo]
        for hi in range(lo, slopes.size):
            if slopes[hi] < floor * top:
                break
            hi_val, lo_val = max(hi_val, slopes[hi]), min(lo_val, slopes[hi])
            if hi_val - lo_val > rel * hi_val:
                break
            key = (hi - lo, hi_val)
            if key > best_key:
                best, best_key = (lo, hi), key
    return best


def _scan(X, epsilons, slope_fn, window=None):
    cutoff = np.sqrt(2 * epsilons.max())
    pairs = PairDistances(X, cutoff)
    sums = np.array([pairs.kernel_sum(e) for e in epsilons])
    slopes, where = slope_fn(np.log(epsilons), np.log(sums), epsilons)
    if window is None:
        i = int(np.argmax(slopes))
        band = _band(slopes, i)
    else:
        lo, hi = window(slopes)
        i = lo + int(np.argmax(slopes[lo: hi + 1]))
        band = np.arange(lo, hi + 1)
    return DimensionScan(
        epsilons=epsilons,
        S_values=sums,
        slopes=slopes,
        slope_epsilons=where,
        eps_star=float(where[i]),
        d_int=float(2 * slopes[i]),
        scan_cutoff=float(cutoff),
        band=band,
    )


def _forward(log_eps, log_s, eps):
    slopes = np.diff(log_s) / np.diff(log_eps)
    return slopes, np.sqrt(eps[:-1] * eps[1:])


def _centered(log_eps, log_s, eps):
    if eps.size == 2:
        return _forward(log_eps, log_s, eps)
    return np.gradient(log_s, log_eps), eps


SELECTIONS = ("linear", "max")


def coarse_scan(X, i_min=-30, i_max=10, selection="linear"):
    """Scan ``eps_i = 2^i``; slopes are forward differences between grid points.

    ``selection="max"`` takes the global slope maximum.  ``"linear"`` takes
    the maximum inside the region of linearity (see ``linear_region``),
    which skips the overshoot a curved set produces once ``eps`` reaches its
    global length scale; ``band`` then holds that region.
    """
    X = _check_points(X)
    if i_max <= i_min:
        raise ValueError("need i_max > i_min")
    if selection not in SELECTIONS:
        raise ValueError(f"selection must be one of {SELECTIONS}")
    epsilons = 2.0 ** np.arange(i_min, i_max + 1)
    return _scan(X, epsilons, _forward, linear_region if selection == "linear" else None)


def refine_scan(X, coarse, n_fine=50, octaves=2):
    """Log-uniform scan over ``eps*/2^octaves .. eps* 2^octaves``.

    When ``coarse`` is a linear-region scan the range is clipped to the
    coarse grid points spanned by that region.
    """
    X = _check_points(X)
    if n_fine < 2:
        raise ValueError("n_fine must be at least 2")
    center = coarse.eps_star if isinstance(coarse, DimensionScan) else float(coarse)
    lo, hi = center / 2.0**octaves, center * 2.0**octaves
    if isinstance(coarse, DimensionScan) and coarse.slopes.size == coarse.epsilons.size - 1:
        lo = max(lo, coarse.epsilons[coarse.band[0]])
        hi = min(hi, coarse.epsilons[coarse.band[-1] + 1])
    epsilons = np.geomspace(lo, hi, n_fine)
    return _scan(X, epsilons, _centered)


class IntrinsicDimension(BaseEstimator):
    """Intrinsic dimension and bandwidth from a coarse-then-fine kernel-sum scan.

    Attributes
    ----------
    coarse_ : DimensionScan
    scan_ : DimensionScan
        Refined scan (the coarse one when ``refine=False``).
    epsilon_ : float
    dimension_ : float
    """

    def __init__(self, i_min=-30, i_max=10, n_fine=50, refine=True, selection="linear"):
        self.i_min = i_min
        self.i_max = i_max
        self.n_fine = n_fine
        self.refine = refine
        self.selection = selection

    def fit(self, X, y=None):
        self.coarse_ = coarse_scan(X, self.i_min, self.i_max, self.selection)
        self.scan_ = refine_scan(X, self.coarse_, self.n_fine) if self.refine else self.coarse_
        self.epsilon_ = self.scan_.eps_star
        self.dimension_ = self.scan_.d_int
        return self

    @property
    def band_(self):
        check_is_fitted(self, "scan_")
        return self.scan_.slope_epsilons[self.scan_.band]
