"""Observation maps from a discretized phase space into R^k."""

import numpy as np
import scipy.linalg as la
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._io import parse_floats, read_columns, write_columns
from .dynamics import hermite, history_slopes


def trapezoid_weights(n, length=2 * np.pi):
    """Trapezoidal quadrature on a uniform periodic grid (uniform weights)."""
    return np.full(n, length / n)


class PODBasis(TransformerMixin, BaseEstimator):
    """Proper orthogonal decomposition under a weighted L2 inner product.

    Parameters
    ----------
    n_components : int
        Number of basis functions ``k`` to keep.
    domain_length : float
        Length of the periodic domain; the inner product is
        ``<f, g> = sum_j w_j f_j g_j`` with trapezoidal weights ``w_j``.

    Attributes
    ----------
    components_ : ndarray of shape (n_components, n_grid)
        Basis functions sampled on the grid, orthonormal under the weights.
        The entry of largest magnitude in each function is positive.
    singular_values_ : ndarray of shape (n_components,)
    weights_ : ndarray of shape (n_grid,)
    """

    def __init__(self, n_components=7, domain_length=2 * np.pi):
        self.n_components = n_components
        self.domain_length = domain_length

    def fit(self, X, y=None):
        """Fit on snapshots ``X`` of shape (n_snapshots, n_grid)."""
        X = check_array(X)
        n_snap, n_grid = X.shape
        k = self.n_components
        if k > n_snap:
            raise ValueError(f"n_components={k} exceeds the number of snapshots {n_snap}")
        w = trapezoid_weights(n_grid, self.domain_length)
        sw = np.sqrt(w)
        u, s, _ = la.svd((X * sw).T, full_matrices=False)
        tol = max(X.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
        rank = int(np.sum(s > tol))
        if k > rank:
            raise ValueError(f"n_components={k} exceeds the numerical rank {rank}")
        zeta = (u[:, :k] / sw[:, None]).T
        idx = np.argmax(np.abs(zeta), axis=1)
        signs = np.sign(zeta[np.arange(k), idx])
        self.components_ = zeta * signs[:, None]
        self.singular_values_ = s[:k]
        self.weights_ = w
        return self

    def transform(self, X):
        """Coordinates ``<u, zeta_i>``; accepts any leading batch shape."""
        check_is_fitted(self, "components_")
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.components_.shape[1]:
            raise ValueError(
                f"state length {X.shape[-1]} does not match basis grid {self.components_.shape[1]}"
            )
        return (X * self.weights_) @ self.components_.T

    def inverse_transform(self, Z):
        check_is_fitted(self, "components_")
        return np.asarray(Z, dtype=float) @ self.components_

    def gram(self):
        check_is_fitted(self, "components_")
        return (self.components_ * self.weights_) @ self.components_.T

    def save(self, path):
        check_is_fitted(self, "components_")
        k = self.components_.shape[0]
        meta = {
            "grid_size": self.components_.shape[1],
            "k": k,
            "domain_length": float(self.domain_length),
            "singular_values": self.singular_values_,
        }
        write_columns(path, self.components_.T, [f"zeta{i + 1}" for i in range(k)], meta=meta)

    @classmethod
    def load(cls, path):
        data, _, meta = read_columns(path)
        basis = cls(n_components=int(meta["k"]), domain_length=float(meta["domain_length"]))
        basis.components_ = np.ascontiguousarray(data.T)
        basis.singular_values_ = parse_floats(meta["singular_values"])
        basis.weights_ = trapezoid_weights(int(meta["grid_size"]), basis.domain_length)
        return basis


def build_pod_basis(snapshots, k, domain_length=2 * np.pi):
    """Leading ``k`` POD functions of a list/array of snapshot states."""
    return PODBasis(n_components=k, domain_length=domain_length).fit(np.asarray(snapshots))


def pod_observe(u, basis):
    return basis.transform(u)


def delay_observe(u, k, cfg=None):
    """Sample a history segment at ``k`` equispaced times from -tau to 0.

    Off-grid samples use cubic Hermite interpolation with the same slopes
    the integrator uses when ``cfg`` is given (finite differences otherwise).
    """
    if k < 2:
        raise ValueError("delay observation needs k >= 2")
    u = np.asarray(u, dtype=float)
    n_h = u.shape[-1] - 1
    pos = np.arange(k) * n_h / (k - 1)
    left = np.minimum(np.floor(pos).astype(int), n_h - 1)
    frac = pos - left
    on_grid = np.isclose(frac, 0.0, atol=1e-12) | np.isclose(frac, 1.0, atol=1e-12)
    if np.all(on_grid):
        return u[..., np.rint(pos).astype(int)]
    if cfg is not None:
        slopes = history_slopes(u, cfg) * cfg.dt
    else:
        slopes = np.gradient(u, axis=-1, edge_order=2)
    out = hermite(u[..., left], u[..., left + 1], slopes[..., left], slopes[..., left + 1], frac, 1.0)
    snap = np.rint(pos).astype(int)
    out[..., on_grid] = u[..., snap[on_grid]]
    return out


class DelayCoordinates(TransformerMixin, BaseEstimator):
    """Delay-coordinate observation of history segments (stateless)."""

    def __init__(self, n_delays=7, config=None):
        self.n_delays = n_delays
        self.config = config

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        return delay_observe(X, self.n_delays, self.config)
