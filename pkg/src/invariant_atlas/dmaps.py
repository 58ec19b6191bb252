"""Diffusion maps on anchor points with Nystrom out-of-sample extension."""

import warnings

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import eigsh
from scipy.spatial import cKDTree
from scipy.special import logsumexp
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._io import parse_floats, read_columns, write_columns
from .exceptions import DisconnectedGraphWarning, ExtensionFailedError

LAMBDA_FLOOR = 1e-12
# candidates are gathered slightly beyond the cutoff, then filtered exactly
_RADIUS_SLACK = 1 + 1e-9


def kernel(x1, x2, epsilon, cutoff_radius=None):
    """``exp(-|x1 - x2|^2 / eps)`` inside the cutoff radius, 0 outside."""
    if cutoff_radius is None:
        cutoff_radius = np.sqrt(2 * epsilon)
    d2 = np.sum((np.asarray(x1, dtype=float) - np.asarray(x2, dtype=float)) ** 2, axis=-1)
    return np.where(d2 <= cutoff_radius**2, np.exp(-d2 / epsilon), 0.0)


def kernel_matrix(X, epsilon, cutoff_radius, tree=None):
    """Sparse symmetric kernel matrix over the anchors, diagonal included."""
    m = X.shape[0]
    tree = cKDTree(X) if tree is None else tree
    pairs = tree.query_pairs(cutoff_radius * _RADIUS_SLACK, output_type="ndarray")
    i, j = pairs[:, 0], pairs[:, 1]
    d2 = np.sum((X[i] - X[j]) ** 2, axis=1)
    keep = d2 <= cutoff_radius**2
    i, j, vals = i[keep], j[keep], np.exp(-d2[keep] / epsilon)
    rows = np.concatenate([i, j, np.arange(m)])
    cols = np.concatenate([j, i, np.arange(m)])
    data = np.concatenate([vals, vals, np.ones(m)])
    return sp.csr_matrix((data, (rows, cols)), shape=(m, m))


def normalize_kernel(K, alpha):
    """alpha-normalize a kernel matrix and make it row-stochastic.

    Returns ``(P, q_tilde, d_tilde, K_alpha)``; any constant factor on ``K``
    cancels in ``P``.
    """
    K = sp.csr_matrix(K)
    q = np.asarray(K.sum(axis=1)).ravel()
    qa = q**-alpha
    Ka = sp.diags(qa) @ K @ sp.diags(qa)
    d = np.asarray(Ka.sum(axis=1)).ravel()
    P = sp.diags(1.0 / d) @ Ka
    return sp.csr_matrix(P), q, d, sp.csr_matrix(Ka)


def _sign_normalize(vecs):
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


class DiffusionMap(TransformerMixin, BaseEstimator):
    """Diffusion-map embedding of anchor points with Nystrom extension.

    Parameters
    ----------
    epsilon : float
        Kernel bandwidth ``eps`` in ``exp(-|x - y|^2 / eps)``.
    alpha : float
        Density normalization exponent in [0, 1]; 1 removes sampling density.
    cutoff_radius : float or None
        Kernel support radius; None means ``sqrt(2 eps)``.
    min_neighbors : int
        Out-of-sample points grow their search radius by 10% steps (with
        ``eps`` fixed) until this many anchors are inside.
    n_evecs : int
        Number of nontrivial eigenpairs to compute.
    n_components : int or None
        Number of diffusion coordinates returned by ``transform``; None
        means ``n_evecs``.
    eigen_solver : {"auto", "dense", "lanczos"}
    tol : float
        Lanczos convergence tolerance.
    random_state : int
        Seed of the Lanczos start vector.

    Attributes
    ----------
    anchors_, q_tilde_, d_tilde_, markov_ (sparse P), eigenvalues_,
    eigenvectors_ (columns psi_0..psi_n), embedding_, n_graph_components_,
    isolated_ (indices of anchors without neighbours).
    """

    def __init__(
        self,
        epsilon=1.0,
        alpha=1.0,
        cutoff_radius=None,
        min_neighbors=8,
        n_evecs=20,
        n_components=None,
        eigen_solver="auto",
        tol=1e-10,
        random_state=0,
        max_radius_growth=200,
    ):
        self.epsilon = epsilon
        self.alpha = alpha
        self.cutoff_radius = cutoff_radius
        self.min_neighbors = min_neighbors
        self.n_evecs = n_evecs
        self.n_components = n_components
        self.eigen_solver = eigen_solver
        self.tol = tol
        self.random_state = random_state
        self.max_radius_growth = max_radius_growth

    @property
    def cutoff_(self):
        return np.sqrt(2 * self.epsilon) if self.cutoff_radius is None else float(self.cutoff_radius)

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        m = X.shape[0]
        if m < 2:
            raise ValueError("need at least two anchors")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0 <= self.alpha <= 1:
            raise ValueError("alpha must lie in [0, 1]")
        self.anchors_ = X
        self._tree = cKDTree(X)
        K = kernel_matrix(X, self.epsilon, self.cutoff_, self._tree)
        self.markov_, self.q_tilde_, self.d_tilde_, Ka = normalize_kernel(K, self.alpha)
        self._check_graph(K)
        n_ev = min(self.n_evecs, m - 1)
        self.eigenvalues_, self.eigenvectors_ = self._spectrum(Ka, n_ev)
        self.embedding_ = self._coords(self.eigenvectors_)
        return self

    def _check_graph(self, K):
        n_comp, _ = connected_components(K, directed=False)
        deg = np.diff(K.indptr)
        self.isolated_ = np.flatnonzero(deg == 1)
        self.n_graph_components_ = int(n_comp)
        if n_comp > 1:
            warnings.warn(
                f"kernel graph has {n_comp} connected components "
                f"({self.isolated_.size} isolated anchors)",
                DisconnectedGraphWarning,
                stacklevel=3,
            )

    def _spectrum(self, Ka, n_ev):
        m = Ka.shape[0]
        s = 1.0 / np.sqrt(self.d_tilde_)
        S = sp.diags(s) @ Ka @ sp.diags(s)
        S = (S + S.T) / 2
        solver = self.eigen_solver
        if solver == "auto":
            solver = "dense" if m <= 2000 else "lanczos"
        if solver == "dense":
            w, v = np.linalg.eigh(S.toarray())
            w, v = w[::-1][: n_ev + 1], v[:, ::-1][:, : n_ev + 1]
        elif solver == "lanczos":
            v0 = np.random.default_rng(self.random_state).uniform(0.5, 1.5, m)
            w, v = eigsh(S, k=n_ev + 1, which="LA", tol=self.tol, v0=v0)
            order = np.argsort(w)[::-1]
            w, v = w[order], v[:, order]
        else:
            raise ValueError(f"unknown eigen_solver '{self.eigen_solver}'")
        # right eigenvectors of P, scaled so sum_i pi_i psi_i^2 = 1
        psi = v * s[:, None] * np.sqrt(self.d_tilde_.sum())
        return w, _sign_normalize(psi)

    def _n_coords(self):
        n = self.eigenvalues_.size - 1
        return n if self.n_components is None else min(self.n_components, n)

    def _coords(self, psi):
        n = self._n_coords()
        return psi[:, 1: n + 1] * self.eigenvalues_[1: n + 1]

    def embed(self, n_coords=None):
        """In-sample diffusion coordinates ``lambda_l psi_l(x_i)``, l >= 1."""
        check_is_fitted(self, "eigenvalues_")
        n = self._n_coords() if n_coords is None else n_coords
        if n > self.eigenvalues_.size - 1:
            raise ValueError(f"only {self.eigenvalues_.size - 1} nontrivial eigenpairs available")
        return self.eigenvectors_[:, 1: n + 1] * self.eigenvalues_[1: n + 1]

    def fit_transform(self, X, y=None):
        return self.fit(X).embedding_

    # -- Nystrom -------------------------------------------------------------

    def nystrom_weights(self, X):
        """Sparse matrix of extension weights ``p_j(x)``, one row per point."""
        check_is_fitted(self, "eigenvalues_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.anchors_.shape[1]:
            raise ValueError("query dimension does not match the anchors")
        tree = getattr(self, "_tree", None)
        if tree is None:
            tree = self._tree = cKDTree(self.anchors_)
        r = self.cutoff_
        log_q = np.log(self.q_tilde_)
        rows, cols, vals = [], [], []
        for n, (x, cand) in enumerate(zip(X, tree.query_ball_point(X, r * _RADIUS_SLACK))):
            cand = np.asarray(cand, dtype=np.intp)
            d2 = np.sum((self.anchors_[cand] - x) ** 2, axis=1)
            inside = d2 <= r**2
            cand, d2 = cand[inside], d2[inside]
            if cand.size < self.min_neighbors and not np.any(d2 == 0):
                cand, d2 = self._grow(x, tree)
            logw = -d2 / self.epsilon - self.alpha * log_q[cand]
            rows.append(np.full(cand.size, n))
            cols.append(cand)
            vals.append(np.exp(logw - logsumexp(logw)))
        shape = (X.shape[0], self.anchors_.shape[0])
        if not rows:
            return sp.csr_matrix(shape)
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=shape
        )

    def _grow(self, x, tree):
        m = self.anchors_.shape[0]
        need = min(self.min_neighbors, m)
        dist, _ = tree.query(x, k=need)
        target = np.atleast_1d(dist)[-1]
        r = self.cutoff_
        steps = 0
        if target > r:
            steps = int(np.floor(np.log(target / r) / np.log(1.1)))
        while steps <= self.max_radius_growth:
            radius = r * 1.1**steps
            cand = np.asarray(tree.query_ball_point(x, radius * _RADIUS_SLACK), dtype=np.intp)
            d2 = np.sum((self.anchors_[cand] - x) ** 2, axis=1)
            inside = d2 <= radius**2
            if np.count_nonzero(inside) >= need:
                return cand[inside], d2[inside]
            steps += 1
        radius = r * 1.1**self.max_radius_growth
        cand = np.asarray(tree.query_ball_point(x, radius), dtype=np.intp)
        if cand.size == 0:
            raise ExtensionFailedError(
                f"no anchor within {self.max_radius_growth} radius growth steps of the query"
            )
        d2 = np.sum((self.anchors_[cand] - x) ** 2, axis=1)
        return cand, d2

    def extend(self, X):
        """Nystrom extension: returns ``(y, psi, floored)``.

        ``y[:, l] = sum_j p_j psi_l(x_j)`` for every computed pair l = 0..n,
        ``psi = y / lambda`` where ``|lambda| >= 1e-12`` (0 otherwise), and
        ``floored`` marks the pairs where the division was skipped.
        """
        W = self.nystrom_weights(X)
        y = np.asarray(W @ self.eigenvectors_)
        floored = np.abs(self.eigenvalues_) < LAMBDA_FLOOR
        lam = np.where(floored, 1.0, self.eigenvalues_)
        psi = np.where(floored, 0.0, y / lam)
        return y, psi, floored

    def transform(self, X):
        """Diffusion coordinates of new points (``y^(l)``, l = 1..n_components)."""
        y, _, _ = self.extend(X)
        return y[:, 1: self._n_coords() + 1]

    # -- persistence ------------------------------------------------------------

    def save(self, path):
        check_is_fitted(self, "eigenvalues_")
        m, k = self.anchors_.shape
        n_ev = self.eigenvalues_.size - 1
        meta = {
            "m": m,
            "k": k,
            "epsilon": float(self.epsilon),
            "alpha": float(self.alpha),
            "cutoff_radius": float(self.cutoff_),
            "min_neighbors": self.min_neighbors,
            "n_ev": n_ev,
            "n_components": self._n_coords(),
            "eigenvalues": self.eigenvalues_,
        }
        names = (
            [f"x{i + 1}" for i in range(k)]
            + ["q_tilde", "d_tilde"]
            + [f"psi{i}" for i in range(n_ev + 1)]
        )
        data = np.column_stack([self.anchors_, self.q_tilde_, self.d_tilde_, self.eigenvectors_])
        write_columns(path, data, names, meta=meta)

    @classmethod
    def load(cls, path):
        data, _, meta = read_columns(path)
        k = int(meta["k"])
        model = cls(
            epsilon=float(meta["epsilon"]),
            alpha=float(meta["alpha"]),
            cutoff_radius=float(meta["cutoff_radius"]),
            min_neighbors=int(meta["min_neighbors"]),
            n_evecs=int(meta["n_ev"]),
            n_components=int(meta["n_components"]),
        )
        model.anchors_ = np.ascontiguousarray(data[:, :k])
        model.q_tilde_ = data[:, k]
        model.d_tilde_ = data[:, k + 1]
        model.eigenvectors_ = np.ascontiguousarray(data[:, k + 2:])
        model.eigenvalues_ = parse_floats(meta["eigenvalues"])
        model.embedding_ = model._coords(model.eigenvectors_)
        return model


def build_markov(anchors, epsilon, alpha=1.0, cutoff_radius=None, n_evecs=20, **kwargs):
    return DiffusionMap(epsilon=epsilon, alpha=alpha, cutoff_radius=cutoff_radius,
                        n_evecs=n_evecs, **kwargs).fit(anchors)


def nystrom_extend(model, x):
    y, psi, _ = model.extend(np.atleast_2d(x))
    return y, psi


def spectral_gap_report(model, degree=2, harmonic_threshold=0.1):
    """Eigenvalues, successive ratios and a higher-harmonic indicator.

    For each l the eigenvector psi_l is regressed on all monomials of total
    degree <= ``degree`` in psi_1..psi_{l-1} (constants only for l <= 1);
    ``residual`` is the relative norm of what the fit leaves over.  Small
    residuals flag psi_l as a function of earlier coordinates.
    """
    check_is_fitted(model, "eigenvalues_")
    lam = model.eigenvalues_
    psi = model.eigenvectors_
    rows = []
    for ell in range(lam.size):
        prev = psi[:, 1:ell]
        design = _poly_features(prev, degree)
        coef, *_ = np.linalg.lstsq(design, psi[:, ell], rcond=None)
        resid = np.linalg.norm(psi[:, ell] - design @ coef) / np.linalg.norm(psi[:, ell])
        rows.append({
            "ell": ell,
            "eigenvalue": float(lam[ell]),
            "ratio": float(lam[ell] / lam[ell - 1]) if ell and lam[ell - 1] != 0 else np.nan,
            "residual": float(resid),
            "harmonic": bool(ell >= 2 and resid < harmonic_threshold),
        })
    return rows


def _poly_features(Z, degree):
    cols = [np.ones(Z.shape[0])]
    if Z.shape[1] == 0:
        return np.column_stack(cols)
    from itertools import combinations_with_replacement

    for deg in range(1, degree + 1):
        for combo in combinations_with_replacement(range(Z.shape[1]), deg):
            cols.append(np.prod(Z[:, list(combo)], axis=1))
    return np.column_stack(cols)


def phase_angle(Y, axes=(0, 1)):
    """``atan2(y2, y1)`` in the chosen coordinate plane."""
    Y = np.asarray(Y)
    return np.arctan2(Y[:, axes[1]], Y[:, axes[0]])


def write_embedding(path, Y, color_axes=(0, 1), meta=None, leading=None):
    """Columns ``y1..yn`` plus ``color_y3`` (if present) and ``phase``.

    ``leading`` maps extra column names (e.g. time) to arrays placed first.
    """
    Y = np.asarray(Y, dtype=float)
    names = [f"y{i + 1}" for i in range(Y.shape[1])]
    cols = [Y]
    if Y.shape[1] >= 3:
        cols.append(Y[:, 2:3])
        names.append("color_y3")
    if Y.shape[1] >= 2:
        cols.append(phase_angle(Y, color_axes)[:, None])
        names.append("phase")
    for name, values in reversed(list((leading or {}).items())):
        cols.insert(0, np.asarray(values, dtype=float).reshape(-1, 1))
        names.insert(0, name)
    write_columns(path, np.hstack(cols), names, meta=meta)


def largest_component(X, epsilon, cutoff_radius=None):
    """Mask of the anchors in the largest connected component of the kernel graph."""
    X = check_array(X, dtype=float)
    r = np.sqrt(2 * epsilon) if cutoff_radius is None else cutoff_radius
    _, labels = connected_components(kernel_matrix(X, epsilon, r), directed=False)
    return labels == np.argmax(np.bincount(labels))
