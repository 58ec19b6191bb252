"""Dyadic box coverings and the subdivision / continuation algorithms.

Boxes at depth ``s`` are cells of the partition of ``Q`` obtained by
bisecting coordinate ``l mod k`` at step ``l``.  A cell is identified by
its integer multi-index; internally the multi-index is packed into one
unsigned 64-bit key with axis 0 in the most significant bits, so sorting
keys is the same as sorting multi-indices lexicographically.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from ._io import parse_floats, read_columns, write_columns

log = logging.getLogger(__name__)

MAX_KEY_BITS = 63


@dataclass(frozen=True)
class BoxDomain:
    """The outer box ``Q`` as a product of intervals ``center +- radius``."""

    center: np.ndarray
    radius: np.ndarray

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.center, dtype=float))
        r = np.atleast_1d(np.asarray(self.radius, dtype=float))
        if r.shape == (1,) and c.shape[0] > 1:
            r = np.full_like(c, r[0])
        if c.shape != r.shape:
            raise ValueError("center and radius must have the same length")
        if not np.all(r > 0):
            raise ValueError("all radii must be positive")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", r)

    @classmethod
    def from_bounds(cls, lower, upper):
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        return cls((lower + upper) / 2, (upper - lower) / 2)

    @property
    def dim(self):
        return self.center.shape[0]

    @property
    def lower(self):
        return self.center - self.radius

    @property
    def upper(self):
        return self.center + self.radius

    @property
    def diameter(self):
        return float(np.linalg.norm(2 * self.radius))

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lower) & (x <= self.upper), axis=-1)


def splits_per_axis(depth, k):
    """How often each axis has been bisected after ``depth`` steps."""
    return depth // k + (np.arange(k) < depth % k).astype(np.int64)


class BoxCollection:
    """A sorted, duplicate-free set of cells of the depth-``depth`` partition."""

    def __init__(self, domain, depth, keys=None):
        self.domain = domain
        self.depth = int(depth)
        k = domain.dim
        self.splits = splits_per_axis(self.depth, k)
        if self.depth > MAX_KEY_BITS:
            raise OverflowError(f"depth {self.depth} exceeds the {MAX_KEY_BITS}-bit index")
        # axis 0 most significant
        self._shifts = np.concatenate([np.cumsum(self.splits[::-1])[::-1][1:], [0]]).astype(np.uint64)
        if keys is None:
            keys = np.empty(0, dtype=np.uint64)
        self.keys = np.unique(np.asarray(keys, dtype=np.uint64))

    # construction -----------------------------------------------------------

    @classmethod
    def root(cls, domain):
        return cls(domain, 0, np.zeros(1, dtype=np.uint64))

    @classmethod
    def from_indices(cls, domain, depth, indices):
        coll = cls(domain, depth)
        coll.keys = np.unique(coll.encode(np.asarray(indices, dtype=np.int64).reshape(-1, domain.dim)))
        return coll

    def with_keys(self, keys):
        return BoxCollection(self.domain, self.depth, keys)

    # index packing ------------------------------------------------------------

    def encode(self, idx):
        idx = np.asarray(idx, dtype=np.uint64)
        return np.bitwise_or.reduce(idx << self._shifts, axis=-1)

    def decode(self, keys=None):
        keys = self.keys if keys is None else np.asarray(keys, dtype=np.uint64)
        masks = (np.uint64(1) << self.splits.astype(np.uint64)) - np.uint64(1)
        return ((keys[:, None] >> self._shifts) & masks).astype(np.int64)

    @property
    def indices(self):
        return self.decode()

    # geometry -----------------------------------------------------------------

    @property
    def widths(self):
        return 2 * self.domain.radius / 2.0**self.splits

    @property
    def box_diameter(self):
        return float(np.linalg.norm(self.widths))

    def diameter(self):
        """``max diam(B)``; every box at one depth has the same diameter."""
        return self.box_diameter if len(self) else 0.0

    def centers(self, keys=None):
        idx = self.decode(keys)
        return self.domain.lower + (idx + 0.5) * self.widths

    def lower_corners(self, keys=None):
        return self.domain.lower + self.decode(keys) * self.widths

    def locate(self, x):
        """Keys of the cells containing ``x`` and a mask of points inside Q.

        Cells are half-open ``[lo, hi)`` except on the upper face of Q.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        inside = self.domain.contains(x)
        n_cells = 2**self.splits
        rel = (x - self.domain.lower) / self.widths
        with np.errstate(invalid="ignore"):
            idx = np.floor(rel)
        idx = np.clip(np.nan_to_num(idx), 0, n_cells - 1).astype(np.int64)
        keys = self.encode(idx)
        return keys[inside], inside

    # set operations -----------------------------------------------------------

    def __len__(self):
        return int(self.keys.size)

    def __contains__(self, key):
        pos = np.searchsorted(self.keys, np.uint64(key))
        return pos < self.keys.size and self.keys[pos] == key

    def __eq__(self, other):
        return (
            isinstance(other, BoxCollection)
            and self.depth == other.depth
            and np.array_equal(self.domain.center, other.domain.center)
            and np.array_equal(self.domain.radius, other.domain.radius)
            and np.array_equal(self.keys, other.keys)
        )

    def __repr__(self):
        return f"BoxCollection(k={self.domain.dim}, depth={self.depth}, boxes={len(self)})"

    def isin(self, keys):
        return np.isin(np.asarray(keys, dtype=np.uint64), self.keys, assume_unique=False)

    def union(self, keys):
        return self.with_keys(np.union1d(self.keys, np.asarray(keys, dtype=np.uint64)))

    def issubset(self, other):
        """Geometric inclusion of the union of boxes (depths may differ)."""
        if other.depth > self.depth:
            raise ValueError("compare against an equal or coarser collection")
        parents = other.locate(self.centers())[0]
        return bool(np.all(other.isin(parents)))

    def subdivide(self):
        return subdivide(self)

    # persistence ---------------------------------------------------------------

    def save(self, path):
        k = self.domain.dim
        meta = {
            "k": k,
            "depth": self.depth,
            "center": self.domain.center,
            "radius": self.domain.radius,
            "boxes": len(self),
        }
        write_columns(path, self.indices, [f"i{j}" for j in range(k)], meta=meta, fmt="%d")

    @classmethod
    def load(cls, path):
        data, _, meta = read_columns(path, dtype=np.int64)
        domain = BoxDomain(parse_floats(meta["center"]), parse_floats(meta["radius"]))
        return cls.from_indices(domain, int(meta["depth"]), data)


def box_of(x, coll):
    """Multi-index of the depth-``coll.depth`` cell containing ``x`` or None."""
    keys, inside = coll.locate(np.asarray(x, dtype=float)[None, :])
    if not inside[0]:
        return None
    return tuple(int(v) for v in coll.decode(keys)[0])


def subdivide(coll):
    """Bisect every box along axis ``depth mod k``."""
    k = coll.domain.dim
    axis = coll.depth % k
    idx = coll.indices
    lo = idx.copy()
    lo[:, axis] *= 2
    hi = lo.copy()
    hi[:, axis] += 1
    child = BoxCollection(coll.domain, coll.depth + 1)
    child.keys = np.unique(np.concatenate([child.encode(lo), child.encode(hi)]))
    return child


# ---------------------------------------------------------------------------
# Evaluators of the core map phi on boxes
# ---------------------------------------------------------------------------


def unit_sample(n_points, k, seed=0):
    """Center of the unit cube plus ``n_points - 1`` scrambled Halton points."""
    pts = [np.full((1, k), 0.5)]
    if n_points > 1:
        pts.append(qmc.Halton(d=k, scramble=True, seed=seed).random(n_points - 1))
    return np.concatenate(pts)


class PointMapEvaluator:
    """phi given directly on R^k; test points are a lattice in every box."""

    def __init__(self, fmap, seed=0):
        self.fmap = fmap
        self.seed = seed

    def __call__(self, x):
        return self.fmap(x)

    def images(self, coll, points_per_box=27, keys=None, chunk=200_000):
        keys = coll.keys if keys is None else keys
        unit = unit_sample(points_per_box, coll.domain.dim, self.seed)
        lower = coll.lower_corners(keys)
        out = []
        per = max(1, chunk // len(unit))
        for start in range(0, len(lower), per):
            pts = lower[start:start + per, None, :] + unit[None, :, :] * coll.widths
            out.append(self.fmap(pts.reshape(-1, coll.domain.dim)))
        if not out:
            return np.empty((0, coll.domain.dim))
        return np.concatenate(out)


@dataclass
class LiftedEnsemble:
    """Phase-space states paired with their observations.

    ``seeds`` tags the trajectory each pair descends from and ``iterates``
    how often the time-T map has been applied since it was created.
    """

    states: np.ndarray
    observations: np.ndarray
    seeds: np.ndarray = None
    iterates: np.ndarray = None

    def __post_init__(self):
        n = len(self.states)
        if len(self.observations) != n:
            raise ValueError("states and observations differ in length")
        if self.seeds is None:
            self.seeds = np.arange(n)
        if self.iterates is None:
            self.iterates = np.zeros(n, dtype=np.int64)

    @classmethod
    def from_states(cls, states, observer, seeds=None):
        states = np.asarray(states, dtype=float)
        return cls(states, observer(states), seeds)

    def __len__(self):
        return len(self.states)

    def take(self, sel):
        return LiftedEnsemble(self.states[sel], self.observations[sel], self.seeds[sel], self.iterates[sel])


class LiftedEvaluator:
    """phi = R o Phi evaluated on stored lifted states.

    Instead of an explicit extension ``E: R^k -> Y`` every evaluation starts
    from a stored state ``u`` whose observation lies in the source box, so
    ``phi(R(u)) == R(Phi(u))`` holds by construction.  Boxes without lifted
    representatives contribute no images.  After each call to
    :meth:`images` the ensemble is replaced by the image pairs.
    """

    def __init__(self, flow, observer, ensemble, batch=4096):
        self.flow = flow
        self.observer = observer
        self.ensemble = ensemble
        self.batch = batch

    def lift_map(self, states):
        """``(Phi(u), R(Phi(u)))`` for a batch of states."""
        new = []
        for start in range(0, len(states), self.batch):
            new.append(self.flow(states[start:start + self.batch]))
        new = np.concatenate(new) if new else np.empty((0,) + states.shape[1:])
        return new, self.observer(new)

    def __call__(self, states):
        return self.lift_map(np.asarray(states, dtype=float))[1]

    def images(self, coll, points_per_box=None, keys=None):
        ens = self.ensemble
        src_keys, inside = coll.locate(ens.observations)
        where = np.flatnonzero(inside)
        target = coll if keys is None else coll.with_keys(keys)
        member = target.isin(src_keys)
        where, src_keys = where[member], src_keys[member]
        if points_per_box is not None:
            where = where[_first_per_key(src_keys, points_per_box)]
        chosen = ens.take(where)
        new_states, new_obs = self.lift_map(chosen.states)
        self.ensemble = LiftedEnsemble(new_states, new_obs, chosen.seeds, chosen.iterates + 1)
        return new_obs


def _first_per_key(keys, cap):
    """Positions of the first ``cap`` entries of every distinct key."""
    order = np.argsort(keys, kind="stable")
    sk = keys[order]
    starts = np.flatnonzero(np.r_[True, sk[1:] != sk[:-1]])
    group_start = np.repeat(starts, np.diff(np.r_[starts, sk.size]))
    rank = np.arange(sk.size) - group_start
    return np.sort(order[rank < cap])


# ---------------------------------------------------------------------------
# Algorithms
# ---------------------------------------------------------------------------


@dataclass
class LevelStats:
    depth: int
    boxes: int
    dropped: int = 0
    extra: dict = field(default_factory=dict)


def select(coll, cds, points_per_box=27, stats=None):
    """Keep the boxes of ``coll`` that contain an image of a sampled point."""
    if len(coll) == 0:
        return coll
    img = cds.images(coll, points_per_box)
    hit, inside = coll.locate(img)
    dropped = int(np.count_nonzero(~inside))
    out = coll.with_keys(np.intersect1d(coll.keys, hit))
    if stats is not None:
        stats.append(LevelStats(out.depth, len(out), dropped))
    return out


def subdivision_algorithm(cds, domain, levels, points_per_box=27, start=None, stats=None):
    """Alternate subdivision and selection ``levels`` times from ``{Q}``."""
    if levels < 1:
        raise ValueError("levels must be >= 1")
    coll = BoxCollection.root(domain) if start is None else start
    final_depth = coll.depth + levels
    for _ in range(levels):
        coll = select(subdivide(coll), cds, points_per_box, stats)
        log.info("depth %d: %d boxes", coll.depth, len(coll))
        if len(coll) == 0:
            return BoxCollection(domain, final_depth)
    return coll


def continuation_algorithm(
    cds,
    domain,
    seed_point,
    depth,
    mode="classic",
    seed_depth=None,
    points_per_box=27,
    max_steps=10**6,
    T=None,
    stride_h=None,
    n_test_points=None,
    seed_state=None,
    perturbation=1e-4,
    random_state=0,
    stats=None,
):
    """Cover the embedded unstable manifold of ``seed_point = R(u*)``.

    ``mode="classic"``: subdivide the single box around the seed down to
    ``depth`` and then add every box hit by images of newly added boxes
    until nothing changes.  ``mode="sweep"``: integrate ``n_test_points``
    lifted states near ``seed_state`` for time ``T`` and insert the box of
    the observation recorded every ``stride_h``.
    """
    seed_point = np.asarray(seed_point, dtype=float)
    if not domain.contains(seed_point):
        raise ValueError("seed point lies outside Q")
    if mode == "classic":
        s = depth // 2 if seed_depth is None else seed_depth
        base = BoxCollection(domain, s)
        base = base.with_keys(_touching_cells(base, seed_point))
        coll = subdivision_algorithm(cds, domain, depth - s, points_per_box, start=base, stats=stats) if depth > s else base
        return _continue(coll, cds, points_per_box, max_steps, stats)
    if mode == "sweep":
        return _sweep(cds, domain, seed_point, depth, T, stride_h, n_test_points, seed_state,
                      perturbation, random_state, stats)
    raise ValueError(f"unknown continuation mode '{mode}'")


def _touching_cells(coll, x, rel=1e-9):
    """Keys of every cell whose closure contains ``x``.

    A seed on a cell face or corner (e.g. a fixed point at the center of a
    symmetric ``Q``) is shared by up to ``2^k`` cells; keeping only the
    half-open one would cover just one side of the manifold.
    """
    k = coll.domain.dim
    offsets = np.array(np.meshgrid(*[[-1.0, 0.0, 1.0]] * k, indexing="ij")).reshape(k, -1).T
    probes = x[None, :] + rel * offsets * coll.widths
    keys, _ = coll.locate(probes)
    return np.unique(keys)


def _continue(coll, cds, points_per_box, max_steps, stats):
    new = coll.keys
    sizes = [len(coll)]
    for _ in range(max_steps):
        img = cds.images(coll, points_per_box, keys=new)
        hit, _ = coll.locate(img)
        new = np.setdiff1d(hit, coll.keys)
        if new.size == 0:
            break
        coll = coll.union(new)
        sizes.append(len(coll))
    else:
        log.warning("continuation stopped at the step cap %d", max_steps)
    if stats is not None:
        stats.append(LevelStats(coll.depth, len(coll), extra={"continuation_sizes": sizes}))
    return coll


def _sweep(cds, domain, seed_point, depth, T, stride_h, n_test_points, seed_state,
           perturbation, random_state, stats, chunk=250):
    if T is None or stride_h is None or n_test_points is None or seed_state is None:
        raise ValueError("sweep mode needs T, stride_h, n_test_points and seed_state")
    coll = BoxCollection(domain, depth)
    rng = np.random.default_rng(random_state)
    seed_state = np.asarray(seed_state, dtype=float)
    scale = max(float(np.abs(seed_state).max()), 1.0)
    tests = seed_state + perturbation * scale * rng.standard_normal((n_test_points,) + seed_state.shape)
    found = [coll.locate(seed_point[None, :])[0]]
    dropped = 0
    for start in range(0, n_test_points, chunk):
        pending = []
        for _, states in cds.flow.iter_trajectory(tests[start:start + chunk], T, stride_h):
            keys, inside = coll.locate(cds.observer(states))
            dropped += int(np.count_nonzero(~inside))
            pending.append(keys)
            if len(pending) >= 64:
                found.append(np.unique(np.concatenate(pending)))
                pending = []
        if pending:
            found.append(np.unique(np.concatenate(pending)))
        log.info("sweep: %d/%d test points", min(start + chunk, n_test_points), n_test_points)
    coll = coll.with_keys(np.concatenate(found))
    if stats is not None:
        stats.append(LevelStats(depth, len(coll), dropped))
    return coll


def midpoints(coll, count="all", seed=0):
    """Centers of all boxes or of a seeded uniform subset without replacement."""
    if count == "all" or count is None:
        return coll.centers()
    count = int(count)
    if count > len(coll):
        raise ValueError(f"requested {count} midpoints from {len(coll)} boxes")
    pick = np.sort(np.random.default_rng(seed).choice(len(coll), size=count, replace=False))
    return coll.centers(coll.keys[pick])
