"""Pipeline stages.

Each stage reads artifacts from the run directory and writes new ones;
``run`` executes stages in dependency order, skips stages whose recorded
config, inputs and outputs are unchanged, and records checksums in the
manifest.
"""

import logging
import time
from pathlib import Path

import numpy as np

from .._io import read_columns, write_columns
from ..covering import (
    BoxCollection,
    BoxDomain,
    LiftedEnsemble,
    LiftedEvaluator,
    PointMapEvaluator,
    continuation_algorithm,
    midpoints,
    subdivision_algorithm,
)
from ..dimension import IntrinsicDimension
from ..dmaps import DiffusionMap, largest_component, spectral_gap_report, write_embedding
from ..dynamics import (
    FlowMap,
    KSConfig,
    KSSolver,
    MGConfig,
    MGSolver,
    ks_initial_state,
    mg_equilibrium,
    mg_trajectory_states,
    write_trajectory,
)
from ..exceptions import ConfigError, EmptyCoveringError, MissingArtifactError
from ..observation import DelayCoordinates, PODBasis
from .manifest import RunLock, RunManifest

log = logging.getLogger(__name__)

STAGE_ORDER = ("simulate", "pod", "cover", "dimscan", "dmap", "extend", "export")

PRODUCER = {
    "trajectory.txt": "simulate",
    "snapshots.txt": "simulate",
    "basis.txt": "pod",
    "covering.txt": "cover",
    "cover_stats.txt": "cover",
    "anchors.txt": "dimscan",
    "dimscan_coarse.txt": "dimscan",
    "dimscan.txt": "dimscan",
    "model.txt": "dmap",
    "embedding.txt": "dmap",
    "spectrum.txt": "dmap",
    "extension.txt": "extend",
    "trajectory_embedding.txt": "export",
    "atlas.txt": "export",
}


class Run:
    """A configuration bound to its output directory."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.root = Path(cfg.output_dir)

    def path(self, name):
        return self.root / name

    def require(self, name):
        path = self.path(name)
        if not path.is_file():
            raise MissingArtifactError(path, PRODUCER[name])
        return path

    # -- system and observation ------------------------------------------

    def system(self, mu=None):
        s = self.cfg.system
        if s.kind == "ks":
            return KSConfig(mu=s.mu if mu is None else mu, n_modes=s.n_modes, dt=s.dt)
        if s.kind == "mackey_glass":
            return MGConfig(beta=s.beta, gamma=s.gamma, eta=s.eta, tau=s.tau, dt=s.tau / s.n_history)
        return (s.map_name, dict(s.map_params))

    def observer(self):
        kind = self.cfg.observation.kind
        if kind == "pod":
            return PODBasis.load(self.require("basis.txt")).transform
        if kind == "delay":
            return DelayCoordinates(self.cfg.k, self.system()).transform
        return lambda x: np.asarray(x, dtype=float)

    def equilibrium_state(self):
        """The state the covering is seeded at (u* = 0 for KS, u* = 1 for MG)."""
        kind = self.cfg.system.kind
        if kind == "ks":
            return np.zeros(self.cfg.system.n_modes)
        if kind == "mackey_glass":
            mg = self.system()
            return np.full(mg.n_history + 1, mg_equilibrium(mg))
        return np.zeros(self.cfg.k)

    def seed_point(self, observe):
        c = self.cfg.covering
        if c.seed_point is not None:
            return np.asarray(c.seed_point, dtype=float)
        return observe(self.equilibrium_state()[None])[0]

    def observed_data(self, observe):
        """Observations of the stored long run, used to size Q."""
        if self.cfg.system.kind == "ks":
            data, _, _ = read_columns(self.require("snapshots.txt"))
            return observe(data[:, 1:])
        data, _, _ = read_columns(self.require("trajectory.txt"))
        mg = self.system()
        return observe(mg_trajectory_states(data[:, 1], mg.n_history))

    def domain(self, observe):
        c = self.cfg.covering
        if c.lower is not None and c.upper is not None:
            return BoxDomain.from_bounds(np.asarray(c.lower, float), np.asarray(c.upper, float))
        if self.cfg.system.kind == "analytic":
            raise ConfigError("covering.lower and covering.upper are required for closed-form maps")
        Z = self.observed_data(observe)
        if self.cfg.system.kind == "ks":
            # symmetric about the steady state u* = 0
            half = c.margin * np.abs(Z).max(axis=0)
            center = np.zeros_like(half)
        else:
            center = (Z.max(axis=0) + Z.min(axis=0)) / 2
            half = c.margin * (Z.max(axis=0) - Z.min(axis=0)) / 2
        return BoxDomain(center, np.maximum(half, 1e-6))

    def stage_inputs(self, stage):
        cfg = self.cfg
        pod = cfg.observation.kind == "pod"
        if stage == "simulate":
            return []
        if stage == "pod":
            return ["snapshots.txt"] if pod else []
        if stage == "cover":
            names = ["basis.txt"] if pod else []
            if cfg.covering.lower is None and cfg.system.kind != "analytic":
                names.append("snapshots.txt" if pod else "trajectory.txt")
            return names
        if stage == "dimscan":
            return ["covering.txt"]
        if stage == "dmap":
            return ["anchors.txt"] + (["dimscan.txt"] if cfg.dmaps.epsilon == "auto" else [])
        if stage == "extend":
            return ["model.txt", "covering.txt", "anchors.txt"]
        if stage == "export":
            names = ["model.txt", "embedding.txt", "trajectory.txt"] + (["basis.txt"] if pod else [])
            if self.path("extension.txt").is_file():
                names.append("extension.txt")
            return names
        raise ValueError(stage)

    def stage_outputs(self, stage):
        pod = self.cfg.observation.kind == "pod"
        return {
            "simulate": ["trajectory.txt"] + (["snapshots.txt"] if pod else []),
            "pod": ["basis.txt"] if pod else [],
            "cover": ["covering.txt", "cover_stats.txt"],
            "dimscan": ["anchors.txt", "dimscan_coarse.txt", "dimscan.txt"],
            "dmap": ["model.txt", "embedding.txt", "spectrum.txt"],
            "extend": ["extension.txt"],
            "export": ["trajectory_embedding.txt", "atlas.txt"],
        }[stage]

    def coords(self, y):
        """Pick the exported diffusion coordinates out of ``y^(0..n_ev)``."""
        d = self.cfg.dmaps
        idx = list(d.coords) if d.coords is not None else list(range(1, d.n_coords + 1))
        return y[:, idx]


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------


def _ks_run(cfg, T, stride):
    u0 = ks_initial_state(cfg)
    times, states = [0.0], [u0]
    for t, u in KSSolver(cfg).iter_trajectory(u0, T, stride):
        times.append(t)
        states.append(u)
    return np.asarray(times), np.asarray(states)


def stage_simulate(run):
    cfg, s, sim = run.cfg, run.cfg.system, run.cfg.simulate
    if s.kind == "ks":
        ref = run.system(cfg.basis_mu)
        t, u = _ks_run(ref, sim.T, sim.stride)
        n0 = int(round(sim.discard * (len(t) - 1)))
        write_trajectory(run.path("snapshots.txt"), t[n0:], u[n0:], meta={"mu": ref.mu, "dt": ref.dt})
        ks = run.system()
        t, u = _ks_run(ks, cfg.export.T, cfg.export.stride)
        write_trajectory(run.path("trajectory.txt"), t, u, meta={"mu": ks.mu, "dt": ks.dt})
    elif s.kind == "mackey_glass":
        mg = run.system()
        rng = np.random.default_rng(cfg.seed)
        history = 0.5 + 0.5 * rng.random(mg.n_history + 1)
        values, _ = MGSolver(mg).integrate(history, sim.T)
        t = mg.dt * np.arange(values.shape[-1]) - mg.tau
        start = int(round(sim.discard * sim.T / mg.dt))
        write_trajectory(run.path("trajectory.txt"), t[start:], values[start:, None],
                         meta={"dt": mg.dt, "tau": mg.tau})
    else:
        name, params = run.system()
        flow = FlowMap("analytic", (name, params), 1)
        x = run.seed_point(lambda z: z) + 0.01
        steps = int(cfg.export.T)
        orbit = [x]
        for _, x in flow.iter_trajectory(x, steps, 1):
            orbit.append(x)
        write_trajectory(run.path("trajectory.txt"), np.arange(steps + 1), np.asarray(orbit))


def stage_pod(run):
    cfg = run.cfg
    if cfg.observation.kind != "pod":
        log.info("observation '%s' needs no basis; nothing to do", cfg.observation.kind)
        return
    data, _, _ = read_columns(run.require("snapshots.txt"))
    PODBasis(n_components=cfg.k, domain_length=2 * np.pi).fit(data[:, 1:]).save(run.path("basis.txt"))


def _mg_ensemble(run, observe):
    c, mg = run.cfg.covering, run.system()
    rng = np.random.default_rng(run.cfg.seed)
    per = -(-c.n_ensemble // c.n_trajectories)
    stride = max(1, int(round(c.ensemble_stride / mg.dt)))
    histories = 0.5 + 0.5 * rng.random((c.n_trajectories, mg.n_history + 1))
    values, _ = MGSolver(mg).integrate(histories, c.burn_in + per * stride * mg.dt)
    start = mg.n_history + int(round(c.burn_in / mg.dt))
    segs = [mg_trajectory_states(v, mg.n_history, stride, start)[:per] for v in values]
    return LiftedEnsemble.from_states(np.concatenate(segs)[: c.n_ensemble], observe)


def _ks_ensemble(run, observe):
    c = run.cfg.covering
    if c.mode == "subdivision":
        data, _, _ = read_columns(run.require("snapshots.txt"))
        return LiftedEnsemble.from_states(data[:, 1:], observe)
    rng = np.random.default_rng(run.cfg.seed)
    u = run.equilibrium_state()
    states = u + c.perturbation * rng.standard_normal((c.n_test_points,) + u.shape)
    return LiftedEnsemble.from_states(states, observe)


def stage_cover(run):
    cfg, c, kind = run.cfg, run.cfg.covering, run.cfg.system.kind
    observe = run.observer()
    domain = run.domain(observe)
    seed_point = run.seed_point(observe)
    if kind == "analytic":
        cds = PointMapEvaluator(FlowMap("analytic", run.system(), int(c.T)), seed=cfg.seed)
        ppb = 27 if c.points_per_box is None else c.points_per_box
    else:
        flow = FlowMap(kind, run.system(), c.T)
        ensemble = _ks_ensemble(run, observe) if kind == "ks" else _mg_ensemble(run, observe)
        cds = LiftedEvaluator(flow, observe, ensemble)
        ppb = c.points_per_box
    stats = []
    if c.mode == "subdivision":
        coll = subdivision_algorithm(cds, domain, c.depth, points_per_box=ppb, stats=stats)
    else:
        coll = continuation_algorithm(
            cds,
            domain,
            seed_point,
            c.depth,
            mode=c.mode,
            seed_depth=c.seed_depth,
            points_per_box=ppb,
            T=c.T,
            stride_h=c.h,
            n_test_points=c.n_test_points,
            seed_state=run.equilibrium_state(),
            perturbation=c.perturbation,
            random_state=cfg.seed,
            stats=stats,
        )
    coll.save(run.path("covering.txt"))
    rows = [(st.depth, st.boxes, st.dropped) for st in stats]
    write_columns(run.path("cover_stats.txt"), np.array(rows, dtype=np.int64).reshape(-1, 3),
                  ["depth", "boxes", "dropped"], fmt="%d")
    log.info("covering: %d boxes at depth %d", len(coll), coll.depth)
    if len(coll) == 0:
        raise EmptyCoveringError("the covering is empty; enlarge Q or check the map")


def stage_dimscan(run):
    d = run.cfg.dmaps
    coll = BoxCollection.load(run.require("covering.txt"))
    if len(coll) < 2:
        raise EmptyCoveringError(f"covering has {len(coll)} boxes; need at least two anchors")
    m = min(d.m, len(coll))
    if m < d.m:
        log.warning("covering has only %d boxes; using all of them as anchors", len(coll))
    X = midpoints(coll, m, seed=run.cfg.seed)
    write_columns(run.path("anchors.txt"), X, [f"x{i + 1}" for i in range(X.shape[1])],
                  meta={"m": m, "seed": run.cfg.seed})
    est = IntrinsicDimension(d.i_min, d.i_max, d.n_fine, selection=d.selection).fit(X)
    est.coarse_.save(run.path("dimscan_coarse.txt"))
    est.scan_.save(run.path("dimscan.txt"))
    log.info("d_int = %.3f at eps* = %.4g", est.dimension_, est.epsilon_)


def _load_anchors(run):
    X, _, _ = read_columns(run.require("anchors.txt"))
    return X


def stage_dmap(run):
    d = run.cfg.dmaps
    X = _load_anchors(run)
    if d.epsilon == "auto":
        _, _, meta = read_columns(run.require("dimscan.txt"))
        eps = float(meta["eps_star"])
    else:
        eps = float(d.epsilon)
    mask = largest_component(X, eps) if d.largest_component else np.ones(len(X), dtype=bool)
    if not mask.all():
        log.warning("%d anchors outside the largest kernel component are embedded by extension",
                    np.count_nonzero(~mask))
    model = DiffusionMap(epsilon=eps, alpha=d.alpha, min_neighbors=d.min_neighbors, n_evecs=d.n_ev,
                         n_components=d.n_coords, random_state=run.cfg.seed).fit(X[mask])
    model.save(run.path("model.txt"))
    y = np.empty((len(X), model.eigenvalues_.size))
    y[mask] = model.eigenvectors_ * model.eigenvalues_
    if not mask.all():
        y[~mask] = model.extend(X[~mask])[0]
    write_embedding(run.path("embedding.txt"), run.coords(y),
                    meta={"epsilon": eps, "n_in_graph": int(mask.sum())},
                    leading={"in_graph": mask.astype(float)})
    rows = spectral_gap_report(model)
    table = np.array([[r["ell"], r["eigenvalue"], r["ratio"], r["residual"], r["harmonic"]] for r in rows])
    write_columns(run.path("spectrum.txt"), table, ["ell", "eigenvalue", "ratio", "residual", "harmonic"])


def stage_extend(run):
    d = run.cfg.dmaps
    coll = BoxCollection.load(run.require("covering.txt"))
    X = _load_anchors(run)
    model = DiffusionMap.load(run.require("model.txt"))
    anchor_keys, _ = coll.locate(X)
    rest = np.setdiff1d(coll.keys, anchor_keys)
    n = min(d.n_extend, rest.size)
    pick = np.sort(np.random.default_rng(run.cfg.seed + 1).choice(rest.size, size=n, replace=False))
    points = coll.centers(rest[pick])
    y = model.extend(points)[0] if n else np.empty((0, model.eigenvalues_.size))
    write_embedding(run.path("extension.txt"), run.coords(y), meta={"n": n})


def stage_export(run):
    cfg = run.cfg
    model = DiffusionMap.load(run.require("model.txt"))
    data, _, _ = read_columns(run.require("trajectory.txt"))
    t = data[:, 0]
    observe = run.observer()
    if cfg.system.kind == "mackey_glass":
        mg = run.system()
        stride = max(1, int(round(cfg.export.stride / mg.dt)))
        Z = observe(mg_trajectory_states(data[:, 1], mg.n_history, stride))
        t = t[mg.n_history::stride]
    else:
        Z = observe(data[:, 1:])
    y = model.extend(Z)[0]
    write_embedding(run.path("trajectory_embedding.txt"), run.coords(y), leading={"t": t})

    n_coords = run.coords(y).shape[1]
    emb, _, _ = read_columns(run.require("embedding.txt"))
    parts = [emb[:, 1: 1 + n_coords]]
    source = [np.zeros(len(emb))]
    if run.path("extension.txt").is_file():
        ext, _, _ = read_columns(run.path("extension.txt"))
        parts.append(ext[:, :n_coords])
        source.append(np.ones(len(ext)))
    write_embedding(run.path("atlas.txt"), np.concatenate(parts), leading={"source": np.concatenate(source)})


STAGES = {
    "simulate": stage_simulate,
    "pod": stage_pod,
    "cover": stage_cover,
    "dimscan": stage_dimscan,
    "dmap": stage_dmap,
    "extend": stage_extend,
    "export": stage_export,
}


def run_stage(run, stage, manifest):
    inputs = run.stage_inputs(stage)
    for name in inputs:
        run.require(name)
    if manifest.is_current(stage, inputs):
        log.info("stage '%s' is up to date", stage)
        return False
    log.info("running stage '%s'", stage)
    start = time.perf_counter()
    STAGES[stage](run)
    manifest.record(stage, inputs, run.stage_outputs(stage), time.perf_counter() - start)
    return True


def run(cfg, stage="all"):
    """Execute one stage or the whole pipeline; returns the stages that ran."""
    if stage != "all" and stage not in STAGES:
        raise ConfigError(f"unknown stage '{stage}'")
    r = Run(cfg)
    with RunLock(r.root):
        manifest = RunManifest(r.root, cfg.digest())
        config_path = r.path("config.yaml")
        config_path.write_text(cfg.dump())
        manifest.record("config", [], ["config.yaml"], 0.0)
        ran = []
        for name in STAGE_ORDER if stage == "all" else (stage,):
            if run_stage(r, name, manifest):
                ran.append(name)
        return ran
