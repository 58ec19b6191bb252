"""Time-T maps for the Kuramoto-Sivashinsky and Mackey-Glass systems.

Every map here is a pure function of its input: states are plain float
arrays whose last axis is the discretization, and any leading axes are
treated as a batch, so ensembles of thousands of states advance together.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ._io import write_columns
from .exceptions import IntegrationDivergedError

BLOWUP_THRESHOLD = 1e10
_CONTOUR_POINTS = 32


# ---------------------------------------------------------------------------
# Kuramoto-Sivashinsky:  u_t + 4 u_xxxx + mu (u_xx + 0.5 u_x^2) = 0 on [0, 2pi)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KSConfig:
    mu: float
    n_modes: int = 64
    dt: float = 0.01

    def __post_init__(self):
        n = self.n_modes
        if n < 16 or n & (n - 1):
            raise ValueError(f"n_modes must be a power of two >= 16, got {n}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.mu > 0:
            raise ValueError("mu must be positive")

    @property
    def grid(self):
        return 2 * np.pi * np.arange(self.n_modes) / self.n_modes


def ks_initial_state(cfg, amplitude=1e-4):
    """The state ``amplitude * cos(x) (1 + sin(x))`` on the collocation grid."""
    x = cfg.grid
    return amplitude * np.cos(x) * (1 + np.sin(x))


@lru_cache(maxsize=32)
def _ks_operators(mu, n, h):
    k = np.arange(n // 2 + 1, dtype=float)
    lin = mu * k**2 - 4 * k**4
    ik = 1j * k
    ik[-1] = 0.0  # Nyquist mode has no odd derivative
    dealias = k < n / 3

    # phi-functions by contour averaging (Kassam & Trefethen); avoids the
    # cancellation in (e^z - 1 - z ...) / z^3 for small |z|
    roots = np.exp(1j * np.pi * (np.arange(1, _CONTOUR_POINTS + 1) - 0.5) / _CONTOUR_POINTS)
    lr = h * lin[:, None] + roots[None, :]
    elr = np.exp(lr)
    q = h * np.real(np.mean((np.exp(lr / 2) - 1) / lr, axis=1))
    f1 = h * np.real(np.mean((-4 - lr + elr * (4 - 3 * lr + lr**2)) / lr**3, axis=1))
    f2 = h * np.real(np.mean((2 + lr + elr * (lr - 2)) / lr**3, axis=1))
    f3 = h * np.real(np.mean((-4 - 3 * lr - lr**2 + elr * (4 - lr)) / lr**3, axis=1))
    ops = {
        "E": np.exp(h * lin),
        "E2": np.exp(h * lin / 2),
        "Q": q,
        "f1": f1,
        "f2": f2,
        "f3": f3,
        "ik": ik,
        "dealias": dealias,
    }
    for arr in ops.values():
        arr.setflags(write=False)
    return ops


class KSSolver:
    """Fourier pseudospectral ETD-RK4 integrator for the KS equation.

    The spatial mean is a passive quantity (it never feeds back into the
    other modes) and is held fixed at its initial value instead of drifting
    with the mean of ``-mu/2 u_x^2``.
    """

    def __init__(self, cfg):
        self.cfg = cfg
        self._n = cfg.n_modes
        self._half = -0.5 * cfg.mu

    def _nonlinear(self, v, ops):
        ux = np.fft.irfft(ops["ik"] * v, n=self._n)
        w = np.fft.rfft(ux * ux) * ops["dealias"]
        w[..., 0] = 0.0
        return self._half * w

    def _step(self, v, ops):
        nv = self._nonlinear(v, ops)
        a = ops["E2"] * v + ops["Q"] * nv
        na = self._nonlinear(a, ops)
        b = ops["E2"] * v + ops["Q"] * na
        nb = self._nonlinear(b, ops)
        c = ops["E2"] * a + ops["Q"] * (2 * nb - nv)
        nc = self._nonlinear(c, ops)
        return ops["E"] * v + nv * ops["f1"] + 2 * (na + nb) * ops["f2"] + nc * ops["f3"]

    def _check(self, v, step):
        # 2 * sum |v_k| / n bounds max |u| from above
        bound = 2 * np.abs(v).sum(axis=-1) / self._n
        if not np.all(bound < BLOWUP_THRESHOLD):
            u = np.fft.irfft(v, n=self._n)
            if not np.all(np.isfinite(u)) or np.abs(u).max() > BLOWUP_THRESHOLD:
                raise IntegrationDivergedError(step)

    def _schedule(self, T):
        dt = self.cfg.dt
        n_full = int(np.floor(T / dt + 1e-9))
        rest = T - n_full * dt
        if rest <= 1e-12 * max(dt, 1.0):
            rest = 0.0
        return n_full, rest

    def _advance_spectral(self, v, T, step0=0):
        n_full, rest = self._schedule(T)
        ops = _ks_operators(self.cfg.mu, self._n, self.cfg.dt)
        for i in range(n_full):
            v = self._step(v, ops)
            self._check(v, step0 + i + 1)
        if rest > 0:
            v = self._step(v, _ks_operators(self.cfg.mu, self._n, rest))
            self._check(v, step0 + n_full + 1)
        return v

    def advance(self, u, T):
        u = _as_states(u, self._n)
        if T < 0:
            raise ValueError("T must be nonnegative")
        if T == 0:
            return u.copy()
        v = np.fft.rfft(u)
        return np.fft.irfft(self._advance_spectral(v, T), n=self._n)

    def iter_trajectory(self, u, T, stride):
        """Yield ``(t, u(t))`` at ``t = stride, 2 stride, ..., T``."""
        u = _as_states(u, self._n)
        n_rec = _stride_count(T, stride)
        v = np.fft.rfft(u)
        steps_per = int(round(stride / self.cfg.dt))
        for i in range(1, n_rec + 1):
            v = self._advance_spectral(v, stride, step0=(i - 1) * steps_per)
            yield i * stride, np.fft.irfft(v, n=self._n)


def ks_time_t_map(u, cfg, T):
    """Solution of the KS equation at time ``T`` started from ``u``."""
    return KSSolver(cfg).advance(u, T)


# ---------------------------------------------------------------------------
# Mackey-Glass:  u'(t) = beta u(t - tau) / (1 + u(t - tau)^eta) - gamma u(t)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MGConfig:
    beta: float = 2.0
    gamma: float = 1.0
    eta: float = 9.65
    tau: float = 2.0
    dt: float = 2.0 / 120

    def __post_init__(self):
        for name in ("beta", "gamma", "eta", "tau", "dt"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        ratio = self.tau / self.dt
        if abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise ValueError(f"dt={self.dt} does not divide tau={self.tau}")

    @property
    def n_history(self):
        return int(round(self.tau / self.dt))

    @property
    def grid(self):
        """History sample times on [-tau, 0]."""
        return np.linspace(-self.tau, 0.0, self.n_history + 1)

    def rhs(self, u, u_delay):
        return self.beta * u_delay / (1 + u_delay**self.eta) - self.gamma * u


def mg_equilibrium(cfg):
    """Nontrivial fixed point ``(beta/gamma - 1)^(1/eta)``."""
    return (cfg.beta / cfg.gamma - 1) ** (1 / cfg.eta)


def hermite(u0, u1, d0, d1, s, h):
    """Cubic Hermite interpolant on ``[0, h]`` at relative position ``s``."""
    s2 = s * s
    s3 = s2 * s
    return (
        (2 * s3 - 3 * s2 + 1) * u0
        + (s3 - 2 * s2 + s) * h * d0
        + (-2 * s3 + 3 * s2) * u1
        + (s3 - s2) * h * d1
    )


def history_slopes(history, cfg):
    """Slopes of a stored history by second-order finite differences.

    The slope at t = 0 is the one-sided (left) difference: an arbitrary
    initial history generally has a kink there, and the interpolant on the
    last history interval must follow the history itself.  The solver uses
    the vector field for the right-hand slope at t = 0.
    """
    return np.gradient(history, cfg.dt, axis=-1, edge_order=2)


class MGSolver:
    """Method of steps with classical RK4.

    The delayed argument at the half step is interpolated by cubic Hermite
    from stored (value, slope) pairs; full steps fall on the history grid.
    """

    def __init__(self, cfg):
        self.cfg = cfg
        self._nh = cfg.n_history

    def _n_steps(self, T):
        n = T / self.cfg.dt
        steps = int(round(n))
        if T < 0 or abs(n - steps) > 1e-9 * max(n, 1.0):
            raise ValueError(f"T={T} is not a nonnegative multiple of dt={self.cfg.dt}")
        return steps

    def integrate(self, history, T):
        """Return the dense solution on ``[-tau, T]`` (values, slopes)."""
        cfg = self.cfg
        history = _as_states(history, self._nh + 1)
        n_steps = self._n_steps(T)
        shape = history.shape[:-1] + (self._nh + 1 + n_steps,)
        val = np.empty(shape)
        der = np.empty(shape)
        val[..., : self._nh + 1] = history
        h = cfg.dt
        f = cfg.rhs
        hist_d = history_slopes(history, cfg)
        der[..., : self._nh + 1] = hist_d
        der[..., self._nh] = f(history[..., -1], history[..., 0])
        d_left = hist_d[..., -1]
        for i in range(n_steps):
            p = self._nh + i
            y = val[..., p]
            ud0 = val[..., i]
            ud1 = val[..., i + 1]
            d1 = d_left if i + 1 == self._nh else der[..., i + 1]
            udm = 0.5 * (ud0 + ud1) + h * (der[..., i] - d1) / 8
            k1 = f(y, ud0)
            k2 = f(y + 0.5 * h * k1, udm)
            k3 = f(y + 0.5 * h * k2, udm)
            k4 = f(y + h * k3, ud1)
            y_new = y + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6
            if not np.all(np.abs(y_new) < BLOWUP_THRESHOLD):
                raise IntegrationDivergedError(i + 1)
            val[..., p + 1] = y_new
            der[..., p + 1] = f(y_new, ud1)
        return val, der

    def advance(self, history, T):
        history = _as_states(history, self._nh + 1)
        if self._n_steps(T) == 0:
            return history.copy()
        val, _ = self.integrate(history, T)
        return val[..., -(self._nh + 1):].copy()

    def iter_trajectory(self, history, T, stride):
        u = _as_states(history, self._nh + 1)
        for i in range(1, _stride_count(T, stride) + 1):
            u = self.advance(u, stride)
            yield i * stride, u


def mg_time_t_map(u, cfg, T):
    """Advance a Mackey-Glass history segment on ``[-tau, 0]`` by ``T``."""
    return MGSolver(cfg).advance(u, T)


def mg_trajectory_states(values, n_history, stride_steps=1, start=None):
    """History segments cut from a dense scalar solution.

    ``values`` is the dense output of :meth:`MGSolver.integrate` for one
    trajectory; the segment ending at index ``p`` is ``values[p-n_h : p+1]``.
    """
    values = np.asarray(values)
    first = n_history if start is None else max(start, n_history)
    ends = np.arange(first, values.shape[-1], stride_steps)
    idx = ends[:, None] + np.arange(-n_history, 1)[None, :]
    return values[idx]


# ---------------------------------------------------------------------------
# Analytic maps used as covering fixtures
# ---------------------------------------------------------------------------

ANALYTIC_DEFAULTS = {
    "scale": {"lam": 0.5},
    "saddle-2d": {"lam_s": 0.5, "lam_u": 2.0, "c": 1.0},
    "saddle-curved": {"lam_s": 0.5, "lam_u": 2.0, "c": 1.0},
    "henon": {"a": 1.4, "b": 0.3},
    "identity": {},
}


def analytic_map(x, name, **params):
    """Apply a named closed-form map once to points ``x`` of shape (..., k).

    ``saddle-2d`` is ``(x, y) -> (lam_s x, lam_u y + c x^2)``; its unstable
    manifold is the y-axis. ``saddle-curved`` swaps the roles,
    ``(x, y) -> (lam_u x, lam_s y + c x^2)``, whose unstable manifold is the
    parabola ``y = c x^2 / (lam_u^2 - lam_s)``.
    """
    if name not in ANALYTIC_DEFAULTS:
        raise ValueError(f"unknown analytic map '{name}'")
    p = {**ANALYTIC_DEFAULTS[name], **params}
    x = np.asarray(x, dtype=float)
    if name == "identity":
        return x.copy()
    if name == "scale":
        return p["lam"] * x
    x0, x1 = x[..., 0], x[..., 1]
    if name == "saddle-2d":
        out = (p["lam_s"] * x0, p["lam_u"] * x1 + p["c"] * x0**2)
    elif name == "saddle-curved":
        out = (p["lam_u"] * x0, p["lam_s"] * x1 + p["c"] * x0**2)
    else:
        out = (1 - p["a"] * x0**2 + x1, p["b"] * x0)
    return np.stack(out, axis=-1)


def saddle_curved_manifold(s, lam_s=0.5, lam_u=2.0, c=1.0):
    """Points of the closed-form unstable manifold of ``saddle-curved``."""
    s = np.asarray(s, dtype=float)
    return np.stack([s, c * s**2 / (lam_u**2 - lam_s)], axis=-1)


# ---------------------------------------------------------------------------
# Uniform flow interface
# ---------------------------------------------------------------------------


class FlowMap:
    """The time-``T`` map of one of the supported systems.

    ``kind`` is ``"ks"``, ``"mackey_glass"`` or ``"analytic"``; for the
    analytic kind ``config`` is ``(name, params)`` and ``T`` counts
    iterations.
    """

    def __init__(self, kind, config, T):
        if T < 0:
            raise ValueError("T must be nonnegative")
        self.kind = kind
        self.config = config
        self.T = T
        if kind == "ks":
            self._solver = KSSolver(config)
        elif kind == "mackey_glass":
            self._solver = MGSolver(config)
        elif kind == "analytic":
            self._solver = None
        else:
            raise ValueError(f"unknown system kind '{kind}'")

    @property
    def state_size(self):
        if self.kind == "ks":
            return self.config.n_modes
        if self.kind == "mackey_glass":
            return self.config.n_history + 1
        return None

    def advance(self, u, T):
        if self.kind == "analytic":
            name, params = self.config
            x = np.asarray(u, dtype=float)
            for _ in range(int(T)):
                x = analytic_map(x, name, **params)
            return x
        return self._solver.advance(u, T)

    def __call__(self, u):
        return self.advance(u, self.T)

    def iter_trajectory(self, u, T, stride):
        if self.kind == "analytic":
            x = np.asarray(u, dtype=float)
            for i in range(1, _stride_count(T, stride) + 1):
                x = self.advance(x, stride)
                yield i * stride, x
            return
        yield from self._solver.iter_trajectory(u, T, stride)


def write_trajectory(path, times, states, meta=None):
    """Columnar export: ``t`` then one column per state entry."""
    states = np.asarray(states)
    names = ["t"] + [f"u{j}" for j in range(states.shape[1])]
    write_columns(path, np.column_stack([times, states]), names, meta=meta)


def _as_states(u, n):
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != n:
        raise ValueError(f"state length {u.shape[-1]} does not match discretization {n}")
    if not np.all(np.isfinite(u)):
        raise ValueError("state contains non-finite values")
    return u


def _stride_count(T, stride):
    if not stride > 0:
        raise ValueError("stride must be positive")
    n = T / stride
    count = int(round(n))
    if abs(n - count) > 1e-9 * max(n, 1.0):
        raise ValueError(f"stride {stride} does not divide T={T}")
    return count
