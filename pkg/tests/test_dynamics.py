import numpy as np
import pytest
from hypothesis import given, strategies as st

from invariant_atlas._io import read_columns
from invariant_atlas.dynamics import (
    FlowMap,
    KSConfig,
    KSSolver,
    MGConfig,
    MGSolver,
    analytic_map,
    hermite,
    ks_initial_state,
    ks_time_t_map,
    mg_equilibrium,
    mg_time_t_map,
    mg_trajectory_states,
    saddle_curved_manifold,
    write_trajectory,
)
from invariant_atlas.exceptions import IntegrationDivergedError


# -- Kuramoto-Sivashinsky --------------------------------------------------------


def test_ks_config_validation():
    with pytest.raises(ValueError):
        KSConfig(mu=15, n_modes=48)
    with pytest.raises(ValueError):
        KSConfig(mu=15, n_modes=8)
    with pytest.raises(ValueError):
        KSConfig(mu=15, dt=0)
    with pytest.raises(ValueError):
        KSConfig(mu=-1)


def test_ks_zero_time_is_identity(rng):
    cfg = KSConfig(mu=15, n_modes=32)
    u = rng.standard_normal(32)
    out = ks_time_t_map(u, cfg, 0.0)
    assert np.array_equal(out, u)
    assert out is not u


def test_ks_small_mu_decays_to_zero():
    cfg = KSConfig(mu=3, n_modes=64, dt=0.01)
    u = ks_time_t_map(ks_initial_state(cfg), cfg, 200.0)
    assert np.abs(u).max() < 1e-6


@pytest.mark.parametrize("mode, mu", [(1, 3.0), (1, 15.0), (2, 15.0), (2, 18.0)])
def test_ks_linear_growth_rate(mode, mu):
    # tiny single Fourier mode: the quadratic term is ~1e-24, so the mode
    # evolves with the exact linear rate mu n^2 - 4 n^4
    cfg = KSConfig(mu=mu, n_modes=32, dt=0.01)
    a, T = 1e-12, 0.5
    x = cfg.grid
    u = ks_time_t_map(a * np.cos(mode * x), cfg, T)
    expected = a * np.exp((mu * mode**2 - 4 * mode**4) * T) * np.cos(mode * x)
    assert np.allclose(u, expected, rtol=0, atol=1e-8 * np.abs(expected).max())


def test_ks_energy_decreases_for_small_mu():
    cfg = KSConfig(mu=3, n_modes=32, dt=0.02)
    norms = [np.linalg.norm(u) for _, u in KSSolver(cfg).iter_trajectory(ks_initial_state(cfg), 20.0, 1.0)]
    assert np.all(np.diff(norms) <= 0)


def test_ks_self_convergence_is_fourth_order():
    x = 2 * np.pi * np.arange(64) / 64
    u0 = 0.5 * np.sin(x) + 0.2 * np.cos(2 * x)
    sols = [ks_time_t_map(u0, KSConfig(mu=3, n_modes=64, dt=dt), 10.0) for dt in (0.025, 0.0125, 0.00625)]
    ratio = np.abs(sols[0] - sols[1]).max() / np.abs(sols[1] - sols[2]).max()
    assert 12 <= ratio <= 20


def test_ks_mu15_settles_on_traveling_wave():
    cfg = KSConfig(mu=15, n_modes=32, dt=0.02)
    traj = [u for _, u in KSSolver(cfg).iter_trajectory(ks_initial_state(cfg), 60.0, 0.2)]
    norms = np.array([np.linalg.norm(u) for u in traj[-50:]])
    assert norms.mean() > 1.0
    assert np.ptp(norms) / norms.mean() < 1e-3
    # the late profile is a shifted copy of an earlier one
    a, b = traj[-50], traj[-1]
    fa, fb = np.fft.rfft(a), np.fft.rfft(b)
    assert np.allclose(np.abs(fa), np.abs(fb), atol=1e-3 * np.abs(fa).max())


def test_ks_partial_final_step():
    cfg = KSConfig(mu=15, n_modes=32, dt=0.02)
    u0 = ks_initial_state(cfg, amplitude=0.1)
    direct = ks_time_t_map(u0, cfg, 0.05)
    # 0.05 = 2 full steps + one step of length 0.01
    fine = ks_time_t_map(u0, KSConfig(mu=15, n_modes=32, dt=0.01), 0.05)
    assert np.abs(direct - fine).max() < 1e-6


def test_ks_batched_equals_single(rng):
    cfg = KSConfig(mu=15, n_modes=32, dt=0.02)
    batch = 0.1 * rng.standard_normal((3, 32))
    out = KSSolver(cfg).advance(batch, 1.0)
    for i in range(3):
        assert np.array_equal(out[i], KSSolver(cfg).advance(batch[i], 1.0))


def test_ks_deterministic(rng):
    cfg = KSConfig(mu=15, n_modes=32, dt=0.02)
    u = 0.1 * rng.standard_normal(32)
    assert np.array_equal(ks_time_t_map(u, cfg, 2.0), ks_time_t_map(u, cfg, 2.0))


def test_ks_blowup_raises():
    cfg = KSConfig(mu=15, n_modes=16, dt=0.5)
    u = 1e9 * np.cos(KSConfig(mu=15, n_modes=16).grid)
    with pytest.raises(IntegrationDivergedError) as info:
        ks_time_t_map(u, cfg, 10.0)
    assert info.value.step >= 1


def test_ks_rejects_bad_states():
    cfg = KSConfig(mu=15, n_modes=32)
    with pytest.raises(ValueError):
        ks_time_t_map(np.zeros(16), cfg, 1.0)
    with pytest.raises(ValueError):
        ks_time_t_map(np.full(32, np.nan), cfg, 1.0)


# -- Mackey-Glass --------------------------------------------------------------


def test_mg_config_validation():
    with pytest.raises(ValueError):
        MGConfig(dt=0.3)
    with pytest.raises(ValueError):
        MGConfig(beta=-1)
    assert MGConfig().n_history == 120
    assert MGConfig(dt=0.02).n_history == 100


def test_mg_equilibrium_is_stationary():
    cfg = MGConfig()
    assert mg_equilibrium(cfg) == 1.0
    u = np.ones(cfg.n_history + 1)
    T = 10.0
    out = mg_time_t_map(u, cfg, T)
    assert np.abs(out - 1).max() <= 1e-10 * T


def test_mg_zero_time_is_identity(rng):
    cfg = MGConfig()
    u = 0.5 + rng.random(cfg.n_history + 1)
    assert np.array_equal(mg_time_t_map(u, cfg, 0.0), u)


def test_mg_first_interval_matches_closed_form():
    # with constant history c the delayed term is constant on [0, tau]:
    # u' = K - gamma u,  K = beta c / (1 + c^eta)
    cfg = MGConfig()
    c, u0 = 0.7, 0.7
    hist = np.full(cfg.n_history + 1, c)
    hist[-1] = u0
    val, _ = MGSolver(cfg).integrate(np.full(cfg.n_history + 1, c), cfg.tau)
    t = np.arange(cfg.n_history + 1) * cfg.dt
    K = cfg.beta * c / (1 + c**cfg.eta)
    exact = K / cfg.gamma + (u0 - K / cfg.gamma) * np.exp(-cfg.gamma * t)
    assert np.abs(val[cfg.n_history:] - exact).max() < 1e-9  # RK4 truncation only


def test_mg_fourth_order_convergence():
    hist_fn = lambda s: 0.9 + 0.3 * np.sin(2 * s)
    sols = []
    for nh in (20, 40, 80):
        cfg = MGConfig(dt=2.0 / nh)
        hist = hist_fn(np.linspace(-2, 0, nh + 1))
        sols.append(mg_time_t_map(hist, cfg, 4.0)[-1])
    ratio = abs(sols[0] - sols[1]) / abs(sols[1] - sols[2])
    assert 12 <= ratio <= 20  # 16 for a fourth-order scheme


def test_mg_trajectory_bounded_and_positive(rng):
    cfg = MGConfig()
    hist = 0.5 + 0.5 * rng.random((4, cfg.n_history + 1))
    val, _ = MGSolver(cfg).integrate(hist, 300.0)
    late = val[:, cfg.n_history + int(100 / cfg.dt):]
    assert np.all(val > 0)
    assert late.min() >= 0 and late.max() <= 1.5
    assert np.std(late) > 0.1  # not collapsed onto the equilibrium


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_mg_blowup_raises():
    cfg = MGConfig()
    with pytest.raises(IntegrationDivergedError):
        mg_time_t_map(-np.ones(cfg.n_history + 1), cfg, 2.0)


def test_mg_advance_matches_dense_output():
    cfg = MGConfig()
    hist = 0.9 + 0.3 * np.sin(2 * cfg.grid)
    val, _ = MGSolver(cfg).integrate(hist, 4.0)
    stepped = MGSolver(cfg).advance(MGSolver(cfg).advance(hist, 2.0), 2.0)
    direct = MGSolver(cfg).advance(hist, 4.0)
    assert np.array_equal(direct, val[-(cfg.n_history + 1):])
    # restarting re-estimates interior slopes, so only near-equality is expected
    assert np.abs(stepped - direct).max() < 1e-6


def test_mg_trajectory_states_are_windows():
    values = np.arange(20.0)
    segs = mg_trajectory_states(values, 4, stride_steps=3)
    assert np.array_equal(segs[0], [0, 1, 2, 3, 4])
    assert np.array_equal(segs[1], [3, 4, 5, 6, 7])


def test_hermite_reproduces_cubics():
    p = np.poly1d([0.3, -1.0, 2.0, 0.5])
    dp = p.deriv()
    h = 0.7
    s = np.linspace(0, 1, 11)
    got = hermite(p(0.0), p(h), dp(0.0), dp(h), s, h)
    assert np.allclose(got, p(s * h), atol=1e-14)


# -- analytic maps ----------------------------------------------------------------


def test_analytic_examples():
    assert np.allclose(analytic_map([1.0, 1.0], "scale", lam=0.5), [0.5, 0.5])
    assert np.allclose(analytic_map([0.0, 0.0], "saddle-2d"), [0.0, 0.0])
    assert np.allclose(analytic_map([0.0, 0.0], "henon", a=1.4, b=0.3), [1.0, 0.0])
    with pytest.raises(ValueError):
        analytic_map([0.0, 0.0], "nope")


@given(st.floats(-1, 1))
def test_saddle_curved_manifold_is_invariant(s):
    p = saddle_curved_manifold(s)
    img = analytic_map(p, "saddle-curved")
    assert np.allclose(img, saddle_curved_manifold(2.0 * s), atol=1e-12)


def test_flowmap_analytic_iterates():
    fm = FlowMap("analytic", ("scale", {"lam": 0.5}), 3)
    assert np.allclose(fm(np.array([8.0, -8.0])), [1.0, -1.0])
    recs = list(fm.iter_trajectory(np.array([1.0]), 2, 1))
    assert [t for t, _ in recs] == [1, 2]
    with pytest.raises(ValueError):
        FlowMap("other", None, 1.0)


def test_flowmap_matches_solvers(rng):
    cfg = MGConfig()
    hist = 0.5 + rng.random(cfg.n_history + 1)
    assert np.array_equal(FlowMap("mackey_glass", cfg, 1.0)(hist), mg_time_t_map(hist, cfg, 1.0))
    assert FlowMap("mackey_glass", cfg, 1.0).state_size == 121


def test_write_trajectory_layout(tmp_path):
    t = np.array([0.0, 0.2])
    states = np.array([[1.0, 2.0], [3.0, 4.0]])
    write_trajectory(tmp_path / "traj.txt", t, states, meta={"mu": 15.0})
    data, names, meta = read_columns(tmp_path / "traj.txt")
    assert names == ["t", "u0", "u1"]
    assert meta["mu"] == "15"
    assert np.array_equal(data, np.column_stack([t, states]))
