"""Ready-made experiment configurations at desk and paper scale.

Desk scale divides the test-point, anchor and extension counts by 100 and
uses shallower boxes, so a full run takes minutes on one core.
"""

import dataclasses

from ..exceptions import ConfigError
from .config import (
    CoveringConfig,
    DmapsConfig,
    ExperimentConfig,
    ObservationConfig,
    SimulateConfig,
    SystemConfig,
)

# KS at mu=15: the embedded unstable manifold stays inside this box
KS15_BOUNDS = [8.0, 8.0, 7.0, 6.0, 2.0, 2.0, 0.5]
KS_PAPER_DEPTH = {15.0: 56, 18.0: 35}
DESK_DIVISOR = 100


def recipe_ks(mu, scale="desk"):
    """Unstable manifold of u* = 0 for Kuramoto-Sivashinsky at parameter ``mu``."""
    mu = float(mu)
    if not mu > 0:
        raise ConfigError("mu must be positive")
    _check_scale(scale)
    paper = scale == "paper"
    k = 5 if mu >= 32 else 7
    mu_ref = 15.0 if 15 <= mu <= 18 else mu
    n_test, m, n_extend = 100_000, 100_000, 500_000
    if not paper:
        n_test, m, n_extend = n_test // DESK_DIVISOR, 3000, n_extend // DESK_DIVISOR
    covering = CoveringConfig(
        mode="sweep",
        depth=KS_PAPER_DEPTH.get(mu, 56) if paper else 42,
        T=800.0,
        h=0.2,
        n_test_points=n_test,
        margin=1.5,
    )
    if mu_ref == 15.0 and k == 7:
        covering.lower = [-1.5 * b for b in KS15_BOUNDS]
        covering.upper = [1.5 * b for b in KS15_BOUNDS]
    return ExperimentConfig(
        name=f"ks-mu{mu:g}-{scale}",
        scale=scale,
        output_dir=f"runs/ks-mu{mu:g}-{scale}",
        system=SystemConfig(kind="ks", mu=mu, n_modes=64 if paper else 32, dt=0.01 if paper else 0.02),
        simulate=SimulateConfig(T=2000.0, stride=0.2, discard=0.25),
        observation=ObservationConfig(kind="pod", k=k, mu_ref=mu_ref),
        covering=covering,
        dmaps=DmapsConfig(m=m, n_extend=n_extend, n_ev=10, n_coords=3),
    )


def recipe_mg(scale="desk"):
    """Mackey-Glass attractor in 7 delay coordinates."""
    _check_scale(scale)
    paper = scale == "paper"
    return ExperimentConfig(
        name=f"mg-{scale}",
        scale=scale,
        output_dir=f"runs/mg-{scale}",
        system=SystemConfig(kind="mackey_glass", beta=2.0, gamma=1.0, eta=9.65, tau=2.0, n_history=120),
        simulate=SimulateConfig(T=300.0, stride=2.0 / 120, discard=1.0 / 3),
        observation=ObservationConfig(kind="delay", k=7),
        covering=CoveringConfig(
            mode="subdivision",
            depth=63 if paper else 35,
            T=1.0,
            lower=[0.0] * 7,
            upper=[1.5] * 7,
            n_ensemble=4_000_000 if paper else 40_000,
            n_trajectories=2000 if paper else 20,
            burn_in=100.0,
            ensemble_stride=0.2,
        ),
        dmaps=DmapsConfig(
            m=100_000 if paper else 5000,
            n_extend=500_000 if paper else 5000,
            n_ev=10,
            n_coords=3,
        ),
    )


def recipe(name, scale="desk", mu=None):
    if name == "mg":
        return recipe_mg(scale)
    if name == "ks":
        if mu is None:
            raise ConfigError("the ks recipe needs 'mu'")
        return recipe_ks(mu, scale)
    raise ConfigError(f"unknown recipe '{name}' (expected 'ks' or 'mg')")


def _check_scale(scale):
    if scale not in ("desk", "paper"):
        raise ConfigError(f"scale must be 'desk' or 'paper', got {scale!r}")


def with_updates(cfg, **sections):
    """Copy of ``cfg`` with per-section field updates, e.g. ``dmaps={"m": 10}``."""
    out = dataclasses.replace(cfg)
    for name, values in sections.items():
        setattr(out, name, dataclasses.replace(getattr(out, name), **values))
    return out
