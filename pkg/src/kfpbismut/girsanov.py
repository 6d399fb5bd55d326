"""Change of measure along coupled paths.

The shifted path is driven by the base drift plus a control, so under
``Q = R P`` it is again a solution of the original equation. Expectations
under Q are computed as R-weighted expectations on the base ensemble.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .controls import ControlPair, cubic_controls
from .estimators import Estimate, McConfig, Observable, run_ensemble, semigroup_samples
from .integrate import BrownianPath, Trajectory, sample_brownian, simulate_coupled
from .model import Direction, State, SystemSpec, min_norm_preimage

Array = np.ndarray


@dataclass(frozen=True)
class DensityResult:
    log_density: Array
    entropy_integrand: Array

    @property
    def density(self) -> Array:
        return np.exp(self.log_density)


def _control_term(controls: ControlPair, epsilon: float, h: Direction, z, s) -> Array:
    return epsilon * (np.multiply.outer(controls.d2v(s), h.h2)
                      - np.multiply.outer(controls.d2u(s), np.asarray(z, dtype=float)))


def xi(system: SystemSpec, base: Trajectory, shifted: Trajectory, controls: ControlPair,
       epsilon: float, h: Direction, z, k: int) -> Array:
    """Z(base_k) - Z(shifted_k) + epsilon (v''(s_k) h2 - u''(s_k) z)."""
    s = base.grid.times[k]
    return (system.drift(s, base.x[k], base.y[k]) - system.drift(s, shifted.x[k], shifted.y[k])
            + _control_term(controls, epsilon, h, z, s))


def xi_path(system: SystemSpec, base: Trajectory, shifted: Trajectory, controls: ControlPair,
            epsilon: float, h: Direction, z) -> Array:
    """xi at every left endpoint s_0..s_{n-1}; shape (n, *batch, d)."""
    s = base.grid.times[:-1]
    nb = base.x.ndim - 2
    sb = s.reshape((-1,) + (1,) * (nb + 1))
    ctrl = _control_term(controls, epsilon, h, z, s)
    ctrl = ctrl.reshape((len(s),) + (1,) * nb + (system.d,))
    return (system.drift(sb, base.x[:-1], base.y[:-1])
            - system.drift(sb, shifted.x[:-1], shifted.y[:-1]) + ctrl)


def density(system: SystemSpec, base: Trajectory, shifted: Trajectory, brownian: BrownianPath,
            controls: ControlPair, epsilon: float, h: Direction, z) -> DensityResult:
    """log R = -sum <sigma^{-1} xi_k, dB_k> - 1/2 sum |sigma^{-1} xi_k|^2 dt."""
    g = xi_path(system, base, shifted, controls, epsilon, h, z) @ system.sigma_inv.T
    half_energy = 0.5 * np.sum(g * g, axis=(0, -1)) * brownian.dt
    log_r = -np.sum(g * brownian.increments, axis=(0, -1)) - half_energy
    return DensityResult(log_r, half_energy)


def coupled_samples(system: SystemSpec, observables, initial: State, h: Direction,
                    epsilon: float, t: float, cfg: McConfig,
                    controls: Optional[ControlPair] = None, z=None) -> Array:
    """Per-path columns ``[R, 1/2 int |sigma^{-1} xi|^2, f_1(base_t), ...]``."""
    grid = cfg.grid(t)
    controls = cubic_controls(t) if controls is None else controls
    if z is None:
        z = min_norm_preimage(system.A, h.h1)

    def block(rng, size):
        bm = sample_brownian(grid, rng, system.d, size)
        base, shifted = simulate_coupled(system, initial, h, epsilon, controls, grid, bm, z)
        dens = density(system, base, shifted, bm, controls, epsilon, h, z)
        xT, yT = base.terminal
        cols = [dens.density, dens.entropy_integrand]
        cols += [np.broadcast_to(f(xT, yT), (size,)) for f in observables]
        return np.stack(cols, axis=-1)

    return run_ensemble(cfg, block)


def estimate_density_mean(system: SystemSpec, initial: State, h: Direction, epsilon: float,
                          t: float, cfg: McConfig) -> Estimate:
    """E[R_t^epsilon], which the martingale property pins at 1."""
    cols = coupled_samples(system, [], initial, h, epsilon, t, cfg)
    return Estimate.from_samples(cols[:, 0], weights=cols[:, 0])


# seed offset for the independent "direct" ensemble
_DIRECT_STREAM = 0x5EED_D1EC


def shifted_expectation(system: SystemSpec, f: Observable, initial: State, h: Direction,
                        epsilon: float, t: float, cfg: McConfig,
                        common_paths: bool = False) -> tuple[Estimate, Estimate]:
    """Two estimates of P_t f(initial + epsilon h).

    ``weighted`` is E[R f(base_t)] on the base ensemble; ``direct`` is plain
    Monte Carlo from the shifted start on an independent ensemble (or on the
    same streams when ``common_paths`` is set).
    """
    cols = coupled_samples(system, [f], initial, h, epsilon, t, cfg)
    weighted = Estimate.from_samples(cols[:, 0] * cols[:, 2], weights=cols[:, 0])
    dcfg = cfg if common_paths else cfg.with_seed(cfg.master_seed ^ _DIRECT_STREAM)
    direct_vals = semigroup_samples(system, [f], initial.shifted(h, epsilon), t, dcfg)[:, 0]
    return weighted, Estimate.from_samples(direct_vals)


def entropy_samples(system: SystemSpec, base_point: State, shifted_point: State, t: float,
                    cfg: McConfig, observables=()) -> Array:
    """Coupling with epsilon = 1 from ``base_point`` to ``shifted_point``.

    Columns as in :func:`coupled_samples`.
    """
    h = Direction.between(base_point, shifted_point)
    return coupled_samples(system, list(observables), base_point, h, 1.0, t, cfg)


def log_harnack_entropy(system: SystemSpec, base_point: State, shifted_point: State, t: float,
                        cfg: McConfig) -> Estimate:
    """E[R^1 * 1/2 int |sigma^{-1} xi^1|^2 ds], the Q_1-expected path energy.

    It bounds P_t log f(shifted_point) - log P_t f(base_point) for every
    positive bounded f.
    """
    cols = entropy_samples(system, base_point, shifted_point, t, cfg)
    return Estimate.from_samples(cols[:, 0] * cols[:, 1], weights=cols[:, 0])
