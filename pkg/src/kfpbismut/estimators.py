"""Monte Carlo engine: semigroup values and gradient estimators.

Paths are grouped into fixed stream blocks of ``STREAM_BLOCK`` paths. Block
``b`` draws its noise from a Philox generator keyed by ``(master_seed, b)``,
so path ``i`` always receives the same increments regardless of ``n_paths``,
of how many workers run, or of which estimator asks for it. That also makes
every pair of estimators sharing a seed a common-random-numbers coupling.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import expm

from .controls import ControlPair, bismut_weight, cubic_controls, zhang_weight
from .integrate import ExplosionError, PathGrid, sample_brownian, simulate
from .model import OU_GENERATOR, Direction, State, SystemSpec, min_norm_preimage, ou_exact_mean_cov

Array = np.ndarray
Observable = Callable[[Array, Array], Array]

STREAM_BLOCK = 4096


@dataclass(frozen=True)
class McConfig:
    n_paths: int
    n_steps: int
    master_seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.n_paths < 2:
            raise ValueError("n_paths must be >= 2")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")

    def grid(self, t: float) -> PathGrid:
        return PathGrid(t, self.n_steps)

    def with_seed(self, seed: int) -> "McConfig":
        return McConfig(self.n_paths, self.n_steps, seed, self.workers)


@dataclass(frozen=True)
class Estimate:
    mean: float
    stderr: float
    n: int
    ess: float

    @classmethod
    def from_samples(cls, values: Array, weights: Optional[Array] = None) -> "Estimate":
        """Sample mean and standard error; ``weights`` only feed the ESS."""
        values = np.asarray(values, dtype=float)
        n = values.size
        ess = float(n)
        if weights is not None:
            w = np.asarray(weights, dtype=float)
            ess = float(n * np.mean(w) ** 2 / np.mean(w * w))
        return cls(float(np.mean(values)), float(np.std(values, ddof=1) / np.sqrt(n)), n, ess)

    @classmethod
    def exact(cls, value: float) -> "Estimate":
        return cls(float(value), 0.0, 0, 0.0)


def block_rng(master_seed: int, block: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(master_seed) & (2**64 - 1), spawn_key=(block,))
    return np.random.Generator(np.random.Philox(ss))


def run_ensemble(cfg: McConfig, block_fn: Callable[[np.random.Generator, int], Array],
                 n_paths: Optional[int] = None) -> Array:
    """Evaluate ``block_fn(rng, block_size)`` on every stream block.

    Each call returns an array whose first axis runs over the block's paths.
    Results are concatenated in path order and cut to ``n_paths`` rows, so the
    output does not depend on ``cfg.workers``.
    """
    n_paths = cfg.n_paths if n_paths is None else n_paths
    n_blocks = -(-n_paths // STREAM_BLOCK)

    def one(b):
        try:
            return block_fn(block_rng(cfg.master_seed, b), STREAM_BLOCK)
        except ExplosionError as err:
            raise ExplosionError(err.step, path=b * STREAM_BLOCK + (err.path or 0)) from err

    if cfg.workers > 1 and n_blocks > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            parts = list(pool.map(one, range(n_blocks)))
    else:
        parts = [one(b) for b in range(n_blocks)]
    return np.concatenate(parts, axis=0)[:n_paths]


def simulate_block(system: SystemSpec, initial: State, grid: PathGrid,
                   rng: np.random.Generator, size: int):
    brownian = sample_brownian(grid, rng, system.d, size)
    try:
        traj = simulate(system, initial, grid, brownian)
    except ExplosionError as err:
        path = _first_bad_path(system, initial, grid, brownian)
        raise ExplosionError(err.step, path) from err
    return traj, brownian


def _first_bad_path(system, initial, grid, brownian) -> int:
    # rerun quietly to locate the offending column
    n, dt = grid.n_steps, grid.dt
    x = np.broadcast_to(initial.x, brownian.batch_shape + (system.m,)).copy()
    y = np.broadcast_to(initial.y, brownian.batch_shape + (system.d,)).copy()
    noise = brownian.increments @ system.sigma.T
    bad = np.zeros(brownian.batch_shape, dtype=bool)
    with np.errstate(all="ignore"):
        for k in range(n):
            x, y = x + (y @ system.A.T) * dt, y + noise[k] + system.drift(grid.times[k], x, y) * dt
            bad |= ~(np.isfinite(x).all(-1) & np.isfinite(y).all(-1))
    return int(np.argmax(bad)) if bad.any() else 0


# --- estimators ---------------------------------------------------------------

def semigroup_samples(system: SystemSpec, observables: Sequence[Observable], initial: State,
                      t: float, cfg: McConfig) -> Array:
    """Per-path values of each observable at the terminal state, shape (n, k)."""
    grid = cfg.grid(t)

    def block(rng, size):
        traj, _ = simulate_block(system, initial, grid, rng, size)
        xT, yT = traj.terminal
        return np.stack([np.broadcast_to(f(xT, yT), (size,)) for f in observables], axis=-1)

    return run_ensemble(cfg, block)


def estimate_semigroup(system: SystemSpec, f: Observable, initial: State, t: float,
                       cfg: McConfig) -> Estimate:
    """Plain Monte Carlo for P_t f(initial)."""
    return Estimate.from_samples(semigroup_samples(system, [f], initial, t, cfg)[:, 0])


def bismut_samples(system: SystemSpec, observables: Sequence[Observable], initial: State,
                   h: Direction, t: float, cfg: McConfig,
                   controls: Optional[ControlPair] = None, z: Optional[Array] = None,
                   weight: str = "bismut") -> Array:
    """Per-path columns ``[M, <M>, f_1(X_t, Y_t), ..., f_k(X_t, Y_t)]``.

    ``weight`` selects the cubic-control Bismut weight (``"bismut"``) or
    Zhang's weight (``"zhang"`` / ``"zhang_consistent"``).
    """
    grid = cfg.grid(t)
    controls = cubic_controls(t) if controls is None else controls
    if z is None:
        z = min_norm_preimage(system.A, h.h1)

    def block(rng, size):
        traj, bm = simulate_block(system, initial, grid, rng, size)
        if weight == "bismut":
            w = bismut_weight(system, traj, bm, controls, h, z)
        elif weight == "zhang":
            w = zhang_weight(system, traj, bm, h, "printed")
        elif weight == "zhang_consistent":
            w = zhang_weight(system, traj, bm, h, "consistent")
        else:
            raise ValueError(f"unknown weight {weight!r}")
        xT, yT = traj.terminal
        cols = [w.weight, w.quadratic_variation]
        cols += [np.broadcast_to(f(xT, yT), (size,)) for f in observables]
        return np.stack(cols, axis=-1)

    return run_ensemble(cfg, block)


def estimate_gradient_bismut(system: SystemSpec, f: Observable, initial: State, h: Direction,
                             t: float, cfg: McConfig, controls: Optional[ControlPair] = None,
                             z: Optional[Array] = None, weight: str = "bismut") -> Estimate:
    """E[f(X_t, Y_t) M_t] with the derivative-formula weight M_t."""
    cols = bismut_samples(system, [f], initial, h, t, cfg, controls, z, weight)
    return Estimate.from_samples(cols[:, 2] * cols[:, 0])


def default_fd_step(initial: State) -> float:
    return 1e-2 * (1.0 + float(np.linalg.norm(initial.as_array())))


def estimate_gradient_fd(system: SystemSpec, f: Observable, initial: State, h: Direction,
                         t: float, cfg: McConfig, fd_step: Optional[float] = None) -> Estimate:
    """Central difference of P_t f along h with common random numbers.

    Both ends use identical Brownian paths; the stderr comes from the per-path
    differences.
    """
    if fd_step is None:
        fd_step = default_fd_step(initial)
    if not fd_step > 0:
        raise ValueError("fd_step must be positive")
    grid = cfg.grid(t)
    plus, minus = initial.shifted(h, fd_step), initial.shifted(h, -fd_step)

    def block(rng, size):
        bm = sample_brownian(grid, rng, system.d, size)
        tp = simulate(system, plus, grid, bm)
        tm = simulate(system, minus, grid, bm)
        return (f(*tp.terminal) - f(*tm.terminal)) / (2.0 * fd_step)

    return Estimate.from_samples(run_ensemble(cfg, block))


# --- exact oracle for linear_ou -----------------------------------------------

OU_TAGS = ("linear_x", "linear_y", "quadratic")


def ou_exact_value(f_tag: str, initial: State, t: float) -> float:
    mean, cov = ou_exact_mean_cov(t, initial)
    if f_tag == "linear_x":
        return float(mean[0])
    if f_tag == "linear_y":
        return float(mean[1])
    if f_tag == "quadratic":
        return float(mean @ mean + np.trace(cov))
    raise ValueError(f"unknown observable tag {f_tag!r}")


def ou_exact_gradient(f_tag: str, initial: State, h: Direction, t: float) -> float:
    """Exact directional derivative of P_t f for f in {x, y, x^2 + y^2}.

    The mean is exp(tM) p0 and the covariance does not depend on p0, so only
    the mean contributes.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    E = expm(t * OU_GENERATOR)
    p0 = initial.as_array()
    dp = np.concatenate([h.h1, h.h2])
    dmean = E @ dp
    if f_tag == "linear_x":
        return float(dmean[0])
    if f_tag == "linear_y":
        return float(dmean[1])
    if f_tag == "quadratic":
        return float(2.0 * (E @ p0) @ dmean)
    raise ValueError(f"unknown observable tag {f_tag!r}")


# --- variance scaling -----------------------------------------------------------

def bismut_variance(system: SystemSpec, f: Observable, initial: State, h: Direction,
                    t: float, cfg: McConfig) -> float:
    cols = bismut_samples(system, [f], initial, h, t, cfg)
    return float(np.var(cols[:, 2] * cols[:, 0], ddof=1))


def variance_slope(system: SystemSpec, f: Observable, initial: State, h: Direction,
                   ts: Sequence[float], cfg: McConfig) -> tuple[float, Array]:
    """Least-squares log-log slope of the Bismut estimator variance against t."""
    var = np.array([bismut_variance(system, f, initial, h, t, cfg) for t in ts])
    slope = np.polyfit(np.log(np.asarray(ts, dtype=float)), np.log(var), 1)[0]
    return float(slope), var
