"""Euler-Maruyama paths for the base and the coupled (shifted) equation.

Arrays carry time first: a trajectory stores ``x`` with shape
``(n_steps + 1, *batch, m)`` and the Brownian increments have shape
``(n_steps, *batch, d)``. A single path simply has an empty batch.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import Direction, State, SystemSpec, min_norm_preimage

Array = np.ndarray


class ExplosionError(RuntimeError):
    def __init__(self, step: int, path: Optional[int] = None):
        self.step = step
        self.path = path
        msg = f"explosion at step {step}"
        if path is not None:
            msg += f" (path {path})"
        super().__init__(msg)


@dataclass(frozen=True)
class PathGrid:
    t_final: float
    n_steps: int

    def __post_init__(self):
        if not self.t_final > 0:
            raise ValueError("t_final must be positive")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError("n_steps must be a positive integer")

    @property
    def dt(self) -> float:
        return self.t_final / self.n_steps

    @property
    def times(self) -> Array:
        """Grid nodes s_k = k dt, k = 0..n_steps."""
        return self.t_final * np.arange(self.n_steps + 1) / self.n_steps

    def refine(self, factor: int) -> "PathGrid":
        return PathGrid(self.t_final, self.n_steps * factor)


@dataclass(frozen=True)
class BrownianPath:
    increments: Array
    dt: float

    @property
    def n_steps(self) -> int:
        return self.increments.shape[0]

    @property
    def batch_shape(self) -> tuple:
        return self.increments.shape[1:-1]

    def coarsen(self, factor: int) -> "BrownianPath":
        """Sum consecutive blocks of ``factor`` increments (same driving path)."""
        n = self.n_steps
        if n % factor:
            raise ValueError(f"{n} steps not divisible by {factor}")
        inc = self.increments.reshape((n // factor, factor) + self.increments.shape[1:])
        return BrownianPath(inc.sum(axis=1), self.dt * factor)


@dataclass(frozen=True)
class Trajectory:
    x: Array
    y: Array
    grid: PathGrid

    @property
    def terminal(self) -> tuple[Array, Array]:
        return self.x[-1], self.y[-1]

    def state(self, k: int) -> State:
        """State at node k of a single (unbatched) path."""
        return State(self.x[k], self.y[k])


def sample_brownian(grid: PathGrid, rng: np.random.Generator, dim: int,
                    n_paths: Optional[int] = None) -> BrownianPath:
    """I.i.d. N(0, dt) increments; ``n_paths=None`` gives a single path."""
    batch = () if n_paths is None else (n_paths,)
    inc = rng.standard_normal((grid.n_steps,) + batch + (dim,))
    inc *= np.sqrt(grid.dt)
    return BrownianPath(inc, grid.dt)


def _check(system: SystemSpec, grid: PathGrid, brownian: BrownianPath):
    if brownian.n_steps != grid.n_steps:
        raise ValueError("Brownian path and grid have different step counts")
    if brownian.increments.shape[-1] != system.d:
        raise ValueError("Brownian dimension does not match the system")


def _initial_arrays(initial, batch: tuple, m: int, d: int):
    if isinstance(initial, State):
        x0, y0 = initial.x, initial.y
    else:
        x0, y0 = initial
    return (np.broadcast_to(np.asarray(x0, dtype=float), batch + (m,)),
            np.broadcast_to(np.asarray(y0, dtype=float), batch + (d,)))


def _raise_if_exploded(x: Array, y: Array):
    bad_x = ~np.isfinite(x).reshape(x.shape[0], -1).all(axis=1)
    bad_y = ~np.isfinite(y).reshape(y.shape[0], -1).all(axis=1)
    bad = bad_x | bad_y
    if bad.any():
        raise ExplosionError(int(np.argmax(bad)))


def simulate(system: SystemSpec, initial: State, grid: PathGrid,
             brownian: BrownianPath) -> Trajectory:
    """Explicit Euler-Maruyama with left-endpoint drift and noise.

    X_{k+1} = X_k + A Y_k dt,  Y_{k+1} = Y_k + sigma dB_k + Z(s_k, X_k, Y_k) dt.
    """
    _check(system, grid, brownian)
    n, dt = grid.n_steps, grid.dt
    batch = brownian.batch_shape
    m, d = system.m, system.d
    x = np.empty((n + 1,) + batch + (m,))
    y = np.empty((n + 1,) + batch + (d,))
    x[0], y[0] = _initial_arrays(initial, batch, m, d)
    At, sigT = system.A.T, system.sigma.T
    noise = brownian.increments @ sigT
    times = grid.times
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n):
            x[k + 1] = x[k] + (y[k] @ At) * dt
            y[k + 1] = y[k] + noise[k] + system.drift(times[k], x[k], y[k]) * dt
    _raise_if_exploded(x, y)
    return Trajectory(x, y, grid)


def simulate_coupled(system: SystemSpec, initial: State, h: Direction, epsilon: float,
                     controls, grid: PathGrid, brownian: BrownianPath,
                     z: Optional[Array] = None) -> tuple[Trajectory, Trajectory]:
    """Base path and the controlled path started at ``initial + epsilon h``.

    The shifted path is driven by the same noise and by the drift evaluated on
    the *base* path, plus ``epsilon (v''(s) h2 - u''(s) z) dt``. Its terminal
    state matches the base terminal state up to O(dt).
    """
    if z is None:
        z = min_norm_preimage(system.A, h.h1)
    base = simulate(system, initial, grid, brownian)
    n, dt = grid.n_steps, grid.dt
    times = grid.times
    control = epsilon * (np.multiply.outer(controls.d2v(times[:-1]), h.h2)
                         - np.multiply.outer(controls.d2u(times[:-1]), z))
    batch = brownian.batch_shape
    control = control.reshape((n,) + (1,) * len(batch) + (system.d,))
    noise = brownian.increments @ system.sigma.T
    xs = np.empty_like(base.x)
    ys = np.empty_like(base.y)
    xs[0], ys[0] = _initial_arrays(initial.shifted(h, epsilon), batch, system.m, system.d)
    At = system.A.T
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n):
            xs[k + 1] = xs[k] + (ys[k] @ At) * dt
            ys[k + 1] = (ys[k] + noise[k] + system.drift(times[k], base.x[k], base.y[k]) * dt
                         + control[k] * dt)
    _raise_if_exploded(xs, ys)
    return base, Trajectory(xs, ys, grid)


def shift_residual(base: Trajectory, shifted: Trajectory, h: Direction, z, epsilon: float,
                   controls, A) -> float:
    """max_k |shifted_k - base_k - epsilon Theta(h, z, s_k)| over all nodes (and paths)."""
    from .controls import theta

    times = base.grid.times
    th1, th2 = theta(controls, h, z, times, A)
    pad = (1,) * (base.x.ndim - 2)
    th1 = th1.reshape((len(times),) + pad + (th1.shape[-1],))
    th2 = th2.reshape((len(times),) + pad + (th2.shape[-1],))
    rx = shifted.x - base.x - epsilon * th1
    ry = shifted.y - base.y - epsilon * th2
    dist = np.sqrt(np.sum(rx * rx, axis=-1) + np.sum(ry * ry, axis=-1))
    return float(dist.max())
