"""Control pairs (u, v), the displacement Theta and pathwise Bismut weights."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .integrate import BrownianPath, Trajectory
from .model import Direction, SystemSpec, min_norm_preimage

Array = np.ndarray
ScalarFn = Callable[[Array], Array]


@dataclass(frozen=True)
class ControlPair:
    """Scalar controls on [0, t] and their first two derivatives.

    Admissible pairs satisfy u(t) = v'(0) = 1 and
    u(0) = v(0) = u'(0) = u'(t) = v'(t) = v(t) = 0.
    """

    t: float
    u: ScalarFn
    du: ScalarFn
    d2u: ScalarFn
    v: ScalarFn
    dv: ScalarFn
    d2v: ScalarFn

    def boundary_residuals(self) -> dict[str, float]:
        t = self.t
        return {
            "u(t)-1": float(self.u(t) - 1.0),
            "v'(0)-1": float(self.dv(0.0) - 1.0),
            "u(0)": float(self.u(0.0)),
            "v(0)": float(self.v(0.0)),
            "u'(0)": float(self.du(0.0)),
            "u'(t)": float(self.du(t)),
            "v'(t)": float(self.dv(t)),
            "v(t)": float(self.v(t)),
        }


def cubic_controls(t: float) -> ControlPair:
    """u(s) = s^2 (3t - 2s) / t^3,  v(s) = s (t - s)^2 / t^2."""
    if not t > 0:
        raise ValueError("t must be positive")
    t = float(t)

    # written in r = s / t so the boundary values are exact in floating point
    def r(s):
        return np.asarray(s, dtype=float) / t

    return ControlPair(
        t=t,
        u=lambda s: r(s) ** 2 * (3 - 2 * r(s)),
        du=lambda s: 6 * r(s) * (1 - r(s)) / t,
        d2u=lambda s: 6 * (1 - 2 * r(s)) / t**2,
        v=lambda s: t * r(s) * (1 - r(s)) ** 2,
        dv=lambda s: (1 - r(s)) * (1 - 3 * r(s)),
        d2v=lambda s: 2 * (3 * r(s) - 2) / t,
    )


def lambda_term(controls: ControlPair, z, h2, s) -> Array:
    """u''(s) z - v''(s) h2; vectorised over an array of times ``s``."""
    return (np.multiply.outer(controls.d2u(s), np.asarray(z, dtype=float))
            - np.multiply.outer(controls.d2v(s), np.asarray(h2, dtype=float)))


def theta(controls: ControlPair, h: Direction, z, s, A) -> tuple[Array, Array]:
    """Displacement Theta(h, z, s) = ((1 - u) h1 + v A h2, v' h2 - u' z)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    z = np.asarray(z, dtype=float)
    first = (np.multiply.outer(1.0 - controls.u(s), h.h1)
             + np.multiply.outer(controls.v(s), A @ h.h2))
    second = (np.multiply.outer(controls.dv(s), h.h2)
              - np.multiply.outer(controls.du(s), z))
    return first, second


@dataclass(frozen=True)
class WeightResult:
    """Stochastic integral M_t and its discretised quadratic variation."""

    weight: Array
    quadratic_variation: Array


def _time_major(a: Array, batch_ndim: int) -> Array:
    """Reshape (n, k) deterministic data to broadcast against (n, *batch, k)."""
    return a.reshape((a.shape[0],) + (1,) * batch_ndim + (a.shape[-1],))


def _ito_sum(system: SystemSpec, integrand: Array, brownian: BrownianPath,
             scale: float = 1.0) -> WeightResult:
    g = integrand @ system.sigma_inv.T
    g *= scale
    weight = np.sum(g * brownian.increments, axis=(0, -1))
    qv = np.sum(g * g, axis=(0, -1)) * brownian.dt
    return WeightResult(weight, qv)


def bismut_weight(system: SystemSpec, trajectory: Trajectory, brownian: BrownianPath,
                  controls: ControlPair, h: Direction, z: Optional[Array] = None) -> WeightResult:
    """Left-endpoint Ito sum of <sigma^{-1}(Lambda + grad_Theta Z), dB>."""
    if h.h1.shape != (system.m,) or h.h2.shape != (system.d,):
        raise ValueError("dimension mismatch between system and h")
    if z is None:
        z = min_norm_preimage(system.A, h.h1)
    z = np.asarray(z, dtype=float)
    if z.shape != (system.d,):
        raise ValueError("dimension mismatch between system and z")
    if brownian.n_steps != trajectory.grid.n_steps:
        raise ValueError("dimension mismatch between trajectory and Brownian path")
    s = trajectory.grid.times[:-1]
    nb = len(brownian.batch_shape)
    lam = _time_major(lambda_term(controls, z, h.h2, s), nb)
    th1, th2 = theta(controls, h, z, s, system.A)
    th1, th2 = _time_major(th1, nb), _time_major(th2, nb)
    dz = system.drift_dir_deriv(s.reshape((-1,) + (1,) * (nb + 1)),
                                trajectory.x[:-1], trajectory.y[:-1], th1, th2)
    return _ito_sum(system, lam + dz, brownian)


# --- Zhang's weight (m = d, A = I) ---------------------------------------------

def zhang_gammas(t: float, s: Array) -> dict[str, Array]:
    """gamma_1, gamma_2, their integrals from 0 and their right derivatives."""
    s = np.asarray(s, dtype=float)
    left = s < t / 2
    g1 = 2 * np.maximum(t - 2 * s, 0.0) + s - t
    g2 = (4.0 / t) * np.minimum(s, t - s)
    int_g1 = np.where(left, t * s - 1.5 * s**2, 0.5 * (s - t) ** 2)
    int_g2 = np.where(left, 2 * s**2 / t, t - 2 * (t - s) ** 2 / t)
    dg1 = np.where(left, -3.0, 1.0)
    dg2 = np.where(left, 4.0 / t, -4.0 / t)
    return {"g1": g1, "g2": g2, "int_g1": int_g1, "int_g2": int_g2, "dg1": dg1, "dg2": dg2}


def zhang_theta(t: float, h: Direction, s: Array, variant: str = "printed"):
    """Zhang's displacement, scaled by t (so Theta_0 / t is the initial shift).

    ``printed`` is the displacement in its usual written form:
        (h1 int g1 + h2 t + h2 int g2, g1 h1 - g2 h2).
    ``consistent`` is the version whose x-block integrates the y-block and
    which starts at t h and ends at 0:
        (t h1 - h1 int g2 + h2 int g1, g1 h2 - g2 h1).
    """
    g = zhang_gammas(t, s)
    o = np.multiply.outer
    if variant == "printed":
        first = o(g["int_g1"], h.h1) + t * h.h2 + o(g["int_g2"], h.h2)
        second = o(g["g1"], h.h1) - o(g["g2"], h.h2)
    elif variant == "consistent":
        first = t * h.h1 - o(g["int_g2"], h.h1) + o(g["int_g1"], h.h2)
        second = o(g["g1"], h.h2) - o(g["g2"], h.h1)
    else:
        raise ValueError(f"unknown Zhang variant {variant!r}")
    first = np.broadcast_to(first, second.shape)
    return first, second


def zhang_weight(system: SystemSpec, trajectory: Trajectory, brownian: BrownianPath,
                 h: Direction, variant: str = "printed") -> WeightResult:
    """(1/t) sum <sigma^{-1}(grad_Theta Z - g1' h1 + g2' h2), dB> (printed variant).

    The consistent variant uses ``- g1' h2 + g2' h1``. The grid needs an even
    step count so that t/2 is a node; the derivative on [s_k, s_{k+1}) is the
    one of the piece containing that interval.
    """
    if system.m != system.d or not np.allclose(system.A, np.eye(system.m)):
        raise ValueError("Zhang weight requires m=d, A=I")
    grid = trajectory.grid
    if grid.n_steps % 2:
        raise ValueError("Zhang weight needs an even number of steps (node at t/2)")
    t = grid.t_final
    n = grid.n_steps
    s = grid.times[:-1]
    # left-piece indicator by index avoids float ties at t/2
    left = np.arange(n) < n // 2
    dg1 = np.where(left, -3.0, 1.0)
    dg2 = np.where(left, 4.0 / t, -4.0 / t)
    th1, th2 = zhang_theta(t, h, s, variant)
    if variant == "printed":
        drift_part = -np.multiply.outer(dg1, h.h1) + np.multiply.outer(dg2, h.h2)
    else:
        drift_part = -np.multiply.outer(dg1, h.h2) + np.multiply.outer(dg2, h.h1)
    nb = len(brownian.batch_shape)
    th1, th2 = _time_major(th1, nb), _time_major(th2, nb)
    dz = system.drift_dir_deriv(s.reshape((-1,) + (1,) * (nb + 1)),
                                trajectory.x[:-1], trajectory.y[:-1], th1, th2)
    return _ito_sum(system, dz + _time_major(drift_part, nb), brownian, scale=1.0 / t)
