"""Degenerate (kinetic) diffusion systems.

A system couples a position block ``x`` in R^m and a velocity block ``y`` in
R^d through

    dX = A Y dt,
    dY = sigma dB + Z(s, X, Y) dt,

with ``A`` of full row rank and ``sigma`` invertible. All callables are
vectorised: positions have shape ``(..., m)`` and velocities ``(..., d)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np
from scipy.linalg import expm
from scipy.integrate import simpson

Array = np.ndarray
DriftFn = Callable[[float, Array, Array], Array]
DirDerivFn = Callable[[float, Array, Array, Array, Array], Array]

_RANK_RTOL = 1e-12


def _vec(a, name: str) -> Array:
    out = np.atleast_1d(np.asarray(a, dtype=float))
    if out.ndim != 1:
        raise ValueError(f"{name} must be a vector, got shape {out.shape}")
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} has non-finite entries")
    return out


@dataclass(frozen=True)
class State:
    """A point (x, y) of the phase space."""

    x: Array
    y: Array

    def __post_init__(self):
        object.__setattr__(self, "x", _vec(self.x, "x"))
        object.__setattr__(self, "y", _vec(self.y, "y"))

    def __add__(self, other: "Direction") -> "State":
        return State(self.x + other.h1, self.y + other.h2)

    def shifted(self, h: "Direction", eps: float) -> "State":
        return State(self.x + eps * h.h1, self.y + eps * h.h2)

    def as_array(self) -> Array:
        return np.concatenate([self.x, self.y])


@dataclass(frozen=True)
class Direction:
    """A tangent direction h = (h1, h2) in R^m x R^d."""

    h1: Array
    h2: Array

    def __post_init__(self):
        object.__setattr__(self, "h1", _vec(self.h1, "h1"))
        object.__setattr__(self, "h2", _vec(self.h2, "h2"))

    def __mul__(self, a: float) -> "Direction":
        return Direction(a * self.h1, a * self.h2)

    __rmul__ = __mul__

    def __add__(self, other: "Direction") -> "Direction":
        return Direction(self.h1 + other.h1, self.h2 + other.h2)

    @classmethod
    def between(cls, a: State, b: State) -> "Direction":
        """The direction pointing from ``a`` to ``b``."""
        return cls(b.x - a.x, b.y - a.y)

    @property
    def norm(self) -> float:
        return float(np.sqrt(self.h1 @ self.h1 + self.h2 @ self.h2))


@dataclass(frozen=True)
class LyapunovSpec:
    """Lyapunov function ``W >= 1`` with analytic generator image ``LW``.

    ``W`` and ``LW`` take ``(x, y)`` arrays and return arrays of the batch shape.
    """

    W: Callable[[Array, Array], Array]
    LW: Callable[[Array, Array], Array]
    C: float


@dataclass(frozen=True)
class PotentialSpec:
    V: Callable[[Array], Array]
    gradV: Callable[[Array], Array]
    name: str = "V"


@dataclass(frozen=True)
class SystemSpec:
    """The triple (A, sigma, Z) plus optional constants.

    ``lipschitz`` holds ``(K1, K2)`` bounding the x- and y-Jacobians of the
    drift when such global bounds exist.
    """

    A: Array
    sigma: Array
    drift: DriftFn
    drift_dir_deriv: DirDerivFn
    name: str = "custom"
    lipschitz: Optional[tuple[float, float]] = None
    lyapunov: Optional[LyapunovSpec] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        sigma = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        m, d = A.shape
        if d < m:
            raise ValueError(f"A must be m x d with d >= m, got {A.shape}")
        if sigma.shape != (d, d):
            raise ValueError(f"sigma must be {d}x{d}, got {sigma.shape}")
        _check_rank(A)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "sigma", sigma)

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def d(self) -> int:
        return self.A.shape[1]

    @cached_property
    def sigma_inv(self) -> Array:
        """Inverse diffusion matrix; raises for a singular ``sigma``.

        Singular ``sigma`` is allowed for plain simulation (e.g. the
        drift-free deterministic flow) but every weight needs the inverse.
        """
        if not np.all(np.isfinite(self.sigma)) or np.linalg.cond(self.sigma) > 1e12:
            raise ValueError("sigma is singular; weights need an invertible sigma")
        return np.linalg.inv(self.sigma)

    def state(self, x, y) -> State:
        s = State(x, y)
        if s.x.shape != (self.m,) or s.y.shape != (self.d,):
            raise ValueError(
                f"state dims {s.x.shape}, {s.y.shape} do not match (m, d) = ({self.m}, {self.d})"
            )
        return s

    def direction(self, h1, h2) -> Direction:
        h = Direction(h1, h2)
        if h.h1.shape != (self.m,) or h.h2.shape != (self.d,):
            raise ValueError("direction dims do not match the system")
        return h

    def generator(self, f: Callable[[Array, Array], Array], x: Array, y: Array,
                  step: float = 1e-4) -> Array:
        """Finite-difference application of the generator L to ``f`` at one point.

        Central differences with the given step for the first and second
        y-derivatives and the x-gradient. Used as an independent check of
        analytic ``LW`` expressions.
        """
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        m, d = self.m, self.d
        f0 = f(x, y)
        grad_y = np.empty(d)
        hess_y = np.empty((d, d))
        ey = np.eye(d) * step
        for i in range(d):
            fp, fm = f(x, y + ey[i]), f(x, y - ey[i])
            grad_y[i] = (fp - fm) / (2 * step)
            hess_y[i, i] = (fp - 2 * f0 + fm) / step**2
            for j in range(i):
                hess_y[i, j] = hess_y[j, i] = (
                    f(x, y + ey[i] + ey[j]) - f(x, y + ey[i] - ey[j])
                    - f(x, y - ey[i] + ey[j]) + f(x, y - ey[i] - ey[j])
                ) / (4 * step**2)
        ex = np.eye(m) * step
        grad_x = np.array([(f(x + ex[i], y) - f(x - ex[i], y)) / (2 * step) for i in range(m)])
        ss = self.sigma @ self.sigma.T
        return (0.5 * np.sum(ss * hess_y) + self.drift(0.0, x, y) @ grad_y
                + (self.A @ y) @ grad_x)


def _check_rank(A: Array) -> Array:
    sv = np.linalg.svd(A, compute_uv=False)
    if sv.size == 0 or sv[-1] <= _RANK_RTOL * max(sv[0], 1.0):
        raise ValueError(f"rank deficiency: A has singular values {sv}")
    return sv


def min_norm_preimage(A, h1) -> Array:
    """Minimal-norm z with ``A z = h1``, i.e. ``A^T (A A^T)^{-1} h1``.

    ``h1`` may carry leading batch dimensions.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    _check_rank(A)
    h1 = np.asarray(h1, dtype=float)
    w = np.linalg.solve(A @ A.T, h1[..., None])[..., 0]
    return w @ A


def inv_norm(A) -> float:
    """Operator norm of the minimal-norm right inverse of ``A``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    return float(1.0 / _check_rank(A)[-1])


# --- potentials ---------------------------------------------------------------

def power_potential(l: float) -> PotentialSpec:
    """V(x) = (1 + |x|^2)^l."""
    def V(x):
        return (1.0 + np.sum(x * x, axis=-1)) ** l

    def gradV(x):
        r = 1.0 + np.sum(x * x, axis=-1, keepdims=True)
        return 2.0 * l * x * r ** (l - 1.0)

    return PotentialSpec(V, gradV, name=f"power(l={l:g})")


def exp_potential(l: float) -> PotentialSpec:
    """V(x) = exp[(1 + |x|^2)^l]."""
    def V(x):
        return np.exp((1.0 + np.sum(x * x, axis=-1)) ** l)

    def gradV(x):
        r = 1.0 + np.sum(x * x, axis=-1, keepdims=True)
        return np.exp(r**l) * 2.0 * l * x * r ** (l - 1.0)

    return PotentialSpec(V, gradV, name=f"exp(l={l:g})")


def zero_potential() -> PotentialSpec:
    return PotentialSpec(lambda x: np.zeros(x.shape[:-1]), np.zeros_like, name="zero")


# --- built-in systems ---------------------------------------------------------

def kinetic_fokker_planck(potential: PotentialSpec, dim: int = 1) -> SystemSpec:
    """dX = Y dt, dY = dB - grad V(X) dt - Y dt with W = exp[2V + |y|^2].

    The Hessian-vector product in the directional derivative is a central
    difference of ``gradV`` with step ``1e-6 (1 + |x|)`` along the unit
    direction, rescaled by ``|theta1|`` so it stays homogeneous in theta.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    V, gradV = potential.V, potential.gradV

    def drift(s, x, y):
        return -gradV(x) - y

    def drift_dir_deriv(s, x, y, th1, th2):
        x = np.asarray(x, dtype=float)
        th1 = np.broadcast_to(th1, x.shape)
        nrm = np.sqrt(np.sum(th1 * th1, axis=-1, keepdims=True))
        unit = np.divide(th1, nrm, out=np.zeros_like(th1), where=nrm > 0)
        step = 1e-6 * (1.0 + np.sqrt(np.sum(x * x, axis=-1, keepdims=True)))
        hv = (gradV(x + step * unit) - gradV(x - step * unit)) / (2.0 * step)
        return -nrm * hv - th2

    def W(x, y):
        return np.exp(2.0 * V(x) + np.sum(y * y, axis=-1))

    def LW(x, y):
        # generator applied term by term: grad_y W = 2yW, lap_y W = (2d + 4|y|^2) W,
        # grad_x W = 2 grad V W
        w = W(x, y)
        g = gradV(x)
        z = -g - y
        half_lap = dim + 2.0 * np.sum(y * y, axis=-1)
        return w * (half_lap + 2.0 * np.sum(z * y, axis=-1) + 2.0 * np.sum(y * g, axis=-1))

    eye = np.eye(dim)
    return SystemSpec(
        A=eye, sigma=eye, drift=drift, drift_dir_deriv=drift_dir_deriv,
        name="kinetic_fp", lyapunov=LyapunovSpec(W, LW, float(dim)),
        params={"potential": potential.name, "dim": dim},
    )


def cubic_example() -> SystemSpec:
    """Z(x, y) = -x^3 - y on R x R, with W = 1 + x^4/2 + y^2 and LW = 1 - 2y^2."""
    def drift(s, x, y):
        return -x**3 - y

    def drift_dir_deriv(s, x, y, th1, th2):
        return -3.0 * x**2 * th1 - th2

    def W(x, y):
        return 1.0 + 0.5 * x[..., 0] ** 4 + y[..., 0] ** 2

    def LW(x, y):
        return 1.0 - 2.0 * y[..., 0] ** 2

    one = np.eye(1)
    return SystemSpec(A=one, sigma=one, drift=drift, drift_dir_deriv=drift_dir_deriv,
                      name="cubic", lyapunov=LyapunovSpec(W, LW, 1.0))


def linear_system(A, sigma, Kx, Ky, name: str = "custom") -> SystemSpec:
    """Linear drift Z(x, y) = Kx x + Ky y; (NZ) constants are the operator norms."""
    Kx = np.atleast_2d(np.asarray(Kx, dtype=float))
    Ky = np.atleast_2d(np.asarray(Ky, dtype=float))

    def drift(s, x, y):
        return x @ Kx.T + y @ Ky.T

    def drift_dir_deriv(s, x, y, th1, th2):
        out = np.asarray(th1) @ Kx.T + np.asarray(th2) @ Ky.T
        return np.broadcast_to(out, np.broadcast_shapes(np.shape(y), out.shape))

    K1 = float(np.linalg.norm(Kx, 2))
    K2 = float(np.linalg.norm(Ky, 2))
    return SystemSpec(A=A, sigma=sigma, drift=drift, drift_dir_deriv=drift_dir_deriv,
                      name=name, lipschitz=(K1, K2),
                      params={"Kx": Kx.tolist(), "Ky": Ky.tolist()})


OU_GENERATOR = np.array([[0.0, 1.0], [-1.0, -1.0]])


def linear_ou() -> SystemSpec:
    """Z(x, y) = -x - y in one dimension; a linear Gaussian system.

    W = 1 + x^2 + y^2 gives LW = 1 - 2y^2 <= W.
    """
    base = linear_system(np.eye(1), np.eye(1), [[-1.0]], [[-1.0]], name="linear_ou")

    def W(x, y):
        return 1.0 + x[..., 0] ** 2 + y[..., 0] ** 2

    def LW(x, y):
        return 1.0 - 2.0 * y[..., 0] ** 2

    return SystemSpec(A=base.A, sigma=base.sigma, drift=base.drift,
                      drift_dir_deriv=base.drift_dir_deriv, name="linear_ou",
                      lipschitz=base.lipschitz, lyapunov=LyapunovSpec(W, LW, 1.0))


def ou_exact_mean_cov(t: float, initial: State, panels: int = 10_000) -> tuple[Array, Array]:
    """Exact law of ``linear_ou`` at time ``t``: mean and covariance.

    Covariance is the Simpson quadrature of exp(sM) diag(0,1) exp(sM)^T.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    p0 = np.concatenate([np.ravel(initial.x), np.ravel(initial.y)])
    mean = expm(t * OU_GENERATOR) @ p0
    if t == 0:
        return mean, np.zeros((2, 2))
    if panels % 2:
        panels += 1
    s = np.linspace(0.0, t, panels + 1)
    step = expm((t / panels) * OU_GENERATOR)
    E = np.empty((panels + 1, 2, 2))
    E[0] = np.eye(2)
    for k in range(1, panels + 1):
        E[k] = E[k - 1] @ step
    # exp(sM) Q exp(sM)^T with Q = diag(0, 1) is the outer product of column 2
    col = E[:, :, 1]
    integrand = col[:, :, None] * col[:, None, :]
    cov = simpson(integrand, x=s, axis=0)
    return mean, 0.5 * (cov + cov.T)
