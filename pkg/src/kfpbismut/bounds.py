"""Explicit gradient and Harnack bounds, checked against Monte Carlo.

Every check returns a :class:`BoundReport`. Both sides of an inequality are
smooth functions of a few ensemble means computed on common random numbers,
so the margin ``rhs - lhs`` gets its standard error from the delta method on
the joint sample covariance. A check passes when the margin is no worse than
``-tolerance`` standard errors.
"""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize

from .estimators import McConfig, Observable, bismut_samples, semigroup_samples
from .girsanov import entropy_samples
from .model import State, SystemSpec, inv_norm

Array = np.ndarray
STAT_TOLERANCE = 3.0


@dataclass(frozen=True)
class BoundConstants:
    K1: float
    K2: float
    norm_A: float = 1.0
    norm_A_inv: float = 1.0
    norm_sigma_inv: float = 1.0

    def __post_init__(self):
        if min(self.K1, self.K2) < 0:
            raise ValueError("K1, K2 must be non-negative")
        if min(self.norm_A, self.norm_A_inv, self.norm_sigma_inv) <= 0:
            raise ValueError("norms must be positive")

    @classmethod
    def for_system(cls, system: SystemSpec, K1: Optional[float] = None,
                   K2: Optional[float] = None) -> "BoundConstants":
        if K1 is None or K2 is None:
            if system.lipschitz is None:
                raise ValueError(f"system {system.name!r} has no global drift Lipschitz bounds")
            K1, K2 = system.lipschitz
        return cls(K1, K2, float(np.linalg.norm(system.A, 2)), inv_norm(system.A),
                   float(np.linalg.norm(system.sigma_inv, 2)))


@dataclass
class BoundReport:
    name: str
    lhs: float
    rhs: float
    margin: float
    margin_stderr: float
    passed: bool
    lhs_stderr: float = 0.0
    rhs_stderr: float = 0.0
    n: int = 0
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def psi(t: float, r1: float, r2: float, c: BoundConstants) -> float:
    if not t > 0:
        raise ValueError("t must be positive")
    a = r1 * (6 * c.norm_A_inv / t**2 + c.K1 + 1.5 * c.K2 * c.norm_A_inv / t)
    b = r2 * (4 / t + 4 * c.K1 * t * c.norm_A / 27 + c.K2)
    return c.norm_sigma_inv**2 * t * (a + b) ** 2


def phi(t: float, r1: float, r2: float, c: BoundConstants) -> float:
    """inf over s in (0, t] of psi(s, r1, r2): log grid then golden section."""
    if not t > 0:
        raise ValueError("t must be positive")
    if r1 == 0 and r2 == 0:
        return 0.0
    grid = np.geomspace(t * 1e-6, t, 10_000)
    vals = np.array([psi(s, r1, r2, c) for s in grid])
    i = int(np.argmin(vals))
    best = min(vals[i], psi(t, r1, r2, c))
    f = lambda s: psi(s, r1, r2, c) if 0 < s <= t else np.inf  # noqa: E731
    if 0 < i < len(grid) - 1:
        s_opt = optimize.golden(f, brack=(grid[i - 1], grid[i], grid[i + 1]), tol=1e-8)
        best = min(best, f(s_opt))
    elif i == len(grid) - 1:
        res = optimize.minimize_scalar(f, bounds=(grid[-2], t), method="bounded",
                                       options={"xatol": 1e-8 * t})
        best = min(best, float(res.fun))
    return float(best)


def derive_config(cfg: McConfig, name: str) -> McConfig:
    """Per-check seed derived from the master seed and the check name."""
    digest = hashlib.sha256(f"{cfg.master_seed}:{name}".encode()).digest()
    return cfg.with_seed(int.from_bytes(digest[:8], "little"))


# --- delta method ---------------------------------------------------------------

def _delta(cols: Array, fn: Callable[[Array], float]) -> tuple[float, float]:
    """Value and delta-method stderr of ``fn(column means)``."""
    mu = cols.mean(axis=0)
    n = cols.shape[0]
    val = float(fn(mu))
    grad = np.empty_like(mu)
    for j in range(mu.size):
        step = 1e-6 * (1.0 + abs(mu[j]))
        up, dn = mu.copy(), mu.copy()
        up[j] += step
        dn[j] -= step
        grad[j] = (fn(up) - fn(dn)) / (2 * step)
    cov = np.atleast_2d(np.cov(cols, rowvar=False))
    var = float(grad @ cov @ grad) / n
    return val, float(np.sqrt(max(var, 0.0)))


def _report(name: str, cols: Array, lhs_fn, rhs_fn, tolerance: float = STAT_TOLERANCE,
            **details) -> BoundReport:
    lhs, lhs_se = _delta(cols, lhs_fn)
    rhs, rhs_se = _delta(cols, rhs_fn)
    margin, margin_se = _delta(cols, lambda m: rhs_fn(m) - lhs_fn(m))
    return BoundReport(name, lhs, rhs, margin, margin_se, bool(margin >= -tolerance * margin_se),
                       lhs_se, rhs_se, cols.shape[0], dict(details))


def _direction_radii(h) -> tuple[float, float]:
    return float(np.linalg.norm(h.h1)), float(np.linalg.norm(h.h2))


def _point_radii(a: State, b: State) -> tuple[float, float]:
    return float(np.linalg.norm(a.x - b.x)), float(np.linalg.norm(a.y - b.y))


# --- gradient bounds ------------------------------------------------------------

def check_gradient_bound(system: SystemSpec, f: Observable, initial: State, h, t: float,
                         cfg: McConfig, constants: BoundConstants,
                         phi_scale: float = 1.0) -> BoundReport:
    """|grad_h P_t f|^2 <= P_t f^2 * Phi_t(|h1|, |h2|).

    ``phi_scale`` multiplies the constant and exists only to build
    deliberately violated negative controls.
    """
    ph = phi_scale * phi(t, *_direction_radii(h), constants)
    cols = bismut_samples(system, [f], initial, h, t, derive_config(cfg, "gradient_bound"))
    data = np.column_stack([cols[:, 2] * cols[:, 0], cols[:, 2] ** 2])
    return _report("gradient_bound", data, lambda m: m[0] ** 2, lambda m: ph * m[1],
                   phi=ph, t=t)


def check_entropy_gradient(system: SystemSpec, f: Observable, initial: State, h, t: float,
                           cfg: McConfig, constants: BoundConstants, delta: float,
                           phi_scale: float = 1.0) -> tuple[BoundReport, BoundReport]:
    """Entropy-gradient inequality at a given delta, and its delta-optimised square form."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    ph = phi_scale * phi(t, *_direction_radii(h), constants)
    cols = bismut_samples(system, [f], initial, h, t, derive_config(cfg, "entropy_gradient"))
    fv = cols[:, 2]
    if np.any(fv <= 0):
        raise ValueError("observable must be positive on sampled states")
    data = np.column_stack([fv * cols[:, 0], fv * np.log(fv), fv])

    def ent(m):
        return m[1] - m[2] * np.log(m[2])

    r14 = _report("entropy_gradient", data, lambda m: abs(m[0]),
                  lambda m: delta * ent(m) + ph * m[2] / delta, delta=delta, phi=ph, t=t)
    r15 = _report("entropy_gradient_opt", data, lambda m: m[0] ** 2,
                  lambda m: 4 * ph * ent(m) * m[2], phi=ph, t=t)
    e = ent(data.mean(axis=0))
    r15.details["optimal_delta"] = float(np.sqrt(ph * data[:, 2].mean() / e)) if e > 0 else np.inf
    return r14, r15


# --- Harnack inequalities ---------------------------------------------------------

def _paired_columns(system, pairs, t, cfg) -> Array:
    """Columns ``f(paths from point)`` for each (observable, point), on shared streams."""
    return np.column_stack([semigroup_samples(system, [f], p, t, cfg)[:, 0] for f, p in pairs])


def check_harnack(system: SystemSpec, f: Observable, point_a: State, point_b: State,
                  alpha: float, t: float, cfg: McConfig, constants: BoundConstants) -> BoundReport:
    """(P_t f)^alpha(a) <= P_t f^alpha(b) exp[alpha/(alpha-1) Phi_t(|dx|, |dy|)]."""
    if not alpha > 1:
        raise ValueError("alpha must exceed 1")
    ph = phi(t, *_point_radii(point_a, point_b), constants)
    factor = np.exp(alpha / (alpha - 1) * ph)
    data = _paired_columns(system, [(f, point_a), (lambda x, y: f(x, y) ** alpha, point_b)], t,
                           derive_config(cfg, "harnack"))
    if np.any(data[:, 0] <= 0):
        raise ValueError("observable must be positive on sampled states")
    return _report("harnack", data, lambda m: m[0] ** alpha, lambda m: m[1] * factor,
                   alpha=alpha, phi=ph, factor=float(factor), t=t)


def check_log_harnack(system: SystemSpec, f: Observable, point_a: State, point_b: State,
                      t: float, cfg: McConfig, constants: Optional[BoundConstants] = None,
                      route: str = "phi") -> BoundReport:
    """P_t log f(a) - log P_t f(b) <= cost.

    ``route="phi"`` uses Phi_t(|dx|, |dy|) and needs the drift constants;
    ``route="entropy"`` uses the Q-expected path energy of the coupling from
    b to a, which needs no constants.
    """
    logf = lambda x, y: np.log(f(x, y))  # noqa: E731
    cfg = derive_config(cfg, "log_harnack")
    data = _paired_columns(system, [(logf, point_a), (f, point_b)], t, cfg)
    if route == "phi":
        if constants is None:
            raise ValueError("the phi route needs BoundConstants")
        ph = phi(t, *_point_radii(point_a, point_b), constants)
        return _report("log_harnack_phi", data, lambda m: m[0] - np.log(m[1]), lambda m: ph,
                       phi=ph, t=t)
    if route == "entropy":
        ent = entropy_samples(system, point_b, point_a, t, cfg)
        data = np.column_stack([data, ent[:, 0] * ent[:, 1], ent[:, 0]])
        r = _report("log_harnack_entropy", data, lambda m: m[0] - np.log(m[1]), lambda m: m[2],
                    t=t)
        w = ent[:, 0]
        r.details["ess"] = float(w.size * w.mean() ** 2 / np.mean(w * w))
        r.details["mean_R"] = float(w.mean())
        return r
    raise ValueError(f"unknown route {route!r}")


# --- Lyapunov conditions ----------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    """Rectangular grid over (x, y): ``n`` points per coordinate on [lo, hi]."""

    lo: Sequence[float]
    hi: Sequence[float]
    n: int

    def points(self) -> Array:
        axes = [np.linspace(a, b, self.n) for a, b in zip(self.lo, self.hi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=-1)

    def boundary_mask(self) -> Array:
        pts = self.points()
        lo, hi = np.asarray(self.lo, float), np.asarray(self.hi, float)
        return np.any(np.isclose(pts, lo) | np.isclose(pts, hi), axis=-1)

    @classmethod
    def square(cls, dim: int, half_width: float, n: int) -> "GridSpec":
        return cls([-half_width] * dim, [half_width] * dim, n)


def _rel_err(a, b) -> float:
    return float(abs(a - b) / max(abs(b), 1.0))


def lyapunov_check(system: SystemSpec, grid: GridSpec, n_fd: int = 100, fd_step: float = 1e-4,
                   seed: int = 0) -> BoundReport:
    """max over the grid of LW/W against C, plus a finite-difference audit of LW."""
    lyap = system.lyapunov
    if lyap is None:
        raise ValueError(f"system {system.name!r} carries no Lyapunov function")
    pts = grid.points()
    x, y = pts[:, : system.m], pts[:, system.m:]
    W = lyap.W(x, y)
    if np.any(W < 1):
        raise ValueError("W < 1 at some grid point")
    ratio = lyap.LW(x, y) / W
    worst = float(ratio.max())
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(pts), size=min(n_fd, len(pts)), replace=False)
    fd_err = 0.0
    for i in idx:
        fd = system.generator(lyap.W, x[i], y[i], step=fd_step)
        fd_err = max(fd_err, _rel_err(fd, float(lyap.LW(x[i], y[i]))))
    fd_ok = fd_err <= 1e-4
    margin = lyap.C - worst
    passed = worst <= lyap.C * (1 + 1e-8) and fd_ok
    return BoundReport("lyapunov", worst, lyap.C, margin, 0.0, bool(passed), n=len(pts),
                       details={"fd_max_rel_err": fd_err, "fd_ok": fd_ok, "system": system.name})


def tilde_w_terms(a: float, b: float, x: Array, y: Array) -> dict[str, Array]:
    """L W~ / W~ for W~ = exp(w - inf w), w = a(x^4/2 + y^2) + bxy, under Z = -x^3 - y.

    ``analytic`` is Lw + |d_y w|^2 / 2. ``display_sign`` flips the sign of the
    gradient term and ``printed`` is a shortened term-by-term expansion; both
    are kept only to quantify how far they drift from the analytic value.
    """
    Lw = a - b * x**4 - 2 * a * y**2 - b * x * y + b * y**2
    grad_sq = (2 * a * y + b * x) ** 2
    printed = (a + 2 * a**2 * y**2 - 2 * a * x**3 * y - b * x**4 - 2 * a * y**2 - b * x * y
               + 2 * a * x**3 * y + b * y)
    return {"analytic": Lw + 0.5 * grad_sq, "display_sign": Lw - 0.5 * grad_sq, "printed": printed}


def tilde_w_check(a: float, b: float, eps_param: float, grid: GridSpec) -> BoundReport:
    """Fit -L W~ / W~ >= alpha W - K on a grid for the cubic example.

    ``alpha`` is the smallest ratio (-L W~/W~) / W over the outer frame of the
    grid, where the polynomial growth decides the sign; ``K`` is then the
    smallest constant making the inequality hold at every grid point.
    """
    if 2 * a * a - 2 * a + b * (1 + eps_param / 2) >= 0:
        raise ValueError("coefficient condition violated: need 2a^2 - 2a + b(1 + eps/2) < 0")
    from .model import cubic_example

    system = cubic_example()
    pts = grid.points()
    x, y = pts[:, 0], pts[:, 1]
    terms = tilde_w_terms(a, b, x, y)
    g = -terms["analytic"]
    W = system.lyapunov.W(x[:, None], y[:, None])
    edge = grid.boundary_mask()
    alpha = max(float(np.min(g[edge] / W[edge])), 0.0)
    K = float(np.max(alpha * W - g))

    w = lambda p: a * (0.5 * p[0] ** 4 + p[1] ** 2) + b * p[0] * p[1]  # noqa: E731
    w_inf = min(optimize.minimize(w, x0, method="Nelder-Mead", options={"xatol": 1e-10,
                                                                          "fatol": 1e-12}).fun
                for x0 in ([0.0, 0.0], [1.0, -1.0], [-1.0, 1.0]))
    w_inf = min(w_inf, 0.0)

    def Wt(xv, yv):
        return float(np.exp(w([xv[0], yv[0]]) - w_inf))

    rng = np.random.default_rng(1)
    fd_err = 0.0
    for i in rng.choice(len(pts), size=min(50, len(pts)), replace=False):
        xi, yi = pts[i, :1], pts[i, 1:]
        fd = system.generator(Wt, xi, yi) / Wt(xi, yi)
        fd_err = max(fd_err, _rel_err(fd, float(terms["analytic"][i])))

    passed = alpha > 0 and np.isfinite(K)
    return BoundReport(
        "tilde_w", alpha, K, alpha, 0.0, bool(passed), n=len(pts),
        details={
            "a": a, "b": b, "eps": eps_param, "alpha": alpha, "K": K, "inf_w": float(w_inf),
            "fd_max_rel_err": fd_err,
            "printed_vs_analytic_max_abs": float(np.max(np.abs(terms["printed"] - terms["analytic"]))),
            "display_sign_vs_analytic_max_abs":
                float(np.max(np.abs(terms["display_sign"] - terms["analytic"]))),
        },
    )
