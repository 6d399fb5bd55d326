"""Catalog of test functions f(x, y), vectorised over leading batch axes.

The bounded entries suit the inequalities. The clipped polynomials exist for
oracle comparisons on linear systems: with the default radius 1e6 clipping
is never active at the scales simulated, so they agree with the unclipped
polynomials to machine precision.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

Array = np.ndarray
Observable = Callable[[Array, Array], Array]

DEFAULT_CLIP = 1e6


def constant(value: float = 1.0) -> Observable:
    return lambda x, y: np.full(np.shape(x)[:-1], float(value))


def tanh_x1() -> Observable:
    return lambda x, y: np.tanh(x[..., 0])


def one_plus_tanh2() -> Observable:
    return lambda x, y: 1.0 + np.tanh(x[..., 0]) ** 2


def one_plus_exp_neg_sq() -> Observable:
    return lambda x, y: 1.0 + np.exp(-np.sum(x * x, axis=-1))


def one_plus_sq_ratio() -> Observable:
    """1 + x1^2 / (1 + x1^2), bounded in [1, 2)."""
    def f(x, y):
        r = x[..., 0] ** 2
        return 1.0 + r / (1.0 + r)
    return f


def x1_clipped(radius: float = DEFAULT_CLIP) -> Observable:
    return lambda x, y: np.clip(x[..., 0], -radius, radius)


def y1_clipped(radius: float = DEFAULT_CLIP) -> Observable:
    return lambda x, y: np.clip(y[..., 0], -radius, radius)


def quad_clipped(radius: float = DEFAULT_CLIP) -> Observable:
    """min(x1^2 + |y|^2, R)."""
    return lambda x, y: np.minimum(x[..., 0] ** 2 + np.sum(y * y, axis=-1), radius)


CATALOG: dict[str, Callable[..., Observable]] = {
    "constant": constant,
    "tanh_x1": tanh_x1,
    "one_plus_tanh2": one_plus_tanh2,
    "one_plus_exp_neg_sq": one_plus_exp_neg_sq,
    "one_plus_sq_ratio": one_plus_sq_ratio,
    "x1_clipped": x1_clipped,
    "y1_clipped": y1_clipped,
    "quad_clipped": quad_clipped,
}

# observables with a closed-form oracle on linear_ou, mapped to the oracle tag
OU_ORACLE_TAGS = {"x1_clipped": "linear_x", "y1_clipped": "linear_y", "quad_clipped": "quadratic"}
POSITIVE = {"constant", "one_plus_tanh2", "one_plus_exp_neg_sq", "one_plus_sq_ratio"}


def get(name: str, **params) -> Observable:
    try:
        factory = CATALOG[name]
    except KeyError:
        raise ValueError(f"unknown observable {name!r}; choose from {sorted(CATALOG)}") from None
    return factory(**params)
