import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kfpbismut import observables as obs
from kfpbismut.controls import cubic_controls
from kfpbismut.estimators import (STREAM_BLOCK, Estimate, McConfig, block_rng, bismut_samples,
                                  estimate_gradient_bismut, estimate_gradient_fd, estimate_semigroup,
                                  ou_exact_gradient, ou_exact_value, run_ensemble, semigroup_samples,
                                  variance_slope)
from kfpbismut.model import Direction, State, cubic_example, linear_ou

# e^{tM}, M = [[0, 1], [-1, -1]], from the closed form
# e^{-t/2}(cos wt I + sin wt / w (M + I/2)), w = sqrt(3)/2
OU_FLOW = {
    0.25: [[0.9713463673620989, 0.21890463412779804], [-0.21890463412779804, 0.7524417332343009]],
    1.0: [[0.6597001533917017, 0.533507195114693], [-0.533507195114693, 0.12619295827700874]],
    4.0: [[-0.1531227684140493, -0.04952987974191479], [0.04952987974191479, -0.1035928886721345]],
}
OU_TRACE_COV_T1 = 0.14008289018790912 + 0.349722705021075


def discrete_bismut_oracle(t, n, p0, h):
    """Exact E[x_N M] and E[|S_N|^2 M] for the Euler scheme of linear_ou.

    With linear drift M = sum_k c_k dB_k for deterministic c_k, and the
    terminal state is F^N p0 plus a Gaussian linear in the same increments.
    """
    dt = t / n
    s = np.arange(n) * dt
    c = cubic_controls(t)
    F = np.array([[1.0, dt], [-dt, 1.0 - dt]])
    z = h[0]
    lam = c.d2u(s) * z - c.d2v(s) * h[1]
    th1 = (1 - c.u(s)) * h[0] + c.v(s) * h[1]
    th2 = c.dv(s) * h[1] - c.du(s) * z
    coeff = lam - th1 - th2
    mu = np.linalg.matrix_power(F, n) @ np.asarray(p0, float)
    dm = np.zeros(2)
    G = np.array([0.0, 1.0])
    for k in range(n - 1, -1, -1):
        dm += G * coeff[k] * dt
        G = F @ G
    return {"linear_x": dm[0], "quadratic": 2 * mu @ dm}


class TestStreams:
    def test_block_rng_reproducible(self):
        a = block_rng(5, 3).standard_normal(4)
        b = block_rng(5, 3).standard_normal(4)
        np.testing.assert_array_equal(a, b)
        assert not np.allclose(a, block_rng(5, 4).standard_normal(4))
        assert not np.allclose(a, block_rng(6, 3).standard_normal(4))

    def test_prefix_property_and_workers(self):
        fn = lambda rng, size: rng.standard_normal(size)  # noqa: E731
        big = run_ensemble(McConfig(2 * STREAM_BLOCK + 10, 1, 9), fn)
        small = run_ensemble(McConfig(STREAM_BLOCK + 3, 1, 9), fn)
        threaded = run_ensemble(McConfig(2 * STREAM_BLOCK + 10, 1, 9, workers=3), fn)
        np.testing.assert_array_equal(big[: small.size], small)
        np.testing.assert_array_equal(big, threaded)

    def test_estimators_share_paths(self):
        cfg = McConfig(500, 16, 3)
        f = obs.tanh_x1()
        a = semigroup_samples(linear_ou(), [f], State([0.0], [0.0]), 1.0, cfg)[:, 0]
        b = bismut_samples(linear_ou(), [f], State([0.0], [0.0]), Direction([1.0], [0.0]), 1.0, cfg)[:, 2]
        np.testing.assert_array_equal(a, b)


class TestEstimate:
    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(-100, 100), min_size=2, max_size=50))
    def test_from_samples(self, xs):
        e = Estimate.from_samples(np.array(xs))
        assert e.mean == pytest.approx(np.mean(xs), abs=1e-9)
        assert e.stderr == pytest.approx(np.std(xs, ddof=1) / np.sqrt(len(xs)), abs=1e-9)
        assert e.ess == len(xs)

    def test_ess_of_weights(self):
        w = np.array([1.0, 1.0, 0.0, 0.0])
        assert Estimate.from_samples(w, weights=w).ess == pytest.approx(2.0)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            McConfig(1, 10)
        with pytest.raises(ValueError):
            McConfig(10, 0)


class TestOuOracle:
    @pytest.mark.parametrize("t", sorted(OU_FLOW))
    @pytest.mark.parametrize("h", [(1, 0), (0, 1), (1, 1)])
    def test_gradient_matches_closed_form(self, t, h):
        E = np.array(OU_FLOW[t])
        p = State([0.4], [-0.2])
        d = Direction([h[0]], [h[1]])
        assert ou_exact_gradient("linear_x", p, d, t) == pytest.approx((E @ h)[0], rel=1e-12)
        assert ou_exact_gradient("linear_y", p, d, t) == pytest.approx((E @ h)[1], rel=1e-12)
        quad = 2 * (E @ [0.4, -0.2]) @ (E @ h)
        assert ou_exact_gradient("quadratic", p, d, t) == pytest.approx(quad, rel=1e-12, abs=1e-15)

    def test_quadratic_value(self):
        assert ou_exact_value("quadratic", State([0.0], [0.0]), 1.0) == pytest.approx(OU_TRACE_COV_T1,
                                                                                       rel=1e-9)

    def test_unknown_tag(self):
        with pytest.raises(ValueError):
            ou_exact_value("cubic", State([0.0], [0.0]), 1.0)


@pytest.mark.parametrize("t, h", [(0.25, (1, 1)), (1.0, (1, 0)), (1.0, (0, 1))])
def test_bismut_matches_discrete_oracle_without_bias_allowance(t, h):
    # the scheme-level identity is exact, so no O(dt) slack is needed
    n = 32
    cfg = McConfig(40_000, n, 21)
    p = State([1.0], [0.0])
    d = Direction([h[0]], [h[1]])
    cols = bismut_samples(linear_ou(), [obs.x1_clipped(), obs.quad_clipped()], p, d, t, cfg)
    oracle = discrete_bismut_oracle(t, n, [1.0, 0.0], h)
    for j, tag in [(2, "linear_x"), (3, "quadratic")]:
        est = Estimate.from_samples(cols[:, j] * cols[:, 0])
        assert abs(est.mean - oracle[tag]) <= 3 * est.stderr


def test_semigroup_matches_exact(small_cfg):
    p = State([1.0], [0.0])
    est = estimate_semigroup(linear_ou(), obs.quad_clipped(), p, 1.0, small_cfg)
    exact = ou_exact_value("quadratic", p, 1.0)
    assert abs(est.mean - exact) <= 3 * est.stderr + 20 / small_cfg.n_steps


def test_fd_gradient_of_linear_function_is_exact_per_path(small_cfg):
    p, h = State([0.0], [0.0]), Direction([1.0], [0.0])
    est = estimate_gradient_fd(linear_ou(), obs.x1_clipped(), p, h, 1.0, small_cfg)
    assert est.stderr < 1e-10
    assert est.mean == pytest.approx(ou_exact_gradient("linear_x", p, h, 1.0), abs=20 / 64)


def test_fd_rejects_bad_step(small_cfg):
    with pytest.raises(ValueError):
        estimate_gradient_fd(linear_ou(), obs.tanh_x1(), State([0.0], [0.0]), Direction([1.0], [0.0]),
                             1.0, small_cfg, fd_step=0.0)


def test_bismut_vs_fd_on_cubic(small_cfg):
    p, h = State([0.5], [0.0]), Direction([1.0], [0.0])
    cfg = McConfig(20_000, 128, 4)
    b = estimate_gradient_bismut(cubic_example(), obs.tanh_x1(), p, h, 1.0, cfg)
    f = estimate_gradient_fd(cubic_example(), obs.tanh_x1(), p, h, 1.0, cfg)
    assert abs(b.mean - f.mean) <= 3 * np.hypot(b.stderr, f.stderr) + 20 / 128


def test_variance_slope_for_constant_observable():
    # f = 1: the variance is E[M^2], which grows like t^-3 for h = (1, 0)
    slope, var = variance_slope(linear_ou(), obs.constant(), State([0.0], [0.0]), Direction([1.0], [0.0]),
                                [0.05, 0.1, 0.2], McConfig(20_000, 64, 5))
    assert -3.3 < slope < -2.7
    assert np.all(np.diff(var) < 0)
