import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from kfpbismut.model import (Direction, State, SystemSpec, cubic_example, exp_potential, inv_norm,
                             kinetic_fokker_planck, linear_ou, linear_system, min_norm_preimage,
                             ou_exact_mean_cov, power_potential)

finite = st.floats(-3, 3, allow_nan=False)

# closed form exp(tM) for M = [[0, 1], [-1, -1]]: e^{-t/2}(cos wt I + sin wt / w (M + I/2))
OU_FLOW_T1 = np.array([[0.6597001533917017, 0.533507195114693],
                       [-0.533507195114693, 0.12619295827700874]])
# adaptive quadrature of the same closed form, t = 1
OU_COV_T1 = np.array([[0.14008289018790912, 0.14231496361957355],
                      [0.14231496361957355, 0.349722705021075]])


class TestStateAndDirection:
    def test_shift_and_between(self):
        a = State([1.0], [2.0])
        b = State([0.5], [-1.0])
        h = Direction.between(a, b)
        np.testing.assert_allclose((a + h).as_array(), b.as_array())
        np.testing.assert_allclose(a.shifted(h, 0.5).as_array(), [0.75, 0.5])

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            State([np.nan], [0.0])

    def test_direction_algebra(self):
        h = Direction([3.0], [4.0])
        assert h.norm == 5.0
        assert (2 * h).norm == 10.0
        assert (h + h).h2[0] == 8.0


class TestSystemSpec:
    def test_rank_deficiency(self):
        with pytest.raises(ValueError, match="rank deficiency"):
            linear_system(np.zeros((1, 2)), np.eye(2), np.zeros((2, 1)), np.zeros((2, 2)))

    def test_wide_a_must_have_d_at_least_m(self):
        with pytest.raises(ValueError):
            linear_system(np.ones((2, 1)), np.eye(1), np.zeros((1, 2)), np.zeros((1, 1)))

    def test_singular_sigma_only_fails_on_inverse(self):
        sys_ = linear_system(np.eye(1), np.zeros((1, 1)), [[0.0]], [[0.0]])
        with pytest.raises(ValueError, match="singular"):
            sys_.sigma_inv

    def test_state_dims_checked(self):
        with pytest.raises(ValueError):
            linear_ou().state([0.0, 1.0], [0.0])


class TestPreimage:
    @settings(max_examples=50, deadline=None)
    @given(arrays(float, (2, 3), elements=finite), arrays(float, 2, elements=finite))
    def test_solves_and_is_minimal(self, A, h1):
        if np.linalg.svd(A, compute_uv=False)[-1] < 1e-3:
            return
        z = min_norm_preimage(A, h1)
        np.testing.assert_allclose(A @ z, h1, atol=1e-8)
        # minimal norm: orthogonal to the null space of A
        null = np.linalg.svd(A)[2][-1]
        assert abs(z @ null) < 1e-8 * (1 + np.linalg.norm(z))

    def test_inv_norm(self):
        assert inv_norm(np.eye(3)) == pytest.approx(1.0)
        assert inv_norm(np.array([[2.0, 0.0]])) == pytest.approx(0.5)


class TestKineticLyapunov:
    @pytest.mark.parametrize("l", [0.5, 1.0, 2.0])
    @pytest.mark.parametrize("dim", [1, 2])
    @settings(max_examples=30, deadline=None)
    @given(data=st.data())
    def test_generator_of_w_is_d_times_w(self, l, dim, data):
        sys_ = kinetic_fokker_planck(power_potential(l), dim)
        x = data.draw(arrays(float, dim, elements=st.floats(-1.2, 1.2)))
        y = data.draw(arrays(float, dim, elements=finite))
        W, LW = sys_.lyapunov.W(x, y), sys_.lyapunov.LW(x, y)
        assert LW == pytest.approx(dim * W, rel=1e-12)

    def test_dir_deriv_matches_hessian(self):
        # V = 1 + |x|^2 has Hessian 2I
        sys_ = kinetic_fokker_planck(power_potential(1.0), 2)
        x, y = np.array([0.3, -0.2]), np.array([1.0, 2.0])
        th1, th2 = np.array([1.0, -2.0]), np.array([0.5, 0.5])
        np.testing.assert_allclose(sys_.drift_dir_deriv(0.0, x, y, th1, th2), -2 * th1 - th2,
                                   rtol=1e-6)

    def test_exp_potential_gradient(self):
        pot = exp_potential(0.5)
        x = np.array([0.7])
        fd = (pot.V(x + 1e-6) - pot.V(x - 1e-6)) / 2e-6
        assert pot.gradV(x)[0] == pytest.approx(fd, rel=1e-6)


@pytest.mark.parametrize("factory", [cubic_example, linear_ou])
def test_generator_fd_matches_analytic(factory):
    sys_ = factory()
    for x, y in [(0.3, -1.0), (1.5, 0.2), (-2.0, 2.0)]:
        xv, yv = np.array([x]), np.array([y])
        fd = sys_.generator(sys_.lyapunov.W, xv, yv)
        assert fd == pytest.approx(float(sys_.lyapunov.LW(xv, yv)), rel=1e-5, abs=1e-6)


def test_cubic_lw_dominated_by_w():
    sys_ = cubic_example()
    g = np.linspace(-3, 3, 61)
    x, y = np.meshgrid(g, g)
    x, y = x.reshape(-1, 1), y.reshape(-1, 1)
    assert np.all(sys_.lyapunov.LW(x, y) <= sys_.lyapunov.W(x, y))


class TestOuExactLaw:
    def test_mean_and_cov(self):
        p = State([0.3], [-0.4])
        mean, cov = ou_exact_mean_cov(1.0, p)
        np.testing.assert_allclose(mean, OU_FLOW_T1 @ [0.3, -0.4], rtol=1e-12)
        np.testing.assert_allclose(cov, OU_COV_T1, rtol=1e-9)

    def test_zero_time(self):
        mean, cov = ou_exact_mean_cov(0.0, State([1.0], [2.0]))
        np.testing.assert_array_equal(cov, 0.0)
        np.testing.assert_allclose(mean, [1.0, 2.0])

    def test_negative_time(self):
        with pytest.raises(ValueError):
            ou_exact_mean_cov(-1.0, State([0.0], [0.0]))


def test_custom_system_lipschitz_is_operator_norm():
    Kx = np.array([[3.0, 0.0], [0.0, 1.0]])
    sys_ = linear_system(np.eye(2), np.eye(2), Kx, -np.eye(2))
    assert sys_.lipschitz == pytest.approx((3.0, 1.0))
    assert isinstance(sys_, SystemSpec)
